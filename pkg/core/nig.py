"""
Normal-Inverse-Gamma parameters
Constraint activations, the Student-t predictive and the reference densities.

Layout of a raw head output (length 4D):
  [ gamma (D) | nu (D) | alpha (D) | beta (D) ]

Constraints applied by constrain_raw, with EPS = 1e-6:
  gamma = raw
  nu    = softplus(raw) + EPS
  alpha = 1 + EPS + softplus(raw)
  beta  = softplus(raw) + EPS
"""

from __future__ import annotations
import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from core import numerics as nx
from core.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

EPS = 1e-6


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass(frozen=True)
class NIGParams:
    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        arrays = [np.atleast_1d(np.asarray(v, dtype=np.float64))
                  for v in (self.gamma, self.nu, self.alpha, self.beta)]
        shapes = {a.shape for a in arrays}
        if len(shapes) != 1:
            raise ShapeError("NIGParams", *(a.shape for a in arrays))
        for name, a in zip(("gamma", "nu", "alpha", "beta"), arrays):
            object.__setattr__(self, name, a)

    @property
    def dim(self) -> int:
        return self.gamma.shape[-1]

    def validate(self) -> "NIGParams":
        if not all(np.all(np.isfinite(a)) for a in (self.gamma, self.nu, self.alpha, self.beta)):
            raise DataError("NIGParams: non-finite entries")
        if np.any(self.nu <= 0) or np.any(self.alpha <= 1) or np.any(self.beta <= 0):
            raise DataError("NIGParams: constraints violated (need nu > 0, alpha > 1, beta > 0)")
        return self

    def frame(self, t: int) -> "NIGParams":
        """Row t of a per-frame (T, D) parameter sequence."""
        return NIGParams(self.gamma[t], self.nu[t], self.alpha[t], self.beta[t])

    def with_beta_scale(self, scale: float) -> "NIGParams":
        return NIGParams(self.gamma, self.nu, self.alpha, self.beta * scale)


@dataclass(frozen=True)
class StudentTParams:
    loc: np.ndarray
    scale_sq: np.ndarray
    dof: np.ndarray


def constrain_raw(raw) -> NIGParams:
    """Map an unconstrained 4D head output (or (T, 4D) rows) to valid NIG parameters."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] % 4 != 0 or raw.shape[-1] == 0:
        raise ShapeError("constrain_raw", raw.shape, detail="last axis must be 4*D")
    if not np.all(np.isfinite(raw)):
        raise DataError("constrain_raw: non-finite raw head output")
    g, n, a, b = np.split(raw, 4, axis=-1)
    return NIGParams(
        gamma=g,
        nu=_softplus(n) + EPS,
        alpha=1.0 + EPS + _softplus(a),
        beta=_softplus(b) + EPS,
    )


def constrain_raw_tensor(raw: nx.Tensor) -> tuple[nx.Tensor, nx.Tensor, nx.Tensor, nx.Tensor]:
    """Differentiable counterpart of constrain_raw over the last axis."""
    d4 = raw.shape[-1]
    if d4 % 4 != 0:
        raise ShapeError("constrain_raw", raw.shape, detail="last axis must be 4*D")
    d = d4 // 4
    blocks = [nx.index(raw, (..., slice(i * d, (i + 1) * d))) for i in range(4)]
    gamma = blocks[0]
    nu = nx.add(nx.softplus(blocks[1]), EPS)
    alpha = nx.add(nx.softplus(blocks[2]), 1.0 + EPS)
    beta = nx.add(nx.softplus(blocks[3]), EPS)
    return gamma, nu, alpha, beta


def predictive(p: NIGParams) -> StudentTParams:
    return StudentTParams(
        loc=p.gamma,
        scale_sq=p.beta * (1.0 + p.nu) / (p.nu * p.alpha),
        dof=2.0 * p.alpha,
    )


def student_t_log_pdf(y, st: StudentTParams) -> float:
    """Sum over dimensions of the diagonal Student-t log density."""
    y = np.asarray(y, dtype=np.float64)
    d, s2 = st.dof, st.scale_sq
    per_dim = (
        special.gammaln((d + 1.0) / 2.0)
        - special.gammaln(d / 2.0)
        - 0.5 * np.log(d * np.pi * s2)
        - (d + 1.0) / 2.0 * np.log1p((y - st.loc) ** 2 / (d * s2))
    )
    return float(np.sum(per_dim))


def nig_log_density(mu: float, sigma2: float, p: NIGParams) -> float:
    """
    log p(mu, sigma2 | gamma, nu, alpha, beta) summed over dimensions:
    N(mu; gamma, sigma2/nu) * InvGamma(sigma2; alpha, beta).
    """
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise DataError(f"nig_log_density: sigma2 must be positive, got {sigma2}")
    mu = np.asarray(mu, dtype=np.float64)
    g, n, a, b = p.gamma, p.nu, p.alpha, p.beta
    log_normal = 0.5 * (np.log(n) - np.log(2.0 * np.pi * sigma2)) - n * (mu - g) ** 2 / (2.0 * sigma2)
    log_inv_gamma = a * np.log(b) - special.gammaln(a) - (a + 1.0) * np.log(sigma2) - b / sigma2
    return float(np.sum(log_normal + log_inv_gamma))
