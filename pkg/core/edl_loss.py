"""
Evidential loss
Negative log-likelihood of the NIG marginal, the evidence regularizer, their
lambda-weighted combination and analytic gradients for all four parameter blocks.

Per dimension, with Omega = 2 beta (1 + nu):
  nll = 1/2 log(pi/nu) - alpha log Omega + (alpha + 1/2) log(nu (y-gamma)^2 + Omega)
        + lgamma(alpha) - lgamma(alpha + 1/2)
  reg = |y - gamma| (2 nu + alpha)

Values are summed over dimensions. Arrays with a leading frame axis are summed
over D and averaged over frames (see edl_loss_op).
"""

from __future__ import annotations
import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from core import numerics as nx
from core.errors import ConfigError, ShapeError
from core.nig import NIGParams

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5


@dataclass(frozen=True)
class EdlLossBreakdown:
    nll: float
    reg: float
    total: float
    lam: float


def _nll_terms(y, g, n, a, b) -> np.ndarray:
    omega = 2.0 * b * (1.0 + n)
    return (
        0.5 * np.log(np.pi / n)
        - a * np.log(omega)
        + (a + 0.5) * np.log(n * (y - g) ** 2 + omega)
        + special.gammaln(a)
        - special.gammaln(a + 0.5)
    )


def _reg_terms(y, g, n, a) -> np.ndarray:
    return np.abs(y - g) * (2.0 * n + a)


def _check(y, p: NIGParams) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.gamma.shape:
        raise ShapeError("edl_loss", y.shape, p.gamma.shape)
    return y


def nll(y, p: NIGParams) -> float:
    y = _check(y, p)
    return float(np.sum(_nll_terms(y, p.gamma, p.nu, p.alpha, p.beta)))


def evidence_regularizer(y, p: NIGParams) -> float:
    y = _check(y, p)
    return float(np.sum(_reg_terms(y, p.gamma, p.nu, p.alpha)))


def edl_loss(y, p: NIGParams, lam: float = DEFAULT_LAMBDA) -> EdlLossBreakdown:
    if lam < 0:
        raise ConfigError(f"edl_loss: lambda must be >= 0, got {lam}")
    n_val = nll(y, p)
    r_val = evidence_regularizer(y, p)
    return EdlLossBreakdown(nll=n_val, reg=r_val, total=n_val + lam * r_val, lam=lam)


def edl_grad(y, p: NIGParams, lam: float = DEFAULT_LAMBDA) -> tuple[np.ndarray, ...]:
    """(d/dgamma, d/dnu, d/dalpha, d/dbeta) of nll + lam * reg, element-wise."""
    y = _check(y, p)
    g, n, a, b = p.gamma, p.nu, p.alpha, p.beta
    r = y - g
    omega = 2.0 * b * (1.0 + n)
    q = n * r * r + omega
    sign = np.sign(r)  # 0 at the kink

    d_gamma = -(a + 0.5) * 2.0 * n * r / q - lam * sign * (2.0 * n + a)
    d_nu = (
        -0.5 / n
        - a * 2.0 * b / omega
        + (a + 0.5) * (r * r + 2.0 * b) / q
        + lam * np.abs(r) * 2.0
    )
    d_alpha = (
        -np.log(omega)
        + np.log(q)
        + special.digamma(a)
        - special.digamma(a + 0.5)
        + lam * np.abs(r)
    )
    d_beta = -a * 2.0 * (1.0 + n) / omega + (a + 0.5) * 2.0 * (1.0 + n) / q
    return d_gamma, d_nu, d_alpha, d_beta


def edl_loss_op(y, gamma: nx.Tensor, nu: nx.Tensor, alpha: nx.Tensor, beta: nx.Tensor,
                lam: float = DEFAULT_LAMBDA) -> nx.Tensor:
    """
    Tape-recorded EDL total over (T, D) arrays: summed over D, mean over T.
    The backward pass uses edl_grad directly.
    """
    y = np.asarray(y, dtype=np.float64)
    p = NIGParams(gamma.data, nu.data, alpha.data, beta.data)
    y = _check(y, p)
    frames = y.shape[0] if y.ndim > 1 else 1
    per = _nll_terms(y, p.gamma, p.nu, p.alpha, p.beta) + lam * _reg_terms(y, p.gamma, p.nu, p.alpha)
    value = np.sum(per) / frames
    grads = edl_grad(y, p, lam)

    def vjp(g_out):
        scale = float(np.asarray(g_out).reshape(-1)[0]) / frames
        return tuple(gr * scale for gr in grads)

    return nx.custom_op("edl_loss", (gamma, nu, alpha, beta), np.asarray(value), vjp)
