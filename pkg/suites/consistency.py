"""
Consistency Suite
Ties the evidential NLL to the Student-t predictive and the NIG density to
its normalisation and marginal by quadrature.
"""

from __future__ import annotations
import logging

import numpy as np
from scipy import integrate

from core.edl_loss import nll
from core.nig import NIGParams, constrain_raw, nig_log_density, predictive, student_t_log_pdf
from core.sampler import RngStream
from core.suite_base import CheckFn, VerifySuite

logger = logging.getLogger(__name__)

QUAD_PARAMS = NIGParams(0.3, 2.0, 3.0, 2.0)


def _nig_pdf(mu: float, sigma2: float, p: NIGParams) -> float:
    return float(np.exp(nig_log_density(mu, sigma2, p)))


def _mu_limits(p: NIGParams, width: float = 40.0):
    """Finite mu range per sigma2; the conditional normal is negligible beyond it."""
    g, n = float(p.gamma[0]), float(p.nu[0])
    return (lambda s2: g - width * np.sqrt(s2 / n)), (lambda s2: g + width * np.sqrt(s2 / n))


class ConsistencySuite(VerifySuite):
    id = "consistency"
    display_name = "NLL / Student-t consistency"
    description = "Closed-form NLL equals the negative Student-t log density; NIG density normalises"

    def checks(self) -> dict[str, CheckFn]:
        return {
            "nll_matches_student_t": self.check_nll_student_t,
            "nig_normalises": self.check_normalisation,
            "quadrature_marginal": self.check_marginal,
            "constraints_hold": self.check_constraints,
            "beta_monotone": self.check_beta_monotone,
        }

    def check_nll_student_t(self) -> tuple[bool, str]:
        rng = RngStream(self.seed, 31)
        count = self.size(10_000, 1_000)
        worst = 0.0
        for _ in range(count):
            p = constrain_raw(rng.uniform(size=4) * 10.0 - 5.0)
            y = p.gamma + rng.normal(1) * 3.0
            worst = max(worst, abs(nll(y, p) + student_t_log_pdf(y, predictive(p))))
        return worst < 1e-8, f"{count} point(s), max |nll + log t| = {worst:.2e}"

    def check_normalisation(self) -> tuple[bool, str]:
        p = QUAD_PARAMS
        total, err = integrate.dblquad(
            lambda mu, s2: _nig_pdf(mu, s2, p),
            0.0, np.inf, *_mu_limits(p),
            epsabs=1e-10, epsrel=1e-10,
        )
        return abs(total - 1.0) < 1e-6, f"integral {total:.10f} (quadrature error {err:.1e})"

    def check_marginal(self) -> tuple[bool, str]:
        """At y = 0: N(y; mu, s2) integrated against the NIG density equals the Student-t pdf."""
        p = NIGParams(0.0, 1.0, 2.0, 1.0)
        y = 0.0

        def integrand(mu: float, s2: float) -> float:
            return float(np.exp(-0.5 * (y - mu) ** 2 / s2) / np.sqrt(2.0 * np.pi * s2)) * _nig_pdf(mu, s2, p)

        value, _ = integrate.dblquad(integrand, 0.0, np.inf, *_mu_limits(p), epsabs=1e-11, epsrel=1e-10)
        closed = float(np.exp(student_t_log_pdf(np.array([y]), predictive(p))))
        gap = abs(np.log(value) - np.log(closed))
        return gap < 1e-6, f"quadrature {value:.8f} vs Student-t {closed:.8f} (log gap {gap:.1e})"

    def check_constraints(self) -> tuple[bool, str]:
        rng = RngStream(self.seed, 32)
        raw = np.concatenate([rng.uniform(size=(self.size(10_000, 1_000), 4)) * 10.0 - 5.0,
                              np.array([[30.0] * 4, [-30.0] * 4])])
        p = constrain_raw(raw)
        ok = bool(np.all(p.nu > 0) and np.all(p.alpha > 1) and np.all(p.beta > 0))
        return ok, f"{raw.shape[0]} raw vector(s) including +-30 extremes"

    def check_beta_monotone(self) -> tuple[bool, str]:
        betas = np.linspace(0.1, 10.0, 50)
        scales = [float(predictive(NIGParams(0.0, 1.5, 2.5, b)).scale_sq[0]) for b in betas]
        ok = bool(np.all(np.diff(scales) > 0))
        return ok, f"scale_sq from {scales[0]:.4f} to {scales[-1]:.4f} over beta in [0.1, 10]"
