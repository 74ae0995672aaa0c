"""
Sampler Suite
Monte-Carlo checks of the inverse-gamma draw, the hierarchical NIG sampler and
the Gaussian baseline against closed-form moments and distributions.
Quick mode uses a tenth of the draws and widens tolerances by sqrt(10).
"""

from __future__ import annotations
import logging

import numpy as np
from scipy import stats

from core.nig import NIGParams, predictive
from core.sampler import (
    GaussianHead,
    RngStream,
    kl_gaussian_to_prior,
    sample_gaussian_baseline,
    sample_hierarchical,
    sample_inverse_gamma,
)
from core.suite_base import CheckFn, VerifySuite

logger = logging.getLogger(__name__)

REFERENCE = NIGParams(0.0, 1.0, 2.0, 1.0)
BETA_SCALE_STREAMS = {0.5: 240, 1.0: 241, 2.0: 242}


def _rel(value: float, target: float) -> float:
    return abs(value - target) / abs(target)


class SamplerSuite(VerifySuite):
    id = "sampler"
    display_name = "Sampler moments"
    description = "Inverse-gamma and hierarchical draws against exact moments, KS and KL oracles"

    @property
    def draws(self) -> int:
        return self.size(1_000_000, 100_000)

    @property
    def slack(self) -> float:
        return float(np.sqrt(10.0)) if self.quick else 1.0

    def checks(self) -> dict[str, CheckFn]:
        return {
            "inverse_gamma_moments": self.check_inverse_gamma,
            "hierarchical_moments": self.check_hierarchical,
            "student_t_marginal": self.check_marginal,
            "beta_scale_variance": self.check_beta_scale,
            "degenerate_limit": self.check_degenerate_limit,
            "gaussian_kl": self.check_gaussian_kl,
            "deterministic_replay": self.check_replay,
        }

    def _hierarchical_draws(self, p: NIGParams, stream: int, beta_scale: float = 1.0) -> np.ndarray:
        n = self.draws
        tiled = NIGParams(*(np.full(n, float(a[0])) for a in (p.gamma, p.nu, p.alpha, p.beta)))
        return sample_hierarchical(tiled, RngStream(self.seed, stream), beta_scale)

    # ------------------------------------------------------------------ #

    def check_inverse_gamma(self) -> tuple[bool, str]:
        n = self.draws
        s = sample_inverse_gamma(np.full(n, 3.0), np.full(n, 4.0), RngStream(self.seed, 21))
        mean_err, var_err = _rel(s.mean(), 2.0), _rel(s.var(), 4.0)
        ok = s.min() > 0 and mean_err < 0.01 * self.slack and var_err < 0.03 * self.slack
        return ok, f"mean {s.mean():.4f} (rel {mean_err:.2%}), var {s.var():.4f} (rel {var_err:.2%})"

    def check_hierarchical(self) -> tuple[bool, str]:
        z = self._hierarchical_draws(REFERENCE, 22)
        se = z.std() / np.sqrt(z.size)
        var_err = _rel(z.var(), 2.0)
        ok = abs(z.mean()) < 4.0 * se and var_err < 0.02 * self.slack
        return ok, f"mean {z.mean():+.5f} ({abs(z.mean()) / se:.2f} SE), var {z.var():.4f} (rel {var_err:.2%})"

    def check_marginal(self) -> tuple[bool, str]:
        z = self._hierarchical_draws(REFERENCE, 23)
        st = predictive(REFERENCE)
        dist = stats.t(df=float(st.dof[0]), loc=float(st.loc[0]), scale=float(np.sqrt(st.scale_sq[0])))
        ks = stats.kstest(z, dist.cdf)
        return ks.statistic < 0.002 * self.slack, f"KS statistic {ks.statistic:.5f} (p={ks.pvalue:.3f})"

    def beta_scale_draws(self, beta_scale: float) -> np.ndarray:
        """Draws at one beta scale; every scale reads its own stream."""
        return self._hierarchical_draws(REFERENCE, BETA_SCALE_STREAMS[beta_scale], beta_scale)

    def check_beta_scale(self) -> tuple[bool, str]:
        # Var[z] = beta_scale * beta * (1 + 1/nu) / (alpha - 1) = 2 * beta_scale for REFERENCE
        variances = {s: float(self.beta_scale_draws(s).var()) for s in BETA_SCALE_STREAMS}
        worst = max(_rel(v, 2.0 * s) for s, v in variances.items())
        monotone = variances[0.5] < variances[1.0] < variances[2.0]
        detail = ", ".join(f"scale {s}: {v:.4f}" for s, v in variances.items())
        return monotone and worst < 0.05 * self.slack, f"{detail}, worst relative error {worst:.2%}"

    def check_degenerate_limit(self) -> tuple[bool, str]:
        n = 1000
        p = NIGParams(np.linspace(-1.0, 1.0, n), np.full(n, 1e12), np.full(n, 2.0), np.full(n, 1e-12))
        z = sample_hierarchical(p, RngStream(self.seed, 25))
        err = float(np.max(np.abs(z - p.gamma)))
        return err < 1e-4, f"max |z - gamma| = {err:.2e}"

    def check_gaussian_kl(self) -> tuple[bool, str]:
        """Closed-form KL against a Monte-Carlo log-ratio estimate on random D=4 heads."""
        rng = RngStream(self.seed, 26)
        heads = self.size(100, 10)
        n = self.draws
        worst = 0.0
        for i in range(heads):
            y = rng.normal(4)
            h = GaussianHead(y + rng.normal(4), rng.uniform(size=4) * 2.0 - 1.0)
            sigma = np.exp(0.5 * h.log_sigma2)
            z = h.mu + sigma * RngStream(self.seed, 1000 + i).normal((n, 4))
            log_q = stats.norm.logpdf(z, loc=h.mu, scale=sigma).sum(axis=1)
            log_p = stats.norm.logpdf(z, loc=y, scale=1.0).sum(axis=1)
            worst = max(worst, _rel(float(np.mean(log_q - log_p)), kl_gaussian_to_prior(h, y)))
        return worst < 0.01 * self.slack, f"{heads} head(s), worst relative gap {worst:.3%}"

    def check_replay(self) -> tuple[bool, str]:
        p = NIGParams(np.zeros(16), np.ones(16), np.full(16, 2.0), np.ones(16))
        a = sample_hierarchical(p, RngStream(self.seed, 27))
        b = sample_hierarchical(p, RngStream(self.seed, 27))
        c = sample_hierarchical(p, RngStream(self.seed, 28))
        h = GaussianHead(np.zeros(16), np.zeros(16))
        g1 = sample_gaussian_baseline(h, RngStream(self.seed, 29))
        g2 = sample_gaussian_baseline(h, RngStream(self.seed, 29))
        ok = np.array_equal(a, b) and not np.array_equal(a, c) and np.array_equal(g1, g2)
        return ok, "same (seed, stream) replays bit-exactly; distinct streams differ" if ok else "replay mismatch"
