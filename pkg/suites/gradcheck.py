"""
Gradient Suite
Central-difference gate for every hand-written gradient in the project.

Checks:
  toy_network     2-layer tanh network through the tape
  edl_gradient    analytic edl_grad at random NIG points (1000, quick 100)
  end_to_end      full multi-source desk-model loss on random mini-batches
                  (20, quick 3), sampling noise replayed between evaluations
"""

from __future__ import annotations
import logging

import numpy as np

from core import numerics as nx
from core.backbone import BelleModel
from core.corpus import CorpusSpec, render_utterance, rendition_seed, sample_texts
from core.edl_loss import edl_grad, edl_loss
from core.model_config import ModelConfig
from core.nig import NIGParams
from core.sampler import RngStream
from core.settings import DEFAULT_TEACHER_WEIGHTS
from core.suite_base import CheckFn, VerifySuite
from core.trainer import Objective, TrainingExample, gradient_check

logger = logging.getLogger(__name__)

H = 1e-5
TOL = 1e-4
# absolute agreement accepted where |numeric| sits at the differencing noise floor
NOISE_FLOOR = 1e-7
KINK_CLEARANCE = 1e-2
E2E_SOURCES = (0, 1)


def within_tolerance(report: nx.GradCheckReport, tol: float = TOL) -> bool:
    if report.nonfinite_index is not None or report.kinks:
        return False
    if report.passed:
        return True
    gap = np.abs(report.analytic - report.numeric)
    return bool(np.all(gap <= tol * np.abs(report.numeric) + NOISE_FLOOR))


def random_nig_point(rng: RngStream) -> tuple[float, NIGParams, float]:
    """(y, p, lambda) with y kept clear of the regularizer kink at y = gamma."""
    gamma = float(rng.normal() * 1.5)
    offset = 0.0
    while abs(offset) < KINK_CLEARANCE:
        offset = float(rng.normal() * 1.5)
    nu, a, beta = np.exp(rng.uniform(size=3) * 4.0 - 2.0)
    p = NIGParams(gamma, nu, 1.0 + a, beta)
    return gamma + offset, p, float(rng.uniform())


class GradCheckSuite(VerifySuite):
    id = "gradcheck"
    display_name = "Gradient gate"
    description = "Tape and analytic gradients against central finite differences"

    def checks(self) -> dict[str, CheckFn]:
        return {
            "toy_network": self.check_toy_network,
            "edl_gradient": self.check_edl_gradient,
            "end_to_end": self.check_end_to_end,
        }

    # ------------------------------------------------------------------ #

    def check_toy_network(self) -> tuple[bool, str]:
        rng = RngStream(self.seed, 11)
        x = rng.normal((8, 3))
        target = rng.normal((8, 1))
        shapes = [(3, 5), (5,), (5, 1), (1,)]
        sizes = [int(np.prod(s)) for s in shapes]
        theta = rng.normal(sum(sizes)) * 0.5

        def unpack(t: nx.Tensor) -> list[nx.Tensor]:
            out, start = [], 0
            for shape, size in zip(shapes, sizes):
                out.append(nx.reshape(nx.index(t, slice(start, start + size)), shape))
                start += size
            return out

        def loss(t: nx.Tensor) -> nx.Tensor:
            w1, b1, w2, b2 = unpack(t)
            hidden = nx.tanh(nx.linear(x, w1, b1))
            return nx.mean(nx.square(nx.sub(nx.linear(hidden, w2, b2), target)))

        report = nx.finite_difference_check(loss, theta, h=H, tol=TOL)
        return within_tolerance(report), report.summary

    def check_edl_gradient(self) -> tuple[bool, str]:
        rng = RngStream(self.seed, 12)
        count = self.size(1000, 100)
        worst, failures = 0.0, 0
        for _ in range(count):
            y, p, lam = random_nig_point(rng)

            def loss(t: nx.Tensor, y=y, lam=lam) -> nx.Tensor:
                g, n, a, b = t.data
                return nx.Tensor(edl_loss(np.array([y]), NIGParams(g, n, a, b), lam).total)

            point = np.concatenate([p.gamma, p.nu, p.alpha, p.beta])
            analytic = np.concatenate(edl_grad(np.array([y]), p, lam))
            report = nx.finite_difference_check(loss, point, h=H, tol=TOL, analytic=analytic)
            worst = max(worst, report.max_rel_error)
            if not within_tolerance(report):
                failures += 1
                logger.debug(f"[verify:{self.id}] edl point y={y:.4f} {p}: {report.summary}")
        return failures == 0, f"{count} point(s), {failures} failure(s), max relative error {worst:.2e}"

    def check_end_to_end(self) -> tuple[bool, str]:
        spec = CorpusSpec(seed=self.seed)
        model = BelleModel(ModelConfig.from_preset("desk"), seed=self.seed)
        batches = self.size(20, 3)
        texts = sample_texts(spec, batches)
        weights = DEFAULT_TEACHER_WEIGHTS
        checked, failed = 0, []
        for b, (text, speaker) in enumerate(texts):
            examples = [
                TrainingExample(u.text, u.mel, k, weights[k], speaker)
                for k in E2E_SOURCES
                for u in [render_utterance(text, speaker, k, rendition_seed(b, k, spec), spec)]
            ]
            for name, report in gradient_check(model, examples, self.seed + b, Objective(), h=H, tol=TOL):
                checked += len(report.coords)
                if not within_tolerance(report):
                    failed.append(f"batch {b} {name}: {report.summary}")
        for line in failed[:5]:
            logger.warning(f"[verify:{self.id}] {line}")
        return not failed, f"{batches} batch(es), {checked} coordinate(s), {len(failed)} failing parameter(s)"
