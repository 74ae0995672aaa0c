import numpy as np
import pytest
from numpy.testing import assert_allclose

from core import numerics as nx
from core.edl_loss import edl_grad, edl_loss, edl_loss_op, evidence_regularizer, nll
from core.errors import ConfigError, ShapeError
from core.nig import NIGParams, constrain_raw, predictive, student_t_log_pdf
from core.sampler import RngStream

REFERENCE = NIGParams(0.0, 1.0, 2.0, 1.0)
NLL_AT_ZERO = 0.980829253011726  # -log(0.375)


class TestNll:
    def test_reference_value(self):
        assert nll(np.array([0.0]), REFERENCE) == pytest.approx(NLL_AT_ZERO, rel=1e-10)

    def test_minimised_at_location(self):
        p = NIGParams(0.7, 1.3, 2.5, 0.9)
        at = nll(np.array([0.7]), p)
        for y in (0.2, 0.69, 0.71, 1.5):
            assert nll(np.array([y]), p) > at

    def test_equals_negative_student_t(self):
        rng = RngStream(5, 0)
        for _ in range(200):
            p = constrain_raw(rng.uniform(size=12) * 10.0 - 5.0)
            y = p.gamma + 3.0 * rng.normal(3)
            assert nll(y, p) + student_t_log_pdf(y, predictive(p)) == pytest.approx(0.0, abs=1e-8)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nll(np.zeros(2), REFERENCE)


class TestRegularizer:
    def test_zero_at_location(self):
        assert evidence_regularizer(np.array([0.0]), REFERENCE) == 0.0

    def test_unit_residual(self):
        assert evidence_regularizer(np.array([1.0]), REFERENCE) == pytest.approx(4.0)

    def test_linear_in_residual(self):
        one = evidence_regularizer(np.array([1.5]), REFERENCE)
        assert evidence_regularizer(np.array([3.0]), REFERENCE) == pytest.approx(2.0 * one)

    def test_outgrows_nll(self):
        ratios = [evidence_regularizer(np.array([r]), REFERENCE) / nll(np.array([r]), REFERENCE)
                  for r in (10.0, 100.0, 1000.0)]
        assert ratios[0] < ratios[1] < ratios[2]


class TestEdlLoss:
    def test_lambda_zero_is_nll(self):
        y = np.array([0.4])
        assert edl_loss(y, REFERENCE, 0.0).total == nll(y, REFERENCE)

    def test_reference_total(self):
        out = edl_loss(np.array([0.0]), REFERENCE, 0.5)
        assert out.reg == 0.0
        assert out.total == pytest.approx(NLL_AT_ZERO, rel=1e-10)

    def test_unit_residual_total(self):
        out = edl_loss(np.array([1.0]), REFERENCE, 0.5)
        assert out.total == pytest.approx(nll(np.array([1.0]), REFERENCE) + 2.0)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ConfigError):
            edl_loss(np.array([0.0]), REFERENCE, -0.1)

    def test_translation_equivariant(self):
        p = NIGParams(np.array([0.2, -0.4]), np.array([1.5, 0.3]), np.array([2.0, 4.0]), np.array([0.5, 1.2]))
        y = np.array([0.9, 0.1])
        shifted = NIGParams(p.gamma + 7.0, p.nu, p.alpha, p.beta)
        assert edl_loss(y + 7.0, shifted).total == pytest.approx(edl_loss(y, p).total, rel=1e-12)


class TestEdlGrad:
    def test_regularizer_sign_above_location(self):
        d_gamma, *_ = edl_grad(np.array([1.0]), REFERENCE, lam=1.0)
        d_gamma_nll, *_ = edl_grad(np.array([1.0]), REFERENCE, lam=0.0)
        assert d_gamma - d_gamma_nll == pytest.approx(-(2.0 * 1.0 + 2.0))

    def test_stationary_at_location(self):
        d_gamma, *_ = edl_grad(np.array([0.0]), REFERENCE, lam=0.5)
        assert d_gamma[0] == 0.0

    def test_blocks_match_finite_differences(self):
        rng = RngStream(11, 0)
        for _ in range(50):
            p = constrain_raw(rng.uniform(size=8) * 4.0 - 2.0)
            offset = rng.normal(2)
            y = p.gamma + offset + np.sign(offset) * 0.1
            lam = float(rng.uniform())
            point = np.concatenate([p.gamma, p.nu, p.alpha, p.beta])

            def f(t):
                g, n, a, b = np.split(t.data, 4)
                return nx.Tensor(edl_loss(y, NIGParams(g, n, a, b), lam).total)

            report = nx.finite_difference_check(f, point, analytic=np.concatenate(edl_grad(y, p, lam)))
            assert np.all((report.rel_errors < 1e-4) | (np.abs(report.analytic - report.numeric) < 1e-7)), \
                report.summary

    def test_gradients_finite_at_constraint_floor(self):
        p = constrain_raw(np.full(4, -30.0))
        grads = edl_grad(np.array([5.0]), p)
        assert all(np.all(np.isfinite(g)) for g in grads)


class TestEdlLossOp:
    def test_mean_over_frames(self):
        p = NIGParams(np.zeros((2, 1)), np.ones((2, 1)), np.full((2, 1), 2.0), np.ones((2, 1)))
        y = np.array([[0.0], [1.0]])
        tensors = [nx.Tensor(a) for a in (p.gamma, p.nu, p.alpha, p.beta)]
        expected = (edl_loss(y[0], p.frame(0)).total + edl_loss(y[1], p.frame(1)).total) / 2
        assert edl_loss_op(y, *tensors).item() == pytest.approx(expected)

    def test_backward_uses_analytic_gradient(self):
        p = NIGParams(np.full((3, 2), 0.1), np.ones((3, 2)), np.full((3, 2), 2.0), np.ones((3, 2)))
        y = np.linspace(-1.0, 1.0, 6).reshape(3, 2)
        leaves = [nx.Tensor(a, requires_grad=True) for a in (p.gamma, p.nu, p.alpha, p.beta)]
        with nx.GradTape() as tape:
            out = edl_loss_op(y, *leaves)
        grads = nx.backward(tape, out)
        for leaf, ref in zip(leaves, edl_grad(y, p)):
            assert_allclose(grads[leaf], ref / 3.0)
