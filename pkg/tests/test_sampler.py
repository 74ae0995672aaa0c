import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core import numerics as nx
from core.errors import ConfigError, DataError
from core.nig import NIGParams
from core.sampler import (
    LOG_SIGMA2_FLOOR,
    GaussianHead,
    ReplayRng,
    RngStream,
    kl_gaussian_tensor,
    kl_gaussian_to_prior,
    sample_gaussian_baseline,
    sample_gaussian_tensor,
    sample_hierarchical,
    sample_hierarchical_tensor,
    sample_inverse_gamma,
)

N = 200_000


def tiled(p: NIGParams, n: int = N) -> NIGParams:
    return NIGParams(*(np.full(n, float(a[0])) for a in (p.gamma, p.nu, p.alpha, p.beta)))


class TestRngStream:
    def test_same_key_same_draws(self):
        assert_array_equal(RngStream(7, 3).normal(10), RngStream(7, 3).normal(10))

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(7, 3).normal(10), RngStream(7, 4).normal(10))

    def test_child_offsets_stream(self):
        assert_array_equal(RngStream(7, 3).child(2).uniform(5), RngStream(7, 5).uniform(5))


class TestReplayRng:
    def test_rewind_replays(self):
        replay = ReplayRng(RngStream(1, 0))
        first = [replay.normal(3), replay.uniform(2)]
        replay.rewind()
        second = [replay.normal(3), replay.uniform(2)]
        for a, b in zip(first, second):
            assert_array_equal(a, b)

    def test_continues_past_recording(self):
        replay = ReplayRng(RngStream(1, 0))
        a = replay.normal(3)
        b = replay.normal(3)
        assert not np.array_equal(a, b)


class TestInverseGamma:
    def test_mean_and_support(self):
        s = sample_inverse_gamma(np.full(N, 3.0), np.full(N, 4.0), RngStream(0, 1))
        assert s.min() > 0
        assert s.mean() == pytest.approx(2.0, rel=0.02)

    def test_constraint_violation(self):
        with pytest.raises(DataError):
            sample_inverse_gamma(np.array([1.0]), np.array([1.0]), RngStream(0))

    def test_deterministic(self):
        a = sample_inverse_gamma(np.full(5, 3.0), np.full(5, 4.0), RngStream(2, 9))
        b = sample_inverse_gamma(np.full(5, 3.0), np.full(5, 4.0), RngStream(2, 9))
        assert_array_equal(a, b)


class TestHierarchical:
    P = NIGParams(0.5, 2.0, 6.0, 5.0)  # Var(z) = 5 * 3 / (2 * 5) = 1.5

    def test_moments(self):
        z = sample_hierarchical(tiled(self.P), RngStream(0, 2))
        se = z.std() / np.sqrt(z.size)
        assert abs(z.mean() - 0.5) < 4.0 * se
        assert z.var() == pytest.approx(1.5, rel=0.03)

    def test_beta_scale_doubles_variance(self):
        one = sample_hierarchical(tiled(self.P), RngStream(0, 3)).var()
        two = sample_hierarchical(tiled(self.P), RngStream(0, 3), beta_scale=2.0).var()
        assert two / one == pytest.approx(2.0, rel=0.05)

    def test_degenerate_limit(self):
        p = tiled(NIGParams(0.3, 1e12, 2.0, 1e-12), 1000)
        z = sample_hierarchical(p, RngStream(0, 4))
        assert np.max(np.abs(z - 0.3)) < 1e-4

    def test_beta_scale_must_be_positive(self):
        with pytest.raises(ConfigError):
            sample_hierarchical(self.P, RngStream(0), beta_scale=0.0)

    def test_tensor_draw_skips_alpha_and_beta(self):
        leaves = [nx.Tensor(np.full(3, v), requires_grad=True) for v in (0.0, 1.0, 3.0, 2.0)]
        with nx.GradTape() as tape:
            z = sample_hierarchical_tensor(*leaves, RngStream(0, 5))
            out = nx.sum_(z)
        grads = nx.backward(tape, out)
        assert_allclose(grads[leaves[0]], np.ones(3))
        assert np.any(grads[leaves[1]] != 0.0)
        assert leaves[2] not in grads and leaves[3] not in grads


class TestGaussianBaseline:
    def test_zero_variance_floor(self):
        h = GaussianHead(np.array([1.0, -2.0]), np.array([-np.inf, -1e9]))
        assert_allclose(sample_gaussian_baseline(h, RngStream(0)), h.mu, atol=1e-5)

    def test_moments(self):
        h = GaussianHead(np.full(N, 0.7), np.full(N, np.log(2.0)))
        z = sample_gaussian_baseline(h, RngStream(0, 6))
        assert z.mean() == pytest.approx(0.7, abs=0.02)
        assert z.var() == pytest.approx(2.0, rel=0.02)

    def test_reparameterised_mean_gradient(self):
        mu = nx.Tensor(np.zeros(4), requires_grad=True)
        log_s2 = nx.Tensor(np.zeros(4), requires_grad=True)
        with nx.GradTape() as tape:
            out = nx.sum_(sample_gaussian_tensor(mu, log_s2, RngStream(0, 7)))
        assert_allclose(nx.backward(tape, out)[mu], np.ones(4))

    def test_floor_constant(self):
        assert LOG_SIGMA2_FLOOR == -30.0


class TestKl:
    def test_identical_is_zero(self):
        assert kl_gaussian_to_prior(GaussianHead(np.array([0.3]), np.array([0.0])), np.array([0.3])) == 0.0

    def test_variance_e(self):
        value = kl_gaussian_to_prior(GaussianHead(np.array([0.0]), np.array([1.0])), np.array([0.0]))
        assert value == pytest.approx((np.e - 2.0) / 2.0, rel=1e-12)

    def test_nonnegative(self):
        rng = RngStream(0, 8)
        for _ in range(100):
            h = GaussianHead(rng.normal(3), 2.0 * rng.normal(3))
            assert kl_gaussian_to_prior(h, rng.normal(3)) >= 0.0

    def test_tensor_version_averages_frames(self):
        mu = np.array([[0.0], [1.0]])
        log_s2 = np.array([[1.0], [0.0]])
        y = np.zeros((2, 1))
        per = [kl_gaussian_to_prior(GaussianHead(mu[t], log_s2[t]), y[t]) for t in range(2)]
        assert kl_gaussian_tensor(nx.Tensor(mu), nx.Tensor(log_s2), y).item() == pytest.approx(np.mean(per))
