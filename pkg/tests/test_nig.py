import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from core import numerics as nx
from core.errors import DataError, ShapeError
from core.nig import (
    EPS,
    NIGParams,
    constrain_raw,
    constrain_raw_tensor,
    nig_log_density,
    predictive,
    student_t_log_pdf,
)


class TestConstrainRaw:
    def test_zero_raw(self):
        p = constrain_raw(np.zeros(4))
        assert p.gamma[0] == 0.0
        assert p.nu[0] == pytest.approx(np.log(2.0) + EPS)
        assert p.alpha[0] == pytest.approx(1.0 + EPS + np.log(2.0))
        assert p.beta[0] == pytest.approx(np.log(2.0) + EPS)

    def test_block_layout(self):
        p = constrain_raw(np.array([1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
        assert_allclose(p.gamma, [1.0, 2.0])
        assert p.dim == 2

    @pytest.mark.parametrize("value", [-30.0, 30.0])
    def test_extremes_stay_valid(self, value):
        p = constrain_raw(np.full(4, value)).validate()
        assert p.nu[0] > 0 and p.alpha[0] > 1 and p.beta[0] > 0

    def test_rejects_width_not_multiple_of_four(self):
        with pytest.raises(ShapeError):
            constrain_raw(np.zeros(6))

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            constrain_raw(np.array([0.0, np.nan, 0.0, 0.0]))

    def test_tensor_version_matches(self):
        raw = np.linspace(-3.0, 3.0, 16).reshape(2, 8)
        p = constrain_raw(raw)
        g, n, a, b = constrain_raw_tensor(nx.Tensor(raw))
        for tensor, ref in zip((g, n, a, b), (p.gamma, p.nu, p.alpha, p.beta)):
            assert_allclose(tensor.data, ref, rtol=1e-14)


class TestNIGParams:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            NIGParams(np.zeros(2), np.ones(3), np.full(2, 2.0), np.ones(2))

    def test_validate_rejects_alpha_at_one(self):
        with pytest.raises(DataError):
            NIGParams(0.0, 1.0, 1.0, 1.0).validate()

    def test_frame_and_beta_scale(self):
        p = NIGParams(np.zeros((3, 2)), np.ones((3, 2)), np.full((3, 2), 2.0), np.ones((3, 2)))
        assert p.frame(1).gamma.shape == (2,)
        assert_allclose(p.with_beta_scale(2.0).beta, 2.0)


class TestPredictive:
    def test_reference_point(self):
        st = predictive(NIGParams(0.0, 1.0, 2.0, 1.0))
        assert st.loc[0] == 0.0
        assert st.scale_sq[0] == pytest.approx(1.0)
        assert st.dof[0] == 4.0

    def test_log_pdf_matches_scipy(self):
        p = NIGParams(np.array([0.5, -1.0]), np.array([2.0, 0.7]), np.array([3.0, 1.5]), np.array([0.8, 2.5]))
        st = predictive(p)
        y = np.array([0.1, 0.4])
        ref = stats.t.logpdf(y, df=st.dof, loc=st.loc, scale=np.sqrt(st.scale_sq)).sum()
        assert student_t_log_pdf(y, st) == pytest.approx(ref, rel=1e-12)

    def test_scale_grows_with_beta(self):
        small = predictive(NIGParams(0.0, 1.0, 2.0, 1.0)).scale_sq[0]
        large = predictive(NIGParams(0.0, 1.0, 2.0, 3.0)).scale_sq[0]
        assert large == pytest.approx(3.0 * small)


class TestDensity:
    def test_factorises_into_normal_and_inverse_gamma(self):
        p = NIGParams(0.3, 2.0, 3.0, 2.0)
        mu, s2 = 0.1, 0.7
        ref = (stats.norm.logpdf(mu, loc=0.3, scale=np.sqrt(s2 / 2.0))
               + stats.invgamma.logpdf(s2, a=3.0, scale=2.0))
        assert nig_log_density(mu, s2, p) == pytest.approx(ref, rel=1e-12)

    def test_sigma2_must_be_positive(self):
        with pytest.raises(DataError):
            nig_log_density(0.0, 0.0, NIGParams(0.0, 1.0, 2.0, 1.0))
