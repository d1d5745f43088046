"""Estimation layer: residualization, 2SLS, degrees-of-freedom policy."""

import math

import numpy as np
import pytest

from weakiv.errors import NoIdentificationError, SingularDesignError
from weakiv.model import ModelData, estimate_2sls, partial_out, residual_dof

from helpers import dataset_with_stats


def _random_data(n=50, k_w=3, seed=1, with_intercept=True):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, k_w))
    if with_intercept:
        w = np.column_stack([np.ones(n), w])
    z = rng.standard_normal(n)
    x = 0.5 * z + rng.standard_normal(n) + w @ rng.standard_normal(w.shape[1])
    y = 2.0 * x + rng.standard_normal(n) + w @ rng.standard_normal(w.shape[1])
    return ModelData(y=y, x=x, z=z, w=w)


class TestPartialOut:
    def test_no_controls_is_identity(self):
        rng = np.random.default_rng(0)
        data = ModelData(y=rng.standard_normal(20), x=rng.standard_normal(20), z=rng.standard_normal(20))
        out = partial_out(data)
        assert out is data

    def test_intercept_only_demeans(self):
        y = np.array([1.0, 2.0, 3.0, 4.0])
        data = ModelData(y=y, x=y * 2, z=y - 1, w=np.ones((4, 1)))
        out = partial_out(data)
        np.testing.assert_allclose(out.y, [-1.5, -0.5, 0.5, 1.5], atol=1e-14)
        np.testing.assert_allclose(out.x, [-3.0, -1.0, 1.0, 3.0], atol=1e-14)
        assert out.w is None
        assert out.n_partialled == 1

    def test_idempotent(self):
        data = _random_data()
        once = partial_out(data)
        twice = partial_out(once)
        np.testing.assert_allclose(once.y, twice.y, atol=1e-12)
        np.testing.assert_allclose(once.x, twice.x, atol=1e-12)
        np.testing.assert_allclose(once.z, twice.z, atol=1e-12)

    def test_rank_deficient_controls_raise(self):
        n = 30
        rng = np.random.default_rng(2)
        col = rng.standard_normal(n)
        w = np.column_stack([col, 2 * col])
        data = ModelData(y=rng.standard_normal(n), x=rng.standard_normal(n), z=rng.standard_normal(n), w=w)
        with pytest.raises(SingularDesignError):
            partial_out(data)

    def test_instrument_collinear_with_controls_raises(self):
        n = 30
        rng = np.random.default_rng(3)
        w = np.column_stack([np.ones(n), rng.standard_normal(n)])
        z = w @ np.array([0.3, -1.2])
        data = ModelData(y=rng.standard_normal(n), x=rng.standard_normal(n), z=z, w=w)
        with pytest.raises(NoIdentificationError):
            partial_out(data)

    def test_dof_carries_partialled_columns(self):
        data = _random_data(n=50, k_w=3)
        assert data.dof == residual_dof(50, 4)
        out = partial_out(data)
        assert out.dof == residual_dof(50, 4)


class TestDofPolicy:
    def test_no_controls(self):
        assert residual_dof(1000, 0) == 999

    def test_intercept_plus_three_controls(self):
        assert residual_dof(1000, 4) == 995

    def test_too_few_observations(self):
        with pytest.raises(ValueError):
            residual_dof(3, 3)

    def test_ar_statistic_scales_exactly_with_divisor_ratio(self):
        # recomputing the raw AR statistic with a different divisor
        # rescales it by exactly the divisor ratio
        from weakiv.ar import ar_statistic_raw

        data = _random_data(n=40, k_w=0, with_intercept=False)
        beta0 = 0.7
        ar = ar_statistic_raw(data, beta0)
        e0 = data.y - beta0 * data.x
        zz = data.z @ data.z
        ze = data.z @ e0
        for divisor in (data.n, data.n - 5):
            manual = ze**2 / ((e0 @ e0 / divisor) * zz)
            assert manual == pytest.approx(ar * divisor / data.dof, rel=1e-12)


class TestEstimate2SLS:
    def test_matches_ratio_of_sums_oracle(self):
        n = 30
        rng = np.random.default_rng(7)
        z = rng.integers(-3, 4, n).astype(float)
        z[0] = 2.0  # ensure non-degenerate
        x = rng.integers(-5, 6, n).astype(float) + 0.25
        y = rng.integers(-5, 6, n).astype(float) - 0.5
        if abs(z @ x) < 1e-9:
            x[0] += 1.0
        stats = estimate_2sls(ModelData(y=y, x=x, z=z))
        beta_oracle = math.fsum(zi * yi for zi, yi in zip(z, y)) / math.fsum(
            zi * xi for zi, xi in zip(z, x)
        )
        assert stats.beta_hat == pytest.approx(beta_oracle, rel=1e-12)

    def test_exact_fit_reports_degenerate_rho(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(25)
        z = x + rng.standard_normal(25) * 0.1
        stats = estimate_2sls(ModelData(y=2.0 * x, x=x, z=z))
        assert stats.beta_hat == pytest.approx(2.0, rel=1e-12)
        assert stats.rho_hat == 0.0
        assert stats.rho_degenerate

    def test_no_identification(self):
        n = 20
        rng = np.random.default_rng(9)
        z = np.zeros(n)
        with pytest.raises(NoIdentificationError):
            estimate_2sls(ModelData(y=rng.standard_normal(n), x=rng.standard_normal(n), z=z))

    def test_scale_equivariance_in_z(self):
        data = _random_data(n=80, k_w=0, with_intercept=False)
        base = estimate_2sls(data)
        for c in (3.7, -2.0, 1e-3):
            scaled = estimate_2sls(ModelData(y=data.y, x=data.x, z=data.z * c))
            assert scaled.beta_hat == pytest.approx(base.beta_hat, rel=1e-10)
            assert scaled.se == pytest.approx(base.se, rel=1e-10)
            assert scaled.big_f == pytest.approx(base.big_f, rel=1e-10)
            assert scaled.rho_hat == pytest.approx(base.rho_hat, rel=1e-10)

    def test_scale_equivariance_in_y(self):
        data = _random_data(n=80, k_w=0, with_intercept=False)
        base = estimate_2sls(data)
        for c in (4.2, 0.37):
            scaled = estimate_2sls(ModelData(y=data.y * c, x=data.x, z=data.z))
            assert scaled.beta_hat == pytest.approx(c * base.beta_hat, rel=1e-10)
            assert scaled.se == pytest.approx(c * base.se, rel=1e-10)
            assert scaled.t == pytest.approx(base.t, rel=1e-10)
            assert scaled.big_f == pytest.approx(base.big_f, rel=1e-10)
            assert scaled.rho_hat == pytest.approx(base.rho_hat, rel=1e-10)
        # a negative outcome scale flips the signs of t and rho together
        neg = estimate_2sls(ModelData(y=-data.y, x=data.x, z=data.z))
        assert neg.t == pytest.approx(-base.t, rel=1e-10)
        assert neg.rho_hat == pytest.approx(-base.rho_hat, rel=1e-10)

    def test_negating_instrument_flips_f_hat_only(self):
        data = _random_data(n=80, k_w=0, with_intercept=False)
        base = estimate_2sls(data)
        flipped = estimate_2sls(ModelData(y=data.y, x=data.x, z=-data.z))
        assert flipped.f_hat == pytest.approx(-base.f_hat, rel=1e-10)
        assert flipped.big_f == pytest.approx(base.big_f, rel=1e-10)
        assert flipped.beta_hat == pytest.approx(base.beta_hat, rel=1e-10)
        assert flipped.se == pytest.approx(base.se, rel=1e-10)
        assert flipped.rho_hat == pytest.approx(base.rho_hat, rel=1e-10)

    def test_frisch_waugh_matches_long_regression(self):
        data = _random_data(n=120, k_w=3, seed=11)
        stats = estimate_2sls(partial_out(data))
        # independent long-form 2SLS: instruments [z, w], regressors [x, w]
        zt = np.column_stack([data.z, data.w])
        xt = np.column_stack([data.x, data.w])
        coef = np.linalg.solve(zt.T @ xt, zt.T @ data.y)
        assert stats.beta_hat == pytest.approx(coef[0], rel=1e-8)

    def test_big_f_equals_f_hat_squared(self):
        stats = estimate_2sls(_random_data(n=60, k_w=2, seed=13))
        assert stats.big_f == pytest.approx(stats.f_hat**2, rel=1e-10)

    def test_constructed_dataset_reproduces_requested_stats(self):
        data = dataset_with_stats(t0=2.0, f_hat=math.sqrt(10.0), rho_hat=0.5, n=60)
        stats = estimate_2sls(data)
        assert stats.t == pytest.approx(2.0, rel=1e-9)
        assert stats.f_hat == pytest.approx(math.sqrt(10.0), rel=1e-9)
        assert stats.rho_hat == pytest.approx(0.5, rel=1e-9)
