import numpy as np
import pytest

from lpplscal import lm as lm_mod
from lpplscal.errors import AllStartsFailed, DomainError
from lpplscal.lm import LmConfig, lm_fit, multistart_points, _lm_from_start
from lpplscal.model import reduced_loss, residual_mse, solve_linear
from lpplscal.synth import add_white, gen_clean, rng_for, tc_days_to_norm


def noiseless_case(seed=0, n=252, tc_days=25.0, m=0.5, omega=9.0):
    tc = tc_days_to_norm(tc_days, n)
    series, truth = gen_clean(tc, m, omega, n, rng_for(seed, 0))
    return series, truth


class TestConfig:
    def test_tc_lower_bound_guard(self):
        with pytest.raises(ValueError):
            LmConfig(tc_bounds=(0.8, 1.2))

    def test_roundtrip_dict(self):
        cfg = LmConfig(n_starts=7, seed=3)
        assert LmConfig.from_dict(cfg.to_dict()) == cfg

    def test_multistart_inside_box(self):
        cfg = LmConfig(n_starts=50, seed=1)
        pts = multistart_points(cfg)
        assert pts.shape == (50, 3)
        assert np.all(pts >= cfg.lower) and np.all(pts <= cfg.upper)


class TestSingleStart:
    def test_start_at_truth_converges_immediately(self):
        series, truth = noiseless_case()
        cfg = LmConfig()
        out = _lm_from_start(series, np.array(truth.nonlinear()), cfg)
        assert out.converged
        assert out.iterations <= 3
        assert abs(out.theta[0] - truth.t_c) <= 1e-6

    def test_trace_monotone_nonincreasing(self):
        series, truth = noiseless_case(seed=2)
        noisy = add_white(series, 0.05, rng_for(11, 0))
        out = _lm_from_start(noisy, np.array([1.05, 0.3, 7.0]), LmConfig())
        trace = np.array(out.trace)
        assert np.all(np.diff(trace) <= 0.0)


class TestLmFit:
    def test_noiseless_recovery(self):
        series, truth = noiseless_case(seed=4, tc_days=18.0, m=0.35, omega=11.0)
        res = lm_fit(series, LmConfig(seed=5))
        assert abs(res.params.t_c - truth.t_c) <= 1e-3
        assert abs(res.params.m - truth.m) <= 1e-3
        assert abs(res.params.omega - truth.omega) <= 1e-2
        assert res.final_mse <= 1e-10
        assert res.method == "LM"

    def test_final_mse_consistency(self):
        series, _ = noiseless_case(seed=6)
        noisy = add_white(series, 0.03, rng_for(12, 0))
        res = lm_fit(noisy, LmConfig(seed=1))
        assert res.final_mse == pytest.approx(residual_mse(noisy, res.params), abs=1e-15)
        assert res.final_mse == pytest.approx(
            reduced_loss(noisy, *res.params.nonlinear()), abs=1e-15)

    def test_box_respected(self):
        series, _ = noiseless_case(seed=8)
        noisy = add_white(series, 0.1, rng_for(13, 0))
        cfg = LmConfig(seed=2)
        res = lm_fit(noisy, cfg)
        t_c, m, omega = res.params.nonlinear()
        assert cfg.tc_bounds[0] <= t_c <= cfg.tc_bounds[1]
        assert cfg.m_bounds[0] <= m <= cfg.m_bounds[1]
        assert cfg.omega_bounds[0] <= omega <= cfg.omega_bounds[1]

    def test_deterministic_given_seed(self):
        series, _ = noiseless_case(seed=9)
        noisy = add_white(series, 0.05, rng_for(14, 0))
        cfg = LmConfig(seed=21)
        r1 = lm_fit(noisy, cfg)
        r2 = lm_fit(noisy, cfg)
        assert r1.params == r2.params
        assert r1.final_mse == r2.final_mse
        assert r1.diagnostics["start_index"] == r2.diagnostics["start_index"]

    def test_varpro_consistency_at_optimum(self):
        series, _ = noiseless_case(seed=10)
        noisy = add_white(series, 0.02, rng_for(15, 0))
        res = lm_fit(noisy, LmConfig(seed=3))
        fresh = solve_linear(noisy, *res.params.nonlinear())
        np.testing.assert_allclose(fresh, res.params.linear(), rtol=0, atol=1e-12)

    def test_constant_series_flagged(self):
        from lpplscal.model import AffineMap, uniform_series
        series = uniform_series(np.full(64, 0.5), AffineMap(63.0, 0.0), AffineMap(1.0, 0.0))
        res = lm_fit(series, LmConfig(seed=4))
        assert not res.converged

    def test_iteration_cap_returns_best_so_far(self):
        series, _ = noiseless_case(seed=11)
        noisy = add_white(series, 0.08, rng_for(16, 0))
        cfg = LmConfig(seed=5, max_iter=1, n_starts=3)
        res = lm_fit(noisy, cfg)
        assert res.iterations == 1
        assert np.isfinite(res.final_mse)

    def test_all_starts_failed(self, monkeypatch):
        series, _ = noiseless_case(seed=12)

        def boom(series, theta):
            raise DomainError("forced")

        monkeypatch.setattr(lm_mod, "_residual", boom)
        with pytest.raises(AllStartsFailed):
            lm_fit(series, LmConfig(seed=6, n_starts=4))

    def test_wall_clock_recorded(self):
        series, _ = noiseless_case(seed=13)
        res = lm_fit(series, LmConfig(seed=7, n_starts=2))
        assert res.wall_clock > 0.0
