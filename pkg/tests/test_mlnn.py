import numpy as np
import pytest

from lpplscal import autodiff as ad
from lpplscal.mlnn import (
    TC_FLOOR,
    MlnnConfig,
    MlnnNetwork,
    mlnn_fit,
    penalty,
    penalty_graph,
    reconstruction_graph,
)
from lpplscal.model import reduced_loss, residual_mse
from lpplscal.synth import add_white, gen_clean, rng_for, tc_days_to_norm

BOUNDS = MlnnConfig().bounds


def make_case(seed=0, tc_days=25.0, m=0.5, omega=9.0, n=252):
    tc = tc_days_to_norm(tc_days, n)
    series, truth = gen_clean(tc, m, omega, n, rng_for(seed, 0))
    return series, truth


class TestPenalty:
    def test_zero_inside(self):
        assert penalty([1.0, 0.5, 9.0], BOUNDS, 1.0) == 0.0

    def test_single_hinge(self):
        assert penalty([1.0, 0.5, 13.5], BOUNDS, 1.0) == pytest.approx(0.5)

    def test_two_hinges_with_coeff(self):
        assert penalty([1.0, 0.05, 14.0], BOUNDS, 2.0) == pytest.approx(2.1)

    def test_graph_matches_numpy(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            theta = rng.uniform([0.5, -0.2, 4.0], [1.5, 1.3, 15.0])
            coeff = rng.uniform(0.1, 3.0)
            node = penalty_graph(ad.tensor(theta), BOUNDS, coeff)
            assert float(node.value) == pytest.approx(penalty(theta, BOUNDS, coeff), rel=1e-12)

    def test_graph_gradient_is_hinge_slope(self):
        theta = ad.tensor(np.array([1.0, 0.05, 14.0]), requires_grad=True)
        node = penalty_graph(theta, BOUNDS, 2.0)
        ad.backward(node)
        np.testing.assert_allclose(theta.grad, [0.0, -2.0, 2.0])


class TestReconstructionGraph:
    def test_value_matches_reduced_loss(self):
        series, truth = make_case(seed=3)
        for theta in ([1.05, 0.4, 8.0], [1.15, 0.7, 11.0]):
            node, beta = reconstruction_graph(ad.tensor(np.array(theta)),
                                              series.times, series.values)
            assert float(node.value) == pytest.approx(reduced_loss(series, *theta), rel=1e-12)

    def test_gradient_vs_finite_differences(self):
        # validates backprop through the implicit 4x4 solve, and doubles as
        # the cross-check of the central-difference scheme used by the LM fit
        series, _ = make_case(seed=4)
        rng = np.random.default_rng(1)
        for _ in range(5):
            theta0 = rng.uniform([1.02, 0.2, 6.5], [1.18, 0.9, 12.5])
            t = ad.tensor(theta0, requires_grad=True)
            node, _ = reconstruction_graph(t, series.times, series.values)
            ad.backward(node)
            analytic = t.grad.copy()
            fd = np.zeros(3)
            for k in range(3):
                h = 1e-6 * max(1.0, abs(theta0[k]))
                tp, tm = theta0.copy(), theta0.copy()
                tp[k] += h
                tm[k] -= h
                fd[k] = (reduced_loss(series, *tp) - reduced_loss(series, *tm)) / (2 * h)
            np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-9)


class TestNetwork:
    def test_outputs_always_in_squash_range(self):
        cfg = MlnnConfig(seed=5)
        rng = np.random.default_rng(5)
        net = MlnnNetwork(64, cfg, rng)
        lo, hi = cfg.squash_range()
        for _ in range(10):
            x = ad.tensor(rng.uniform(0, 1, 64))
            theta = net.forward(x).value
            assert np.all(theta >= lo) and np.all(theta <= hi)
            assert theta[0] > 1.0  # t_c beyond the window end by construction

    def test_tc_floor_applied(self):
        lo, hi = MlnnConfig().squash_range()
        assert lo[0] == TC_FLOOR
        assert hi[0] == pytest.approx(1.22)
        assert lo[1] == pytest.approx(0.055)
        assert hi[2] == pytest.approx(13.35)


class TestMlnnFit:
    def test_noiseless_recovery_default_config(self):
        series, truth = make_case()
        res = mlnn_fit(series, MlnnConfig(seed=0))
        assert abs(res.params.t_c - truth.t_c) <= 5e-3
        assert abs(res.params.m - truth.m) <= 2e-2
        assert abs(res.params.omega - truth.omega) <= 0.2
        assert res.method == "M-LNN"

    def test_params_within_bounds(self):
        series, _ = make_case(seed=6)
        noisy = add_white(series, 0.1, rng_for(9, 0))
        cfg = MlnnConfig(epochs=400, seed=1)
        res = mlnn_fit(noisy, cfg)
        lo, hi = cfg.squash_range()
        theta = np.array(res.params.nonlinear())
        assert np.all(theta >= lo) and np.all(theta <= hi)

    def test_final_mse_matches_recomputation(self):
        series, _ = make_case(seed=7)
        res = mlnn_fit(series, MlnnConfig(epochs=300, seed=2))
        assert res.final_mse == pytest.approx(residual_mse(series, res.params), abs=1e-12)

    def test_best_snapshot_property(self):
        series, _ = make_case(seed=8)
        noisy = add_white(series, 0.05, rng_for(10, 0))
        res = mlnn_fit(noisy, MlnnConfig(epochs=500, seed=3))
        trace = np.array(res.diagnostics["loss_trace"])
        best = res.diagnostics["best_total_loss"]
        assert best == pytest.approx(trace.min(), abs=0)
        assert best < trace[0]

    def test_deterministic(self):
        series, _ = make_case(seed=9)
        cfg = MlnnConfig(epochs=200, seed=4)
        r1 = mlnn_fit(series, cfg)
        r2 = mlnn_fit(series, cfg)
        assert r1.params == r2.params
        assert r1.diagnostics["best_epoch"] == r2.diagnostics["best_epoch"]

    def test_gradient_through_whole_loss_vs_fd(self):
        # one entry per layer, checked against central differences at 1e-4
        series, _ = make_case(seed=10, n=64)
        cfg = MlnnConfig(hidden=(8, 6), seed=11)
        rng = np.random.default_rng(11)
        net = MlnnNetwork(series.n, cfg, rng)

        def total_loss() -> ad.Tensor:
            theta = net.forward(ad.tensor(series.values))
            recon, _ = reconstruction_graph(theta, series.times, series.values)
            return ad.add(recon, penalty_graph(theta, cfg.bounds, cfg.penalty_coeff))

        loss = total_loss()
        ad.backward(loss)
        for layer, (i, j) in zip(net.layers, [(2, 5), (3, 1), (1, 4)]):
            analytic = layer.W.grad[i, j]
            w0 = layer.W.value[i, j]
            h = 1e-6 * max(1.0, abs(w0))
            layer.W.value[i, j] = w0 + h
            up = float(total_loss().value)
            layer.W.value[i, j] = w0 - h
            down = float(total_loss().value)
            layer.W.value[i, j] = w0
            fd = (up - down) / (2 * h)
            assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-10)
