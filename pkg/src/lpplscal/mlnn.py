"""Per-series neural calibrator: a fresh 2-hidden-layer network per series.

The network maps the observed value vector to (t_c, m, w); the loss is the
reconstruction MSE of the implied LPPLS curve (with the linear coefficients
projected out inside the graph) plus a hinge penalty keeping the three
outputs near their admissible ranges.  Gradients flow through the basis
evaluation and through the 4x4 linear solve, and the best-total-loss epoch
snapshot is returned.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NonFinite
from .model import CalibrationResult, Series, complete_params, residual_mse

# Keep t_c strictly beyond the normalized window end regardless of the
# penalty box; the hinge alone cannot prevent an invalid basis evaluation.
TC_FLOOR = 1.0 + 1e-4


@dataclass(frozen=True)
class MlnnConfig:
    """Architecture, penalty box, and training hyperparameters."""

    hidden: tuple[int, int] = (64, 32)
    epochs: int = 5000
    learning_rate: float = 1e-2
    penalty_coeff: float = 1.0
    tc_bounds: tuple[float, float] = (0.8, 1.2)
    m_bounds: tuple[float, float] = (0.1, 1.0)
    omega_bounds: tuple[float, float] = (6.0, 13.0)
    margin_frac: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if any(w < 1 for w in self.hidden) or len(self.hidden) != 2:
            raise ValueError("hidden must be two positive widths")
        if self.epochs < 1 or self.learning_rate <= 0 or self.penalty_coeff < 0:
            raise ValueError("epochs >= 1, learning_rate > 0, penalty_coeff >= 0 required")
        for name in ("tc_bounds", "m_bounds", "omega_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.tc_bounds, self.m_bounds, self.omega_bounds])

    def squash_range(self) -> tuple[np.ndarray, np.ndarray]:
        """Output range per parameter: penalty box inflated by the margin,
        with the t_c floor clamped above the window end."""
        box = self.bounds
        delta = self.margin_frac * (box[:, 1] - box[:, 0])
        lo = box[:, 0] - delta
        hi = box[:, 1] + delta
        lo[0] = max(lo[0], TC_FLOOR)
        return lo, hi

    def to_dict(self) -> dict:
        return {
            "hidden": list(self.hidden), "epochs": self.epochs,
            "learning_rate": self.learning_rate, "penalty_coeff": self.penalty_coeff,
            "tc_bounds": list(self.tc_bounds), "m_bounds": list(self.m_bounds),
            "omega_bounds": list(self.omega_bounds), "margin_frac": self.margin_frac,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlnnConfig":
        kwargs = dict(d)
        for name in ("hidden", "tc_bounds", "m_bounds", "omega_bounds"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return MlnnConfig(**kwargs)


def penalty(theta, bounds, coeff: float) -> float:
    """Hinge penalty: coeff * sum_k [max(0, lo_k - x_k) + max(0, x_k - hi_k)].

    Zero inside the box, linear outside, differentiable almost everywhere.
    """
    theta = np.asarray(theta, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return float(coeff * np.sum(np.maximum(0.0, lo - theta) + np.maximum(0.0, theta - hi)))


def reconstruction_graph(theta: ad.Tensor, times: np.ndarray, values: np.ndarray
                         ) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable reduced loss: basis, projected linear solve, MSE.

    `theta` is a length-3 tensor (t_c, m, w).  Returns (mse_node, beta_node);
    the gradient reaches theta both through the reconstructed curve and
    through the normal equations (implicit differentiation in solve_posdef).
    """
    t_c = ad.index(theta, 0)
    m = ad.index(theta, 1)
    omega = ad.index(theta, 2)
    times_c = ad.tensor(times)
    values_c = ad.tensor(values)
    dt = ad.sub(t_c, times_c)
    f = ad.power(dt, m)
    phase = ad.mul(omega, ad.log(dt))
    g = ad.mul(f, ad.cos(phase))
    h = ad.mul(f, ad.sin(phase))
    G = ad.stack([ad.tensor(np.ones_like(times)), f, g, h], axis=1)
    Gt = ad.transpose(G)
    M = ad.matmul(Gt, G)
    rhs = ad.matmul(Gt, values_c)
    beta = ad.solve_posdef(M, rhs)
    recon = ad.matmul(G, beta)
    return ad.mse(recon, values_c), beta


def penalty_graph(theta: ad.Tensor, bounds: np.ndarray, coeff: float) -> ad.Tensor:
    lo = ad.tensor(bounds[:, 0])
    hi = ad.tensor(bounds[:, 1])
    hinges = ad.add(ad.relu(ad.sub(lo, theta)), ad.relu(ad.sub(theta, hi)))
    return ad.mul(ad.tsum(hinges), coeff)


class MlnnNetwork:
    """The 2-hidden-layer estimator with bounded outputs."""

    def __init__(self, n_input: int, config: MlnnConfig, rng: np.random.Generator):
        h1, h2 = config.hidden
        self.layers = [
            ad.DenseLayer(n_input, h1, rng),
            ad.DenseLayer(h1, h2, rng),
            ad.DenseLayer(h2, 3, rng),
        ]
        lo, hi = config.squash_range()
        self.out_lo = lo
        self.out_span = hi - lo

    def parameters(self) -> list[ad.Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: ad.Tensor) -> ad.Tensor:
        """Series values in, squashed (t_c, m, w) out."""
        h = ad.relu(self.layers[0](x))
        h = ad.relu(self.layers[1](h))
        raw = self.layers[2](h)
        return ad.add(ad.tensor(self.out_lo),
                      ad.mul(ad.tensor(self.out_span), ad.sigmoid(raw)))


def mlnn_fit(series: Series, config: MlnnConfig | None = None) -> CalibrationResult:
    """Train a fresh network on one series and return the best-loss snapshot.

    Each epoch runs the series through the network, projects out the linear
    coefficients, reconstructs the curve, and takes an Adam step on
    reconstruction MSE + penalty.  The epoch with the lowest total loss
    provides the returned parameters; the linear coefficients are re-solved
    at that point, so the reported MSE is exactly residual_mse of the result.
    """
    config = config or MlnnConfig()
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    net = MlnnNetwork(series.n, config, rng)
    opt = ad.AdamState(net.parameters(), lr=config.learning_rate)
    x = ad.tensor(series.values)
    bounds = config.bounds
    times = series.times
    values = series.values

    best_loss = np.inf
    best_theta: np.ndarray | None = None
    best_epoch = -1
    trace = np.empty(config.epochs)
    for epoch in range(config.epochs):
        opt.zero_grad()
        theta = net.forward(x)
        recon_mse, _ = reconstruction_graph(theta, times, values)
        pen = penalty_graph(theta, bounds, config.penalty_coeff)
        loss = ad.add(recon_mse, pen)
        total = float(loss.value)
        if not np.isfinite(total):
            raise NonFinite(f"training loss diverged at epoch {epoch}")
        trace[epoch] = total
        if total < best_loss:
            best_loss = total
            best_theta = theta.value.copy()
            best_epoch = epoch
        ad.backward(loss)
        opt.step()

    params = complete_params(series, *best_theta)
    final_mse = residual_mse(series, params)
    wall = time.perf_counter() - t0
    return CalibrationResult(
        params=params,
        final_mse=final_mse,
        converged=True,
        iterations=config.epochs,
        wall_clock=wall,
        method="M-LNN",
        diagnostics={
            "best_epoch": best_epoch,
            "best_total_loss": best_loss,
            "penalty_at_best": penalty(best_theta, bounds, config.penalty_coeff),
            "loss_trace": trace.tolist(),
        },
    )
