"""Levenberg-Marquardt calibration of the three nonlinear LPPLS parameters.

The linear coefficients are projected out at every trial point (variable
projection), so the damped Gauss-Newton loop works on the reduced residual
r_i(t_c, m, w) = values_i - model_i with the Jacobian taken by central
finite differences.  Multiple quasi-random starts cover the bound box; the
best final loss wins with ties broken by the lowest start index.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import AllStartsFailed, DomainError, SingularSystem
from .model import CalibrationResult, LpplsParams, Series, design_matrix, solve_linear

_FD_REL_STEP = 1e-6
_LAMBDA_MAX = 1e12


@dataclass(frozen=True)
class LmConfig:
    """Bounds, damping schedule, stopping rules, and multi-start layout.

    The default box keeps t_c strictly beyond the window end (normalized 1),
    with the upper limits matching the usual bubble-diagnostic constraints
    m in [0.1, 1] and omega in [6, 13].
    """

    tc_bounds: tuple[float, float] = (1.0001, 1.2)
    m_bounds: tuple[float, float] = (0.1, 1.0)
    omega_bounds: tuple[float, float] = (6.0, 13.0)
    max_iter: int = 200
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    step_tol: float = 1e-9
    loss_tol: float = 1e-12
    n_starts: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("tc_bounds", "m_bounds", "omega_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be a finite (lo, hi) pair with lo < hi")
        if self.tc_bounds[0] <= 1.0:
            raise ValueError("t_c lower bound must exceed the normalized window end (1.0)")
        if self.step_tol <= 0 or self.loss_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_starts < 1 or self.max_iter < 1:
            raise ValueError("n_starts and max_iter must be >= 1")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.tc_bounds[0], self.m_bounds[0], self.omega_bounds[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.tc_bounds[1], self.m_bounds[1], self.omega_bounds[1]])

    def to_dict(self) -> dict:
        return {
            "tc_bounds": list(self.tc_bounds), "m_bounds": list(self.m_bounds),
            "omega_bounds": list(self.omega_bounds), "max_iter": self.max_iter,
            "lambda0": self.lambda0, "lambda_up": self.lambda_up,
            "lambda_down": self.lambda_down, "step_tol": self.step_tol,
            "loss_tol": self.loss_tol, "n_starts": self.n_starts, "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "LmConfig":
        kwargs = dict(d)
        for name in ("tc_bounds", "m_bounds", "omega_bounds"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return LmConfig(**kwargs)


@dataclass
class _StartOutcome:
    theta: np.ndarray
    loss: float
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)


def _residual(series: Series, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Projected residual vector and the linear coefficients at theta."""
    t_c, m, omega = theta
    coefs = np.array(solve_linear(series, t_c, m, omega))
    G = design_matrix(series.times, t_c, m, omega)
    return series.values - G @ coefs, coefs


def _loss_of(r: np.ndarray) -> float:
    return float(np.mean(r * r))


def _jacobian(series: Series, theta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of the projected residual w.r.t. theta."""
    J = np.empty((series.n, 3))
    for k in range(3):
        h = _FD_REL_STEP * max(1.0, abs(theta[k]))
        tp = theta.copy()
        tm = theta.copy()
        tp[k] += h
        tm[k] -= h
        rp, _ = _residual(series, tp)
        rm, _ = _residual(series, tm)
        J[:, k] = (rp - rm) / (2.0 * h)
    return J


def _lm_from_start(series: Series, theta0: np.ndarray, config: LmConfig) -> _StartOutcome:
    lower, upper = config.lower, config.upper
    theta = np.clip(theta0, lower, upper)
    r, _ = _residual(series, theta)  # initial failure propagates to the caller
    loss = _loss_of(r)
    lam = config.lambda0
    trace = [loss]
    for iteration in range(1, config.max_iter + 1):
        J = _jacobian(series, theta)
        if np.max(np.abs(J)) < 1e-8:
            # residual insensitive to all three parameters (flat series):
            # nothing to identify, only finite-difference rounding noise
            return _StartOutcome(theta, loss, iteration, False, trace)
        g = J.T @ r
        H = J.T @ J
        D = np.diag(np.maximum(np.diag(H), 1e-12))
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                delta = np.linalg.solve(H + lam * D, -g)
            except np.linalg.LinAlgError:
                lam *= config.lambda_up
                continue
            trial = np.clip(theta + delta, lower, upper)
            try:
                r_trial, _ = _residual(series, trial)
            except (DomainError, SingularSystem):
                lam *= config.lambda_up
                continue
            loss_trial = _loss_of(r_trial)
            if loss_trial <= loss:
                accepted = True
                break
            lam *= config.lambda_up
        if not accepted:
            return _StartOutcome(theta, loss, iteration, False, trace)
        step = float(np.linalg.norm(trial - theta))
        decrease = loss - loss_trial
        theta, r, loss = trial, r_trial, loss_trial
        lam = max(lam / config.lambda_down, 1e-12)
        trace.append(loss)
        if step < config.step_tol or decrease < config.loss_tol:
            return _StartOutcome(theta, loss, iteration, True, trace)
    return _StartOutcome(theta, loss, config.max_iter, False, trace)


def multistart_points(config: LmConfig) -> np.ndarray:
    """Low-discrepancy start points covering the bound box."""
    sampler = qmc.Halton(d=3, scramble=True, seed=config.seed)
    unit = sampler.random(config.n_starts)
    return qmc.scale(unit, config.lower, config.upper)


def lm_fit(series: Series, config: LmConfig | None = None) -> CalibrationResult:
    """Multi-start Levenberg-Marquardt minimization of the reduced loss.

    Returns the best start by final loss.  Raises AllStartsFailed only when
    every start fails on its very first evaluation; degenerate runs otherwise
    surface as converged=False with the best result seen so far.
    """
    config = config or LmConfig()
    t0 = time.perf_counter()
    starts = multistart_points(config)
    best: _StartOutcome | None = None
    best_index = -1
    n_failed = 0
    for i, theta0 in enumerate(starts):
        try:
            outcome = _lm_from_start(series, theta0, config)
        except (DomainError, SingularSystem):
            n_failed += 1
            continue
        if best is None or outcome.loss < best.loss:
            best = outcome
            best_index = i
    if best is None:
        raise AllStartsFailed(f"all {config.n_starts} starts failed on first evaluation")
    t_c, m, omega = best.theta
    a, b, c1, c2 = solve_linear(series, t_c, m, omega)
    params = LpplsParams(t_c=t_c, m=m, omega=omega, a=a, b=b, c1=c1, c2=c2)
    wall = time.perf_counter() - t0
    at_bounds = bool(np.any(np.isclose(best.theta, config.lower, rtol=0, atol=1e-12))
                     or np.any(np.isclose(best.theta, config.upper, rtol=0, atol=1e-12)))
    return CalibrationResult(
        params=params,
        final_mse=best.loss,
        converged=best.converged,
        iterations=best.iterations,
        wall_clock=wall,
        method="LM",
        diagnostics={
            "start_index": best_index,
            "n_starts": config.n_starts,
            "n_starts_failed": n_failed,
            "at_bounds": at_bounds,
            "loss_trace": best.trace,
        },
    )
