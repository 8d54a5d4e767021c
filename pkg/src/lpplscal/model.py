"""Core LPPLS model: basis evaluation, linear subproblem, reduced loss.

The model is

    O(t) = A + B*(t_c - t)^m + C1*(t_c - t)^m * cos(w*ln(t_c - t))
                             + C2*(t_c - t)^m * sin(w*ln(t_c - t))

on a time axis normalized so the observation window spans [0, 1] and the
singularity t_c lies strictly beyond the last observation.  For fixed
(t_c, m, w) the four linear coefficients (A, B, C1, C2) are the least-squares
solution of a 4x4 normal system over the basis {1, f, g, h}; substituting
them back gives the reduced loss F1(t_c, m, w) minimized by the nonlinear
calibrators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRange, DomainError, SingularSystem

# Condition-number guard for the 4x4 normal system.
COND_LIMIT = 1e12

# Below this length the 7-parameter fit is meaninglessly underdetermined.
MIN_SERIES_LEN = 20


@dataclass(frozen=True)
class AffineMap:
    """Affine map y = offset + scale * x between normalized and raw frames."""

    scale: float
    offset: float

    def apply(self, x):
        return self.offset + self.scale * np.asarray(x, dtype=float)

    def invert(self, y):
        return (np.asarray(y, dtype=float) - self.offset) / self.scale

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """Map equivalent to applying `inner` first, then self."""
        return AffineMap(scale=self.scale * inner.scale,
                         offset=self.offset + self.scale * inner.offset)


@dataclass(frozen=True)
class LpplsParams:
    """The seven LPPLS parameters on the normalized [0,1] time axis."""

    t_c: float
    m: float
    omega: float
    a: float
    b: float
    c1: float
    c2: float

    def nonlinear(self) -> tuple[float, float, float]:
        return (self.t_c, self.m, self.omega)

    def linear(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c1, self.c2)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite([self.t_c, self.m, self.omega,
                                        self.a, self.b, self.c1, self.c2])))

    def to_dict(self) -> dict:
        return {"t_c": self.t_c, "m": self.m, "omega": self.omega,
                "a": self.a, "b": self.b, "c1": self.c1, "c2": self.c2}

    @staticmethod
    def from_dict(d: dict) -> "LpplsParams":
        return LpplsParams(t_c=float(d["t_c"]), m=float(d["m"]),
                           omega=float(d["omega"]), a=float(d["a"]),
                           b=float(d["b"]), c1=float(d["c1"]), c2=float(d["c2"]))


@dataclass(frozen=True)
class Series:
    """Fixed-grid observations in the normalized [0,1] x [0,1] frame.

    ``time_map`` sends normalized time to calendar time and ``value_map``
    sends normalized values back to the raw observable; both are affine.
    """

    times: np.ndarray
    values: np.ndarray
    time_map: AffineMap
    value_map: AffineMap

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or values.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-D vectors of equal length")
        n = times.size
        if n < MIN_SERIES_LEN:
            raise ValueError(f"series length {n} below minimum {MIN_SERIES_LEN}")
        if not (times[0] == 0.0 and times[-1] == 1.0):
            raise ValueError("normalized times must start at 0 and end at 1")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if values.min() < -1e-12 or values.max() > 1.0 + 1e-12:
            raise ValueError("values must lie within [0, 1] after min-max scaling")

    @property
    def n(self) -> int:
        return self.times.size

    def tc_to_calendar(self, tc_norm: float) -> float:
        return float(self.time_map.apply(tc_norm))


def minmax_scale(values: np.ndarray) -> tuple[np.ndarray, AffineMap]:
    """Scale a vector onto [0,1]; returns the scaled vector and the map back.

    Raises DegenerateRange when max == min (the map would not be bijective).
    """
    values = np.asarray(values, dtype=float)
    lo = float(values.min())
    hi = float(values.max())
    if not np.isfinite(lo) or not np.isfinite(hi):
        raise DegenerateRange("cannot scale a vector with non-finite entries")
    if hi <= lo:
        raise DegenerateRange("zero value range, min-max scaling undefined")
    return (values - lo) / (hi - lo), AffineMap(scale=hi - lo, offset=lo)


def uniform_series(values_scaled: np.ndarray, time_map: AffineMap,
                   value_map: AffineMap) -> Series:
    """Series on the uniform normalized grid linspace(0, 1, n)."""
    n = np.asarray(values_scaled).size
    return Series(times=np.linspace(0.0, 1.0, n), values=values_scaled,
                  time_map=time_map, value_map=value_map)


def eval_basis(t, t_c: float, m: float, omega: float):
    """Evaluate the reformulated basis (f, g, h) at time(s) t.

    f = (t_c - t)^m,  g = f * cos(w * ln(t_c - t)),  h = f * sin(w * ln(t_c - t)).
    Requires t < t_c everywhere.
    """
    t = np.asarray(t, dtype=float)
    dt = t_c - t
    if np.any(dt <= 0.0):
        raise DomainError(f"t >= t_c: basis undefined at or beyond the singularity (t_c={t_c})")
    f = dt ** m
    phase = omega * np.log(dt)
    g = f * np.cos(phase)
    h = f * np.sin(phase)
    return f, g, h


def eval_lppls(params: LpplsParams, t):
    """Model value A + B*f + C1*g + C2*h at time(s) t; requires t < t_c."""
    f, g, h = eval_basis(t, params.t_c, params.m, params.omega)
    return params.a + params.b * f + params.c1 * g + params.c2 * h


def design_matrix(times: np.ndarray, t_c: float, m: float, omega: float) -> np.ndarray:
    """n x 4 matrix with columns (1, f, g, h)."""
    f, g, h = eval_basis(times, t_c, m, omega)
    return np.column_stack((np.ones_like(f), f, g, h))


def solve_linear(series: Series, t_c: float, m: float, omega: float
                 ) -> tuple[float, float, float, float]:
    """Least-squares (A, B, C1, C2) at fixed (t_c, m, w) via the 4x4 normal system.

    The Gram matrix holds sums of {1, f, g, h} products and the right-hand
    side holds sums of observable * {1, f, g, h}.  Raises SingularSystem when
    the condition number of the Gram matrix exceeds COND_LIMIT, which signals
    a degenerate basis (e.g. m ~ 0 making f effectively constant).
    """
    G = design_matrix(series.times, t_c, m, omega)
    M = G.T @ G
    rhs = G.T @ series.values
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystem(f"normal system condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    a, b, c1, c2 = np.linalg.solve(M, rhs)
    return float(a), float(b), float(c1), float(c2)


def complete_params(series: Series, t_c: float, m: float, omega: float) -> LpplsParams:
    """Fill in the optimal linear coefficients for given nonlinear parameters."""
    a, b, c1, c2 = solve_linear(series, t_c, m, omega)
    return LpplsParams(t_c=t_c, m=m, omega=omega, a=a, b=b, c1=c1, c2=c2)


def residual_mse(series: Series, params: LpplsParams) -> float:
    """(1/n) * sum_i (values_i - model(times_i))^2."""
    model = eval_lppls(params, series.times)
    r = series.values - model
    return float(np.mean(r * r))


def reduced_loss(series: Series, t_c: float, m: float, omega: float) -> float:
    """F1(t_c, m, w): residual MSE after projecting out the linear parameters."""
    return residual_mse(series, complete_params(series, t_c, m, omega))


@dataclass
class CalibrationResult:
    """Outcome of one calibration: parameters, fit quality, and timing."""

    params: LpplsParams
    final_mse: float
    converged: bool
    iterations: int
    wall_clock: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "params": self.params.to_dict(),
            "final_mse": self.final_mse,
            "converged": self.converged,
            "iterations": self.iterations,
            "wall_clock": self.wall_clock,
            "diagnostics": {k: v for k, v in self.diagnostics.items()
                            if isinstance(v, (int, float, str, bool, list))},
        }
