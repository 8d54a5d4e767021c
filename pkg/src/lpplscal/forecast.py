"""Rolling-window critical-time forecasts on empirical CSV series.

A raw calendar series is resampled to 252 uniformly spaced points per window
(linear interpolation, using only data up to the window end), each window is
calibrated by the requested methods, and the predicted critical times are
mapped back to calendar units and summarized as a kernel density per method.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .errors import DomainError, LpplsError, NonMonotoneDates, ParseError
from .lm import LmConfig, lm_fit
from .mlnn import MlnnConfig, mlnn_fit
from .model import AffineMap, CalibrationResult, Series, eval_lppls, minmax_scale
from .plnn import PlnnModel, plnn_infer

RESAMPLE_LEN = 252


@dataclass(frozen=True)
class RawSeries:
    """Calendar observations: float day axis plus the (possibly logged) values."""

    t: np.ndarray
    values: np.ndarray
    date_mode: str = "numeric"  # "numeric" | "iso"
    log_applied: bool = False

    @property
    def span(self) -> float:
        return float(self.t[-1] - self.t[0])

    def calendar_label(self, day: float) -> str:
        if self.date_mode == "iso":
            whole = int(math.floor(day))
            frac = day - whole
            d = date.fromordinal(whole)
            if frac >= 0.5:
                d += timedelta(days=1)
            return d.isoformat()
        return f"{day:.3f}"


def _parse_time_token(token: str):
    token = token.strip()
    try:
        return float(token), "numeric"
    except ValueError:
        pass
    try:
        return float(date.fromisoformat(token).toordinal()), "iso"
    except ValueError:
        return None, None


def parse_t2(token: str) -> float:
    """CLI helper: an ISO date or a numeric day index."""
    value, mode = _parse_time_token(token)
    if mode is None:
        raise ParseError(f"cannot parse time value {token!r}")
    return value


def ingest_csv(path, date_col: int = 0, value_col: int = 1,
               log_values: bool = False, delimiter: str = ",") -> RawSeries:
    """Parse (date, value) rows; dates are ISO-8601 or numeric day indices.

    The header row is auto-detected (first line that fails to parse counts
    as a header only if it is the first line).  Raises ParseError with the
    offending line number, or NonMonotoneDates when dates do not strictly
    increase.
    """
    ts: list[float] = []
    vals: list[float] = []
    mode = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if max(date_col, value_col) >= len(row):
                raise ParseError(f"expected at least {max(date_col, value_col) + 1} columns",
                                 line=lineno)
            t, row_mode = _parse_time_token(row[date_col])
            if row_mode is None:
                if lineno == 1:
                    continue  # header
                raise ParseError(f"cannot parse date {row[date_col]!r}", line=lineno)
            try:
                v = float(row[value_col])
            except ValueError:
                if lineno == 1:
                    continue
                raise ParseError(f"cannot parse value {row[value_col]!r}", line=lineno)
            if mode is None:
                mode = row_mode
            elif mode != row_mode:
                raise ParseError("mixed date formats", line=lineno)
            if ts and t <= ts[-1]:
                raise NonMonotoneDates(f"line {lineno}: date does not increase")
            ts.append(t)
            vals.append(v)
    if len(ts) < 2:
        raise ParseError("need at least two data rows")
    values = np.asarray(vals, dtype=float)
    if log_values:
        if np.any(values <= 0):
            raise DomainError("log transform requires strictly positive values")
        values = np.log(values)
    return RawSeries(t=np.asarray(ts, dtype=float), values=values,
                     date_mode=mode or "numeric", log_applied=log_values)


def resample_252(raw: RawSeries, t1: float, t2: float, n: int = RESAMPLE_LEN) -> Series:
    """Uniform resampling of [t1, t2] by linear interpolation, then scaling.

    Only observations dated <= t2 enter the interpolation, so nothing to the
    right of the window end can leak into a fit.
    """
    if not t1 < t2:
        raise ValueError("window requires t1 < t2")
    if t1 < raw.t[0]:
        raise ValueError("window start precedes first observation")
    mask = raw.t <= t2
    if mask.sum() < 2:
        raise ValueError("fewer than two observations at or before t2")
    ts = raw.t[mask]
    vs = raw.values[mask]
    if t2 > ts[-1]:
        raise ValueError("t2 must be at or before the last usable observation")
    grid = np.linspace(t1, t2, n)
    resampled = np.interp(grid, ts, vs)
    scaled, vmap = minmax_scale(resampled)
    return Series(times=np.linspace(0.0, 1.0, n), values=scaled,
                  time_map=AffineMap(scale=t2 - t1, offset=t1), value_map=vmap)


@dataclass(frozen=True)
class WindowPlan:
    """Calibration windows (t1, t2) plus the resampling target length."""

    windows: tuple[tuple[float, float], ...]
    target_len: int = RESAMPLE_LEN

    def __post_init__(self):
        for t1, t2 in self.windows:
            if not t1 < t2:
                raise ValueError("each window needs t1 < t2")

    @staticmethod
    def sweep(t2: float, base_span: float, count: int = 10,
              lo: float = 0.7, hi: float = 1.3,
              target_len: int = RESAMPLE_LEN) -> "WindowPlan":
        """Fixed end, start swept so the span runs lo..hi times base_span."""
        factors = np.linspace(lo, hi, count)
        windows = tuple((float(t2 - f * base_span), float(t2)) for f in factors)
        return WindowPlan(windows=windows, target_len=target_len)


@dataclass(frozen=True)
class ForecastRecord:
    window: int
    t1: float
    t2: float
    method: str
    tc_norm: float
    m: float
    omega: float
    tc_calendar: float
    final_mse: float
    converged: bool


@dataclass
class MethodDensity:
    """Predicted-t_c distribution for one method across windows."""

    method: str
    tc_values: np.ndarray
    grid: np.ndarray | None
    pdf: np.ndarray | None
    excluded: int

    @property
    def atoms(self) -> bool:
        return self.grid is None


@dataclass
class ForecastSet:
    records: list[ForecastRecord]
    densities: dict[str, MethodDensity] = field(default_factory=dict)


def silverman_kde(values: np.ndarray, grid_points: int = 512
                  ) -> tuple[np.ndarray, np.ndarray] | None:
    """Gaussian KDE with the robust Silverman bandwidth, or None when the
    sample is too small or has zero spread."""
    values = np.asarray(values, dtype=float)
    k = values.size
    if k < 3:
        return None
    std = values.std(ddof=1)
    iqr = np.subtract(*np.percentile(values, [75, 25]))
    spread = min(std, iqr / 1.34) if iqr > 0 else std
    if spread <= 0:
        return None
    bw = 0.9 * spread * k ** (-0.2)
    grid = np.linspace(values.min() - 4 * bw, values.max() + 4 * bw, grid_points)
    z = (grid[:, None] - values[None, :]) / bw
    pdf = np.exp(-0.5 * z * z).sum(axis=1) / (k * bw * np.sqrt(2 * np.pi))
    return grid, pdf


def forecast(raw: RawSeries, plan: WindowPlan, methods: tuple[str, ...],
             models: dict[str, PlnnModel] | None = None,
             lm_config: LmConfig | None = None,
             mlnn_config: MlnnConfig | None = None) -> ForecastSet:
    """Calibrate every (window, method) pair and collect calendar t_c values.

    Predictions not strictly beyond their window end, and failed fits, are
    excluded from the densities but counted per method.
    """
    models = models or {}
    lm_config = lm_config or LmConfig()
    mlnn_config = mlnn_config or MlnnConfig()
    records: list[ForecastRecord] = []
    valid: dict[str, list[float]] = {m: [] for m in methods}
    excluded: dict[str, int] = {m: 0 for m in methods}
    for w_idx, (t1, t2) in enumerate(plan.windows):
        series = resample_252(raw, t1, t2, plan.target_len)
        for method in methods:
            try:
                if method == "LM":
                    result = lm_fit(series, lm_config)
                elif method == "M-LNN":
                    result = mlnn_fit(series, mlnn_config)
                elif method in models:
                    result = plnn_infer(models[method], series)
                else:
                    raise ValueError(f"no model available for method {method}")
            except LpplsError:
                excluded[method] += 1
                continue
            tc_cal = series.tc_to_calendar(result.params.t_c)
            ok = bool(result.converged and np.isfinite(result.final_mse) and tc_cal > t2)
            records.append(ForecastRecord(
                window=w_idx, t1=t1, t2=t2, method=method,
                tc_norm=result.params.t_c, m=result.params.m,
                omega=result.params.omega, tc_calendar=tc_cal,
                final_mse=result.final_mse, converged=ok))
            if ok:
                valid[method].append(tc_cal)
            else:
                excluded[method] += 1
    densities = {}
    for method in methods:
        vals = np.asarray(valid[method])
        kde = silverman_kde(vals)
        densities[method] = MethodDensity(
            method=method, tc_values=vals,
            grid=kde[0] if kde else None, pdf=kde[1] if kde else None,
            excluded=excluded[method])
    return ForecastSet(records=records, densities=densities)


def write_forecast_csv(fs: ForecastSet, raw: RawSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "t1", "t2", "method", "tc_norm", "m", "omega",
                    "tc_calendar", "tc_label", "final_mse", "converged"])
        for r in fs.records:
            w.writerow([r.window, repr(r.t1), repr(r.t2), r.method,
                        repr(r.tc_norm), repr(r.m), repr(r.omega),
                        repr(r.tc_calendar), raw.calendar_label(r.tc_calendar),
                        repr(r.final_mse), int(r.converged)])


def write_density_csvs(fs: ForecastSet, outdir) -> list[str]:
    import os

    paths = []
    for method, dens in fs.densities.items():
        safe = method.lower().replace("-", "_")
        path = os.path.join(outdir, f"density_{safe}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if dens.atoms:
                w.writerow(["atom_tc_calendar"])
                for v in dens.tc_values:
                    w.writerow([repr(float(v))])
            else:
                w.writerow(["tc_calendar", "pdf"])
                for g, p in zip(dens.grid, dens.pdf):
                    w.writerow([repr(float(g)), repr(float(p))])
        paths.append(path)
    return paths


def plot_overlay(raw: RawSeries, fs: ForecastSet, plan: WindowPlan, path,
                 models: dict[str, PlnnModel] | None = None,
                 lm_config: LmConfig | None = None,
                 mlnn_config: MlnnConfig | None = None) -> None:
    """Data, per-method fit of the base window with its extension, and the
    t_c densities on a twin axis."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t1, t2 = plan.windows[len(plan.windows) // 2]
    series = resample_252(raw, t1, t2, plan.target_len)
    fig, ax = plt.subplots(figsize=(11, 6))
    ax.plot(raw.t, raw.values, color="black", lw=1.2, label="data")
    ax.axvline(t1, color="green", ls="-.", lw=0.8)
    ax.axvline(t2, color="red", ls="-.", lw=0.8)
    methods = list(fs.densities)
    colors = plt.cm.tab10(np.linspace(0, 1, max(len(methods), 1)))
    for color, method in zip(colors, methods):
        recs = [r for r in fs.records if r.method == method and r.converged]
        if not recs:
            continue
        base = min(recs, key=lambda r: abs(r.t1 - t1))
        win = resample_252(raw, base.t1, base.t2, plan.target_len)
        try:
            from .model import complete_params
            params = complete_params(win, base.tc_norm, base.m, base.omega)
        except LpplsError:
            continue
        horizon = min(base.tc_norm - 1e-4, 1.35)
        tt = np.linspace(0.0, horizon, 400)
        curve = eval_lppls(params, tt)
        ax.plot(win.time_map.apply(tt), win.value_map.apply(curve),
                color=color, lw=1.4, label=f"{method} fit")
        dens = fs.densities[method]
        if not dens.atoms:
            ax2 = ax.twinx()
            ax2.plot(dens.grid, dens.pdf, color=color, lw=1.0, alpha=0.6)
            ax2.set_yticks([])
    ax.set_xlabel("calendar time" + (" (ordinal days)" if raw.date_mode == "iso" else ""))
    ax.set_ylabel("log value" if raw.log_applied else "value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
