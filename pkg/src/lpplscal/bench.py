"""Comparative benchmark: scenarios, per-method error records, CDFs, timings.

Each scenario draws one noisy synthetic series; every method consumes that
identical series.  Errors are absolute deviations of the three nonlinear
parameters in their natural units plus the reconstruction MSE against the
clean ground-truth curve.  Failed fits contribute +inf errors, so they can
never flatter a method's CDF.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import LpplsError
from .lm import LmConfig, lm_fit
from .mlnn import MlnnConfig, mlnn_fit
from .model import CalibrationResult, eval_lppls
from .plnn import PlnnModel, plnn_infer
from .synth import NoiseKind, Scenario, ScenarioSpec, sample_scenario

METRICS = ("tc", "m", "omega", "mse")
P_LNN_TAGS = ("P-LNN-White", "P-LNN-AR1", "P-LNN-Both")
ALL_METHODS = ("LM", "M-LNN") + P_LNN_TAGS


@dataclass(frozen=True)
class ErrorRecord:
    """Per (scenario, method) outcome of one benchmark trial."""

    scenario: int
    method: str
    err_tc: float
    err_m: float
    err_omega: float
    mse_truth: float
    wall_clock: float
    converged: bool

    def metric(self, name: str) -> float:
        return {"tc": self.err_tc, "m": self.err_m,
                "omega": self.err_omega, "mse": self.mse_truth}[name]


@dataclass(frozen=True)
class CdfTable:
    """Empirical CDF: sorted error values with cumulative probabilities."""

    values: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.probs.shape or self.values.ndim != 1:
            raise ValueError("values and probs must be matching 1-D vectors")
        if self.values.size and (np.any(np.diff(self.values) < 0)
                                 or np.any(np.diff(self.probs) < 0)):
            raise ValueError("CDF must be nondecreasing")

    def evaluate(self, x: float) -> float:
        """P(error <= x)."""
        if self.values.size == 0:
            return math.nan
        return float(np.searchsorted(self.values, x, side="right") / self.values.size)


@dataclass(frozen=True)
class DominanceResult:
    """First-order stochastic dominance verdict with violation margins.

    `a_shortfall` is the largest amount by which CDF_a dips below CDF_b over
    the pooled support (and vice versa); a tie reports as a crossing with
    zero margins.
    """

    verdict: str  # "a_dominates" | "b_dominates" | "crossing"
    a_shortfall: float
    b_shortfall: float


def _record_from_result(scenario: Scenario, result: CalibrationResult) -> ErrorRecord:
    truth = scenario.truth
    p = result.params
    try:
        recon = eval_lppls(p, scenario.series.times)
        mse_truth = float(np.mean((recon - scenario.clean_values) ** 2))
    except LpplsError:
        mse_truth = math.inf
    return ErrorRecord(
        scenario=scenario.index, method=result.method,
        err_tc=abs(p.t_c - truth.t_c), err_m=abs(p.m - truth.m),
        err_omega=abs(p.omega - truth.omega), mse_truth=mse_truth,
        wall_clock=result.wall_clock, converged=result.converged)


def _failure_record(scenario: Scenario, method: str, wall: float) -> ErrorRecord:
    return ErrorRecord(scenario=scenario.index, method=method,
                       err_tc=math.inf, err_m=math.inf, err_omega=math.inf,
                       mse_truth=math.inf, wall_clock=wall, converged=False)


def run_scenario(spec: ScenarioSpec, index: int, methods: tuple[str, ...],
                 models: dict[str, PlnnModel],
                 lm_config: LmConfig, mlnn_config: MlnnConfig) -> list[ErrorRecord]:
    """All requested methods on the byte-identical series of one scenario."""
    import time as _time

    scenario = sample_scenario(spec, index)
    records = []
    for method in methods:
        t0 = _time.perf_counter()
        try:
            if method == "LM":
                result = lm_fit(scenario.series, lm_config)
            elif method == "M-LNN":
                result = mlnn_fit(scenario.series, mlnn_config)
            elif method in models:
                result = plnn_infer(models[method], scenario.series)
            else:
                raise ValueError(f"no model available for method {method}")
            if not np.isfinite(result.final_mse):
                records.append(_failure_record(scenario, method, result.wall_clock))
            else:
                records.append(_record_from_result(scenario, result))
        except LpplsError:
            records.append(_failure_record(scenario, method, _time.perf_counter() - t0))
    return records


_WORKER_STATE: dict = {}


def _worker_init(spec, methods, models, lm_config, mlnn_config):
    _WORKER_STATE.update(spec=spec, methods=methods, models=models,
                         lm_config=lm_config, mlnn_config=mlnn_config)


def _worker_run(index: int) -> list[ErrorRecord]:
    s = _WORKER_STATE
    return run_scenario(s["spec"], index, s["methods"], s["models"],
                        s["lm_config"], s["mlnn_config"])


def run_benchmark(spec: ScenarioSpec, count: int,
                  methods: tuple[str, ...] = ALL_METHODS,
                  models: dict[str, PlnnModel] | None = None,
                  lm_config: LmConfig | None = None,
                  mlnn_config: MlnnConfig | None = None,
                  workers: int = 1) -> list[ErrorRecord]:
    """`count` scenarios drawn from `spec`, each fit by every method.

    Scenario RNG streams derive from (spec.seed, index), so results are
    independent of worker count and merge order; records come back sorted
    by (scenario, method position).
    """
    models = models or {}
    lm_config = lm_config or LmConfig()
    mlnn_config = mlnn_config or MlnnConfig()
    missing = [m for m in methods if m not in ("LM", "M-LNN") and m not in models]
    if missing:
        raise ValueError(f"methods {missing} need pre-trained models")
    cap = os.environ.get("LPPLSCAL_MAX_WORKERS")
    if cap:
        workers = max(1, min(workers, int(cap)))
    records: list[ErrorRecord] = []
    if workers <= 1:
        for i in range(count):
            records.extend(run_scenario(spec, i, methods, models, lm_config, mlnn_config))
        return records
    with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init,
            initargs=(spec, methods, models, lm_config, mlnn_config)) as pool:
        for chunk in pool.map(_worker_run, range(count)):
            records.extend(chunk)
    return records


def empirical_cdf(records: list[ErrorRecord], metric: str,
                  method: str | None = None) -> CdfTable:
    """Standard empirical CDF of one error metric, optionally per method."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    values = np.sort([r.metric(metric) for r in records
                      if method is None or r.method == method])
    n = values.size
    return CdfTable(values=values, probs=np.arange(1, n + 1) / n if n else np.empty(0))


def dominance_check(cdf_a: CdfTable, cdf_b: CdfTable, tol: float = 1e-12) -> DominanceResult:
    """First-order stochastic dominance over the pooled finite support.

    a dominates iff CDF_a(x) >= CDF_b(x) at every pooled evaluation point;
    identical CDFs report as a crossing with zero margins.
    """
    pooled = np.union1d(cdf_a.values[np.isfinite(cdf_a.values)],
                        cdf_b.values[np.isfinite(cdf_b.values)])
    if pooled.size == 0:
        return DominanceResult("crossing", 0.0, 0.0)
    fa = np.array([cdf_a.evaluate(x) for x in pooled])
    fb = np.array([cdf_b.evaluate(x) for x in pooled])
    a_short = float(np.max(fb - fa, initial=0.0))
    b_short = float(np.max(fa - fb, initial=0.0))
    a_dom = a_short <= tol
    b_dom = b_short <= tol
    if a_dom and b_dom:
        return DominanceResult("crossing", 0.0, 0.0)
    if a_dom:
        return DominanceResult("a_dominates", 0.0, b_short)
    if b_dom:
        return DominanceResult("b_dominates", a_short, 0.0)
    return DominanceResult("crossing", a_short, b_short)


def timing_summary(records: list[ErrorRecord]) -> dict[str, dict]:
    """Per-method mean/std (population) of wall-clock seconds."""
    out: dict[str, dict] = {}
    for method in sorted({r.method for r in records}):
        w = np.array([r.wall_clock for r in records if r.method == method])
        out[method] = {"mean": float(w.mean()), "std": float(w.std()),
                       "count": int(w.size)}
    return out


def write_records_csv(records: list[ErrorRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "err_tc", "err_m", "err_omega",
                    "mse_truth", "wall_clock", "converged"])
        for r in records:
            w.writerow([r.scenario, r.method, repr(r.err_tc), repr(r.err_m),
                        repr(r.err_omega), repr(r.mse_truth),
                        repr(r.wall_clock), int(r.converged)])


def write_cdf_csv(records: list[ErrorRecord], metric: str, regime: str, outdir) -> str:
    """One file per (metric, regime) holding every method's step CDF."""
    path = os.path.join(outdir, f"cdf_{metric}_{regime}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "value", "prob"])
        for method in sorted({r.method for r in records}):
            table = empirical_cdf(records, metric, method)
            for v, p in zip(table.values, table.probs):
                w.writerow([method, repr(float(v)), repr(float(p))])
    return path


def write_timing_csv(records: list[ErrorRecord], path) -> None:
    summary = timing_summary(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean_seconds", "std_seconds", "count"])
        for method, row in summary.items():
            w.writerow([method, repr(row["mean"]), repr(row["std"]), row["count"]])


def regime_specs(base: ScenarioSpec, seed: int) -> dict[str, ScenarioSpec]:
    """Three per-regime scenario sets with decorrelated seeds."""
    return {
        "white": replace(base, kind=NoiseKind.WHITE, seed=seed),
        "ar1": replace(base, kind=NoiseKind.AR1, seed=seed + 1),
        "both": replace(base, kind=NoiseKind.BOTH, seed=seed + 2),
    }


def plot_cdf_grid(records_by_regime: dict[str, list[ErrorRecord]], path) -> None:
    """3x4 grid of error CDFs (rows: noise regimes, columns: metrics)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    regimes = list(records_by_regime)
    fig, axes = plt.subplots(len(regimes), len(METRICS),
                             figsize=(16, 3.2 * len(regimes)), squeeze=False)
    for i, regime in enumerate(regimes):
        records = records_by_regime[regime]
        methods = sorted({r.method for r in records})
        for j, metric in enumerate(METRICS):
            ax = axes[i][j]
            for method in methods:
                table = empirical_cdf(records, metric, method)
                finite = np.isfinite(table.values)
                if not finite.any():
                    continue
                v = np.clip(table.values[finite], 1e-12, None)
                ax.step(v, table.probs[finite], where="post", label=method)
            ax.set_xscale("log")
            ax.set_ylim(0, 1.02)
            if i == 0:
                ax.set_title({"tc": "|Δt_c|", "m": "|Δm|", "omega": "|Δω|",
                              "mse": "recon MSE vs truth"}[metric])
            if j == 0:
                ax.set_ylabel(f"{regime} noise\ncumulative prob.")
        axes[i][-1].legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
