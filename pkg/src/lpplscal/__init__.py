"""LPPLS critical-time calibration toolkit.

Calibrates the 7-parameter log-periodic power law singularity model with
three competing techniques (Levenberg-Marquardt, a per-series neural
calibrator, and a family of pre-trained supervised estimators), benchmarks
them on synthetic noisy series, and produces rolling-window critical-time
forecasts for empirical data.
"""

__version__ = "0.1.0"

from .errors import (
    AllStartsFailed,
    DegenerateRange,
    DomainError,
    FormatError,
    LpplsError,
    NonFinite,
    NonMonotoneDates,
    ParseError,
    ShapeMismatch,
    SingularSystem,
    VersionError,
)
from .model import (
    AffineMap,
    CalibrationResult,
    LpplsParams,
    Series,
    complete_params,
    eval_basis,
    eval_lppls,
    minmax_scale,
    reduced_loss,
    residual_mse,
    solve_linear,
)
from .synth import (
    Dataset,
    NoiseKind,
    NoiseSpec,
    Scenario,
    ScenarioSpec,
    add_ar1,
    add_white,
    ar1_path,
    gen_clean,
    gen_dataset,
    load_dataset,
    sample_scenario,
    save_dataset,
    white_path,
)
from .lm import LmConfig, lm_fit
from .mlnn import MlnnConfig, mlnn_fit, penalty
from .plnn import PlnnModel, TrainConfig, model_load, model_save, plnn_infer, plnn_train
from .bench import (
    CdfTable,
    ErrorRecord,
    dominance_check,
    empirical_cdf,
    run_benchmark,
    timing_summary,
)
from .forecast import RawSeries, WindowPlan, forecast, ingest_csv, resample_252

__all__ = [name for name in dir() if not name.startswith("_")]
