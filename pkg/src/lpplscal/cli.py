"""Unified command-line entry point with config loading and run manifests.

Every subcommand resolves its configuration as defaults <- JSON config file
<- command-line flags, validates the file against its shipped schema, and
writes a manifest next to its outputs with enough information (resolved
config, seeds, input hashes, versions) to replay the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from . import __version__
from .bench import (
    ALL_METHODS, plot_cdf_grid, regime_specs, run_benchmark,
    write_cdf_csv, write_records_csv, write_timing_csv,
)
from .errors import LpplsError
from .forecast import (
    WindowPlan, forecast, ingest_csv, parse_t2, plot_overlay,
    resample_252, write_density_csvs, write_forecast_csv,
)
from .lm import LmConfig, lm_fit
from .mlnn import MlnnConfig, mlnn_fit
from .model import AffineMap, Series, minmax_scale
from .plnn import TrainConfig, model_load, model_save, plnn_infer, plnn_train
from .synth import (
    Dataset, ScenarioSpec, dataset_to_csv, gen_dataset, load_dataset, save_dataset,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConfigError(Exception):
    """Config file violates its schema; exits with the usage code."""


def _load_schema(name: str) -> dict:
    with resources.files("lpplscal.schemas").joinpath(f"{name}.json").open() as fh:
        return json.load(fh)


def load_config(path: str | None, subcommand: str) -> dict:
    if path is None:
        return {}
    import jsonschema

    with open(path) as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    schema = _load_schema(subcommand)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            pointer = "/" + "/".join(str(p) for p in err.absolute_path)
            lines.append(f"  {pointer}: {err.message}")
        raise ConfigError(f"{path} violates the {subcommand} schema:\n" + "\n".join(lines))
    return config


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str, subcommand: str, config: dict, seed,
                   inputs: list[str], outputs: list[str]) -> str:
    manifest = {
        "subcommand": subcommand,
        "tool": "lpplscal",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "host": {
            "node": platform.node(),
            "platform": platform.platform(),
            "python": platform.python_version(),
        },
        "seed": seed,
        "config": config,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs if p},
        "outputs": sorted(os.path.basename(p) for p in outputs),
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _series_from_csv(path: str, log_values: bool) -> Series:
    """Normalize an ingested calendar series onto the unit frame as-is
    (original grid, no resampling)."""
    raw = ingest_csv(path, log_values=log_values)
    span = raw.t[-1] - raw.t[0]
    times = (raw.t - raw.t[0]) / span
    times[0], times[-1] = 0.0, 1.0
    scaled, vmap = minmax_scale(raw.values)
    return Series(times=times, values=scaled,
                  time_map=AffineMap(scale=span, offset=raw.t[0]), value_map=vmap)


def _resolve_seed(args, config: dict, default: int = 0):
    if getattr(args, "seed", None) is not None:
        return args.seed
    return config.get("seed", default)


def _write_result(result, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(args) -> int:
    config = load_config(args.config, "generate")
    config["seed"] = _resolve_seed(args, config)
    spec = ScenarioSpec.from_dict(config)
    ds = gen_dataset(spec, args.count)
    save_dataset(ds, args.out)
    outputs = [args.out]
    if args.csv:
        dataset_to_csv(ds, args.csv)
        outputs.append(args.csv)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "generate",
                   spec.to_dict() | {"count": args.count}, spec.seed, [], outputs)
    print(f"wrote {ds.count} examples (n={ds.n}, kind={spec.kind.value}) to {args.out}")
    return EXIT_OK


def _cmd_fit(args, subcommand: str) -> int:
    config = load_config(args.config, subcommand)
    config["seed"] = _resolve_seed(args, config)
    series = _series_from_csv(args.input, args.log_values)
    if subcommand == "fit-lm":
        cfg = LmConfig.from_dict(config)
        result = lm_fit(series, cfg)
        cfg_dict = cfg.to_dict()
    else:
        cfg = MlnnConfig.from_dict(config)
        result = mlnn_fit(series, cfg)
        cfg_dict = cfg.to_dict()
    result.diagnostics["tc_calendar"] = series.tc_to_calendar(result.params.t_c)
    _write_result(result, args.output)
    write_manifest(os.path.dirname(os.path.abspath(args.output)), subcommand,
                   cfg_dict, cfg.seed, [args.input], [args.output])
    print(f"{result.method}: t_c={result.params.t_c:.6f} m={result.params.m:.4f} "
          f"omega={result.params.omega:.4f} mse={result.final_mse:.3e} "
          f"converged={result.converged}")
    return EXIT_OK


def cmd_fit_lm(args) -> int:
    return _cmd_fit(args, "fit-lm")


def cmd_fit_mlnn(args) -> int:
    return _cmd_fit(args, "fit-mlnn")


def cmd_train_plnn(args) -> int:
    config = load_config(args.config, "train-plnn")
    config.pop("val_fraction", None)
    config["seed"] = _resolve_seed(args, config)
    cfg = TrainConfig.from_dict(config)
    dataset = load_dataset(args.dataset)
    val = load_dataset(args.val)
    final, best, train_trace, val_trace = plnn_train(dataset, val, cfg)
    model_save(final, args.out)
    best_path = args.out + ".best"
    model_save(best, best_path)
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "train-plnn",
                   cfg.to_dict(), cfg.seed, [args.dataset, args.val],
                   [args.out, best_path])
    print(f"trained {final.method_tag}: train_loss={train_trace[-1]:.5f} "
          f"val_loss={val_trace[-1]:.5f} -> {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    load_config(args.config, "infer")
    model = model_load(args.model)
    if args.resample:
        raw = ingest_csv(args.input, log_values=args.log_values)
        series = resample_252(raw, raw.t[0], raw.t[-1], model.input_width)
    else:
        series = _series_from_csv(args.input, args.log_values)
    result = plnn_infer(model, series)
    result.diagnostics["tc_calendar"] = series.tc_to_calendar(result.params.t_c)
    outputs = []
    if args.output:
        _write_result(result, args.output)
        outputs.append(args.output)
        write_manifest(os.path.dirname(os.path.abspath(args.output)), "infer",
                       {"resample": args.resample}, None,
                       [args.model, args.input], outputs)
    print(f"{result.method}: t_c={result.params.t_c:.6f} m={result.params.m:.4f} "
          f"omega={result.params.omega:.4f} converged={result.converged} "
          f"wall={result.wall_clock * 1e3:.2f} ms")
    return EXIT_OK


def _load_models(models_dir: str) -> dict:
    models = {}
    for name in sorted(os.listdir(models_dir)):
        if name.endswith(".plnn"):
            model = model_load(os.path.join(models_dir, name))
            models[model.method_tag] = model
    return models


def cmd_bench(args) -> int:
    config = load_config(args.config, "bench")
    config["seed"] = _resolve_seed(args, config)
    scenarios = args.scenarios or config.get("scenarios", 250)
    regimes = config.get("regimes", ["white", "ar1", "both"])
    models = _load_models(args.models) if args.models else {}
    methods = tuple(config.get("methods")
                    or [m for m in ALL_METHODS if m in ("LM", "M-LNN") or m in models])
    lm_config = LmConfig.from_dict(config.get("lm", {}))
    mlnn_config = MlnnConfig.from_dict(config.get("mlnn", {}))
    spec_fields = {k: config[k] for k in
                   ("tc_days", "m_range", "omega_range", "white_range",
                    "ar1_range", "phi", "n") if k in config}
    base = ScenarioSpec.from_dict(spec_fields | {"seed": config["seed"]})
    os.makedirs(args.out, exist_ok=True)
    workers = args.workers or config.get("workers", 1)
    by_regime = {}
    all_records = []
    outputs = []
    for regime, spec in regime_specs(base, config["seed"]).items():
        if regime not in regimes:
            continue
        records = run_benchmark(spec, scenarios, methods=methods, models=models,
                                lm_config=lm_config, mlnn_config=mlnn_config,
                                workers=workers)
        by_regime[regime] = records
        all_records.extend(records)
        for metric in ("tc", "m", "omega", "mse"):
            outputs.append(write_cdf_csv(records, metric, regime, args.out))
    rec_path = os.path.join(args.out, "records.csv")
    write_records_csv(all_records, rec_path)
    timing_path = os.path.join(args.out, "timing.csv")
    write_timing_csv(all_records, timing_path)
    outputs += [rec_path, timing_path]
    if args.plot or config.get("plot"):
        plot_path = os.path.join(args.out, "cdf_grid.svg")
        plot_cdf_grid(by_regime, plot_path)
        outputs.append(plot_path)
    write_manifest(args.out, "bench",
                   config | {"scenarios": scenarios, "methods": list(methods),
                             "regimes": regimes, "workers": workers},
                   config["seed"], [], outputs)
    print(f"benchmark complete: {len(all_records)} records across "
          f"{len(by_regime)} regimes -> {args.out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    config = load_config(args.config, "forecast")
    raw = ingest_csv(args.input, log_values=args.log_values)
    t2 = parse_t2(args.t2) if args.t2 else float(raw.t[-1])
    usable = raw.t[raw.t <= t2]
    if usable.size < 2:
        raise LpplsError("no data at or before the requested t2")
    t2 = float(usable[-1])
    windows = args.windows or config.get("windows", 10)
    lo = config.get("lo_factor", 0.7)
    hi = config.get("hi_factor", 1.3)
    base_span = args.base_span or config.get("base_span")
    if base_span is None:
        base_span = (t2 - float(raw.t[0])) / hi
    models = _load_models(args.models) if args.models else {}
    methods = tuple(args.methods or config.get("methods")
                    or ["LM", "M-LNN", *sorted(models)])
    lm_config = LmConfig.from_dict(config.get("lm", {}))
    mlnn_config = MlnnConfig.from_dict(config.get("mlnn", {}))
    plan = WindowPlan.sweep(t2=t2, base_span=base_span, count=windows, lo=lo, hi=hi)
    fs = forecast(raw, plan, methods=methods, models=models,
                  lm_config=lm_config, mlnn_config=mlnn_config)
    os.makedirs(args.out, exist_ok=True)
    fc_path = os.path.join(args.out, "forecasts.csv")
    write_forecast_csv(fs, raw, fc_path)
    outputs = [fc_path] + write_density_csvs(fs, args.out)
    if args.plot or config.get("plot"):
        plot_path = os.path.join(args.out, "overlay.svg")
        plot_overlay(raw, fs, plan, plot_path)
        outputs.append(plot_path)
    write_manifest(args.out, "forecast",
                   config | {"windows": windows, "t2": t2, "base_span": base_span,
                             "methods": list(methods)},
                   config.get("seed"), [args.input], outputs)
    for method, dens in fs.densities.items():
        if dens.tc_values.size:
            med = float(np.median(dens.tc_values))
            print(f"{method}: median t_c = {raw.calendar_label(med)} "
                  f"({dens.tc_values.size} windows, {dens.excluded} excluded)")
        else:
            print(f"{method}: no valid predictions ({dens.excluded} excluded)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpplscal",
        description="LPPLS critical-time calibration: LM, per-series and "
                    "pre-trained neural estimators, benchmarks, forecasts.")
    parser.add_argument("--version", action="version", version=f"lpplscal {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="generate a labeled synthetic dataset")
    p.add_argument("--config", help="ScenarioSpec JSON")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output .bin dataset")
    p.add_argument("--csv", help="also export rows as CSV")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    for name, fn in (("fit-lm", cmd_fit_lm), ("fit-mlnn", cmd_fit_mlnn)):
        p = sub.add_parser(name, help=f"calibrate one CSV series with {name[4:].upper()}")
        p.add_argument("--input", required=True, help="CSV of date,value rows")
        p.add_argument("--config", help="config JSON")
        p.add_argument("--output", required=True, help="result JSON")
        p.add_argument("--log-values", action="store_true")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=fn)

    p = sub.add_parser("train-plnn", help="train a supervised estimator")
    p.add_argument("--dataset", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--out", required=True, help="output .plnn model")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_plnn)

    p = sub.add_parser("infer", help="run a pre-trained estimator on a CSV series")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--config", help="config JSON")
    p.add_argument("--output", help="result JSON")
    p.add_argument("--resample", action="store_true",
                   help="resample the series to the model input width")
    p.add_argument("--log-values", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="run the comparative benchmark")
    p.add_argument("--spec", dest="config", help="benchmark spec JSON")
    p.add_argument("--models", help="directory of .plnn models")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenarios", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("forecast", help="rolling-window critical-time forecast")
    p.add_argument("--input", required=True, help="CSV of date,value rows")
    p.add_argument("--t2", help="analysis endpoint (ISO date or day index)")
    p.add_argument("--windows", type=int)
    p.add_argument("--base-span", dest="base_span", type=float)
    p.add_argument("--models", help="directory of .plnn models")
    p.add_argument("--methods", nargs="+")
    p.add_argument("--config", help="forecast config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--log-values", action="store_true")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LpplsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
