import json
import subprocess
import sys

import numpy as np
import pytest

from lpplscal.cli import main
from lpplscal.plnn import TrainConfig, model_save, plnn_train
from lpplscal.synth import NoiseKind, ScenarioSpec, gen_dataset


def run_cli(*argv):
    return main(list(argv))


def write_series_csv(path, n=60, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    dt = (n + 25.0) - t
    vals = 10.0 - 1.5 * dt**0.5 + 0.05 * dt**0.5 * np.cos(9 * np.log(dt))
    vals = vals + rng.normal(0, 0.01, n)
    path.write_text("\n".join(f"{int(ti)},{v}" for ti, v in zip(t, vals)) + "\n")
    return path


class TestDispatch:
    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("--help")
        assert exc.value.code == 0

    def test_unknown_subcommand_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2

    def test_unknown_flag_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("generate", "--count", "1", "--out", "x", "--bogus")
        assert exc.value.code == 2

    def test_console_script_runs(self):
        out = subprocess.run([sys.executable, "-m", "lpplscal.cli", "--version"],
                             capture_output=True, text=True)
        assert out.returncode == 0
        assert "lpplscal" in out.stdout


class TestGenerate:
    def test_generate_writes_dataset_and_manifest(self, tmp_path):
        out = tmp_path / "d.bin"
        csv = tmp_path / "d.csv"
        code = run_cli("generate", "--count", "12", "--out", str(out),
                       "--csv", str(csv), "--seed", "5")
        assert code == 0
        assert out.exists() and csv.exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["subcommand"] == "generate"
        assert manifest["seed"] == 5
        assert "d.bin" in manifest["outputs"]

    def test_config_schema_violation_exits_two(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"kind": "purple"}))
        code = run_cli("generate", "--config", str(cfg), "--count", "1",
                       "--out", str(tmp_path / "d.bin"))
        assert code == 2
        err = capsys.readouterr().err
        assert "/kind" in err

    def test_deterministic_replay(self, tmp_path):
        a = tmp_path / "a.bin"
        b = tmp_path / "b.bin"
        run_cli("generate", "--count", "20", "--out", str(a), "--seed", "9")
        run_cli("generate", "--count", "20", "--out", str(b), "--seed", "9")
        assert a.read_bytes() == b.read_bytes()


class TestFitCommands:
    def test_fit_lm(self, tmp_path, capsys):
        series = write_series_csv(tmp_path / "s.csv")
        out = tmp_path / "res.json"
        code = run_cli("fit-lm", "--input", str(series), "--output", str(out))
        assert code == 0
        result = json.loads(out.read_text())
        assert result["method"] == "LM"
        assert result["params"]["t_c"] > 1.0
        assert (tmp_path / "manifest.json").exists()

    def test_fit_mlnn_with_config(self, tmp_path):
        series = write_series_csv(tmp_path / "s.csv")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 50, "hidden": [8, 6]}))
        out = tmp_path / "res.json"
        code = run_cli("fit-mlnn", "--input", str(series), "--config", str(cfg),
                       "--output", str(out), "--seed", "1")
        assert code == 0
        assert json.loads(out.read_text())["method"] == "M-LNN"

    def test_missing_input_is_runtime_error(self, tmp_path, capsys):
        code = run_cli("fit-lm", "--input", str(tmp_path / "absent.csv"),
                       "--output", str(tmp_path / "r.json"))
        assert code == 1


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("models")
    spec = ScenarioSpec(kind=NoiseKind.WHITE, n=64, seed=70)
    train = gen_dataset(spec, 32)
    val = gen_dataset(ScenarioSpec(kind=NoiseKind.WHITE, n=64, seed=71), 12)
    final, _, _, _ = plnn_train(train, val, TrainConfig(epochs=3, hidden=(16, 12, 8, 6), seed=0))
    model_save(final, d / "white.plnn")
    return d


class TestTrainAndInfer:
    def test_train_plnn_cli(self, tmp_path):
        spec_cfg = tmp_path / "spec.json"
        spec_cfg.write_text(json.dumps({"kind": "white", "n": 48}))
        train_bin = tmp_path / "train.bin"
        val_bin = tmp_path / "val.bin"
        run_cli("generate", "--config", str(spec_cfg), "--count", "24",
                "--out", str(train_bin), "--seed", "1")
        run_cli("generate", "--config", str(spec_cfg), "--count", "8",
                "--out", str(val_bin), "--seed", "2")
        cfg = tmp_path / "t.json"
        cfg.write_text(json.dumps({"epochs": 2, "hidden": [12, 10, 8, 6]}))
        out = tmp_path / "model.plnn"
        code = run_cli("train-plnn", "--dataset", str(train_bin), "--val", str(val_bin),
                       "--config", str(cfg), "--out", str(out))
        assert code == 0
        assert out.exists() and (tmp_path / "model.plnn.best").exists()

    def test_infer_with_resample(self, tmp_path, model_dir, capsys):
        series = write_series_csv(tmp_path / "s.csv", n=90)
        out = tmp_path / "r.json"
        code = run_cli("infer", "--model", str(model_dir / "white.plnn"),
                       "--input", str(series), "--resample", "--output", str(out))
        assert code == 0
        result = json.loads(out.read_text())
        assert result["method"] == "P-LNN-White"

    def test_infer_length_mismatch_runtime_error(self, tmp_path, model_dir):
        series = write_series_csv(tmp_path / "s.csv", n=90)
        code = run_cli("infer", "--model", str(model_dir / "white.plnn"),
                       "--input", str(series))
        assert code == 1


class TestBenchAndForecast:
    def test_bench_cli_minimal(self, tmp_path, model_dir):
        spec = tmp_path / "bench.json"
        spec.write_text(json.dumps({
            "scenarios": 2, "n": 64, "regimes": ["white"],
            "methods": ["LM", "P-LNN-White"], "tc_days": [0, 12],
            "lm": {"n_starts": 3},
        }))
        out = tmp_path / "results"
        code = run_cli("bench", "--spec", str(spec), "--models", str(model_dir),
                       "--out", str(out), "--seed", "3")
        assert code == 0
        assert (out / "records.csv").exists()
        assert (out / "timing.csv").exists()
        assert (out / "cdf_tc_white.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "bench"

    def test_forecast_cli(self, tmp_path):
        series = write_series_csv(tmp_path / "long.csv", n=320)
        out = tmp_path / "report"
        code = run_cli("forecast", "--input", str(series), "--windows", "3",
                       "--methods", "LM", "--out", str(out), "--plot",
                       "--config", str(write_lm_fast(tmp_path)))
        assert code == 0
        assert (out / "forecasts.csv").exists()
        assert (out / "density_lm.csv").exists()
        assert (out / "overlay.svg").exists()


def write_lm_fast(tmp_path):
    cfg = tmp_path / "fc.json"
    cfg.write_text(json.dumps({"lm": {"n_starts": 4}}))
    return cfg
