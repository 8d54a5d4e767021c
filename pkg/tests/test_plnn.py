import numpy as np
import pytest

from lpplscal.errors import FormatError, NonFinite, ShapeMismatch, VersionError
from lpplscal.plnn import (
    PlnnModel,
    TrainConfig,
    model_load,
    model_save,
    plnn_infer,
    plnn_train,
)
from lpplscal.synth import NoiseKind, ScenarioSpec, gen_dataset, sample_scenario


@pytest.fixture(scope="module")
def tiny_sets():
    # small n keeps unit tests fast; the full-width path is exercised in acceptance
    spec = ScenarioSpec(kind=NoiseKind.WHITE, n=48, seed=1)
    return gen_dataset(spec, 64), gen_dataset(ScenarioSpec(kind=NoiseKind.WHITE, n=48, seed=2), 32)


class TestTraining:
    def test_overfit_small_dataset(self, tiny_sets):
        train, val = tiny_sets
        cfg = TrainConfig(epochs=100, learning_rate=1e-3, hidden=(64, 48, 32, 16), seed=0)
        final, best, tr, vl = plnn_train(train, val, cfg)
        assert tr[-1] < 0.1 * tr[0]
        assert len(tr) == len(vl) == 100

    def test_deterministic_weights(self, tiny_sets):
        train, val = tiny_sets
        cfg = TrainConfig(epochs=3, hidden=(16, 12, 8, 6), seed=7)
        m1, _, _, _ = plnn_train(train, val, cfg)
        m2, _, _, _ = plnn_train(train, val, cfg)
        for w1, w2 in zip(m1.weights, m2.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_divergence_raises_nonfinite(self, tiny_sets):
        # a step size this large overflows the very next forward pass
        train, val = tiny_sets
        cfg = TrainConfig(epochs=2, learning_rate=1e80, hidden=(16, 12, 8, 6), seed=3)
        with pytest.raises(NonFinite):
            plnn_train(train, val, cfg)

    def test_width_mismatch(self, tiny_sets):
        train, _ = tiny_sets
        other = gen_dataset(ScenarioSpec(kind=NoiseKind.WHITE, n=32, seed=3), 8)
        with pytest.raises(ShapeMismatch):
            plnn_train(train, other, TrainConfig(epochs=1, hidden=(8, 8, 8, 8)))

    def test_label_normalization_roundtrip(self, tiny_sets):
        train, val = tiny_sets
        final, _, _, _ = plnn_train(train, val, TrainConfig(epochs=1, hidden=(8, 8, 8, 8), seed=0))
        labels = train.labels[:10]
        back = final.denormalize_labels(final.normalize_labels(labels))
        np.testing.assert_allclose(back, labels, atol=1e-12)
        normed = final.normalize_labels(train.labels)
        assert np.all(normed >= -1e-9) and np.all(normed <= 1 + 1e-9)

    def test_provenance_recorded(self, tiny_sets):
        train, val = tiny_sets
        final, best, _, _ = plnn_train(train, val, TrainConfig(epochs=2, hidden=(8, 8, 8, 8), seed=5))
        p = final.provenance
        assert p["noise_kind"] == "white"
        assert p["train_count"] == 64 and p["val_count"] == 32
        assert len(p["val_loss"]) == 2
        assert best.provenance["snapshot"] == "best_validation"
        assert final.method_tag == "P-LNN-White"


@pytest.fixture(scope="module")
def trained(tiny_sets):
    train, val = tiny_sets
    cfg = TrainConfig(epochs=800, learning_rate=2e-3, hidden=(64, 48, 32, 16), seed=1)
    final, _, _, _ = plnn_train(train, val, cfg)
    return final, train


class TestInference:
    def test_memorization_probe(self, trained):
        # after a heavy overfit run, a training example is recovered closely
        model, train = trained
        spec = train.spec
        sc = sample_scenario(spec, 0)
        res = plnn_infer(model, sc.series)
        assert abs(res.params.t_c - sc.truth.t_c) <= 1e-2
        assert res.converged
        assert res.wall_clock > 0

    def test_purity(self, trained):
        model, train = trained
        sc = sample_scenario(train.spec, 3)
        r1 = plnn_infer(model, sc.series)
        r2 = plnn_infer(model, sc.series)
        assert r1.params == r2.params

    def test_wrong_length_raises(self, trained):
        model, _ = trained
        sc = sample_scenario(ScenarioSpec(kind=NoiseKind.WHITE, n=96, seed=9), 0)
        with pytest.raises(ShapeMismatch):
            plnn_infer(model, sc.series)

    def test_all_zero_like_input_total(self, trained):
        # near-degenerate input: finite outputs, flagged when unusable
        model, train = trained
        sc = sample_scenario(train.spec, 1)
        flat = np.zeros(train.n)
        flat[0] = 1.0  # min-max valid but informationless
        from lpplscal.model import Series
        series = Series(times=sc.series.times, values=flat,
                        time_map=sc.series.time_map, value_map=sc.series.value_map)
        res = plnn_infer(model, series)
        assert np.isfinite(res.params.nonlinear()).all()

    def test_flagged_when_tc_not_in_future(self, trained):
        model, train = trained
        sc = sample_scenario(train.spec, 2)
        bad = PlnnModel(weights=[np.zeros_like(w) for w in model.weights],
                        label_offset=np.array([0.5, 0.5, 9.0]),
                        label_scale=np.array([1.0, 1.0, 1.0]),
                        provenance=model.provenance)
        res = plnn_infer(bad, sc.series)  # predicts t_c = 0.5 <= 1
        assert not res.converged
        assert res.final_mse == np.inf
        assert res.diagnostics.get("flagged_tc") is True


class TestSerialization:
    def test_roundtrip_bit_identical(self, trained, tmp_path):
        model, train = trained
        p = tmp_path / "m.plnn"
        model_save(model, p)
        back = model_load(p)
        for w1, w2 in zip(model.weights, back.weights):
            np.testing.assert_array_equal(w1, w2)
        np.testing.assert_array_equal(model.label_offset, back.label_offset)
        sc = sample_scenario(train.spec, 4)
        r1 = plnn_infer(model, sc.series)
        r2 = plnn_infer(back, sc.series)
        assert r1.params == r2.params
        assert r1.final_mse == r2.final_mse

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.plnn"
        p.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError):
            model_load(p)

    def test_bad_version(self, trained, tmp_path):
        model, _ = trained
        p = tmp_path / "v.plnn"
        import dataclasses
        model_save(dataclasses.replace(model, format_version=42), p)
        with pytest.raises(VersionError):
            model_load(p)

    def test_truncated(self, trained, tmp_path):
        model, _ = trained
        p = tmp_path / "t.plnn"
        model_save(model, p)
        data = p.read_bytes()
        p.write_bytes(data[:-16])
        with pytest.raises(FormatError):
            model_load(p)

    def test_trailing_garbage(self, trained, tmp_path):
        model, _ = trained
        p = tmp_path / "g.plnn"
        model_save(model, p)
        p.write_bytes(p.read_bytes() + b"extra")
        with pytest.raises(FormatError):
            model_load(p)
