"""Pre-trained supervised estimator: 252-point series in, (t_c, m, w) out.

One network per noise regime is trained on labeled synthetic datasets with
mini-batch Adam on the sum of squared label errors; labels are affinely
normalized onto [0,1] over their generation ranges before the loss (the raw
scales differ by two orders of magnitude), and the normalization constants
travel inside the serialized model so inference is self-contained.
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import FormatError, NonFinite, ShapeMismatch, VersionError
from .model import CalibrationResult, LpplsParams, Series, residual_mse, solve_linear
from .synth import Dataset, NoiseKind, tc_days_to_norm

MODEL_MAGIC = b"PLNN"
MODEL_VERSION = 1

METHOD_TAGS = {
    NoiseKind.WHITE: "P-LNN-White",
    NoiseKind.AR1: "P-LNN-AR1",
    NoiseKind.BOTH: "P-LNN-Both",
}


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch training hyperparameters (20 epochs of batch-8 Adam at 1e-5)."""

    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-5
    hidden: tuple[int, int, int, int] = (256, 128, 64, 32)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("positive epochs, batch_size and learning_rate required")
        if len(self.hidden) != 4 or any(w < 1 for w in self.hidden):
            raise ValueError("hidden must be four positive widths")

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "hidden": list(self.hidden),
                "seed": self.seed}

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return TrainConfig(**kwargs)


@dataclass
class PlnnModel:
    """Trained weights plus label maps and training provenance."""

    weights: list[np.ndarray]   # W1, b1, ..., W5, b5
    label_offset: np.ndarray    # (3,) normalized = (label - offset) / scale
    label_scale: np.ndarray     # (3,)
    provenance: dict = field(default_factory=dict)
    format_version: int = MODEL_VERSION

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def noise_kind(self) -> NoiseKind:
        return NoiseKind(self.provenance.get("noise_kind", "white"))

    @property
    def method_tag(self) -> str:
        return METHOD_TAGS[self.noise_kind]

    def normalize_labels(self, labels: np.ndarray) -> np.ndarray:
        return (labels - self.label_offset) / self.label_scale

    def denormalize_labels(self, normed: np.ndarray) -> np.ndarray:
        return normed * self.label_scale + self.label_offset


def _label_maps(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-label affine maps onto [0,1] derived from the generation ranges."""
    spec = ds.spec
    tc_lo = tc_days_to_norm(spec.tc_days[0], spec.n)
    tc_hi = tc_days_to_norm(spec.tc_days[1], spec.n)
    lo = np.array([tc_lo, spec.m_range[0], spec.omega_range[0]])
    hi = np.array([tc_hi, spec.m_range[1], spec.omega_range[1]])
    span = hi - lo
    span[span <= 0] = 1.0  # degenerate range: leave that label unscaled
    return lo, span


def _forward_numpy(weights: list[np.ndarray], X: np.ndarray) -> np.ndarray:
    """Inference path shared by validation scoring and plnn_infer."""
    h = X
    n_layers = len(weights) // 2
    for i in range(n_layers):
        W, b = weights[2 * i], weights[2 * i + 1]
        h = h @ W.T + b
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def _dataset_hash(ds: Dataset) -> str:
    payload = json.dumps({"spec": ds.spec.to_dict(), "count": ds.count},
                         sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def plnn_train(dataset: Dataset, val_dataset: Dataset,
               config: TrainConfig | None = None
               ) -> tuple[PlnnModel, PlnnModel, list[float], list[float]]:
    """Train on the labeled dataset; returns (final, best-validation) models
    plus per-epoch train and validation loss traces.

    The loss per example is the sum of the three squared label differences
    (on normalized labels), averaged over the batch.
    """
    config = config or TrainConfig()
    if dataset.count == 0:
        raise ValueError("cannot train on an empty dataset")
    if val_dataset.n != dataset.n:
        raise ShapeMismatch("train/validation feature widths differ")
    rng = np.random.default_rng(config.seed)
    n = dataset.n
    widths = [n, *config.hidden, 3]
    layers = [ad.DenseLayer(widths[i], widths[i + 1], rng) for i in range(5)]
    params = [p for layer in layers for p in layer.parameters()]
    opt = ad.AdamState(params, lr=config.learning_rate)

    offset, scale = _label_maps(dataset)
    X = dataset.features.astype(np.float64)
    Y = (dataset.labels - offset) / scale
    Xv = val_dataset.features.astype(np.float64)
    Yv = (val_dataset.labels - offset) / scale

    def batch_graph(xb: np.ndarray) -> ad.Tensor:
        h = ad.tensor(xb)
        for i, layer in enumerate(layers):
            h = layer(h)
            if i < 4:
                h = ad.relu(h)
        return h

    def val_loss(weights: list[np.ndarray]) -> float:
        if Xv.shape[0] == 0:
            return float("nan")
        pred = _forward_numpy(weights, Xv)
        d = pred - Yv
        return float(np.mean(np.sum(d * d, axis=1)))

    train_trace: list[float] = []
    val_trace: list[float] = []
    best_val = np.inf
    best_weights: list[np.ndarray] | None = None
    for epoch in range(config.epochs):
        order = rng.permutation(dataset.count)
        epoch_loss = 0.0
        n_batches = 0
        for lo_idx in range(0, dataset.count, config.batch_size):
            idx = order[lo_idx:lo_idx + config.batch_size]
            opt.zero_grad()
            pred = batch_graph(X[idx])
            d = ad.sub(pred, ad.tensor(Y[idx]))
            loss = ad.mul(ad.tsum(ad.mul(d, d)), 1.0 / idx.size)
            value = float(loss.value)
            if not np.isfinite(value):
                raise NonFinite(f"training loss diverged at epoch {epoch}")
            ad.backward(loss)
            opt.step()
            epoch_loss += value
            n_batches += 1
        train_trace.append(epoch_loss / n_batches)
        snapshot = [p.value.copy() for p in params]
        v = val_loss(snapshot)
        val_trace.append(v)
        if np.isfinite(v) and v < best_val:
            best_val = v
            best_weights = snapshot

    final_weights = [p.value.copy() for p in params]
    provenance = {
        "noise_kind": dataset.spec.kind.value,
        "dataset_hash": _dataset_hash(dataset),
        "dataset_spec": dataset.spec.to_dict(),
        "train_count": dataset.count,
        "val_count": val_dataset.count,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "seed": config.seed,
        "train_loss": train_trace,
        "val_loss": val_trace,
    }
    final = PlnnModel(weights=final_weights, label_offset=offset, label_scale=scale,
                      provenance=provenance)
    best = PlnnModel(weights=best_weights or final_weights, label_offset=offset.copy(),
                     label_scale=scale.copy(),
                     provenance={**provenance, "snapshot": "best_validation"})
    return final, best, train_trace, val_trace


def plnn_infer(model: PlnnModel, series: Series) -> CalibrationResult:
    """One forward pass plus the linear-coefficient completion.

    A predicted t_c at or before the window end cannot parameterize a valid
    curve; such estimates are returned flagged (converged=False, infinite
    MSE) rather than silently clipped.
    """
    t0 = time.perf_counter()
    if series.n != model.input_width:
        raise ShapeMismatch(
            f"series length {series.n} does not match model input {model.input_width}")
    normed = _forward_numpy(model.weights, series.values[None, :])[0]
    t_c, m, omega = model.denormalize_labels(normed)
    usable = bool(t_c > series.times[-1])
    if usable:
        try:
            a, b, c1, c2 = solve_linear(series, t_c, m, omega)
        except Exception:
            usable = False
    if usable:
        params = LpplsParams(t_c=t_c, m=m, omega=omega, a=a, b=b, c1=c1, c2=c2)
        mse = residual_mse(series, params)
    else:
        params = LpplsParams(t_c=t_c, m=m, omega=omega,
                             a=np.nan, b=np.nan, c1=np.nan, c2=np.nan)
        mse = np.inf
    wall = time.perf_counter() - t0
    return CalibrationResult(
        params=params,
        final_mse=mse,
        converged=usable,
        iterations=1,
        wall_clock=wall,
        method=model.method_tag,
        diagnostics={"flagged_tc": not usable} if not usable else {},
    )


def model_save(model: PlnnModel, path) -> None:
    """Binary container: magic, u32 header length, JSON header, then the
    weight blocks as little-endian float64 in layer order."""
    header = {
        "format": "plnn-model",
        "format_version": model.format_version,
        "shapes": [list(w.shape) for w in model.weights],
        "label_offset": model.label_offset.tolist(),
        "label_scale": model.label_scale.tolist(),
        "provenance": model.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for w in model.weights:
            fh.write(w.astype("<f8", copy=False).tobytes(order="C"))


def model_load(path) -> PlnnModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise FormatError("truncated model header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable model header: {exc}") from exc
    version = header.get("format_version")
    if version != MODEL_VERSION:
        raise VersionError(f"unsupported model version {version}")
    shapes = [tuple(s) for s in header["shapes"]]
    expected = sum(int(np.prod(s)) * 8 for s in shapes)
    off = 8 + hlen
    if len(data) != off + expected:
        raise FormatError("model payload size mismatch (truncated or trailing bytes)")
    weights = []
    for s in shapes:
        count = int(np.prod(s))
        w = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(s)
        weights.append(w.copy())
        off += count * 8
    return PlnnModel(
        weights=weights,
        label_offset=np.asarray(header["label_offset"], dtype=float),
        label_scale=np.asarray(header["label_scale"], dtype=float),
        provenance=header.get("provenance", {}),
        format_version=version,
    )
