"""Synthetic LPPLS series with known parameters, plus white/AR(1) noise.

Generation happens in the normalized frame: a clean curve is evaluated on a
uniform n-point grid over [0, 1], min-max scaled, then decorated with additive
noise and re-scaled so the total function range stays exactly 1.  Every
example derives its own PCG64 stream from (seed, index), so serial and
parallel generation agree bit for bit.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, replace
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .errors import DegenerateRange, FormatError, VersionError
from .model import AffineMap, LpplsParams, Series, eval_basis, minmax_scale, uniform_series

DATASET_MAGIC = b"LPDS"
DATASET_VERSION = 1

# Rejection cap for the linear-parameter draw; hitting it means the nonlinear
# parameters produce essentially flat curves for any sampled coefficients.
_MAX_LINEAR_DRAWS = 200


class NoiseKind(str, Enum):
    WHITE = "white"
    AR1 = "ar1"
    BOTH = "both"


@dataclass(frozen=True)
class NoiseSpec:
    """White and/or AR(1) additive noise configuration.

    ``white_amplitude`` is the white-noise standard deviation and
    ``ar1_amplitude`` the AR(1) innovation standard deviation, both as
    fractions of the unit value range.  ``phi`` is the AR(1) coefficient.
    """

    kind: NoiseKind
    white_amplitude: float = 0.0
    ar1_amplitude: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if abs(self.phi) >= 1.0:
            raise ValueError("AR(1) requires |phi| < 1 for stationarity")
        if self.white_amplitude < 0 or self.ar1_amplitude < 0:
            raise ValueError("noise amplitudes must be non-negative")


@dataclass(frozen=True)
class ScenarioSpec:
    """Sampling ranges for scenario/dataset generation.

    Defaults follow the benchmark setup: t_c drawn up to 50 days past the
    window end, m in [0.1, 0.9], omega in [6, 13], white amplitude in
    [0.01, 0.15], AR(1) innovation amplitude in [0.01, 0.05] with phi = 0.9.
    """

    kind: NoiseKind = NoiseKind.WHITE
    tc_days: tuple[float, float] = (0.0, 50.0)
    m_range: tuple[float, float] = (0.1, 0.9)
    omega_range: tuple[float, float] = (6.0, 13.0)
    white_range: tuple[float, float] = (0.01, 0.15)
    ar1_range: tuple[float, float] = (0.01, 0.05)
    phi: float = 0.9
    n: int = 252
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str) and not isinstance(self.kind, NoiseKind):
            object.__setattr__(self, "kind", NoiseKind(self.kind))
        for name in ("tc_days", "m_range", "omega_range", "white_range", "ar1_range"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise ValueError(f"{name} must be a finite (lo, hi) pair with lo <= hi")
        if abs(self.phi) >= 1.0:
            raise ValueError("|phi| < 1 required")
        if self.n < 20:
            raise ValueError("series length below minimum of 20")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @staticmethod
    def from_dict(d: dict) -> "ScenarioSpec":
        known = {f: d[f] for f in (
            "kind", "tc_days", "m_range", "omega_range", "white_range",
            "ar1_range", "phi", "n", "seed") if f in d}
        for f in ("tc_days", "m_range", "omega_range", "white_range", "ar1_range"):
            if f in known:
                known[f] = tuple(known[f])
        return ScenarioSpec(**known)


def rng_for(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 stream for example `index` under master `seed`."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def tc_days_to_norm(days_past_end: float, n: int) -> float:
    """Map 'days past the window end' onto the normalized time axis."""
    return 1.0 + days_past_end / (n - 1)


def _draw_linear(rng: np.random.Generator) -> tuple[float, float, float, float]:
    # Negative B gives upward-accelerating curves; C amplitude relative to |B|.
    a = rng.uniform(0.5, 1.0)
    b = -rng.uniform(0.1, 0.6)
    c_mag = rng.uniform(0.02, 0.3) * abs(b)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return a, b, c_mag * np.cos(phase), c_mag * np.sin(phase)


def gen_clean(tc_norm: float, m: float, omega: float, n: int,
              rng: np.random.Generator) -> tuple[Series, LpplsParams]:
    """Clean min-max-scaled LPPLS series with randomly drawn linear parameters.

    The time map treats the grid as daily samples: normalized time 1
    corresponds to calendar day n-1, so t_c is carried at ``tc_norm``.
    Linear draws are rejected until |B| >= 0.05 in scaled units.
    """
    times = np.linspace(0.0, 1.0, n)
    f, g, h = eval_basis(times, tc_norm, m, omega)
    for _ in range(_MAX_LINEAR_DRAWS):
        a, b, c1, c2 = _draw_linear(rng)
        raw = a + b * f + c1 * g + c2 * h
        span = raw.max() - raw.min()
        if span <= 0:
            continue
        if abs(b) / span < 0.05:
            continue
        scaled, vmap = minmax_scale(raw)
        series = uniform_series(scaled, AffineMap(scale=float(n - 1), offset=0.0), vmap)
        truth = LpplsParams(
            t_c=tc_norm, m=m, omega=omega,
            a=(a - vmap.offset) / vmap.scale,
            b=b / vmap.scale, c1=c1 / vmap.scale, c2=c2 / vmap.scale)
        return series, truth
    raise DegenerateRange("could not draw a non-degenerate clean curve")


def white_path(n: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. N(0, alpha^2) noise path."""
    return alpha * rng.standard_normal(n)


def ar1_path(n: int, sigma: float, phi: float, rng: np.random.Generator) -> np.ndarray:
    """AR(1) path eta_t = phi*eta_{t-1} + eps_t, initialized at stationarity.

    eps_t ~ N(0, sigma^2); eta_0 is drawn from the stationary distribution
    N(0, sigma^2 / (1 - phi^2)), so the whole path is stationary with that
    variance.  With phi = 0 the path is identical to white_path(n, sigma)
    under the same generator state.
    """
    if abs(phi) >= 1.0:
        raise ValueError("|phi| < 1 required")
    x = sigma * rng.standard_normal(n)
    x[0] /= np.sqrt(1.0 - phi * phi)
    return lfilter([1.0], [1.0, -phi], x)


def _add_noise(series: Series, noise: np.ndarray) -> Series:
    noisy = series.values + noise
    rescaled, inner = minmax_scale(noisy)
    return Series(times=series.times, values=rescaled,
                  time_map=series.time_map,
                  value_map=series.value_map.compose(inner))


def add_white(series: Series, alpha: float, rng: np.random.Generator) -> Series:
    """Add N(0, alpha^2) noise element-wise, then re-scale onto [0, 1]."""
    return _add_noise(series, white_path(series.n, alpha, rng))


def add_ar1(series: Series, sigma: float, phi: float, rng: np.random.Generator) -> Series:
    """Add a stationary AR(1) noise path element-wise, then re-scale onto [0, 1]."""
    return _add_noise(series, ar1_path(series.n, sigma, phi, rng))


@dataclass(frozen=True)
class Scenario:
    """One synthetic benchmark case: noisy input plus its ground truth.

    ``clean_values`` and ``truth`` live in the same final frame as
    ``series.values`` (i.e. after the post-noise re-scaling), so fitted
    curves compare directly against the clean curve.
    """

    index: int
    series: Series
    clean_values: np.ndarray
    truth: LpplsParams
    noise_kind: NoiseKind
    noise_amplitude: float


def sample_scenario(spec: ScenarioSpec, index: int) -> Scenario:
    """Draw scenario `index` of `spec` deterministically."""
    rng = rng_for(spec.seed, index)
    tc_days = rng.uniform(*spec.tc_days)
    m = rng.uniform(*spec.m_range)
    omega = rng.uniform(*spec.omega_range)
    if spec.kind is NoiseKind.BOTH:
        use_white = rng.random() < 0.5
    else:
        use_white = spec.kind is NoiseKind.WHITE
    if use_white:
        amplitude = rng.uniform(*spec.white_range)
        kind = NoiseKind.WHITE
    else:
        amplitude = rng.uniform(*spec.ar1_range)
        kind = NoiseKind.AR1
    tc_norm = tc_days_to_norm(tc_days, spec.n)
    clean_series, truth = gen_clean(tc_norm, m, omega, spec.n, rng)
    if kind is NoiseKind.WHITE:
        noise = white_path(spec.n, amplitude, rng)
    else:
        noise = ar1_path(spec.n, amplitude, spec.phi, rng)
    noisy = clean_series.values + noise
    rescaled, inner = minmax_scale(noisy)
    series = Series(times=clean_series.times, values=rescaled,
                    time_map=clean_series.time_map,
                    value_map=clean_series.value_map.compose(inner))
    # carry the clean curve and linear truth into the post-noise frame
    clean_final = (clean_series.values - inner.offset) / inner.scale
    truth_final = replace(
        truth,
        a=(truth.a - inner.offset) / inner.scale,
        b=truth.b / inner.scale,
        c1=truth.c1 / inner.scale,
        c2=truth.c2 / inner.scale)
    return Scenario(index=index, series=series, clean_values=clean_final,
                    truth=truth_final, noise_kind=kind, noise_amplitude=amplitude)


@dataclass(frozen=True)
class Dataset:
    """Labeled examples: per-row feature vector plus (t_c, m, omega) labels."""

    features: np.ndarray  # (count, n) float32
    labels: np.ndarray    # (count, 3) float64
    spec: ScenarioSpec

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 2 or self.labels.shape[1] != 3:
            raise ValueError("features must be (count, n), labels (count, 3)")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature/label row counts differ")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]


def gen_dataset(spec: ScenarioSpec, count: int) -> Dataset:
    """Generate `count` labeled examples; deterministic under (spec, seed)."""
    features = np.empty((count, spec.n), dtype=np.float32)
    labels = np.empty((count, 3), dtype=np.float64)
    for i in range(count):
        sc = sample_scenario(spec, i)
        features[i] = sc.series.values.astype(np.float32)
        labels[i] = sc.truth.nonlinear()
    return Dataset(features=features, labels=labels, spec=spec)


def _dataset_header(ds: Dataset) -> bytes:
    header = {
        "format": "lppls-dataset",
        "format_version": DATASET_VERSION,
        "count": ds.count,
        "n": ds.n,
        "seed": ds.spec.seed,
        "spec": ds.spec.to_dict(),
    }
    return json.dumps(header, sort_keys=True).encode("utf-8")


def save_dataset(ds: Dataset, path) -> None:
    """Binary container: magic, u32 header length, JSON header, then
    row-major float32 features and float64 labels (little-endian)."""
    blob = _dataset_header(ds)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(ds.features.astype("<f4", copy=False).tobytes(order="C"))
        fh.write(ds.labels.astype("<f8", copy=False).tobytes(order="C"))


def dataset_bytes(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    blob = _dataset_header(ds)
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    buf.write(ds.features.astype("<f4", copy=False).tobytes(order="C"))
    buf.write(ds.labels.astype("<f8", copy=False).tobytes(order="C"))
    return buf.getvalue()


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if len(data) < 8 + hlen:
        raise FormatError("truncated dataset header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable dataset header: {exc}") from exc
    if header.get("format_version") != DATASET_VERSION:
        raise VersionError(f"unsupported dataset version {header.get('format_version')}")
    count, n = int(header["count"]), int(header["n"])
    off = 8 + hlen
    fbytes = count * n * 4
    lbytes = count * 3 * 8
    if len(data) != off + fbytes + lbytes:
        raise FormatError("dataset payload size mismatch (truncated or trailing bytes)")
    features = np.frombuffer(data, dtype="<f4", count=count * n, offset=off).reshape(count, n)
    labels = np.frombuffer(data, dtype="<f8", count=count * 3, offset=off + fbytes).reshape(count, 3)
    return Dataset(features=features.copy(), labels=labels.copy(),
                   spec=ScenarioSpec.from_dict(header["spec"]))


def dataset_to_csv(ds: Dataset, path) -> None:
    """Plain-text export for inspection: one example per row."""
    with open(path, "w") as fh:
        cols = ["label_tc", "label_m", "label_omega"] + [f"v{i}" for i in range(ds.n)]
        fh.write(",".join(cols) + "\n")
        for i in range(ds.count):
            row = [repr(float(x)) for x in ds.labels[i]]
            row += [repr(float(x)) for x in ds.features[i]]
            fh.write(",".join(row) + "\n")
