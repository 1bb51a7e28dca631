"""Series ingestion, normalization, sliding windows and synthetic benchmarks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, ValidationError

ROLES = ("train", "test")


@dataclass
class TimeSeries:
    name: str
    values: np.ndarray
    labels: np.ndarray | None = None
    role: str = "test"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.role not in ROLES:
            raise ValidationError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.values.size == 0:
            raise ValidationError(f"series {self.name!r} is empty")
        if not np.isfinite(self.values).all():
            raise ValidationError(f"series {self.name!r} contains non-finite values")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != self.values.shape:
                raise ValidationError(
                    f"series {self.name!r}: {labels.size} labels for {self.values.size} values"
                )
            if not np.isin(labels, (0, 1)).all():
                raise ValidationError(f"series {self.name!r}: labels must be 0/1")
            self.labels = labels.astype(np.int8)

    def __len__(self) -> int:
        return self.values.size

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def unlabeled(self, role: str = "train") -> TimeSeries:
        """Copy with labels stripped, as fed to the unsupervised trainers."""
        return TimeSeries(self.name, self.values.copy(), None, role)


def load_series_csv(path, role: str = "test", name: str | None = None) -> TimeSeries:
    """Read ``timestamp,value[,label]`` or ``value[,label]`` CSV with a header row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        if header not in (["timestamp", "value"], ["timestamp", "value", "label"], ["value"], ["value", "label"]):
            raise ParseError(f"{path}: unrecognised header {header}", line=1)
        vi = header.index("value")
        li = header.index("label") if "label" in header else None
        values, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} columns, got {len(row)}", line=lineno)
            try:
                v = float(row[vi])
            except ValueError:
                raise ParseError(f"{path}: bad value {row[vi]!r}", line=lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: non-finite value {row[vi]!r}", line=lineno)
            values.append(v)
            if li is not None:
                cell = row[li].strip()
                if cell not in ("0", "1"):
                    raise ValidationError(f"{path}: line {lineno}: label {cell!r} is not 0 or 1")
                labels.append(int(cell))
    if not values:
        raise ValidationError(f"{path}: no data rows")
    return TimeSeries(name or path.stem, np.array(values), np.array(labels) if li is not None else None, role)


def save_series_csv(series: TimeSeries, path) -> None:
    """Write ``value[,label]``; floats use repr so re-reading is lossless."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if series.labeled:
            w.writerow(["value", "label"])
            w.writerows((repr(float(v)), int(y)) for v, y in zip(series.values, series.labels))
        else:
            w.writerow(["value"])
            w.writerows((repr(float(v)),) for v in series.values)


def labels_from_ranges(ranges: Iterable[tuple[int, int]], n: int) -> np.ndarray:
    """Expand inclusive ``(start, end)`` pairs into a 0/1 vector of length n."""
    out = np.zeros(n, dtype=np.int8)
    for start, end in ranges:
        if not 0 <= start <= end < n:
            raise ValidationError(f"range ({start}, {end}) outside [0, {n})")
        out[start:end + 1] = 1
    return out


def ranges_from_labels(labels) -> list[tuple[int, int]]:
    """Maximal runs of ones as inclusive ranges."""
    y = np.asarray(labels, dtype=np.int8)
    edges = np.diff(np.concatenate(([0], y, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


def load_ranges_csv(path) -> list[tuple[int, int]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["start", "end"]:
            raise ParseError(f"{path}: header must be 'start,end'", line=1)
        out = []
        for row in reader:
            if not row:
                continue
            try:
                start, end = (int(c) for c in row)
            except ValueError:
                raise ParseError(f"{path}: bad range row {row}", line=reader.line_num) from None
            out.append((start, end))
    return out


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValidationError(f"std must be positive, got {self.std}")


def fit_norm(train: TimeSeries) -> NormStats:
    if len(train) < 2:
        raise ValidationError("need at least two points to fit normalization")
    std = float(train.values.std())
    if std <= 1e-12:
        raise ValidationError(f"series {train.name!r} is constant; cannot normalize")
    return NormStats(float(train.values.mean()), std)


def normalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    return replace(series, values=(series.values - stats.mean) / stats.std)


def denormalize(series: TimeSeries, stats: NormStats) -> TimeSeries:
    return replace(series, values=series.values * stats.std + stats.mean)


@dataclass
class WindowBatch:
    windows: np.ndarray  # (n_windows, l)
    origins: np.ndarray
    stride: int

    @property
    def length(self) -> int:
        return self.windows.shape[1]

    def __len__(self) -> int:
        return self.windows.shape[0]


def window_origins(n: int, l: int, stride: int) -> np.ndarray:
    if not 1 <= l <= n:
        raise ValidationError(f"window length {l} must lie in [1, {n}]")
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    origins = np.arange(0, n - l + 1, stride)
    if origins[-1] != n - l:
        origins = np.append(origins, n - l)  # tail window
    return origins


def make_windows(series: TimeSeries | np.ndarray, l: int, stride: int = 1) -> WindowBatch:
    values = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)
    origins = window_origins(values.size, l, stride)
    idx = origins[:, None] + np.arange(l)[None, :]
    return WindowBatch(values[idx], origins, stride)


@dataclass(frozen=True)
class Anomaly:
    position: int
    span: int
    kind: str  # "spike" or "level_shift"
    magnitude: float


@dataclass(frozen=True)
class SineBase:
    period: float = 50.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class LevelBase:
    level: float = 0.0


def synth_series(
    length: int,
    base: SineBase | LevelBase = SineBase(),
    noise_std: float = 0.0,
    anomalies: Sequence[Anomaly] = (),
    seed: int = 0,
    name: str = "synth",
    role: str = "test",
) -> TimeSeries:
    """Deterministic labeled series: base signal + Gaussian noise + injected anomalies.

    Anomaly magnitudes are in units of the base signal's standard deviation
    (1.0 for a flat level, which has none). A spike touches every point of its
    span; a level shift offsets the span as a block.
    """
    t = np.arange(length, dtype=np.float64)
    if isinstance(base, SineBase):
        signal = base.amplitude * np.sin(2 * np.pi * t / base.period)
        scale = abs(base.amplitude) / math.sqrt(2) or 1.0
    else:
        signal = np.full(length, float(base.level))
        scale = 1.0
    rng = np.random.default_rng(seed)
    values = signal + (rng.normal(0.0, noise_std, size=length) if noise_std > 0 else 0.0)
    labels = np.zeros(length, dtype=np.int8)
    for a in sorted(anomalies, key=lambda a: a.position):
        if a.kind not in ("spike", "level_shift"):
            raise ValidationError(f"unknown anomaly kind {a.kind!r}")
        if a.span < 1 or a.position < 0 or a.position + a.span > length:
            raise ValidationError(f"anomaly at {a.position} (span {a.span}) out of bounds")
        sl = slice(a.position, a.position + a.span)
        if labels[sl].any():
            raise ValidationError(f"anomaly at {a.position} overlaps another")
        values[sl] += a.magnitude * scale
        labels[sl] = 1
    return TimeSeries(name, values, labels, role)


@dataclass(frozen=True)
class BenchmarkSpec:
    """Knobs of the default synthetic benchmark (about 2% anomalous points)."""

    length: int = 4000
    period: float = 50.0
    amplitude: float = 1.0
    noise_std: float = 0.05
    n_spikes: int = 40
    n_shifts: int = 5
    shift_span: int = 8
    spike_magnitude: tuple[float, float] = (1.0, 1.7)
    shift_magnitude: tuple[float, float] = (1.0, 1.5)
    margin: int = 8


def random_anomalies(spec: BenchmarkSpec, rng: np.random.Generator) -> list[Anomaly]:
    """Place spikes and level shifts at random, keeping ``margin`` points between them."""
    kinds = [("level_shift", spec.shift_span)] * spec.n_shifts + [("spike", 1)] * spec.n_spikes
    taken = np.zeros(spec.length, dtype=bool)
    out = []
    for kind, span in kinds:
        for _ in range(10_000):
            pos = int(rng.integers(spec.margin, spec.length - span - spec.margin))
            if not taken[pos - spec.margin:pos + span + spec.margin].any():
                break
        else:
            raise ValidationError("could not place anomalies without overlap; lower the counts")
        taken[pos:pos + span] = True
        lo, hi = spec.shift_magnitude if kind == "level_shift" else spec.spike_magnitude
        out.append(Anomaly(pos, span, kind, float(rng.choice((-1.0, 1.0)) * rng.uniform(lo, hi))))
    return out


def default_benchmark(seed: int = 0, spec: BenchmarkSpec = BenchmarkSpec()) -> tuple[TimeSeries, TimeSeries]:
    """(train, test) pair. Train carries the same kind of contamination but no labels."""
    ss = np.random.SeedSequence(seed)
    streams = [np.random.default_rng(s) for s in ss.spawn(4)]
    base = SineBase(spec.period, spec.amplitude)
    noise_seeds = [int(streams[2].integers(2**31)), int(streams[3].integers(2**31))]
    train = synth_series(spec.length, base, spec.noise_std, random_anomalies(spec, streams[0]),
                         noise_seeds[0], name=f"synth-{seed}-train", role="train")
    test = synth_series(spec.length, base, spec.noise_std, random_anomalies(spec, streams[1]),
                        noise_seeds[1], name=f"synth-{seed}-test", role="test")
    return train.unlabeled(), test


def sine_fixture(length: int = 4000, period: float = 50.0, name: str = "sine") -> TimeSeries:
    """Noiseless, anomaly-free sine (unlabeled, train role)."""
    return synth_series(length, SineBase(period, 1.0), 0.0, (), 0, name=name).unlabeled()
