"""Cooperative reconstructor/detector training and its two ablations.

One CNTS stage runs ``r_epochs`` passes of reconstructor updates (the detector
frozen, supplying an exclusion mask) followed by ``d_epochs`` passes of
detector updates (the reconstructor frozen, supplying soft pseudo-labels).

Random streams are split per purpose (R init, D init, R shuffling, D
shuffling) so that, for example, disabling the detector leaves every
reconstructor update untouched.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import NormStats, TimeSeries, fit_norm, make_windows, normalize
from .errors import ConfigError, DegenerateSelectionError, NumericError, ShapeError, ValidationError
from .evaluation import best_f1_threshold, dis, mse_split, point_recon_errors, point_scores
from .models import (
    DetectorModel,
    ReconstructorModel,
    detect,
    make_detector,
    make_reconstructor,
    reconstruct,
)
from .numerics import (
    OptimizerState,
    backward,
    cross_entropy,
    cross_entropy_grad,
    forward,
    optimizer_step,
    softmax,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 5
    r_epochs: int = 3
    d_epochs: int = 3
    window: int = 64
    train_stride: int | None = None  # None -> window // 2
    batch_size: int = 128
    detector_select_fraction: float = 0.20
    reconstructor_exclude_fraction: float = 0.10
    hidden: tuple[int, ...] | None = None  # None -> (4l, 2l)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    normalize: bool = True
    eval_stride: int = 1

    def __post_init__(self):
        if self.hidden is not None:
            self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.r_epochs < 0 or self.d_epochs < 0:
            raise ConfigError("r_epochs and d_epochs must be >= 0")
        if self.window < 1 or self.batch_size < 1 or self.eval_stride < 1:
            raise ConfigError("window, batch_size and eval_stride must be >= 1")
        if self.train_stride is not None and self.train_stride < 1:
            raise ConfigError("train_stride must be >= 1")
        if not 0 < self.detector_select_fraction <= 1:
            raise ConfigError("detector_select_fraction must lie in (0, 1]")
        if not 0 <= self.reconstructor_exclude_fraction < 1:
            raise ConfigError("reconstructor_exclude_fraction must lie in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")

    @property
    def stride(self) -> int:
        return self.train_stride or max(1, self.window // 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["hidden"] is not None:
            d["hidden"] = list(d["hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def benchmark_config(seed: int = 0, **overrides) -> TrainConfig:
    """Training recipe for the 4000-point synthetic benchmark.

    Stride-1 windows give ~31 updates per pass instead of 1, and the detector
    gets twice the default passes per stage; everything else is default.
    """
    kw = {"train_stride": 1, "d_epochs": 6, "seed": seed}
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class SelectionMask:
    indices: np.ndarray
    size: int


def select_top_fraction(values, fraction: float) -> SelectionMask:
    """Indices of the ceil(fraction * n) largest values; equal values favour lower indices."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ShapeError("cannot select from an empty vector")
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if not np.isfinite(v).all():
        raise NumericError("selection values must be finite")
    # rounding guards against fraction * n landing a hair above an integer
    k = math.ceil(round(fraction * v.size, 9))
    order = np.argsort(-v, kind="stable")
    return SelectionMask(np.sort(order[:k]), v.size)


def detector_loss(e_r, scores, select_fraction: float) -> tuple[float, np.ndarray]:
    """Cross entropy between softmax(e_r) and softmax(scores) on the highest-error points.

    ``e_r`` is a constant target. Returns the loss and its gradient with respect
    to ``scores`` (zero outside the selection).
    """
    e_r = np.asarray(e_r, dtype=np.float64).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if e_r.size != scores.size:
        raise ShapeError(f"{e_r.size} errors vs {scores.size} scores")
    mask = select_top_fraction(e_r, select_fraction).indices
    if mask.size < 2:
        raise DegenerateSelectionError(f"selection keeps {mask.size} point(s); need at least 2")
    target = softmax(e_r[mask])
    loss = cross_entropy(target, scores[mask])
    grad = np.zeros_like(scores)
    grad[mask] = cross_entropy_grad(target, scores[mask])
    return loss, grad


def reconstructor_loss(windows, recon, scores, exclude_fraction: float) -> tuple[float, np.ndarray]:
    """MSE over the points the detector does not flag.

    The top ``exclude_fraction`` of ``scores`` is dropped; ``scores`` may be
    None when nothing is excluded. Returns the loss and its gradient with
    respect to ``recon``.
    """
    w = np.asarray(windows, dtype=np.float64).ravel()
    r = np.asarray(recon, dtype=np.float64).ravel()
    if w.size != r.size:
        raise ShapeError(f"{w.size} targets vs {r.size} reconstructions")
    keep = np.ones(w.size, dtype=bool)
    if exclude_fraction > 0:
        s = np.asarray(scores, dtype=np.float64).ravel()
        if s.size != w.size:
            raise ShapeError(f"{s.size} scores vs {w.size} points")
        keep[select_top_fraction(s, exclude_fraction).indices] = False
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise DegenerateSelectionError("exclusion removed every point")
    diff = r[keep] - w[keep]
    loss = float((diff * diff).sum() / n_keep)
    grad = np.zeros_like(r)
    grad[keep] = 2.0 * diff / n_keep
    return loss, grad


def iter_batches(windows: np.ndarray, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(windows.shape[0])
    for start in range(0, order.size, batch_size):
        yield windows[order[start:start + batch_size]]


def _new_state(model, cfg: TrainConfig) -> OptimizerState:
    return OptimizerState.fresh(model.net, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)


def _epoch_stats(key: str, losses: list[float]) -> dict:
    """Mean batch loss under ``key`` and the final batch's loss under ``key + '_last'``."""
    if not losses:
        return {key: math.nan, key + "_last": math.nan}
    return {key: float(np.mean(losses)), key + "_last": losses[-1]}


def train_reconstructor_epoch(
    R: ReconstructorModel,
    D: DetectorModel | None,
    windows: np.ndarray,
    cfg: TrainConfig,
    state: OptimizerState,
    rng: np.random.Generator,
    exclude_fraction: float | None = None,
) -> tuple[ReconstructorModel, OptimizerState, dict]:
    """One pass over ``windows`` updating R; D (if any) only supplies exclusion scores."""
    frac = cfg.reconstructor_exclude_fraction if exclude_fraction is None else exclude_fraction
    if frac > 0 and D is None:
        raise ConfigError("excluding points needs a detector")
    net = R.net
    losses = []
    for b, batch in enumerate(iter_batches(windows, cfg.batch_size, rng)):
        try:
            scores = detect(D, batch) if frac > 0 else None
            trace = forward(net, batch)
            loss, grad = reconstructor_loss(batch, trace.output, scores, frac)
            grads = backward(net, trace, grad.reshape(trace.output.shape))
            net, state = optimizer_step(net, grads, state)
        except NumericError as exc:
            raise NumericError(f"reconstructor batch {b}: {exc}") from exc
        losses.append(loss)
    model = ReconstructorModel(net, R.norm, R.config_digest)
    return model, state, _epoch_stats("loss_r", losses)


def train_detector_epoch(
    D: DetectorModel,
    R: ReconstructorModel,
    windows: np.ndarray,
    cfg: TrainConfig,
    state: OptimizerState,
    rng: np.random.Generator,
) -> tuple[DetectorModel, OptimizerState, dict]:
    """One pass over ``windows`` updating D against R's (frozen) reconstruction errors."""
    net = D.net
    losses = []
    for b, batch in enumerate(iter_batches(windows, cfg.batch_size, rng)):
        try:
            e_r = (batch - reconstruct(R, batch)) ** 2
            trace = forward(net, batch)
            loss, grad = detector_loss(e_r, trace.output, cfg.detector_select_fraction)
            grads = backward(net, trace, grad.reshape(trace.output.shape))
            net, state = optimizer_step(net, grads, state)
        except NumericError as exc:
            raise NumericError(f"detector batch {b}: {exc}") from exc
        losses.append(loss)
    model = DetectorModel(net, D.norm, D.config_digest)
    return model, state, _epoch_stats("loss_d", losses)


HISTORY_COLUMNS = ("stage", "phase", "sub_epoch", "loss_r", "loss_d", "mse_n", "mse_a", "dis", "f1")


@dataclass
class HistoryRecord:
    stage: int
    phase: str  # "R" or "D"
    sub_epoch: int
    loss_r: float | None = None
    loss_d: float | None = None
    mse_n: float | None = None
    mse_a: float | None = None
    dis: float | None = None
    f1: float | None = None


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    stage_seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def stage_losses(self, phase: str = "R") -> list[float]:
        """Loss of the last sub-epoch of ``phase`` in each stage."""
        key = "loss_r" if phase == "R" else "loss_d"
        last = {}
        for rec in self.records:
            if rec.phase == phase:
                last[rec.stage] = getattr(rec, key)
        return [last[s] for s in sorted(last)]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for rec in self.records:
                w.writerow(["" if (v := getattr(rec, c)) is None else (repr(v) if isinstance(v, float) else v)
                            for c in HISTORY_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> TrainHistory:
        out = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                kw = {c: (float(row[c]) if row[c] != "" else None) for c in HISTORY_COLUMNS[3:]}
                out.records.append(HistoryRecord(int(row["stage"]), row["phase"], int(row["sub_epoch"]), **kw))
        return out


def _monitor(rec: HistoryRecord, R, D, monitor: TimeSeries | None, stride: int) -> None:
    # monitoring only reads the models; nothing here feeds back into training
    if monitor is None:
        return
    if R is not None:
        rec.mse_n, rec.mse_a = mse_split(point_recon_errors(R, monitor, stride), monitor.labels)
        rec.dis = dis(rec.mse_n, rec.mse_a) if rec.mse_n > 0 else None
    if D is not None:
        rec.f1 = best_f1_threshold(point_scores(D, monitor, stride).scores, monitor.labels)[1]


@dataclass
class _Setup:
    windows: np.ndarray
    norm: NormStats | None
    rngs: dict


def _prepare(train: TimeSeries, cfg: TrainConfig, monitor: TimeSeries | None) -> _Setup:
    if train.labeled:
        raise ValidationError(f"training series {train.name!r} carries labels; training is unsupervised")
    if monitor is not None and not monitor.labeled:
        raise ValidationError("monitor series needs labels")
    if len(train) < cfg.window:
        raise ValidationError(f"training series has {len(train)} points, window is {cfg.window}")
    norm = fit_norm(train) if cfg.normalize else None
    values = normalize(train, norm) if norm else train
    windows = make_windows(values, cfg.window, cfg.stride).windows
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    names = ("init_r", "init_d", "shuffle_r", "shuffle_d")
    rngs = {n: np.random.default_rng(s) for n, s in zip(names, seeds)}
    return _Setup(windows, norm, rngs)


def _init_models(cfg: TrainConfig, setup: _Setup) -> tuple[ReconstructorModel, DetectorModel]:
    r_seed = int(setup.rngs["init_r"].integers(2**63))
    d_seed = int(setup.rngs["init_d"].integers(2**63))
    R = make_reconstructor(cfg.window, cfg.hidden, r_seed)
    D = make_detector(cfg.window, cfg.hidden, d_seed)
    digest = cfg.digest()
    R.norm = D.norm = setup.norm
    R.config_digest = D.config_digest = digest
    return R, D


def train_cnts(
    train: TimeSeries, cfg: TrainConfig, monitor: TimeSeries | None = None
) -> tuple[ReconstructorModel, DetectorModel, TrainHistory]:
    """Alternating cooperative training: each stage trains R, then D."""
    cfg.validate()
    setup = _prepare(train, cfg, monitor)
    R, D = _init_models(cfg, setup)
    r_state, d_state = _new_state(R, cfg), _new_state(D, cfg)
    history = TrainHistory()
    for stage in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            for sub in range(1, cfg.r_epochs + 1):
                R, r_state, stats = train_reconstructor_epoch(
                    R, D, setup.windows, cfg, r_state, setup.rngs["shuffle_r"])
                rec = HistoryRecord(stage, "R", sub, loss_r=stats["loss_r"])
                _monitor(rec, R, D, monitor, cfg.eval_stride)
                history.records.append(rec)
            for sub in range(1, cfg.d_epochs + 1):
                D, d_state, stats = train_detector_epoch(
                    D, R, setup.windows, cfg, d_state, setup.rngs["shuffle_d"])
                rec = HistoryRecord(stage, "D", sub, loss_d=stats["loss_d"])
                _monitor(rec, R, D, monitor, cfg.eval_stride)
                history.records.append(rec)
        except NumericError as exc:
            raise NumericError(f"stage {stage}: {exc}") from exc
        history.stage_seconds.append(time.perf_counter() - t0)
        log.debug("stage %d done in %.2fs", stage, history.stage_seconds[-1])
    return R, D, history


def train_baseline_reconstructor(
    train: TimeSeries, cfg: TrainConfig, monitor: TimeSeries | None = None
) -> tuple[ReconstructorModel, TrainHistory]:
    """Single reconstructor on plain MSE over every point (no detector, no exclusion)."""
    cfg.validate()
    setup = _prepare(train, cfg, monitor)
    R, _ = _init_models(cfg, setup)
    state = _new_state(R, cfg)
    history = TrainHistory()
    for stage in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        for sub in range(1, cfg.r_epochs + 1):
            R, state, stats = train_reconstructor_epoch(
                R, None, setup.windows, cfg, state, setup.rngs["shuffle_r"], exclude_fraction=0.0)
            rec = HistoryRecord(stage, "R", sub, loss_r=stats["loss_r"])
            _monitor(rec, R, None, monitor, cfg.eval_stride)
            history.records.append(rec)
        history.stage_seconds.append(time.perf_counter() - t0)
    return R, history


def train_baseline_detector(
    train: TimeSeries,
    cfg: TrainConfig,
    monitor: TimeSeries | None = None,
    reconstructor: ReconstructorModel | None = None,
    reconstructor_history: TrainHistory | None = None,
) -> tuple[DetectorModel, ReconstructorModel, TrainHistory]:
    """The "Detection" ablation: D trained against a fully trained, frozen baseline R.

    A previously trained baseline reconstructor (and its history) can be
    passed in to avoid retraining it.
    """
    cfg.validate()
    if reconstructor is None:
        reconstructor, reconstructor_history = train_baseline_reconstructor(train, cfg, monitor)
    setup = _prepare(train, cfg, monitor)
    _, D = _init_models(cfg, setup)
    state = _new_state(D, cfg)
    history = TrainHistory(list((reconstructor_history or TrainHistory()).records))
    for stage in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        for sub in range(1, cfg.d_epochs + 1):
            D, state, stats = train_detector_epoch(
                D, reconstructor, setup.windows, cfg, state, setup.rngs["shuffle_d"])
            rec = HistoryRecord(stage, "D", sub, loss_d=stats["loss_d"])
            _monitor(rec, reconstructor, D, monitor, cfg.eval_stride)
            history.records.append(rec)
        history.stage_seconds.append(time.perf_counter() - t0)
    return D, reconstructor, history
