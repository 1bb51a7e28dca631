"""Adjustment-free detection metrics and reconstruction split metrics.

Points are labeled anomalous when their score is strictly above a threshold;
no point-adjustment of any kind is applied to the predictions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .data import TimeSeries, make_windows, normalize
from .errors import ShapeError, ValidationError
from .models import DetectorModel, ReconstructorModel, WindowModel, detect, reconstruct


@dataclass
class PointScores:
    scores: np.ndarray
    coverage: np.ndarray


def _prepared_values(model: WindowModel, series: TimeSeries) -> np.ndarray:
    if model.norm is not None:
        series = normalize(series, model.norm)
    return series.values


def _average_over_windows(per_window: np.ndarray, origins: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    l = per_window.shape[1]
    idx = (origins[:, None] + np.arange(l)[None, :]).ravel()
    sums = np.bincount(idx, weights=per_window.ravel(), minlength=n)
    counts = np.bincount(idx, minlength=n)
    return sums / counts, counts


def point_scores(model: DetectorModel, series: TimeSeries, stride: int = 1) -> PointScores:
    """Per-point detector score, averaged over every window covering the point."""
    l = model.window
    if len(series) < l:
        raise ValidationError(f"series {series.name!r} has {len(series)} points, window is {l}")
    batch = make_windows(_prepared_values(model, series), l, stride)
    scores, counts = _average_over_windows(detect(model, batch), batch.origins, len(series))
    return PointScores(scores, counts)


def point_recon_errors(model: ReconstructorModel, series: TimeSeries, stride: int = 1) -> np.ndarray:
    """Per-point squared reconstruction error, averaged over covering windows."""
    l = model.window
    if len(series) < l:
        raise ValidationError(f"series {series.name!r} has {len(series)} points, window is {l}")
    batch = make_windows(_prepared_values(model, series), l, stride)
    err = (batch.windows - reconstruct(model, batch)) ** 2
    return _average_over_windows(err, batch.origins, len(series))[0]


def apply_threshold(scores, threshold: float) -> np.ndarray:
    return (np.asarray(scores, dtype=np.float64) > threshold).astype(np.int8)


@dataclass
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int
    acc: float
    precision: float
    recall: float
    f1: float


def confusion_metrics(labels, preds) -> Confusion:
    y = np.asarray(labels).ravel().astype(bool)
    p = np.asarray(preds).ravel().astype(bool)
    if y.size != p.size:
        raise ShapeError(f"{y.size} labels vs {p.size} predictions")
    tp = int(np.count_nonzero(y & p))
    fp = int(np.count_nonzero(~y & p))
    fn = int(np.count_nonzero(y & ~p))
    tn = int(np.count_nonzero(~y & ~p))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # 2tp / (2tp + fp + fn) is the harmonic mean of precision and recall with a
    # single rounding, so F1 ties between thresholds stay exact ties
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return Confusion(tp, fp, fn, tn, (tp + tn) / y.size, precision, recall, f1)


def _check_both_classes(labels: np.ndarray) -> None:
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise ValidationError("labels must contain both classes")


def best_f1_threshold(scores, labels) -> tuple[float, float, Confusion]:
    """Exhaustive F1-max sweep in O(n log n).

    Candidates are the distinct scores plus one value just below the minimum;
    ties in F1 go to the smaller threshold.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.size != y.size:
        raise ShapeError(f"{s.size} scores vs {y.size} labels")
    _check_both_classes(y)

    order = np.argsort(s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    uniq, first = np.unique(s_sorted, return_index=True)
    n, n_pos = s.size, int(y.sum())
    pos_below = np.concatenate(([0], np.cumsum(y_sorted)))
    # threshold uniq[j] predicts everything strictly above it as positive
    last = np.append(first[1:], n)
    tp = n_pos - pos_below[last]
    pp = n - last
    cand = np.concatenate(([np.nextafter(uniq[0], -np.inf)], uniq))
    tp = np.concatenate(([n_pos], tp))
    pp = np.concatenate(([n], pp))
    with np.errstate(invalid="ignore", divide="ignore"):
        # same expression as confusion_metrics, so equal F1 values compare equal
        f1 = np.where(tp > 0, 2.0 * tp / (pp + n_pos), 0.0)
    best = int(np.argmax(f1))  # first max = smallest threshold
    delta = float(cand[best])
    report = confusion_metrics(y, apply_threshold(s, delta))
    return delta, report.f1, report


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic (ties count one half)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.size != y.size:
        raise ShapeError(f"{s.size} scores vs {y.size} labels")
    _check_both_classes(y)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def mse_split(point_errors, labels) -> tuple[float, float]:
    """Mean error over normal points and over anomalous points."""
    e = np.asarray(point_errors, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if e.size != y.size:
        raise ShapeError(f"{e.size} errors vs {y.size} labels")
    _check_both_classes(y)
    return float(e[~y].mean()), float(e[y].mean())


def dis(mse_n: float, mse_a: float) -> float:
    if not mse_n > 0:
        raise ValidationError(f"Dis needs a positive normal-point MSE, got {mse_n}")
    return (mse_a - mse_n) / mse_n


@dataclass
class EvalReport:
    series: str
    acc: float
    precision: float
    recall: float
    f1: float
    auc: float
    threshold: float
    tp: int
    fp: int
    fn: int
    tn: int
    mse_n: float
    mse_a: float
    dis: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> EvalReport:
        return cls(**d)


def evaluate(detector: DetectorModel, reconstructor: ReconstructorModel, series: TimeSeries,
             stride: int = 1) -> EvalReport:
    """Score one labeled test series with both networks."""
    if not series.labeled:
        raise ValidationError(f"series {series.name!r} has no labels; cannot evaluate")
    y = series.labels
    _check_both_classes(y)
    scores = point_scores(detector, series, stride).scores
    delta, _, conf = best_f1_threshold(scores, y)
    mse_n, mse_a = mse_split(point_recon_errors(reconstructor, series, stride), y)
    return EvalReport(
        series=series.name,
        acc=conf.acc, precision=conf.precision, recall=conf.recall, f1=conf.f1,
        auc=auc(scores, y), threshold=delta,
        tp=conf.tp, fp=conf.fp, fn=conf.fn, tn=conf.tn,
        mse_n=mse_n, mse_a=mse_a, dis=dis(mse_n, mse_a),
    )


def aggregate(reports: list[EvalReport]) -> dict:
    """Per-dataset mean of ACC, F1 and AUC over series."""
    if not reports:
        raise ValidationError("nothing to aggregate")
    return {
        "n_series": len(reports),
        "acc": float(np.mean([r.acc for r in reports])),
        "f1": float(np.mean([r.f1 for r in reports])),
        "auc": float(np.mean([r.auc for r in reports])),
    }
