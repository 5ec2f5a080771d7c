"""
Confusion matrices and the evaluation metric suite.

Rows are the true class and columns the predicted class. Recall normalizes
the diagonal by row sums, precision by column sums. Per-class values that
are undefined (empty row or column) are NaN and left out of means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataError, EmptyInputError, LeakageError, ShapeError
from .raster import LabelRaster
from .spatialcv import FoldAssignment, FoldConfig
from src.utils.file_manager import atomic_write_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray  # (k, k) int64, [true, predicted]

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {c.shape}")
        if (c < 0).any():
            raise DataError("confusion counts must be non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, k: int) -> "ConfusionMatrix":
        return cls(np.zeros((k, k), dtype=np.int64))

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return merge(self, other)

    def transpose(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts.T)

    def to_list(self) -> List[List[int]]:
        return [[int(v) for v in row] for row in self.counts]


def _values(x: Union[LabelRaster, np.ndarray]) -> np.ndarray:
    return x.values if isinstance(x, LabelRaster) else np.asarray(x)


def confusion(pred: Union[LabelRaster, np.ndarray], truth: Union[LabelRaster, np.ndarray],
              k: Optional[int] = None) -> ConfusionMatrix:
    """
    Count (truth, prediction) pairs over pixels whose truth is not -1.

    Args:
        pred: predicted class ids
        truth: reference class ids, -1 for ignore
        k: class count; defaults to the rasters' num_classes

    Returns:
        ConfusionMatrix
    """
    if k is None:
        k = max(getattr(pred, "num_classes", 0), getattr(truth, "num_classes", 0))
    if not k:
        raise DataError("class count unknown; pass k")
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ShapeError(f"prediction {p.shape} and truth {t.shape} differ")
    scored = t != -1
    ps, ts = p[scored].astype(np.int64), t[scored].astype(np.int64)
    for name, v in (("truth", ts), ("prediction", ps)):
        if v.size and (v.min() < 0 or v.max() >= k):
            bad = int(v[(v < 0) | (v >= k)][0])
            raise DataError(f"{name} class {bad} outside 0..{k - 1}", value=bad)
    counts = np.bincount(ts * k + ps, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.k != b.k:
        raise ShapeError(f"cannot merge {a.k}-class and {b.k}-class matrices")
    return ConfusionMatrix(a.counts + b.counts)


def merge_all(cms: Iterable[ConfusionMatrix], k: Optional[int] = None) -> ConfusionMatrix:
    cms = list(cms)
    if not cms:
        if k is None:
            raise EmptyInputError("nothing to merge")
        return ConfusionMatrix.zeros(k)
    out = cms[0]
    for cm in cms[1:]:
        out = merge(out, cm)
    return out


def _require_nonempty(cm: ConfusionMatrix):
    if cm.total == 0:
        raise EmptyInputError("confusion matrix is empty")


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def accuracy(cm: ConfusionMatrix) -> float:
    _require_nonempty(cm)
    return int(np.trace(cm.counts)) / cm.total


def recall(cm: ConfusionMatrix) -> np.ndarray:
    return _ratio(np.diag(cm.counts).astype(np.float64), cm.counts.sum(axis=1).astype(np.float64))


def precision(cm: ConfusionMatrix) -> np.ndarray:
    return _ratio(np.diag(cm.counts).astype(np.float64), cm.counts.sum(axis=0).astype(np.float64))


def recall_matrix(cm: ConfusionMatrix) -> np.ndarray:
    """Row-normalized matrix; its diagonal is the recall."""
    rows = cm.counts.sum(axis=1, keepdims=True).astype(np.float64)
    return _ratio(cm.counts.astype(np.float64), np.broadcast_to(rows, cm.counts.shape))


def precision_matrix(cm: ConfusionMatrix) -> np.ndarray:
    """Column-normalized matrix; its diagonal is the precision."""
    cols = cm.counts.sum(axis=0, keepdims=True).astype(np.float64)
    return _ratio(cm.counts.astype(np.float64), np.broadcast_to(cols, cm.counts.shape))


class IouF1(NamedTuple):
    iou: np.ndarray
    f1: np.ndarray
    mean_iou: float
    mean_f1: float


def _nanmean(v: np.ndarray) -> float:
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def iou_f1(cm: ConfusionMatrix) -> IouF1:
    """
    Per-class IoU = TP/(TP+FP+FN) and F1 = 2TP/(2TP+FP+FN).

    F1 equals the harmonic mean of precision and recall and satisfies
    F1 = 2·IoU/(1+IoU).
    """
    tp = np.diag(cm.counts).astype(np.float64)
    fp = cm.counts.sum(axis=0) - tp
    fn = cm.counts.sum(axis=1) - tp
    iou = _ratio(tp, tp + fp + fn)
    f1 = _ratio(2 * tp, 2 * tp + fp + fn)
    return IouF1(iou, f1, _nanmean(iou), _nanmean(f1))


def f1_from_iou(iou: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    return 2 * iou / (1 + iou)


def cohen_kappa(cm: ConfusionMatrix) -> float:
    """(p_o - p_e) / (1 - p_e); defined as 0 when p_e = 1."""
    _require_nonempty(cm)
    n = cm.total
    rows = [int(v) for v in cm.counts.sum(axis=1)]
    cols = [int(v) for v in cm.counts.sum(axis=0)]
    observed = int(np.trace(cm.counts))
    expected_num = sum(r * c for r, c in zip(rows, cols))  # p_e * n^2, exact
    if expected_num == n * n:
        return 0.0
    return (observed * n - expected_num) / (n * n - expected_num)


def json_safe(v) -> Union[float, None, list]:
    if isinstance(v, np.ndarray):
        return [json_safe(x) for x in v.tolist()]
    if isinstance(v, list):
        return [json_safe(x) for x in v]
    v = float(v)
    return None if np.isnan(v) else v


@dataclass(frozen=True, eq=False)
class MetricReport:
    scope: str
    accuracy: float
    recall: np.ndarray
    precision: np.ndarray
    iou: np.ndarray
    f1: np.ndarray
    mean_iou: float
    mean_f1: float
    kappa: float
    confusion: ConfusionMatrix
    class_names: Tuple[str, ...] = ()

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, scope: str = "continent",
                       class_names: Sequence[str] = ()) -> "MetricReport":
        scores = iou_f1(cm)
        return cls(scope, accuracy(cm), recall(cm), precision(cm), scores.iou, scores.f1,
                   scores.mean_iou, scores.mean_f1, cohen_kappa(cm), cm, tuple(class_names))

    def names(self) -> List[str]:
        return list(self.class_names) if self.class_names else [str(i) for i in range(self.confusion.k)]

    def to_dict(self) -> Dict:
        return {
            "scope": self.scope,
            "accuracy": json_safe(self.accuracy),
            "kappa": json_safe(self.kappa),
            "mean_iou": json_safe(self.mean_iou),
            "mean_f1": json_safe(self.mean_f1),
            "classes": self.names(),
            "recall": json_safe(self.recall),
            "precision": json_safe(self.precision),
            "iou": json_safe(self.iou),
            "f1": json_safe(self.f1),
            "confusion": self.confusion.to_list(),
            "total": self.confusion.total,
        }


class CountryReports(NamedTuple):
    continent: MetricReport
    countries: Dict[str, MetricReport]


def per_country_report(country_cms: Mapping[str, ConfusionMatrix],
                       scored_by: Mapping[str, FoldConfig],
                       folds: FoldAssignment,
                       class_names: Sequence[str] = ()) -> CountryReports:
    """
    One report per country plus the continental report of the merged matrix.

    Args:
        country_cms: country code -> confusion matrix of its test tiles
        scored_by: country code -> fold configuration of the model that produced its map
        folds: the fold assignment

    Raises:
        LeakageError: a country was not in the test fold of its model
    """
    if not country_cms:
        raise EmptyInputError("no country matrices to report")
    for code in country_cms:
        fc = scored_by.get(code)
        if fc is None:
            raise LeakageError(f"country '{code}' has no scoring model recorded")
        fold = folds.fold_of(code)
        if fold != fc.test:
            raise LeakageError(f"country '{code}' (fold {fold}) scored by model {fc} "
                               f"whose test fold is {fc.test}")
    countries = {code: MetricReport.from_confusion(cm, code, class_names)
                 for code, cm in sorted(country_cms.items()) if cm.total > 0}
    merged = merge_all(country_cms.values())
    return CountryReports(MetricReport.from_confusion(merged, "continent", class_names), countries)


def export_country_distribution(reports: Mapping[str, MetricReport], path: Union[str, Path]) -> pd.DataFrame:
    """Long-format CSV (country,class,metric,value) behind per-country boxplots."""
    rows = []
    for code, rep in sorted(reports.items()):
        for metric in ("recall", "precision", "iou", "f1"):
            for name, value in zip(rep.names(), getattr(rep, metric)):
                rows.append((code, name, metric, None if np.isnan(value) else float(value)))
    df = pd.DataFrame(rows, columns=["country", "class", "metric", "value"])
    atomic_write_text(path, df.to_csv(index=False, float_format="%.10g", lineterminator="\n"))
    return df


class FoldAverage(NamedTuple):
    report: MetricReport
    per_fold: Dict[str, MetricReport]
    best_fold: str
    worst_fold: str


def _fold_score(report: MetricReport) -> float:
    """Mean IoU plus mean F1; undefined scores rank last."""
    score = report.mean_iou + report.mean_f1
    return float("-inf") if np.isnan(score) else float(score)


def fold_average_report(fold_cms: Mapping[str, ConfusionMatrix],
                        class_names: Sequence[str] = ()) -> FoldAverage:
    """
    Fold-average report from the raw counts of each fold's test matrix,
    plus the best and worst fold by mean IoU + mean F1 (ties: first in key
    order).
    """
    nonempty = {name: cm for name, cm in sorted(fold_cms.items()) if cm.total > 0}
    if not nonempty:
        raise EmptyInputError("every fold matrix is empty")
    per_fold = {name: MetricReport.from_confusion(cm, name, class_names) for name, cm in nonempty.items()}
    order = list(per_fold)
    best = max(order, key=lambda n: (_fold_score(per_fold[n]), -order.index(n)))
    worst = min(order, key=lambda n: (_fold_score(per_fold[n]), order.index(n)))
    merged = merge_all(nonempty.values())
    return FoldAverage(MetricReport.from_confusion(merged, "fold-average", class_names), per_fold, best, worst)
