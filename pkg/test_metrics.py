#!/usr/bin/env python3
"""
Metric tests: confusion counting, recall/precision/IoU/F1/kappa against a
pixel-loop oracle, leakage checks and the per-country / fold-average reports.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import DataError, EmptyInputError, LeakageError, ShapeError
from src.core.metrics import (ConfusionMatrix, MetricReport, accuracy, cohen_kappa, confusion,
                              export_country_distribution, f1_from_iou, fold_average_report, iou_f1,
                              merge, merge_all, per_country_report, precision, precision_matrix, recall,
                              recall_matrix)
from src.core.spatialcv import CountryRecord, assign_folds, config_for_test_fold

K = 8

# Published per-class (IoU, F1) pairs for the eight target classes
PUBLISHED_SCORES = [
    (0.831, 0.908), (0.777, 0.875), (0.223, 0.364), (0.449, 0.620),
    (0.855, 0.922), (0.720, 0.837), (0.163, 0.280), (0.520, 0.684),
]


def _oracle(pred, truth, k):
    counts = [[0] * k for _ in range(k)]
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if t != -1:
            counts[t][p] += 1
    n = sum(map(sum, counts))
    tp = [counts[i][i] for i in range(k)]
    rows = [sum(counts[i]) for i in range(k)]
    cols = [sum(counts[i][j] for i in range(k)) for j in range(k)]
    rec = [tp[i] / rows[i] if rows[i] else math.nan for i in range(k)]
    prec = [tp[i] / cols[i] if cols[i] else math.nan for i in range(k)]
    union = [rows[i] + cols[i] - tp[i] for i in range(k)]
    iou = [tp[i] / union[i] if union[i] else math.nan for i in range(k)]
    f1 = [2 * tp[i] / (rows[i] + cols[i]) if rows[i] + cols[i] else math.nan for i in range(k)]
    po = sum(tp) / n
    pe = sum(rows[i] * cols[i] for i in range(k)) / (n * n)
    kappa = 0.0 if pe == 1 else (po - pe) / (1 - pe)
    return counts, po, rec, prec, iou, f1, kappa


def _close(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return bool(np.all((np.isnan(a) & np.isnan(b)) | (np.abs(a - b) <= 1e-12)))


def test_metrics_match_pixel_loop_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        k = int(rng.integers(2, K + 1))
        truth = rng.integers(-1, k, size=(64, 64))
        # biased predictions so diagonals and empty columns both occur
        pred = np.where(rng.random((64, 64)) < 0.6, np.maximum(truth, 0), rng.integers(0, k, size=(64, 64)))
        if rng.random() < 0.3:
            pred[pred == k - 1] = 0
        cm = confusion(pred, truth, k)
        counts, po, rec, prec, iou, f1, kappa = _oracle(pred, truth, k)
        assert cm.to_list() == counts
        assert accuracy(cm) == pytest.approx(po, abs=1e-12)
        assert _close(recall(cm), rec)
        assert _close(precision(cm), prec)
        scores = iou_f1(cm)
        assert _close(scores.iou, iou)
        assert _close(scores.f1, f1)
        assert cohen_kappa(cm) == pytest.approx(kappa, abs=1e-12)


def test_f1_is_harmonic_mean_of_precision_and_recall():
    cm = ConfusionMatrix(np.array([[50, 3, 2], [4, 20, 6], [1, 9, 30]]))
    p, r, f1 = precision(cm), recall(cm), iou_f1(cm).f1
    assert f1 == pytest.approx(2 * p * r / (p + r))
    assert f1 == pytest.approx(f1_from_iou(iou_f1(cm).iou))


def test_published_iou_f1_pairs_are_consistent():
    # each pair is consistent when some IoU within rounding of the stated value
    # maps to an F1 that rounds to the stated F1
    for iou, f1 in PUBLISHED_SCORES:
        lo, hi = f1_from_iou(iou - 0.0005), f1_from_iou(iou + 0.0005)
        assert lo <= f1 + 0.0005 and hi >= f1 - 0.0005, (iou, f1)


def test_kappa_known_values():
    assert cohen_kappa(ConfusionMatrix(np.array([[20, 5], [10, 15]]))) == pytest.approx(0.4)
    assert cohen_kappa(ConfusionMatrix(np.array([[7, 0], [0, 0]]))) == 0.0
    assert cohen_kappa(ConfusionMatrix(np.array([[10, 0], [0, 10]]))) == 1.0
    with pytest.raises(EmptyInputError):
        cohen_kappa(ConfusionMatrix.zeros(3))


def test_normalized_matrices():
    cm = ConfusionMatrix(np.array([[3, 1], [0, 0]]))
    rm = recall_matrix(cm)
    assert rm[0].tolist() == [0.75, 0.25]
    assert np.isnan(rm[1]).all()
    pm = precision_matrix(cm)
    assert pm[:, 0].tolist() == [1.0, 0.0]
    assert pm[:, 1].tolist() == [1.0, 0.0]


def test_confusion_input_errors():
    with pytest.raises(ShapeError):
        confusion(np.zeros((2, 2), int), np.zeros((2, 3), int), 2)
    with pytest.raises(DataError):
        confusion(np.array([[0, 5]]), np.array([[0, 1]]), 3)
    with pytest.raises(DataError):
        confusion(np.array([[0]]), np.array([[0]]))
    with pytest.raises(ShapeError):
        merge(ConfusionMatrix.zeros(2), ConfusionMatrix.zeros(3))
    assert merge_all([], k=4) == ConfusionMatrix.zeros(4)


def _countries():
    return [CountryRecord("AA", "Ay", 300.0), CountryRecord("BB", "Bee", 200.0), CountryRecord("CC", "Cee", 100.0)]


def test_per_country_report_and_leakage():
    folds = assign_folds(_countries(), 3)
    cms = {
        "AA": ConfusionMatrix(np.array([[5, 1], [0, 4]])),
        "BB": ConfusionMatrix(np.array([[2, 0], [2, 6]])),
        "CC": ConfusionMatrix(np.array([[1, 1], [1, 1]])),
    }
    scored_by = {code: config_for_test_fold(folds.fold_of(code), 3) for code in cms}
    reports = per_country_report(cms, scored_by, folds, ("a", "b"))
    assert set(reports.countries) == {"AA", "BB", "CC"}
    assert reports.continent.confusion.to_list() == [[8, 2], [3, 11]]
    assert reports.continent.accuracy == pytest.approx(19 / 24)
    assert reports.countries["CC"].accuracy == 0.5

    leaky = dict(scored_by, BB=scored_by["AA"])
    with pytest.raises(LeakageError):
        per_country_report(cms, leaky, folds)
    with pytest.raises(LeakageError):
        per_country_report(cms, {"AA": scored_by["AA"]}, folds)


def test_report_serializes_undefined_values_as_null():
    rep = MetricReport.from_confusion(ConfusionMatrix(np.array([[4, 0], [0, 0]])), "x", ("a", "b"))
    d = rep.to_dict()
    assert d["recall"] == [1.0, None]
    assert d["classes"] == ["a", "b"]
    assert d["total"] == 4


def test_country_distribution_export(tmp_path):
    reports = {
        "AA": MetricReport.from_confusion(ConfusionMatrix(np.array([[3, 1], [0, 0]])), "AA", ("a", "b")),
        "BB": MetricReport.from_confusion(ConfusionMatrix(np.array([[1, 0], [0, 1]])), "BB", ("a", "b")),
    }
    path = tmp_path / "reports" / "country_distribution.csv"
    export_country_distribution(reports, path)
    df = pd.read_csv(path)
    assert list(df.columns) == ["country", "class", "metric", "value"]
    assert len(df) == 2 * 4 * 2
    row = df[(df.country == "AA") & (df["class"] == "b") & (df.metric == "recall")]
    assert row["value"].isna().all()
    assert b"\r\n" not in path.read_bytes()


def test_fold_average_uses_raw_counts():
    fold_cms = {
        "cv12-3-4": ConfusionMatrix(np.array([[9, 1], [0, 0]])),
        "cv23-4-1": ConfusionMatrix(np.array([[1, 1], [1, 1]])),
        "cv34-1-2": ConfusionMatrix.zeros(2),
    }
    avg = fold_average_report(fold_cms)
    assert avg.report.confusion.to_list() == [[10, 2], [1, 1]]
    assert avg.report.accuracy == pytest.approx(11 / 14)
    assert set(avg.per_fold) == {"cv12-3-4", "cv23-4-1"}
    assert avg.best_fold == "cv12-3-4" and avg.worst_fold == "cv23-4-1"
    with pytest.raises(EmptyInputError):
        fold_average_report({"x": ConfusionMatrix.zeros(2)})


def test_best_fold_ranks_by_iou_plus_f1_not_accuracy():
    # "cv12-3-4" never predicts class 1: higher accuracy, lower mean IoU + F1
    fold_cms = {
        "cv12-3-4": ConfusionMatrix(np.array([[95, 0], [5, 0]])),
        "cv23-4-1": ConfusionMatrix(np.array([[45, 5], [5, 45]])),
    }
    avg = fold_average_report(fold_cms)
    assert avg.per_fold["cv12-3-4"].accuracy > avg.per_fold["cv23-4-1"].accuracy
    assert avg.best_fold == "cv23-4-1"
    assert avg.worst_fold == "cv12-3-4"
    tied = fold_average_report({"b": ConfusionMatrix(np.eye(2, dtype=int)), "a": ConfusionMatrix(np.eye(2, dtype=int))})
    assert tied.best_fold == "a" and tied.worst_fold == "a"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
