#!/usr/bin/env python3
"""
Stitching tests: window plans, exactly-once coverage, equivalence with
whole-raster prediction and sub-tile handling.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import ConfigError, ContractError, ShapeError
from src.core.model import BaselineClassifier, BaselineParams, FeatureConfig
from src.core.raster import GeoTransform, LabelRaster, RasterTile
from src.core.stitch import (TilingScheme, coverage_counts, direct_predict, naive_predict, plan_windows,
                             reassemble_subtiles, smooth_predict, split_subtiles)


def _classifier(bands=3, classes=4, window=1, seed=0) -> BaselineClassifier:
    rng = np.random.default_rng(seed)
    cfg = FeatureConfig(context_window=window)
    params = BaselineParams(rng.normal(size=(classes, cfg.feature_dim(bands))), rng.normal(size=classes),
                            seed=seed, feature_config=cfg)
    return BaselineClassifier(params)


def _raster(h, w, bands=3, seed=1) -> RasterTile:
    data = np.random.default_rng(seed).random((bands, h, w)).astype(np.float32)
    return RasterTile(data, tuple(f"b{i}" for i in range(bands)), GeoTransform.north_up(0.0, 0.0, 10.0))


@pytest.mark.parametrize("h,w", [(1000, 1000), (37, 1000), (251, 449), (1, 1), (200, 200)])
@pytest.mark.parametrize("margin", [0, 10, 25])
def test_every_pixel_written_exactly_once(h, w, margin):
    plan = plan_windows(h, w, TilingScheme(window=250, crop_margin=margin))
    assert (coverage_counts(plan, h, w) == 1).all()


def test_plan_pads_short_axes():
    plan = plan_windows(37, 500, TilingScheme(window=250, crop_margin=25))
    assert plan.rows.starts == (0,)
    assert plan.rows.pad_before == 25
    assert plan.rows.pad_after == 25 + 200 - 37
    assert plan.cols.starts == (0, 200, 300)


@pytest.mark.parametrize("margin", [0, 10, 25])
def test_stitched_equals_direct_for_pointwise_classifier(margin):
    raster = _raster(1000, 1000)
    classify = _classifier()
    direct = direct_predict(classify, raster)
    stitched = smooth_predict(classify, raster, TilingScheme(window=250, crop_margin=margin))
    assert stitched.values.shape == (1000, 1000)
    assert np.array_equal(stitched.values, direct.values)
    assert stitched.transform == raster.transform
    assert stitched.num_classes == 4


def test_stitched_equals_direct_with_context_inside_margin():
    raster = _raster(300, 310, seed=2)
    classify = _classifier(window=3)
    stitched = smooth_predict(classify, raster, TilingScheme(window=100, crop_margin=10))
    assert np.array_equal(stitched.values, direct_predict(classify, raster).values)


def test_threads_do_not_change_output():
    raster = _raster(400, 300, seed=3)
    classify = _classifier(window=3)
    scheme = TilingScheme(window=120, crop_margin=15)
    one = smooth_predict(classify, raster, scheme, threads=1)
    four = smooth_predict(classify, raster, scheme, threads=4)
    assert one.equals(four)


def test_naive_tiling_pads_to_window_multiple():
    raster = _raster(130, 90, seed=4)
    classify = _classifier()
    out = naive_predict(classify, raster, window=64)
    assert out.values.shape == (130, 90)
    assert np.array_equal(out.values, direct_predict(classify, raster).values)


def test_classifier_contract_violations():
    raster = _raster(50, 50)

    def wrong_shape(window):
        return np.zeros((window.shape[1], window.shape[2] - 1, 3))

    with pytest.raises(ContractError):
        smooth_predict(wrong_shape, raster, TilingScheme(window=20, crop_margin=2))

    calls = []

    def drifting(window):
        calls.append(1)
        return np.zeros(window.shape[1:] + (2 + len(calls) % 2,))

    with pytest.raises(ContractError):
        smooth_predict(drifting, raster, TilingScheme(window=20, crop_margin=2))


def test_scheme_validation():
    with pytest.raises(ConfigError):
        TilingScheme(window=250, crop_margin=125)
    with pytest.raises(ConfigError):
        TilingScheme(padding_mode="wrap")
    assert TilingScheme().stride == 200
    with pytest.raises(ShapeError):
        plan_windows(0, 10, TilingScheme())


def test_subtiles_split_and_reassemble():
    values = np.arange(500 * 500, dtype=np.int64).reshape(500, 500) % 8
    lr = LabelRaster(values, GeoTransform.north_up(1000.0, 5000.0, 10.0), 8)
    parts = split_subtiles(lr)
    assert len(parts) == 4
    assert parts[1].transform.pixel_to_world(0, 0) == (3500.0, 5000.0)
    assert parts[2].transform.pixel_to_world(0, 0) == (1000.0, 2500.0)
    assert reassemble_subtiles(parts, 2, 2).equals(lr)
    with pytest.raises(ShapeError):
        split_subtiles(lr, 300)
    with pytest.raises(ShapeError):
        reassemble_subtiles(parts, 1, 2)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
