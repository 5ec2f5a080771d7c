#!/usr/bin/env python3
"""
Preprocessing tests: median compositing, ESRI remapping and Built-Area fusion.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.errors import ConfigError, DataError, EmptyInputError, ShapeError
from src.core.preprocess import (IGNORE, INTERIM_BUILT, RURAL, URBAN, ClassMap, ObservationStack, SmodMerge,
                                 apply_quality_mask, build_target_labels, class_counts, class_distribution,
                                 floor_distribution, fuse_builtarea, median_composite, remap_esri)
from src.core.raster import ESRI_NODATA, GeoTransform, LabelRaster, RasterTile

T10 = GeoTransform.north_up(0.0, 40.0, 10.0)


def _obs(values):
    return RasterTile(np.array(values, dtype=np.float32).reshape(1, 1, -1), ("b",), T10)


def test_median_odd_and_even_counts():
    ninf = -np.inf
    stack = ObservationStack((
        _obs([1.0, 4.0, ninf, ninf]),
        _obs([3.0, 2.0, 5.0, ninf]),
        _obs([2.0, ninf, ninf, ninf]),
    ))
    out = median_composite(stack)
    # pixel 0: median of 1,2,3; pixel 1: mean of 2 and 4; pixel 2: single value; pixel 3: no data
    assert out.data[0, 0].tolist() == [2.0, 3.0, 5.0, ninf]


def test_median_ignores_nan_and_keeps_metadata():
    stack = ObservationStack((_obs([np.nan, 1.0]), _obs([7.0, 3.0])))
    out = median_composite(stack)
    assert out.data[0, 0].tolist() == [7.0, 2.0]
    assert out.transform == T10 and out.band_names == ("b",)


def test_stack_rejects_mismatched_geometry():
    other = RasterTile(np.zeros((1, 1, 4), dtype=np.float32), ("b",), GeoTransform.north_up(5.0, 40.0, 10.0))
    with pytest.raises(ShapeError):
        ObservationStack((_obs([0, 0, 0, 0]), other))
    with pytest.raises(EmptyInputError):
        ObservationStack(())


def test_quality_mask_sets_nodata():
    masked = apply_quality_mask(_obs([1.0, 2.0, 3.0, 4.0]), np.array([[False, True, False, True]]))
    assert masked.data[0, 0].tolist() == [1.0, -np.inf, 3.0, -np.inf]
    with pytest.raises(ShapeError):
        apply_quality_mask(_obs([1.0, 2.0, 3.0, 4.0]), np.zeros((2, 2), dtype=bool))


def test_remap_default_table():
    raw = LabelRaster(np.array([[1, 2, 4, 5], [7, 8, 9, 10], [11, ESRI_NODATA, 11, 1]]), T10, 0, ESRI_NODATA)
    out = remap_esri(raw)
    assert out.values.tolist() == [[0, 1, 2, 3], [INTERIM_BUILT, 4, IGNORE, IGNORE], [5, IGNORE, 5, 0]]


def test_remap_unknown_code_reports_location():
    raw = LabelRaster(np.array([[1, 1], [1, 3]]), T10, 0, ESRI_NODATA)
    with pytest.raises(DataError) as info:
        remap_esri(raw)
    assert info.value.value == 3
    assert info.value.index == (1, 1)


def test_class_map_validation():
    table = dict(ClassMap().raw_to_target)
    del table[9]
    with pytest.raises(ConfigError):
        ClassMap(raw_to_target=table)
    with pytest.raises(ConfigError):
        ClassMap(raw_to_target={**ClassMap().raw_to_target, 2: 12})
    assert ClassMap.from_dict(ClassMap().to_dict()) == ClassMap()


def test_fusion_oracle_grid():
    # 4x4 label grid at 10 m under a 2x2 SMOD grid at 20 m
    esri = LabelRaster(np.array([
        [8, 8, 0, 8],
        [8, 1, 8, 8],
        [8, 8, 8, -1],
        [5, 8, 8, 8],
    ]), T10, 0, IGNORE)
    smod = LabelRaster(np.array([[12, 30], [10, 99]]), GeoTransform.north_up(0.0, 40.0, 20.0), 0, -200)
    fused = fuse_builtarea(esri, smod)
    r, u = RURAL, URBAN
    assert fused.values.tolist() == [
        [r, r, 0, u],
        [r, 1, u, u],
        [r, r, r, -1],
        [5, r, r, r],
    ]
    assert fused.num_classes == 8


def test_fusion_fallback_is_configurable():
    esri = LabelRaster(np.full((2, 2), INTERIM_BUILT), T10, 0, IGNORE)
    smod = LabelRaster(np.array([[10]]), GeoTransform.north_up(0.0, 40.0, 20.0), 0, -200)
    assert (fuse_builtarea(esri, smod).values == RURAL).all()
    assert (fuse_builtarea(esri, smod, SmodMerge(fallback_class=URBAN)).values == URBAN).all()
    with pytest.raises(ConfigError):
        SmodMerge(rural_codes=frozenset({11, 21}))


def test_build_target_labels_end_to_end():
    raw = LabelRaster(np.array([[7, 7, 9, 5], [11, 1, 10, 7]]), T10, 0, ESRI_NODATA)
    smod = LabelRaster(np.array([[21, 13]]), GeoTransform.north_up(0.0, 40.0, 20.0), 0, -200)
    # snow/ice and clouds are ignored; built area follows the SMOD cell above it
    assert build_target_labels(raw, smod).values.tolist() == [[URBAN, URBAN, IGNORE, 3], [5, 0, IGNORE, RURAL]]


def test_class_distribution_and_floor():
    lr = LabelRaster(np.array([[0, 0, 1, -1], [7, 7, 7, 7]]), T10, 8)
    assert class_counts(lr).tolist() == [2, 1, 0, 0, 0, 0, 0, 4]
    p = class_distribution(lr)
    assert p.sum() == pytest.approx(1.0)
    assert p[7] == pytest.approx(4 / 7)
    floored = floor_distribution(p, 1e-3)
    assert floored.sum() == pytest.approx(1.0)
    assert (floored > 0).all()
    with pytest.raises(ConfigError):
        floor_distribution(p, 0.0)
    with pytest.raises(EmptyInputError):
        class_distribution(LabelRaster(np.full((2, 2), -1), T10, 8))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
