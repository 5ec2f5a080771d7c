"""
Temporal compositing, ESRI class remapping and Built-Area label fusion.

Remapping turns raw ESRI land-cover codes into target ids; Built Area keeps
an interim code until fusion splits it into rural and urban using a
degree-of-urbanisation (SMOD) raster.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, DataError, EmptyInputError, ShapeError
from .raster import LabelRaster, RasterTile, resample_to_grid

logger = logging.getLogger(__name__)

TARGET_CLASS_NAMES = ("water", "trees", "flooded_vegetation", "crops",
                      "bare_ground", "rangeland", "rural", "urban")
NUM_TARGET_CLASSES = len(TARGET_CLASS_NAMES)
IGNORE = -1
RURAL = 6
URBAN = 7
INTERIM_BUILT = 8

ESRI_CODES = {
    1: "water", 2: "trees", 4: "flooded_vegetation", 5: "crops", 7: "built_area",
    8: "bare_ground", 9: "snow_ice", 10: "clouds", 11: "rangeland",
}


@dataclass(frozen=True)
class ObservationStack:
    """Observations of one place over time; all share geometry and bands."""
    observations: Tuple[RasterTile, ...]
    timestamps: Tuple[int, ...] = ()

    def __post_init__(self):
        obs = tuple(self.observations)
        if not obs:
            raise EmptyInputError("observation stack is empty")
        ref = obs[0]
        for i, o in enumerate(obs[1:], 1):
            if (o.data.shape != ref.data.shape or o.band_names != ref.band_names
                    or o.transform != ref.transform):
                raise ShapeError(f"observation {i} geometry {o.data.shape} / {o.band_names} "
                                 f"differs from observation 0 {ref.data.shape} / {ref.band_names}")
        ts = tuple(self.timestamps) if self.timestamps else tuple(range(len(obs)))
        if len(ts) != len(obs):
            raise ShapeError(f"{len(ts)} timestamps for {len(obs)} observations")
        object.__setattr__(self, "observations", obs)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.observations)


def median_composite(stack: ObservationStack) -> RasterTile:
    """
    Per pixel and band, the median of all valid observations.

    Even counts give the mean of the two middle values; pixels with no valid
    observation stay nodata.
    """
    ref = stack.observations[0]
    data = np.stack([o.data for o in stack.observations])  # (n, b, h, w) float32
    invalid = np.stack([o.nodata_mask() for o in stack.observations]) | np.isnan(data)
    data = np.where(invalid, np.float32(np.inf), data)
    data.sort(axis=0)
    valid = (~invalid).sum(axis=0)
    lo_i = np.maximum(valid - 1, 0) // 2
    hi_i = valid // 2
    hi_i = np.minimum(hi_i, data.shape[0] - 1)
    lo = np.take_along_axis(data, lo_i[np.newaxis], axis=0)[0].astype(np.float64)
    hi = np.take_along_axis(data, hi_i[np.newaxis], axis=0)[0].astype(np.float64)
    med = ((lo + hi) / 2.0).astype(np.float32)
    med[valid == 0] = np.float32(ref.nodata)
    empty = int((valid == 0).all(axis=0).sum())
    if empty:
        logger.debug(f"{empty} pixels had no valid observation")
    return RasterTile(med, ref.band_names, ref.transform, ref.nodata)


def apply_quality_mask(t: RasterTile, mask: np.ndarray) -> RasterTile:
    """Set every band of masked pixels to nodata."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t.height, t.width):
        raise ShapeError(f"mask shape {mask.shape} != tile shape {(t.height, t.width)}")
    data = t.data.copy()
    data[:, mask] = np.float32(t.nodata)
    return t.with_data(data)


@dataclass(frozen=True)
class ClassMap:
    """Raw ESRI code -> target id. Built Area maps to the interim code."""
    raw_to_target: Dict[int, int] = field(default_factory=lambda: {
        1: 0, 2: 1, 4: 2, 5: 3, 7: INTERIM_BUILT, 8: 4, 9: IGNORE, 10: IGNORE, 11: 5,
    })
    built_area_raw_code: int = 7
    interim_code: int = INTERIM_BUILT

    def __post_init__(self):
        mapping = {int(k): int(v) for k, v in self.raw_to_target.items()}
        missing = set(ESRI_CODES) - set(mapping)
        if missing:
            raise ConfigError(f"class map misses ESRI codes {sorted(missing)}")
        if mapping.get(self.built_area_raw_code) != self.interim_code:
            raise ConfigError("built-area code must map to the interim code")
        allowed = set(range(IGNORE, NUM_TARGET_CLASSES)) | {self.interim_code}
        bad = {k: v for k, v in mapping.items() if v not in allowed}
        if bad:
            raise ConfigError(f"class map targets outside -1..7: {bad}")
        object.__setattr__(self, "raw_to_target", mapping)

    def to_dict(self) -> Dict:
        return {"raw_to_target": {str(k): v for k, v in sorted(self.raw_to_target.items())},
                "built_area_raw_code": self.built_area_raw_code,
                "interim_code": self.interim_code}

    @classmethod
    def from_dict(cls, d: Dict) -> "ClassMap":
        try:
            return cls(raw_to_target={int(k): int(v) for k, v in d["raw_to_target"].items()},
                       built_area_raw_code=int(d.get("built_area_raw_code", 7)),
                       interim_code=int(d.get("interim_code", INTERIM_BUILT)))
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid class map: {e}") from e


@dataclass(frozen=True)
class SmodMerge:
    """Which SMOD codes count as rural / urban under a Built-Area pixel."""
    rural_codes: FrozenSet[int] = frozenset({11, 12, 13})
    urban_codes: FrozenSet[int] = frozenset({21, 22, 23, 30})
    water_code: int = 10
    fallback_class: int = RURAL

    def __post_init__(self):
        rural, urban = frozenset(map(int, self.rural_codes)), frozenset(map(int, self.urban_codes))
        if rural & urban:
            raise ConfigError(f"SMOD codes both rural and urban: {sorted(rural & urban)}")
        if not 0 <= self.fallback_class < NUM_TARGET_CLASSES:
            raise ConfigError(f"fallback_class {self.fallback_class} is not a target class")
        object.__setattr__(self, "rural_codes", rural)
        object.__setattr__(self, "urban_codes", urban)

    def to_dict(self) -> Dict:
        return {"rural_codes": sorted(self.rural_codes), "urban_codes": sorted(self.urban_codes),
                "water_code": self.water_code, "fallback_class": self.fallback_class}

    @classmethod
    def from_dict(cls, d: Dict) -> "SmodMerge":
        try:
            return cls(rural_codes=frozenset(d.get("rural_codes", (11, 12, 13))),
                       urban_codes=frozenset(d.get("urban_codes", (21, 22, 23, 30))),
                       water_code=int(d.get("water_code", 10)),
                       fallback_class=int(d.get("fallback_class", RURAL)))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid SMOD merge: {e}") from e


def remap_esri(raw: LabelRaster, cm: ClassMap = ClassMap()) -> LabelRaster:
    """
    Map raw ESRI codes to target ids; raster nodata becomes -1.

    The output still carries the interim Built-Area code.
    """
    mapping = dict(cm.raw_to_target)
    mapping[raw.nodata] = IGNORE
    codes, inverse = np.unique(raw.values, return_inverse=True)
    unknown = [int(c) for c in codes if int(c) not in mapping]
    if unknown:
        code = unknown[0]
        r, c = (int(i) for i in np.argwhere(raw.values == code)[0])
        raise DataError(f"unknown ESRI code {code} at (row {r}, col {c})", value=code, index=(r, c))
    lut = np.array([mapping[int(c)] for c in codes], dtype=np.int16)
    out = lut[inverse.reshape(raw.values.shape)]
    return LabelRaster(out, raw.transform, num_classes=0, nodata=IGNORE)


def fuse_builtarea(esri: LabelRaster, smod: LabelRaster, merge: SmodMerge = SmodMerge(),
                   interim_code: int = INTERIM_BUILT) -> LabelRaster:
    """
    Relabel Built-Area pixels as rural or urban from the SMOD overlay.

    SMOD is nearest-neighbour resampled onto the label grid first. Only
    pixels carrying the interim code change.
    """
    smod_on_grid = resample_to_grid(smod, esri).values
    built = esri.values == interim_code
    split = np.full(esri.values.shape, merge.fallback_class, dtype=np.int16)
    split[np.isin(smod_on_grid, list(merge.rural_codes))] = RURAL
    split[np.isin(smod_on_grid, list(merge.urban_codes))] = URBAN
    out = np.where(built, split, esri.values)
    logger.debug(f"Fused {int(built.sum())} built-area pixels")
    return LabelRaster(out, esri.transform, num_classes=NUM_TARGET_CLASSES, nodata=IGNORE)


def build_target_labels(raw: LabelRaster, smod: LabelRaster, cm: ClassMap = ClassMap(),
                        merge: SmodMerge = SmodMerge()) -> LabelRaster:
    """Remap then fuse: raw ESRI codes to the 8-class target scheme."""
    return fuse_builtarea(remap_esri(raw, cm), smod, merge, cm.interim_code)


def class_counts(labels: Union[LabelRaster, Iterable[LabelRaster]],
                 num_classes: int = NUM_TARGET_CLASSES) -> np.ndarray:
    rasters = [labels] if isinstance(labels, LabelRaster) else list(labels)
    counts = np.zeros(num_classes, dtype=np.int64)
    for lr in rasters:
        v = lr.values[lr.values >= 0].astype(np.int64)
        if v.size and v.max() >= num_classes:
            raise DataError(f"class {int(v.max())} outside 0..{num_classes - 1}", value=int(v.max()))
        counts += np.bincount(v, minlength=num_classes)
    return counts


def class_distribution(labels: Union[LabelRaster, Iterable[LabelRaster]],
                       num_classes: int = NUM_TARGET_CLASSES) -> np.ndarray:
    """Class proportions p_k over non-ignore pixels."""
    counts = class_counts(labels, num_classes)
    total = counts.sum()
    if total == 0:
        raise EmptyInputError("every pixel is ignored; class distribution is undefined")
    return counts / total


def floor_distribution(p: Sequence[float], eps: float = 1e-4) -> np.ndarray:
    """
    Raise zero proportions to eps and renormalize, so weights stay defined
    for classes absent from a training split.
    """
    p = np.asarray(p, dtype=np.float64)
    if eps <= 0:
        raise ConfigError("eps must be positive")
    floored = np.maximum(p, eps)
    return floored / floored.sum()
