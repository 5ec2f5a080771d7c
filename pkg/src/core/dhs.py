"""
DHS perturbation-aware validation of urban/rural maps.

Survey clusters are published with privacy-displaced coordinates. For each
cluster we draw plausible true locations from a posterior that combines a
uniform prior over human-settlement (HS) pixels with the displacement
density, look the draws up in the map under test and take a majority vote.
Votes are compared with the survey's urban/rural labels.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import ConfigError, CoverageError, DataError, EmptyInputError, NoSettlementError
from .metrics import ConfusionMatrix, accuracy, cohen_kappa, confusion, precision, recall, json_safe
from .preprocess import RURAL as LC_RURAL, URBAN as LC_URBAN, SmodMerge
from .raster import GeoTransform, LabelRaster
from src.utils.file_manager import atomic_write_text
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

NON_HS, RURAL, URBAN = 0, 1, 2
HUR_CLASS_NAMES = ("non_settlement", "rural", "urban")
LABEL_CODES = {"rural": RURAL, "urban": URBAN}
DEFAULT_DRAWS = 20

CLUSTER_COLUMNS = ("id", "lon", "lat", "label", "year", "country")

# equirectangular metres per degree, for maps stored in EPSG:4326
_M_PER_DEG_LAT = 110574.0
_M_PER_DEG_LON = 111320.0


def hur_from_landcover(labels: LabelRaster) -> LabelRaster:
    """Collapse the 8-class map to non-HS / rural / urban; -1 stays -1."""
    v = labels.values
    out = np.full(v.shape, NON_HS, dtype=np.int16)
    out[v == LC_RURAL] = RURAL
    out[v == LC_URBAN] = URBAN
    out[v == -1] = -1
    return LabelRaster(out, labels.transform, num_classes=3, nodata=-1)


def hur_from_smod(smod: LabelRaster, merge: SmodMerge = SmodMerge()) -> LabelRaster:
    """Collapse SMOD codes to the same three classes; raster nodata becomes -1."""
    v = smod.values
    out = np.full(v.shape, NON_HS, dtype=np.int16)
    out[np.isin(v, list(merge.rural_codes))] = RURAL
    out[np.isin(v, list(merge.urban_codes))] = URBAN
    out[v == smod.nodata] = -1
    return LabelRaster(out, smod.transform, num_classes=3, nodata=-1)


@dataclass(frozen=True)
class DhsCluster:
    """Survey cluster. lon/lat are coordinates in the map's CRS."""
    cluster_id: str
    lon: float
    lat: float
    label: str  # urban | rural
    year: int = 0
    country: str = ""

    def __post_init__(self):
        if self.label not in LABEL_CODES:
            raise DataError(f"cluster {self.cluster_id}: label must be 'urban' or 'rural', got {self.label!r}")
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise DataError(f"cluster {self.cluster_id}: non-finite coordinates")

    @property
    def code(self) -> int:
        return LABEL_CODES[self.label]


@dataclass(frozen=True)
class NonSettlementPoint:
    """Validation point known to lie outside any settlement; scored in place."""
    point_id: str
    lon: float
    lat: float
    country: str = ""


@dataclass(frozen=True)
class PerturbationModel:
    urban_rmax: float = 2000.0
    rural_rmax: float = 5000.0
    rural_far_rmax: float = 10000.0
    rural_far_fraction: float = 0.01
    distance_floor: float = 5.0

    def __post_init__(self):
        if not 0 < self.urban_rmax <= self.rural_rmax <= self.rural_far_rmax:
            raise ConfigError("need 0 < urban_rmax <= rural_rmax <= rural_far_rmax")
        if not 0.0 <= self.rural_far_fraction <= 1.0:
            raise ConfigError("rural_far_fraction must be in [0, 1]")
        if self.distance_floor <= 0:
            raise ConfigError("distance_floor must be positive")

    def max_radius(self, label: str) -> float:
        if label == "urban":
            return self.urban_rmax
        return self.rural_far_rmax if self.rural_far_fraction > 0 else self.rural_rmax


def _disk_density(d: np.ndarray, d_eff: np.ndarray, rmax: float) -> np.ndarray:
    return np.where(d <= rmax, 1.0 / (2.0 * math.pi * d_eff * rmax), 0.0)


def displacement_weight(d: Union[float, np.ndarray], label: str,
                        pm: PerturbationModel = PerturbationModel()) -> Union[float, np.ndarray]:
    """
    Planar density of a displacement of length d.

    Uniform angle and uniform radius on [0, rmax] give 1/(2π·d·rmax) inside
    the disk; rural clusters mix the near and far radius. d is floored at
    distance_floor.
    """
    if label not in LABEL_CODES:
        raise DataError(f"label must be 'urban' or 'rural', got {label!r}")
    arr = np.asarray(d, dtype=np.float64)
    if (arr < 0).any():
        raise DataError("displacement must be non-negative")
    d_eff = np.maximum(arr, pm.distance_floor)
    if label == "urban":
        out = _disk_density(arr, d_eff, pm.urban_rmax)
    else:
        f = pm.rural_far_fraction
        out = ((1.0 - f) * _disk_density(arr, d_eff, pm.rural_rmax)
               + f * _disk_density(arr, d_eff, pm.rural_far_rmax))
    return float(out) if np.ndim(d) == 0 else out


def displace_point(x: float, y: float, label: str, pm: PerturbationModel,
                   rng: np.random.Generator) -> Tuple[float, float]:
    """Apply the survey displacement: uniform angle, uniform radius."""
    rmax = pm.urban_rmax
    if label == "rural":
        rmax = pm.rural_far_rmax if rng.random() < pm.rural_far_fraction else pm.rural_rmax
    theta = rng.random() * 2.0 * math.pi
    r = rng.random() * rmax
    return x + r * math.cos(theta), y + r * math.sin(theta)


class _Projector:
    """Map CRS -> planar metres (identity unless the map is EPSG:4326)."""

    def __init__(self, transform: GeoTransform, height: int, width: int):
        self.geographic = transform.epsg_code == 4326
        _, lat0 = transform.pixel_to_world(width / 2.0, height / 2.0)
        self.kx = _M_PER_DEG_LON * math.cos(math.radians(lat0)) if self.geographic else 1.0
        self.ky = _M_PER_DEG_LAT if self.geographic else 1.0

    def __call__(self, x, y):
        return np.asarray(x, dtype=np.float64) * self.kx, np.asarray(y, dtype=np.float64) * self.ky


def _point_to_pixel(raster: LabelRaster, x: float, y: float) -> Optional[Tuple[int, int]]:
    col, row = raster.transform.world_to_pixel(x, y)
    c, r = int(math.floor(col)), int(math.floor(row))
    if 0 <= r < raster.height and 0 <= c < raster.width:
        return r, c
    return None


class SettlementIndex:
    """KD-tree over the centres of human-settlement pixels of a prior map."""

    def __init__(self, prior_map: LabelRaster, hs_classes: Sequence[int] = (RURAL, URBAN)):
        self.prior_map = prior_map
        self.project = _Projector(prior_map.transform, prior_map.height, prior_map.width)
        rows, cols = np.nonzero(np.isin(prior_map.values, list(hs_classes)))
        self.rows, self.cols = rows, cols
        t = prior_map.transform
        self.x, self.y = t.pixel_to_world(cols + 0.5, rows + 0.5)
        px, py = self.project(self.x, self.y)
        self.tree = cKDTree(np.column_stack([px, py])) if rows.size else None
        logger.debug(f"Settlement index over {rows.size} HS pixels")

    def __len__(self) -> int:
        return int(self.rows.size)

    def contains_point(self, x: float, y: float) -> bool:
        return _point_to_pixel(self.prior_map, x, y) is not None

    def candidates(self, x: float, y: float, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        """Indices (ascending) and planar distances of HS pixels within radius."""
        if self.tree is None:
            return np.empty(0, dtype=np.int64), np.empty(0)
        px, py = self.project(x, y)
        idx = np.array(sorted(self.tree.query_ball_point([float(px), float(py)], r=radius)), dtype=np.int64)
        if idx.size == 0:
            return idx, np.empty(0)
        qx, qy = self.project(self.x[idx], self.y[idx])
        return idx, np.hypot(qx - px, qy - py)


@dataclass(frozen=True, eq=False)
class ImputationResult:
    cluster_id: str
    draws: np.ndarray        # (n, 2) map-CRS points, pixel centres
    draw_pixels: np.ndarray  # (n, 2) prior-map (row, col)
    seed: int
    candidate_count: int

    @property
    def n(self) -> int:
        return int(self.draws.shape[0])


def impute_locations(c: DhsCluster, prior_map: Union[LabelRaster, SettlementIndex],
                     pm: PerturbationModel = PerturbationModel(), n: int = DEFAULT_DRAWS,
                     seed: int = 0) -> ImputationResult:
    """
    Draw n plausible true locations (with replacement) for a cluster.

    Candidates are HS pixels within the label's maximum radius; weights are
    proportional to displacement_weight of their distance.

    Raises:
        CoverageError: the observed point lies outside the prior map
        NoSettlementError: no HS pixel within reach
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    index = prior_map if isinstance(prior_map, SettlementIndex) else SettlementIndex(prior_map)
    if not index.contains_point(c.lon, c.lat):
        raise CoverageError(f"cluster {c.cluster_id} at ({c.lon}, {c.lat}) lies outside the prior map")
    idx, dist = index.candidates(c.lon, c.lat, pm.max_radius(c.label))
    if idx.size == 0:
        raise NoSettlementError(c.cluster_id)
    w = displacement_weight(dist, c.label, pm)
    total = float(w.sum())
    if not (total > 0 and math.isfinite(total)):
        raise NoSettlementError(c.cluster_id)
    rng = derive_rng(seed, "impute", c.cluster_id)
    pick = idx[rng.choice(idx.size, size=n, replace=True, p=w / total)]
    draws = np.column_stack([index.x[pick], index.y[pick]])
    pixels = np.column_stack([index.rows[pick], index.cols[pick]])
    return ImputationResult(c.cluster_id, draws, pixels, seed, int(idx.size))


def draw_classes(map_under_test: LabelRaster, result: ImputationResult) -> np.ndarray:
    """Map class at each draw; -1 (no data) counts as non-settlement."""
    out = np.empty(result.n, dtype=np.int16)
    for i, (x, y) in enumerate(result.draws):
        pix = _point_to_pixel(map_under_test, float(x), float(y))
        if pix is None:
            raise CoverageError(f"draw ({x}, {y}) of cluster {result.cluster_id} lies outside the map")
        out[i] = map_under_test.values[pix]
    out[out < 0] = NON_HS
    return out


def vote(classes: np.ndarray, seed: int, key: str) -> int:
    """Modal class; ties broken by a seeded choice among the tied classes."""
    counts = np.bincount(np.asarray(classes, dtype=np.int64), minlength=3)
    tied = np.flatnonzero(counts == counts.max())
    if tied.size == 1:
        return int(tied[0])
    return int(tied[derive_rng(seed, "vote", key).integers(tied.size)])


def classify_draws(map_under_test: LabelRaster, result: ImputationResult, seed: int = 0) -> int:
    return vote(draw_classes(map_under_test, result), seed, result.cluster_id)


@dataclass(frozen=True, eq=False)
class DhsMapReport:
    name: str
    confusion: ConfusionMatrix  # rows = survey label, cols = voted class
    accuracy: float
    kappa: float
    per_country: Dict[str, Dict[str, float]]

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "accuracy": json_safe(self.accuracy),
            "kappa": json_safe(self.kappa),
            "classes": list(HUR_CLASS_NAMES),
            "recall": json_safe(recall(self.confusion)),
            "precision": json_safe(precision(self.confusion)),
            "confusion": self.confusion.to_list(),
            "per_country": {c: {k: json_safe(v) if isinstance(v, float) else v for k, v in row.items()}
                            for c, row in sorted(self.per_country.items())},
        }


@dataclass(frozen=True, eq=False)
class DhsReport:
    maps: Dict[str, DhsMapReport]
    evaluated: int
    excluded: Tuple[str, ...]
    nonhs_points: int
    draws_per_cluster: int
    seed: int

    def to_dict(self) -> Dict:
        return {
            "evaluated_clusters": self.evaluated,
            "excluded_clusters": list(self.excluded),
            "excluded_count": len(self.excluded),
            "nonhs_points": self.nonhs_points,
            "draws_per_cluster": self.draws_per_cluster,
            "seed": self.seed,
            "maps": {name: rep.to_dict() for name, rep in self.maps.items()},
        }


def _map_report(name: str, truth: np.ndarray, voted: np.ndarray, countries: Sequence[str]) -> DhsMapReport:
    cm = confusion(voted, truth, k=3)
    per_country: Dict[str, Dict[str, float]] = {}
    countries = np.asarray(countries)
    for code in sorted(set(countries.tolist())):
        sel = countries == code
        ccm = confusion(voted[sel], truth[sel], k=3)
        per_country[code] = {"n": int(sel.sum()), "accuracy": accuracy(ccm), "kappa": cohen_kappa(ccm)}
    return DhsMapReport(name, cm, accuracy(cm), cohen_kappa(cm), per_country)


def evaluate_maps(clusters: Sequence[DhsCluster], map_a: LabelRaster, map_b: Optional[LabelRaster] = None,
                  prior_map: Optional[LabelRaster] = None, pm: PerturbationModel = PerturbationModel(),
                  seed: int = 0, n: int = DEFAULT_DRAWS,
                  nonhs_points: Sequence[NonSettlementPoint] = (),
                  names: Tuple[str, str] = ("map_a", "map_b"), threads: int = 1) -> DhsReport:
    """
    Score one or two 3-class maps against survey clusters.

    The same posterior draws are used for both maps. Clusters without any
    settlement in reach are excluded and listed; a non-settlement vote for an
    urban/rural cluster counts as an error.
    """
    prior = prior_map if prior_map is not None else map_a
    index = SettlementIndex(prior)

    def impute(c: DhsCluster) -> Optional[ImputationResult]:
        try:
            return impute_locations(c, index, pm, n, seed)
        except NoSettlementError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(impute, clusters))
    else:
        results = [impute(c) for c in clusters]

    kept = [(c, r) for c, r in zip(clusters, results) if r is not None]
    excluded = tuple(c.cluster_id for c, r in zip(clusters, results) if r is None)
    if excluded:
        logger.info(f"{len(excluded)} clusters excluded: no settlement pixel in reach")
    if not kept and not nonhs_points:
        raise EmptyInputError("every cluster was excluded; nothing to evaluate")

    truth = np.array([c.code for c, _ in kept] + [NON_HS] * len(nonhs_points), dtype=np.int16)
    countries = [c.country for c, _ in kept] + [p.country for p in nonhs_points]

    reports: Dict[str, DhsMapReport] = {}
    for name, m in ((names[0], map_a), (names[1], map_b)):
        if m is None:
            continue
        voted = [classify_draws(m, r, seed) for _, r in kept]
        for p in nonhs_points:
            pix = _point_to_pixel(m, p.lon, p.lat)
            if pix is None:
                raise CoverageError(f"non-settlement point {p.point_id} lies outside map '{name}'")
            voted.append(max(int(m.values[pix]), NON_HS))
        reports[name] = _map_report(name, truth, np.array(voted, dtype=np.int16), countries)
        logger.info(f"DHS {name}: accuracy {reports[name].accuracy:.3f}, kappa {reports[name].kappa:.3f}")

    return DhsReport(reports, len(kept), excluded, len(nonhs_points), n, seed)


def synthesize_clusters(truth_hur: LabelRaster, count: int, pm: PerturbationModel = PerturbationModel(),
                        seed: int = 0, country_of: Optional[Callable[[float, float], str]] = None,
                        year: int = 2020, max_tries: int = 100) -> List[DhsCluster]:
    """
    Synthetic clusters: true locations on HS pixels of truth_hur, labelled
    from it, then displaced like the survey (kept inside the map).
    """
    rows, cols = np.nonzero(np.isin(truth_hur.values, [RURAL, URBAN]))
    if rows.size == 0:
        raise EmptyInputError("truth map has no settlement pixel")
    rng = derive_rng(seed, "synthesize_clusters")
    t = truth_hur.transform
    out = []
    for i in range(count):
        k = int(rng.integers(rows.size))
        r, c = int(rows[k]), int(cols[k])
        label = "urban" if truth_hur.values[r, c] == URBAN else "rural"
        x0, y0 = t.pixel_to_world(c + 0.5, r + 0.5)
        for _ in range(max_tries):
            x, y = displace_point(x0, y0, label, pm, rng)
            if _point_to_pixel(truth_hur, x, y) is not None:
                break
        else:
            x, y = x0, y0
        country = country_of(x0, y0) if country_of else ""
        out.append(DhsCluster(f"C{i:05d}", float(x), float(y), label, year, country or ""))
    return out


def synthesize_nonhs_points(truth_hur: LabelRaster, count: int, seed: int = 0,
                            country_of: Optional[Callable[[float, float], str]] = None) -> List[NonSettlementPoint]:
    rows, cols = np.nonzero(truth_hur.values == NON_HS)
    if rows.size == 0:
        return []
    rng = derive_rng(seed, "synthesize_nonhs")
    t = truth_hur.transform
    out = []
    for i in range(count):
        k = int(rng.integers(rows.size))
        x, y = t.pixel_to_world(int(cols[k]) + 0.5, int(rows[k]) + 0.5)
        out.append(NonSettlementPoint(f"N{i:05d}", float(x), float(y), (country_of(x, y) if country_of else "") or ""))
    return out


def load_clusters(path: Union[str, Path]) -> List[DhsCluster]:
    """Read clusters from CSV with columns id,lon,lat,label,year,country."""
    df = pd.read_csv(path, dtype={"id": str, "label": str, "country": str}, keep_default_na=False)
    missing = [c for c in CLUSTER_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return [DhsCluster(str(r.id), float(r.lon), float(r.lat), str(r.label).strip().lower(),
                       int(r.year), str(r.country)) for r in df.itertuples(index=False)]


def save_clusters(clusters: Iterable[DhsCluster], path: Union[str, Path]) -> None:
    df = pd.DataFrame([(c.cluster_id, c.lon, c.lat, c.label, c.year, c.country) for c in clusters],
                      columns=list(CLUSTER_COLUMNS))
    atomic_write_text(path, df.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
