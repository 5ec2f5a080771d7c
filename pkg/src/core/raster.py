"""
Raster data model, HURT tile I/O, tile grids and the synthetic scene
generator.

Band rasters are float32 with a negative-infinity nodata sentinel; label
rasters are int16 with -1 as the ignore class. Both are immutable once built:
the pixel arrays are copied and marked read-only so tiles can be shared
across worker threads.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (ConfigError, CoverageError, DataError, ShapeError,
                     TileCorruptionError, TileFormatError, TileVersionError)
from src.utils.file_manager import atomic_write_bytes
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

HURT_MAGIC = b"HURT"
HURT_VERSION = 1
KIND_BANDS = 0
KIND_LABELS = 1
# magic, version, kind, band_count, width, height, nodata, geotransform, epsg
_HEADER = struct.Struct("<4sHBBIIf6dI")
HEADER_SIZE = _HEADER.size  # 72

DEFAULT_BAND_NAMES = ("blue", "green", "red", "nir", "swir1", "swir2", "nightlights")
DEFAULT_BAND_RANGES = ((0.0, 0.6),) * 6 + ((0.0, 60.0),)

TILE_SPACING_M = 10000.0
PIXEL_SIZE_M = 10.0


@dataclass(frozen=True)
class GeoTransform:
    """Affine pixel-to-world transform in GDAL coefficient order."""
    origin_x: float
    pixel_width: float
    row_rotation: float
    origin_y: float
    col_rotation: float
    pixel_height: float
    epsg_code: int = 3857

    def __post_init__(self):
        if self.pixel_width == 0 or self.pixel_height == 0:
            raise ConfigError("pixel_width and pixel_height must be non-zero")
        if self._det() == 0:
            raise ConfigError("geotransform is singular")

    @classmethod
    def north_up(cls, origin_x: float, origin_y: float, pixel_size: float, epsg_code: int = 3857) -> "GeoTransform":
        return cls(float(origin_x), float(pixel_size), 0.0, float(origin_y), 0.0, -float(pixel_size), int(epsg_code))

    def _det(self) -> float:
        return self.pixel_width * self.pixel_height - self.row_rotation * self.col_rotation

    @property
    def is_rotated(self) -> bool:
        return self.row_rotation != 0 or self.col_rotation != 0

    def coefficients(self) -> Tuple[float, float, float, float, float, float]:
        return (self.origin_x, self.pixel_width, self.row_rotation,
                self.origin_y, self.col_rotation, self.pixel_height)

    def pixel_to_world(self, col: float, row: float) -> Tuple[float, float]:
        x = self.origin_x + col * self.pixel_width + row * self.row_rotation
        y = self.origin_y + col * self.col_rotation + row * self.pixel_height
        return x, y

    def world_to_pixel(self, x: float, y: float) -> Tuple[float, float]:
        dx = x - self.origin_x
        dy = y - self.origin_y
        det = self._det()
        col = (dx * self.pixel_height - dy * self.row_rotation) / det
        row = (dy * self.pixel_width - dx * self.col_rotation) / det
        return col, row

    def pixel_center(self, col: float, row: float) -> Tuple[float, float]:
        return self.pixel_to_world(col + 0.5, row + 0.5)

    def scaled(self, factor: float) -> "GeoTransform":
        """Same origin, pixel size multiplied by factor."""
        return GeoTransform(self.origin_x, self.pixel_width * factor, self.row_rotation * factor,
                            self.origin_y, self.col_rotation * factor, self.pixel_height * factor,
                            self.epsg_code)


def _frozen_copy(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RasterTile:
    """Multi-band float32 raster; data has shape (bands, height, width)."""
    data: np.ndarray
    band_names: Tuple[str, ...]
    transform: GeoTransform
    nodata: float = float("-inf")

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3:
            raise ShapeError(f"band data must be (bands, height, width), got shape {data.shape}")
        names = tuple(str(n) for n in self.band_names)
        if len(names) != data.shape[0]:
            raise ShapeError(f"{len(names)} band names for {data.shape[0]} bands")
        if data.shape[0] > 255:
            raise ShapeError("at most 255 bands per tile")
        object.__setattr__(self, "data", _frozen_copy(data, np.float32))
        object.__setattr__(self, "band_names", names)
        object.__setattr__(self, "nodata", float(np.float32(self.nodata)))

    @property
    def band_count(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def nodata_mask(self) -> np.ndarray:
        """Boolean (bands, h, w) grid of nodata samples."""
        if math.isnan(self.nodata):
            return np.isnan(self.data)
        return self.data == np.float32(self.nodata)

    def with_data(self, data: np.ndarray, band_names: Optional[Sequence[str]] = None) -> "RasterTile":
        return RasterTile(data, tuple(band_names) if band_names is not None else self.band_names,
                          self.transform, self.nodata)

    def equals(self, other: object) -> bool:
        """Bit-for-bit equality of pixels and metadata."""
        return (isinstance(other, RasterTile)
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes()
                and self.band_names == other.band_names
                and struct.pack("<f", self.nodata) == struct.pack("<f", other.nodata)
                and self.transform == other.transform)


@dataclass(frozen=True, eq=False)
class LabelRaster:
    """
    Single-band int16 class raster.

    num_classes K > 0 restricts values to {nodata} ∪ {0..K-1}; K = 0 marks a
    raw product code raster (ESRI, SMOD) whose values are not range-checked.
    """
    values: np.ndarray
    transform: GeoTransform
    num_classes: int = 0
    nodata: int = -1

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ShapeError(f"label values must be 2-D, got shape {values.shape}")
        if not 0 <= int(self.num_classes) <= 255:
            raise ConfigError(f"num_classes must be in 0..255, got {self.num_classes}")
        if values.size and (values.min() < np.iinfo(np.int16).min or values.max() > np.iinfo(np.int16).max):
            raise DataError("label values do not fit in int16")
        frozen = _frozen_copy(values, np.int16)
        if self.num_classes:
            bad = (frozen != self.nodata) & ((frozen < 0) | (frozen >= self.num_classes))
            if bad.any():
                r, c = (int(i) for i in np.argwhere(bad)[0])
                v = int(frozen[r, c])
                raise DataError(f"class value {v} at (row {r}, col {c}) outside 0..{self.num_classes - 1}",
                                value=v, index=(r, c))
        object.__setattr__(self, "values", frozen)
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "nodata", int(self.nodata))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, num_classes: Optional[int] = None,
                    nodata: Optional[int] = None) -> "LabelRaster":
        return LabelRaster(values, self.transform,
                           self.num_classes if num_classes is None else num_classes,
                           self.nodata if nodata is None else nodata)

    def equals(self, other: object) -> bool:
        return (isinstance(other, LabelRaster)
                and self.values.shape == other.values.shape
                and np.array_equal(self.values, other.values)
                and self.num_classes == other.num_classes
                and self.nodata == other.nodata
                and self.transform == other.transform)


Tile = Union[RasterTile, LabelRaster]


# ---------------------------------------------------------------------------
# HURT tile format
# ---------------------------------------------------------------------------

def encode_tile(tile: Tile) -> bytes:
    """Serialize a tile to HURT bytes."""
    if isinstance(tile, RasterTile):
        kind, payload = KIND_BANDS, tile.data.astype("<f4", copy=False).tobytes()
        names, nodata = tile.band_names, tile.nodata
        count, h, w = tile.data.shape
    elif isinstance(tile, LabelRaster):
        kind, payload = KIND_LABELS, tile.values.astype("<i2", copy=False).tobytes()
        names, nodata = (f"classes={tile.num_classes}",), float(tile.nodata)
        count, (h, w) = 1, tile.values.shape
    else:
        raise TypeError(f"cannot encode {type(tile).__name__}")

    t = tile.transform
    parts = [_HEADER.pack(HURT_MAGIC, HURT_VERSION, kind, count, w, h, nodata,
                          *t.coefficients(), t.epsg_code)]
    for name in names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    parts.append(payload)
    return b"".join(parts)


def decode_tile(buf: bytes) -> Tile:
    """Parse HURT bytes back into a RasterTile or LabelRaster."""
    if len(buf) < 4 or buf[:4] != HURT_MAGIC:
        raise TileFormatError(f"bad magic {bytes(buf[:4])!r}, expected {HURT_MAGIC!r}")
    if len(buf) < HEADER_SIZE:
        raise TileCorruptionError(f"header truncated: {len(buf)} of {HEADER_SIZE} bytes")
    (_, version, kind, count, w, h, nodata,
     ox, pw, rr, oy, cr, ph, epsg) = _HEADER.unpack_from(buf, 0)
    if version != HURT_VERSION:
        raise TileVersionError(version)
    if kind not in (KIND_BANDS, KIND_LABELS):
        raise TileFormatError(f"unknown tile kind {kind}")

    pos = HEADER_SIZE
    names: List[str] = []
    for _ in range(count):
        if pos + 2 > len(buf):
            raise TileCorruptionError("band name block truncated")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n > len(buf):
            raise TileCorruptionError("band name block truncated")
        try:
            names.append(bytes(buf[pos:pos + n]).decode("utf-8"))
        except UnicodeDecodeError as e:
            raise TileCorruptionError(f"band name is not UTF-8: {e}") from e
        pos += n

    itemsize = 4 if kind == KIND_BANDS else 2
    expected = count * w * h * itemsize
    actual = len(buf) - pos
    if actual != expected:
        what = "truncated" if actual < expected else "has trailing bytes"
        raise TileCorruptionError(f"payload {what}: {actual} bytes, expected {expected}")

    try:
        transform = GeoTransform(ox, pw, rr, oy, cr, ph, epsg)
    except ConfigError as e:
        raise TileCorruptionError(f"invalid geotransform: {e}") from e

    if kind == KIND_BANDS:
        data = np.frombuffer(buf, dtype="<f4", count=count * w * h, offset=pos).reshape(count, h, w)
        return RasterTile(data, tuple(names), transform, nodata)

    if count != 1 or not names or not names[0].startswith("classes="):
        raise TileCorruptionError("label tile must have one 'classes=K' band")
    try:
        k = int(names[0].split("=", 1)[1])
    except ValueError as e:
        raise TileCorruptionError(f"bad class count {names[0]!r}") from e
    values = np.frombuffer(buf, dtype="<i2", count=w * h, offset=pos).reshape(h, w)
    if math.isnan(nodata) or nodata != int(nodata):
        raise TileCorruptionError(f"label nodata {nodata} is not an integer")
    try:
        return LabelRaster(values, transform, k, int(nodata))
    except DataError as e:
        raise TileCorruptionError(str(e)) from e


def write_tile(tile: Tile, path: Union[str, Path]) -> str:
    """Write a tile atomically. Returns the path written."""
    return atomic_write_bytes(path, encode_tile(tile))


def read_tile(path: Union[str, Path]) -> Tile:
    with open(path, "rb") as f:
        return decode_tile(f.read())


# ---------------------------------------------------------------------------
# Tile grids
# ---------------------------------------------------------------------------

class BBox(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x < self.xmax and self.ymin <= y < self.ymax


CountryAssigner = Callable[[float, float], Optional[str]]


@dataclass(frozen=True)
class TileSpec:
    tile_id: str
    country: str
    bbox: BBox
    width: int
    height: int
    epsg_code: int = 3857

    @property
    def pixel_size(self) -> float:
        return self.bbox.width / self.width

    @property
    def transform(self) -> GeoTransform:
        return GeoTransform.north_up(self.bbox.xmin, self.bbox.ymax, self.pixel_size, self.epsg_code)


@dataclass(frozen=True)
class TileGrid:
    tiles: Tuple[TileSpec, ...] = ()

    def __len__(self) -> int:
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)

    def countries(self) -> List[str]:
        return sorted({t.country for t in self.tiles})

    def by_country(self) -> Dict[str, List[TileSpec]]:
        out: Dict[str, List[TileSpec]] = {}
        for t in self.tiles:
            out.setdefault(t.country, []).append(t)
        return out


def make_grid(bbox: BBox, country_assigner: CountryAssigner,
              spacing: float = TILE_SPACING_M, pixel_size: float = PIXEL_SIZE_M,
              epsg_code: int = 3857) -> TileGrid:
    """
    Lay a regular grid of sample points over bbox.

    Each point is the centre of one spacing×spacing tile. Tiles that would
    cross the bbox edge are dropped, as are tiles whose centre has no country.
    Row 0 is the northern edge.
    """
    bbox = BBox(*map(float, bbox))
    if not (bbox.width > 0 and bbox.height > 0):
        raise ConfigError(f"degenerate bbox {tuple(bbox)}")
    if spacing <= 0 or pixel_size <= 0:
        raise ConfigError("spacing and pixel_size must be positive")
    px = int(round(spacing / pixel_size))
    if not math.isclose(px * pixel_size, spacing, rel_tol=1e-9):
        raise ConfigError(f"spacing {spacing} is not a whole number of {pixel_size} m pixels")

    nx = int(math.floor(bbox.width / spacing + 1e-9))
    ny = int(math.floor(bbox.height / spacing + 1e-9))
    tiles = []
    for r in range(ny):
        for c in range(nx):
            x0 = bbox.xmin + c * spacing
            y1 = bbox.ymax - r * spacing
            country = country_assigner(x0 + spacing / 2, y1 - spacing / 2)
            if country is None:
                continue
            tiles.append(TileSpec(f"r{r:04d}c{c:04d}", country, BBox(x0, y1 - spacing, x0 + spacing, y1),
                                  px, px, epsg_code))
    logger.debug(f"Grid over {tuple(bbox)}: {len(tiles)} tiles ({nx}x{ny} points)")
    return TileGrid(tuple(tiles))


def partition_assigner(partitions: Sequence[Tuple[str, BBox]]) -> CountryAssigner:
    """Country assigner from rectangular partitions; first match wins."""
    parts = [(code, BBox(*box)) for code, box in partitions]

    def assign(x: float, y: float) -> Optional[str]:
        for code, box in parts:
            if box.contains(x, y):
                return code
        return None

    return assign


# ---------------------------------------------------------------------------
# Resampling and normalization
# ---------------------------------------------------------------------------

def _nearest_index(n_out: int, out_size: float, src_size: float, n_src: int) -> np.ndarray:
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * out_size
    return np.clip(np.floor(centers / src_size).astype(np.int64), 0, n_src - 1)


def resample_nearest(src: Tile, target_pixel_size: float) -> Tile:
    """
    Resample a north-up raster to a new square pixel size, keeping its extent.

    Output pixel j takes the source pixel whose cell holds j's centre.
    """
    if not target_pixel_size > 0:
        raise ConfigError(f"target_pixel_size must be > 0, got {target_pixel_size}")
    t = src.transform
    if t.is_rotated:
        raise ConfigError("resampling rotated rasters is not supported")
    sw, sh = abs(t.pixel_width), abs(t.pixel_height)
    w_out = max(1, int(round(src.width * sw / target_pixel_size)))
    h_out = max(1, int(round(src.height * sh / target_pixel_size)))
    cols = _nearest_index(w_out, target_pixel_size, sw, src.width)
    rows = _nearest_index(h_out, target_pixel_size, sh, src.height)
    new_t = GeoTransform(t.origin_x, math.copysign(target_pixel_size, t.pixel_width), 0.0,
                         t.origin_y, 0.0, math.copysign(target_pixel_size, t.pixel_height), t.epsg_code)
    if isinstance(src, RasterTile):
        return RasterTile(src.data[:, rows[:, None], cols[None, :]], src.band_names, new_t, src.nodata)
    return LabelRaster(src.values[rows[:, None], cols[None, :]], new_t, src.num_classes, src.nodata)


def resample_to_grid(src: LabelRaster, like: Tile) -> LabelRaster:
    """
    Nearest-neighbour resample src onto like's pixel grid.

    Raises CoverageError when any target pixel centre falls outside src.
    """
    lt, st = like.transform, src.transform
    if lt.is_rotated or st.is_rotated:
        raise ConfigError("resampling rotated rasters is not supported")
    xs = lt.origin_x + (np.arange(like.width) + 0.5) * lt.pixel_width
    ys = lt.origin_y + (np.arange(like.height) + 0.5) * lt.pixel_height
    cols = np.floor((xs - st.origin_x) / st.pixel_width).astype(np.int64)
    rows = np.floor((ys - st.origin_y) / st.pixel_height).astype(np.int64)
    if (cols.min() < 0 or cols.max() >= src.width or rows.min() < 0 or rows.max() >= src.height):
        raise CoverageError("source raster does not cover the target grid")
    return LabelRaster(src.values[rows[:, None], cols[None, :]], lt, src.num_classes, src.nodata)


def mosaic_labels(rasters: Sequence[LabelRaster]) -> LabelRaster:
    """
    Paste pixel-aligned north-up label rasters into one raster covering
    their union; uncovered pixels take the nodata code.
    """
    if not rasters:
        raise ConfigError("nothing to mosaic")
    first = rasters[0]
    t0 = first.transform
    px, py = t0.pixel_width, t0.pixel_height
    boxes = []
    for r in rasters:
        t = r.transform
        if t.is_rotated or t.pixel_width != px or t.pixel_height != py or t.epsg_code != t0.epsg_code:
            raise ConfigError("mosaic inputs must share pixel size, orientation and CRS")
        if r.num_classes != first.num_classes or r.nodata != first.nodata:
            raise ConfigError("mosaic inputs must share class count and nodata")
        col, row = t0.world_to_pixel(t.origin_x, t.origin_y)
        c0, r0 = int(round(col)), int(round(row))
        if abs(col - c0) > 1e-6 or abs(row - r0) > 1e-6:
            raise ConfigError("mosaic inputs are not pixel aligned")
        boxes.append((r0, c0))
    rmin = min(r0 for r0, _ in boxes)
    cmin = min(c0 for _, c0 in boxes)
    rmax = max(r0 + r.height for (r0, _), r in zip(boxes, rasters))
    cmax = max(c0 + r.width for (_, c0), r in zip(boxes, rasters))
    out = np.full((rmax - rmin, cmax - cmin), first.nodata, dtype=np.int16)
    for (r0, c0), r in zip(boxes, rasters):
        out[r0 - rmin:r0 - rmin + r.height, c0 - cmin:c0 - cmin + r.width] = r.values
    x, y = t0.pixel_to_world(cmin, rmin)
    transform = GeoTransform(x, px, 0.0, y, 0.0, py, t0.epsg_code)
    return LabelRaster(out, transform, first.num_classes, first.nodata)


def normalize_bands(t: RasterTile, ranges: Sequence[Tuple[float, float]]) -> RasterTile:
    """
    Scale each band to [0, 1] with (v - min) / (max - min), clamped.

    Nodata samples become 0.
    """
    if len(ranges) != t.band_count:
        raise ConfigError(f"{len(ranges)} ranges for {t.band_count} bands")
    lo = np.array([r[0] for r in ranges], dtype=np.float64)
    hi = np.array([r[1] for r in ranges], dtype=np.float64)
    bad = np.flatnonzero(~(hi > lo))
    if bad.size:
        b = int(bad[0])
        raise ConfigError(f"band '{t.band_names[b]}': range max {hi[b]} must exceed min {lo[b]}")
    nodata = t.nodata_mask()
    scaled = (t.data.astype(np.float64) - lo[:, None, None]) / (hi - lo)[:, None, None]
    scaled = np.clip(scaled, 0.0, 1.0)
    scaled[nodata] = 0.0
    return t.with_data(scaled.astype(np.float32))


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

SETTLEMENT_KINDS = ("urban", "rural")


@dataclass(frozen=True)
class ClassBlob:
    """One land-cover class in a synthetic layout; the first entry is the background."""
    raw_code: int
    band_means: Tuple[float, ...]
    band_stds: Tuple[float, ...]
    blob_count: int = 0
    blob_radius_m: float = 0.0
    settlement: Optional[str] = None  # None | "urban" | "rural"

    def __post_init__(self):
        if len(self.band_means) != len(self.band_stds):
            raise ConfigError("band_means and band_stds differ in length")
        if self.settlement not in (None,) + SETTLEMENT_KINDS:
            raise ConfigError(f"settlement must be one of urban/rural/None, got {self.settlement!r}")
        if self.blob_count < 0 or self.blob_radius_m < 0:
            raise ConfigError("blob_count and blob_radius_m must be non-negative")
        object.__setattr__(self, "band_means", tuple(float(v) for v in self.band_means))
        object.__setattr__(self, "band_stds", tuple(float(v) for v in self.band_stds))


_REFL_STD = (0.01,) * 6 + (1.0,)


def default_layout() -> Tuple[ClassBlob, ...]:
    """Seven-band layout covering every ESRI class used by the target labels."""
    return (
        ClassBlob(11, (0.08, 0.11, 0.14, 0.25, 0.30, 0.22, 0.5), _REFL_STD),            # rangeland
        ClassBlob(1, (0.06, 0.05, 0.03, 0.02, 0.01, 0.01, 0.2), _REFL_STD, 2, 600.0),    # water
        ClassBlob(2, (0.03, 0.06, 0.04, 0.35, 0.18, 0.08, 0.3), _REFL_STD, 3, 800.0),    # trees
        ClassBlob(4, (0.04, 0.07, 0.05, 0.20, 0.10, 0.05, 0.3), _REFL_STD, 2, 300.0),    # flooded vegetation
        ClassBlob(5, (0.07, 0.10, 0.09, 0.40, 0.25, 0.14, 0.8), _REFL_STD, 3, 700.0),    # crops
        ClassBlob(8, (0.18, 0.24, 0.30, 0.36, 0.45, 0.38, 0.3), _REFL_STD, 2, 600.0),    # bare ground
        ClassBlob(7, (0.15, 0.16, 0.18, 0.22, 0.28, 0.26, 45.0), _REFL_STD, 2, 400.0, "urban"),
        ClassBlob(7, (0.12, 0.14, 0.16, 0.24, 0.27, 0.22, 8.0), _REFL_STD, 6, 80.0, "rural"),
    )


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: int
    height: int
    num_years: int = 3
    layout: Tuple[ClassBlob, ...] = field(default_factory=default_layout)
    cloud_fraction: float = 0.1
    seed: int = 0
    pixel_size: float = PIXEL_SIZE_M
    origin_x: float = 0.0
    origin_y: float = 0.0
    epsg_code: int = 3857
    smod_factor: int = 100
    band_names: Tuple[str, ...] = DEFAULT_BAND_NAMES

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("scene must be at least 1x1")
        if self.num_years < 1:
            raise ConfigError("num_years must be >= 1")
        if not 0.0 <= self.cloud_fraction <= 1.0:
            raise ConfigError(f"cloud_fraction must be in [0, 1], got {self.cloud_fraction}")
        if self.smod_factor < 1 or self.pixel_size <= 0:
            raise ConfigError("smod_factor and pixel_size must be positive")
        layout = tuple(b if isinstance(b, ClassBlob) else ClassBlob(**b) for b in self.layout)
        if not layout:
            raise ConfigError("layout needs at least a background class")
        for blob in layout:
            if len(blob.band_means) != len(self.band_names):
                raise ConfigError(f"layout class {blob.raw_code} has {len(blob.band_means)} band means "
                                  f"for {len(self.band_names)} bands")
        if len(layout) > self.width * self.height:
            raise ConfigError("scene has fewer pixels than layout classes")
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "band_names", tuple(self.band_names))

    @property
    def transform(self) -> GeoTransform:
        return GeoTransform.north_up(self.origin_x, self.origin_y, self.pixel_size, self.epsg_code)

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["layout"] = [asdict(b) for b in self.layout]
        d["band_names"] = list(self.band_names)
        return d

    @classmethod
    def from_dict(cls, d: Dict) -> "SyntheticSceneSpec":
        d = dict(d)
        if "layout" in d:
            d["layout"] = tuple(ClassBlob(**{**b, "band_means": tuple(b["band_means"]),
                                             "band_stds": tuple(b["band_stds"])}) for b in d["layout"])
        if "band_names" in d:
            d["band_names"] = tuple(d["band_names"])
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"invalid scene spec: {e}") from e


class SyntheticScene(NamedTuple):
    observations: Tuple[RasterTile, ...]  # one per year
    truth: LabelRaster                    # raw ESRI codes
    smod: LabelRaster                     # coarse SMOD codes


ESRI_NODATA = 0
SMOD_NODATA = -200


def _paint_disk(grid: np.ndarray, value: int, cy: float, cx: float, radius_px: float,
                window: Tuple[int, int, int, int]):
    r0, r1, c0, c1 = window
    rr = np.arange(r0, r1)[:, None] + 0.5
    cc = np.arange(c0, c1)[None, :] + 0.5
    disk = (rr - cy) ** 2 + (cc - cx) ** 2 <= max(radius_px, 0.5) ** 2
    grid[r0:r1, c0:c1][disk] = value


def _smod_code(n_cell: int, urban: int, rural: int, water: int) -> int:
    if urban > 0 and urban >= rural:
        f = urban / n_cell
        return 30 if f >= 0.3 else 23 if f >= 0.15 else 22 if f >= 0.05 else 21
    if rural > 0:
        f = rural / n_cell
        return 13 if f >= 0.05 else 12 if f >= 0.01 else 11
    return 10 if water * 2 > n_cell else 11


def gen_synthetic_scene(spec: SyntheticSceneSpec) -> SyntheticScene:
    """
    Generate yearly observations, an ESRI-coded truth raster and a coarse SMOD
    raster. Pure function of spec (seed included).
    """
    h, w, f = spec.height, spec.width, spec.smod_factor
    layout = spec.layout
    rng = derive_rng(spec.seed, "scene", "layout")

    idx = np.zeros((h, w), dtype=np.int16)  # layout entry per pixel
    ch, cw = -(-h // f), -(-w // f)
    cells = [(i, j) for i in range(ch) for j in range(cw)]
    order = rng.permutation(len(cells))
    shuffled = [cells[k] for k in order]

    n_urban = sum(b.blob_count for b in layout if b.settlement == "urban")
    urban_pool = shuffled[:max(1, min(n_urban, len(shuffled)))] if n_urban else []
    rural_pool = [c for c in shuffled if c not in urban_pool] or shuffled
    pools = {"urban": urban_pool, "rural": rural_pool}
    used = {"urban": 0, "rural": 0}

    for entry, blob in enumerate(layout):
        if entry == 0:
            continue
        radius = blob.blob_radius_m / spec.pixel_size
        for _ in range(blob.blob_count):
            if blob.settlement:
                pool = pools[blob.settlement]
                ci, cj = pool[used[blob.settlement] % len(pool)]
                used[blob.settlement] += 1
                r0, r1 = ci * f, min(h, (ci + 1) * f)
                c0, c1 = cj * f, min(w, (cj + 1) * f)
                cy = r0 + rng.random() * (r1 - r0)
                cx = c0 + rng.random() * (c1 - c0)
                window = (r0, r1, c0, c1)
            else:
                cy, cx = rng.random() * h, rng.random() * w
                rad = int(math.ceil(radius)) + 1
                window = (max(0, int(cy) - rad), min(h, int(cy) + rad + 1),
                          max(0, int(cx) - rad), min(w, int(cx) + rad + 1))
            _paint_disk(idx, entry, cy, cx, radius, window)

    counts = np.bincount(idx.ravel(), minlength=len(layout))
    for entry in range(len(layout)):
        if counts[entry] == 0:
            donors = np.flatnonzero(counts[idx.ravel()] > 1)
            pick = int(donors[rng.integers(donors.size)])
            counts[idx.flat[pick]] -= 1
            idx.flat[pick] = entry
            counts[entry] = 1

    raw_lut = np.array([b.raw_code for b in layout], dtype=np.int16)
    truth = LabelRaster(raw_lut[idx], spec.transform, num_classes=0, nodata=ESRI_NODATA)

    is_urban = np.array([b.settlement == "urban" for b in layout])[idx]
    is_rural = np.array([b.settlement == "rural" for b in layout])[idx]
    is_water = (raw_lut == 1)[idx]
    smod = np.empty((ch, cw), dtype=np.int16)
    for i in range(ch):
        for j in range(cw):
            sl = (slice(i * f, (i + 1) * f), slice(j * f, (j + 1) * f))
            n_cell = is_urban[sl].size
            smod[i, j] = _smod_code(n_cell, int(is_urban[sl].sum()), int(is_rural[sl].sum()),
                                    int(is_water[sl].sum()))
    smod_raster = LabelRaster(smod, spec.transform.scaled(f), num_classes=0, nodata=SMOD_NODATA)

    means = np.array([b.band_means for b in layout], dtype=np.float64)  # (entries, bands)
    stds = np.array([b.band_stds for b in layout], dtype=np.float64)
    nb = len(spec.band_names)
    observations = []
    for year in range(spec.num_years):
        yrng = derive_rng(spec.seed, "scene", "year", year)
        noise = yrng.standard_normal((nb, h, w))
        data = means[idx].transpose(2, 0, 1) + stds[idx].transpose(2, 0, 1) * noise
        data = data.astype(np.float32)
        clouds = yrng.random((h, w)) < spec.cloud_fraction
        data[:, clouds] = -np.inf
        observations.append(RasterTile(data, spec.band_names, spec.transform))

    logger.debug(f"Synthetic scene {w}x{h}, {spec.num_years} years, seed {spec.seed}")
    return SyntheticScene(tuple(observations), truth, smod_raster)
