"""
Smooth-tiled inference.

A raster of any size is classified window by window; each window keeps only
its centre crop, and every output pixel is written exactly once by the
window in which it lies deepest inside the crop. Edges are reflect-padded so
border pixels still see a full window.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .model import predict_labels
from .raster import GeoTransform, LabelRaster, RasterTile

logger = logging.getLogger(__name__)

Classifier = Callable[[np.ndarray], np.ndarray]  # (bands, h, w) -> (h, w, K)
SUBTILE_SIZE = 250


@dataclass(frozen=True)
class TilingScheme:
    window: int = 250
    crop_margin: int = 25
    padding_mode: str = "reflect"

    def __post_init__(self):
        if self.window < 1 or self.crop_margin < 0 or 2 * self.crop_margin >= self.window:
            raise ConfigError(f"need 0 <= 2*crop_margin < window, got window={self.window}, "
                              f"crop_margin={self.crop_margin}")
        if self.padding_mode not in ("reflect", "symmetric", "edge"):
            raise ConfigError(f"unsupported padding_mode '{self.padding_mode}'")

    @property
    def stride(self) -> int:
        return self.window - 2 * self.crop_margin


class AxisPlan(NamedTuple):
    starts: Tuple[int, ...]               # window start in padded coordinates
    owned: Tuple[Tuple[int, int], ...]    # [lo, hi) original pixels each window writes
    pad_before: int
    pad_after: int


class WindowPlan(NamedTuple):
    rows: AxisPlan
    cols: AxisPlan

    def windows(self):
        """(row index, col index) pairs in row-major order."""
        return [(i, j) for i in range(len(self.rows.starts)) for j in range(len(self.cols.starts))]


def _plan_axis(n: int, scheme: TilingScheme) -> AxisPlan:
    m, s = scheme.crop_margin, scheme.stride
    starts = list(range(0, max(n - s, 0) + 1, s))
    if n > s and starts[-1] != n - s:
        starts.append(n - s)  # last window aligned to the far edge
    # Window at padded start p keeps original pixels [p, p + s).
    pix = np.arange(n)
    depth = np.full((len(starts), n), -1, dtype=np.int64)
    for k, p in enumerate(starts):
        inside = (pix >= p) & (pix < p + s)
        depth[k, inside] = np.minimum(pix - p, p + s - 1 - pix)[inside]
    owner = np.argmax(depth, axis=0)  # first window wins ties
    owned = []
    for k in range(len(starts)):
        hit = np.flatnonzero(owner == k)
        owned.append((int(hit[0]), int(hit[-1]) + 1) if hit.size else (0, 0))
    pad_after = m + max(0, s - n)
    return AxisPlan(tuple(starts), tuple(owned), m, pad_after)


def plan_windows(height: int, width: int, scheme: TilingScheme) -> WindowPlan:
    if height < 1 or width < 1:
        raise ShapeError(f"raster must be at least 1x1, got {height}x{width}")
    return WindowPlan(_plan_axis(height, scheme), _plan_axis(width, scheme))


def coverage_counts(plan: WindowPlan, height: int, width: int) -> np.ndarray:
    """How many windows write each pixel under the plan."""
    counts = np.zeros((height, width), dtype=np.int64)
    for i, j in plan.windows():
        r0, r1 = plan.rows.owned[i]
        c0, c1 = plan.cols.owned[j]
        counts[r0:r1, c0:c1] += 1
    return counts


def _as_array(raster: Union[RasterTile, np.ndarray]) -> np.ndarray:
    data = raster.data if isinstance(raster, RasterTile) else np.asarray(raster)
    if data.ndim != 3:
        raise ShapeError(f"expected (bands, h, w), got {data.shape}")
    return data


def _as_labels(labels: np.ndarray, raster, num_classes: int) -> LabelRaster:
    transform = raster.transform if isinstance(raster, RasterTile) else GeoTransform.north_up(0, 0, 1)
    return LabelRaster(labels, transform, num_classes=num_classes, nodata=-1)


def _run_window(classify: Classifier, window: np.ndarray) -> np.ndarray:
    logits = np.asarray(classify(window))
    h, w = window.shape[1:]
    if logits.ndim != 3 or logits.shape[:2] != (h, w):
        raise ContractError(f"classifier returned shape {logits.shape} for a {h}x{w} window")
    return logits


def smooth_predict(classify: Classifier, raster: Union[RasterTile, np.ndarray],
                   scheme: TilingScheme = TilingScheme(), threads: int = 1) -> LabelRaster:
    """
    Centre-crop stitched prediction over the whole raster.

    Args:
        classify: window classifier, (bands, W, W) -> (W, W, K) logits
        raster: normalized input raster
        scheme: window size, crop margin and padding
        threads: worker threads for window inference

    Returns:
        LabelRaster with the raster's dimensions
    """
    data = _as_array(raster)
    _, h, w = data.shape
    plan = plan_windows(h, w, scheme)
    padded = np.pad(data, ((0, 0), (plan.rows.pad_before, plan.rows.pad_after),
                           (plan.cols.pad_before, plan.cols.pad_after)), mode=scheme.padding_mode)
    win, m = scheme.window, scheme.crop_margin
    jobs = plan.windows()
    out = np.empty((h, w), dtype=np.int16)
    num_classes: Optional[int] = None

    def infer(job):
        i, j = job
        pr, pc = plan.rows.starts[i], plan.cols.starts[j]
        logits = _run_window(classify, padded[:, pr:pr + win, pc:pc + win])
        return logits.shape[2], predict_labels(logits)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(infer, jobs))
    else:
        results = [infer(job) for job in jobs]

    for (i, j), (k, labels) in zip(jobs, results):
        if num_classes is None:
            num_classes = k
        elif k != num_classes:
            raise ContractError(f"classifier returned {k} classes, earlier windows had {num_classes}")
        pr, pc = plan.rows.starts[i], plan.cols.starts[j]
        r0, r1 = plan.rows.owned[i]
        c0, c1 = plan.cols.owned[j]
        # original pixel q sits at window index q - p + m
        out[r0:r1, c0:c1] = labels[r0 - pr + m:r1 - pr + m, c0 - pc + m:c1 - pc + m]

    logger.debug(f"Stitched {len(jobs)} windows over {h}x{w} (window {win}, margin {m})")
    return _as_labels(out, raster, num_classes)


def naive_predict(classify: Classifier, raster: Union[RasterTile, np.ndarray],
                  window: int = 250, threads: int = 1, padding_mode: str = "reflect") -> LabelRaster:
    """Non-overlapping tiling; the raster is padded up to a multiple of window."""
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    data = _as_array(raster)
    _, h, w = data.shape
    ph, pw = -(-h // window) * window, -(-w // window) * window
    padded = np.pad(data, ((0, 0), (0, ph - h), (0, pw - w)), mode=padding_mode)
    jobs = [(r, c) for r in range(0, ph, window) for c in range(0, pw, window)]

    def infer(job):
        r, c = job
        logits = _run_window(classify, padded[:, r:r + window, c:c + window])
        return logits.shape[2], predict_labels(logits)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(infer, jobs))
    else:
        results = [infer(job) for job in jobs]

    out = np.empty((ph, pw), dtype=np.int16)
    ks = {k for k, _ in results}
    if len(ks) != 1:
        raise ContractError(f"classifier returned inconsistent class counts {sorted(ks)}")
    for (r, c), (_, labels) in zip(jobs, results):
        out[r:r + window, c:c + window] = labels
    return _as_labels(out[:h, :w], raster, ks.pop())


def direct_predict(classify: Classifier, raster: Union[RasterTile, np.ndarray]) -> LabelRaster:
    """Classify the whole raster in one call."""
    data = _as_array(raster)
    logits = _run_window(classify, data)
    return _as_labels(predict_labels(logits), raster, logits.shape[2])


Subtile = Union[RasterTile, LabelRaster]


def _offset_transform(t: GeoTransform, col: int, row: int) -> GeoTransform:
    x, y = t.pixel_to_world(col, row)
    return GeoTransform(x, t.pixel_width, t.row_rotation, y, t.col_rotation, t.pixel_height, t.epsg_code)


def split_subtiles(tile: Subtile, size: int = SUBTILE_SIZE) -> List[Subtile]:
    """Cut a tile into size×size sub-tiles, row-major."""
    if size < 1 or tile.height % size or tile.width % size:
        raise ShapeError(f"{tile.height}x{tile.width} tile does not split into {size}x{size} sub-tiles")
    out: List[Subtile] = []
    for r in range(0, tile.height, size):
        for c in range(0, tile.width, size):
            t = _offset_transform(tile.transform, c, r)
            if isinstance(tile, RasterTile):
                out.append(RasterTile(tile.data[:, r:r + size, c:c + size], tile.band_names, t, tile.nodata))
            else:
                out.append(LabelRaster(tile.values[r:r + size, c:c + size], t, tile.num_classes, tile.nodata))
    return out


def reassemble_subtiles(subtiles: Sequence[Subtile], rows: int, cols: int) -> Subtile:
    """Inverse of split_subtiles for a rows×cols layout."""
    if len(subtiles) != rows * cols or not subtiles:
        raise ShapeError(f"{len(subtiles)} sub-tiles for a {rows}x{cols} layout")
    first = subtiles[0]
    if isinstance(first, RasterTile):
        grid = [[subtiles[r * cols + c].data for c in range(cols)] for r in range(rows)]
        return RasterTile(np.block(grid), first.band_names, first.transform, first.nodata)
    grid = [[subtiles[r * cols + c].values for c in range(cols)] for r in range(rows)]
    return LabelRaster(np.block(grid), first.transform, first.num_classes, first.nodata)
