"""
Class weighting, weighted cross-entropy and the baseline pixel classifier.

The baseline is multinomial logistic regression over raw bands plus
per-band neighbourhood means. Any callable mapping a (bands, h, w) window to
(h, w, K) logits can replace it in the stitching stage.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (ConfigError, DataError, DegenerateClassError, DivergenceError,
                     EmptyInputError, ShapeError)
from .raster import RasterTile
from src.utils.file_manager import atomic_write_json
from src.utils.seeding import derive_rng

logger = logging.getLogger(__name__)

WEIGHTING_STRATEGIES = ("complement", "neglog", "inverse", "uniform")
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ClassWeights:
    w: Tuple[float, ...]
    strategy: str

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=np.float64)

    @property
    def num_classes(self) -> int:
        return len(self.w)

    def scaled(self, c: float) -> "ClassWeights":
        return ClassWeights(tuple(v * c for v in self.w), self.strategy)


def compute_weights(p: Sequence[float], strategy: str) -> ClassWeights:
    """
    Class weights from class proportions.

    Args:
        p: Class proportions (non-negative, summing to 1)
        strategy: complement (1 - p), neglog (-ln p), inverse (1 / p) or
            uniform (all ones, the unweighted loss)

    Returns:
        ClassWeights
    """
    if strategy not in WEIGHTING_STRATEGIES:
        raise ConfigError(f"unknown weighting strategy '{strategy}'; expected one of {WEIGHTING_STRATEGIES}")
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0 or (p < 0).any() or not np.isfinite(p).all():
        raise DataError("class proportions must be a non-empty vector of finite non-negative values")
    if abs(p.sum() - 1.0) > 1e-6:
        raise DataError(f"class proportions sum to {p.sum()}, not 1")

    if strategy == "uniform":
        w = np.ones_like(p)
    elif strategy == "complement":
        w = 1.0 - p
    else:
        zero = np.flatnonzero(p == 0)
        if zero.size:
            raise DegenerateClassError(int(zero[0]), strategy)
        w = -np.log(p) if strategy == "neglog" else 1.0 / p
    return ClassWeights(tuple(float(v) for v in w), strategy)


def normalize_weights(weights: ClassWeights, p: Sequence[float]) -> ClassWeights:
    """
    Rescale weights so the expected per-pixel weight under p is 1.

    The loss minimizer is unchanged.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (weights.num_classes,):
        raise ShapeError(f"{p.size} proportions for {weights.num_classes} weights")
    mass = float((p * weights.array).sum())
    if not mass > 0:
        raise DataError("weights have zero mass under the class distribution")
    return weights.scaled(1.0 / mass)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def weighted_ce_loss(logits: np.ndarray, targets: np.ndarray,
                     weights: Union[ClassWeights, Sequence[float]]) -> Tuple[float, np.ndarray]:
    """
    Weighted softmax cross-entropy averaged over non-ignore pixels.

    Args:
        logits: (N, K) per-pixel logits
        targets: (N,) class ids, -1 for ignore
        weights: per-class weights w_k

    Returns:
        Tuple of (loss, gradient w.r.t. logits with shape (N, K))
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeError(f"logits {logits.shape} and targets {targets.shape} disagree")
    k = logits.shape[1]
    w = weights.array if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=np.float64)
    if w.shape != (k,):
        raise ShapeError(f"{w.size} weights for {k} classes")
    if targets.size and (targets.min() < -1 or targets.max() >= k):
        bad = int(targets[(targets < -1) | (targets >= k)][0])
        raise DataError(f"target {bad} outside -1..{k - 1}", value=bad)

    valid = targets >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptyInputError("every pixel in the batch is ignored")

    t = targets[valid].astype(np.int64)
    probs = softmax(logits[valid])
    rows = np.arange(n_valid)
    wt = w[t]
    loss = float(-(wt * np.log(np.maximum(probs[rows, t], PROB_FLOOR))).sum() / n_valid)

    g = probs
    g[rows, t] -= 1.0
    g *= (wt / n_valid)[:, None]
    grad = np.zeros_like(logits)
    grad[valid] = g
    return loss, grad


@dataclass(frozen=True)
class FeatureConfig:
    context_window: int = 3
    include_raw: bool = True

    def __post_init__(self):
        if self.context_window < 1 or self.context_window % 2 == 0:
            raise ConfigError(f"context_window must be odd and >= 1, got {self.context_window}")
        if not self.include_raw and self.context_window == 1:
            raise ConfigError("feature config selects no features")

    @property
    def radius(self) -> int:
        return self.context_window // 2

    def feature_dim(self, bands: int) -> int:
        return bands * (int(self.include_raw) + int(self.context_window > 1))


def _box_mean(data: np.ndarray, window: int) -> np.ndarray:
    """Per-band window mean with reflect padding; separable shifted sums."""
    r = window // 2
    b, h, w = data.shape
    padded = np.pad(data.astype(np.float64), ((0, 0), (r, r), (r, r)), mode="reflect")
    rows = np.zeros((b, h + 2 * r, w), dtype=np.float64)
    for dx in range(window):
        rows += padded[:, :, dx:dx + w]
    out = np.zeros((b, h, w), dtype=np.float64)
    for dy in range(window):
        out += rows[:, dy:dy + h, :]
    return out / (window * window)


def extract_features(tile: Union[RasterTile, np.ndarray], cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """
    Per-pixel features [raw bands..., window means...] with shape (h, w, F).

    The input is expected to be normalized already.
    """
    data = tile.data if isinstance(tile, RasterTile) else np.asarray(tile)
    if data.ndim != 3:
        raise ShapeError(f"expected (bands, h, w), got {data.shape}")
    parts = []
    if cfg.include_raw:
        parts.append(data.astype(np.float32))
    if cfg.context_window > 1:
        parts.append(_box_mean(data, cfg.context_window).astype(np.float32))
    return np.concatenate(parts, axis=0).transpose(1, 2, 0)


@dataclass(frozen=True)
class TrainingHyperparams:
    learning_rate: float = 0.05
    epochs: int = 15
    batch_size: int = 1024
    momentum: float = 0.9
    standardize: bool = True
    max_train_pixels: int = 20000  # per tile

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning_rate > 0, epochs >= 0 and batch_size >= 1 required")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.max_train_pixels < 1:
            raise ConfigError("max_train_pixels must be >= 1")


@dataclass(frozen=True, eq=False)
class BaselineParams:
    weights: np.ndarray                 # (K, F)
    bias: np.ndarray                    # (K,)
    seed: int
    hyperparams: TrainingHyperparams = field(default_factory=TrainingHyperparams)
    loss_trace: Tuple[float, ...] = ()
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    feature_mean: Optional[np.ndarray] = None
    feature_scale: Optional[np.ndarray] = None
    band_ranges: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"weights {w.shape} and bias {b.shape} disagree")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise DataError("parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        for name in ("feature_mean", "feature_scale"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.float64)
                if v.shape != (w.shape[1],):
                    raise ShapeError(f"{name} has shape {v.shape}, expected {(w.shape[1],)}")
                object.__setattr__(self, name, v)
        if self.band_ranges is not None:
            object.__setattr__(self, "band_ranges", tuple((float(a), float(b)) for a, b in self.band_ranges))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def to_dict(self) -> Dict:
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "weights": [float(v) for v in self.weights.ravel(order="C")],
            "bias": [float(v) for v in self.bias],
            "seed": int(self.seed),
            "hyperparams": asdict(self.hyperparams),
            "loss_trace": [float(v) for v in self.loss_trace],
            "feature_config": asdict(self.feature_config),
            "feature_mean": None if self.feature_mean is None else [float(v) for v in self.feature_mean],
            "feature_scale": None if self.feature_scale is None else [float(v) for v in self.feature_scale],
            "band_ranges": None if self.band_ranges is None else [list(r) for r in self.band_ranges],
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "BaselineParams":
        try:
            k, f = int(d["num_classes"]), int(d["feature_dim"])
            weights = np.asarray(d["weights"], dtype=np.float64)
            if weights.size != k * f:
                raise ShapeError(f"{weights.size} weights for a {k}x{f} matrix")
            return cls(weights=weights.reshape(k, f),
                       bias=np.asarray(d["bias"], dtype=np.float64),
                       seed=int(d["seed"]),
                       hyperparams=TrainingHyperparams(**d.get("hyperparams", {})),
                       loss_trace=tuple(d.get("loss_trace", ())),
                       feature_config=FeatureConfig(**d.get("feature_config", {})),
                       feature_mean=d.get("feature_mean"),
                       feature_scale=d.get("feature_scale"),
                       band_ranges=d.get("band_ranges"))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"invalid model parameters: {e}") from e


def sample_training_pixels(features: np.ndarray, labels: np.ndarray, max_pixels: int,
                           rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Flatten (h, w, F) features and (h, w) labels, keep non-ignore pixels and
    draw at most max_pixels of them without replacement.
    """
    f = features.reshape(-1, features.shape[-1])
    y = np.asarray(labels).reshape(-1)
    keep = np.flatnonzero(y >= 0)
    if keep.size > max_pixels:
        keep = np.sort(rng.choice(keep, size=max_pixels, replace=False))
    return f[keep], y[keep].astype(np.int16)


def _standardize(x: np.ndarray, mean: Optional[np.ndarray], scale: Optional[np.ndarray]) -> np.ndarray:
    x = x.astype(np.float64)
    if mean is not None:
        x = (x - mean) / scale
    return x


def train_baseline(features: np.ndarray, labels: np.ndarray, weights: ClassWeights,
                   hyperparams: TrainingHyperparams = TrainingHyperparams(), seed: int = 0,
                   feature_config: FeatureConfig = FeatureConfig(),
                   band_ranges: Optional[Sequence[Tuple[float, float]]] = None) -> BaselineParams:
    """
    Momentum mini-batch gradient descent on the weighted cross-entropy.

    Args:
        features: (N, F) or (h, w, F) features
        labels: (N,) or (h, w) class ids, -1 for ignore
        weights: class weights (their count fixes K)
        hyperparams: optimizer settings
        seed: seed for the mini-batch order

    Returns:
        Trained BaselineParams with the per-epoch loss trace
    """
    x_all = np.asarray(features)
    x_all = x_all.reshape(-1, x_all.shape[-1])
    y_all = np.asarray(labels).reshape(-1)
    if y_all.shape[0] != x_all.shape[0]:
        raise ShapeError(f"{x_all.shape[0]} feature rows for {y_all.shape[0]} labels")
    valid = y_all >= 0
    if not valid.any():
        raise EmptyInputError("no labeled pixel to train on")
    k = weights.num_classes
    if y_all.max() >= k:
        raise DataError(f"label {int(y_all.max())} outside 0..{k - 1}", value=int(y_all.max()))

    x = x_all[valid].astype(np.float64)
    y = y_all[valid].astype(np.int64)
    n, f = x.shape
    mean = scale = None
    if hyperparams.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale < 1e-12] = 1.0
        x = (x - mean) / scale

    w = np.zeros((k, f), dtype=np.float64)
    b = np.zeros(k, dtype=np.float64)
    vw, vb = np.zeros_like(w), np.zeros_like(b)
    lr, mom, bs = hyperparams.learning_rate, hyperparams.momentum, hyperparams.batch_size
    rng = derive_rng(seed, "train_baseline")
    trace: List[float] = []

    for epoch in range(1, hyperparams.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb = x[idx]
            loss, g = weighted_ce_loss(xb @ w.T + b, y[idx], weights)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            vw = mom * vw - lr * (g.T @ xb)
            vb = mom * vb - lr * g.sum(axis=0)
            w += vw
            b += vb
            total += loss * idx.size
        epoch_loss = total / n
        if not (math.isfinite(epoch_loss) and np.isfinite(w).all() and np.isfinite(b).all()):
            raise DivergenceError(epoch, epoch_loss)
        trace.append(epoch_loss)
        logger.debug(f"epoch {epoch}: loss {epoch_loss:.6f}")

    return BaselineParams(w, b, seed, hyperparams, tuple(trace), feature_config, mean, scale,
                          tuple(band_ranges) if band_ranges is not None else None)


def predict(params: BaselineParams, features: np.ndarray) -> np.ndarray:
    """Logits with shape features.shape[:-1] + (K,)."""
    features = np.asarray(features)
    if features.shape[-1] != params.feature_dim:
        raise ShapeError(f"feature dim {features.shape[-1]} != model feature dim {params.feature_dim}")
    x = _standardize(features, params.feature_mean, params.feature_scale)
    # fixed per-pixel summation order: logits never depend on the array's extent
    out = np.empty(x.shape[:-1] + (params.num_classes,), dtype=np.float64)
    out[...] = params.bias
    for j in range(params.feature_dim):
        out += x[..., j:j + 1] * params.weights[:, j]
    return out


def predict_labels(logits: np.ndarray) -> np.ndarray:
    """Argmax over the class axis; ties go to the lowest class id."""
    return np.argmax(logits, axis=-1).astype(np.int16)


class BaselineClassifier:
    """Window classifier: (bands, h, w) normalized window -> (h, w, K) logits."""

    def __init__(self, params: BaselineParams):
        self.params = params

    @property
    def num_classes(self) -> int:
        return self.params.num_classes

    @property
    def context_radius(self) -> int:
        return self.params.feature_config.radius

    def __call__(self, window: np.ndarray) -> np.ndarray:
        return predict(self.params, extract_features(window, self.params.feature_config))


def save_model(params: BaselineParams, path, **meta) -> str:
    """Write {"params": ..., **meta} atomically; meta holds fold and weighting details."""
    return atomic_write_json(path, {**meta, "params": params.to_dict()})


def load_model(path) -> BaselineParams:
    """Read a model file written by save_model (a bare params object is accepted too)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read model {path}: {e}") from e
    return BaselineParams.from_dict(doc.get("params", doc))
