"""
hurpipe orchestrator: runs the end-to-end mapping pipeline on a synthetic
continent.

Stages run in order (synth, composite, fuse, folds, train, stitch, evaluate,
plus dhs when enabled); work inside a stage is spread over a thread pool and
gathered in submission order. Every stage appends a manifest record with the
content digests of what it wrote.

Each model trains for a fixed number of epochs. Its validation-fold accuracy
is logged and stored in the model file for reporting only; it never selects
an epoch or a model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .dhs import (PerturbationModel, evaluate_maps, hur_from_landcover, hur_from_smod, save_clusters,
                  synthesize_clusters, synthesize_nonhs_points)
from .errors import (ConfigError, CoverageError, EmptyInputError, HurpipeError, LeakageError,
                     StageError)
from .logger import ErrorTracker
from .metrics import (ConfusionMatrix, confusion, export_country_distribution, fold_average_report,
                      json_safe, merge_all, per_country_report, precision_matrix, recall_matrix)
from .model import (WEIGHTING_STRATEGIES, BaselineClassifier, BaselineParams, FeatureConfig,
                    TrainingHyperparams, compute_weights, extract_features, normalize_weights,
                    load_model, predict, predict_labels, sample_training_pixels, save_model,
                    train_baseline)
from .preprocess import (NUM_TARGET_CLASSES, TARGET_CLASS_NAMES, ClassMap, ObservationStack, SmodMerge,
                         build_target_labels, floor_distribution, median_composite)
from .raster import (DEFAULT_BAND_RANGES, BBox, LabelRaster, RasterTile, SyntheticSceneSpec, TileGrid,
                     TileSpec, gen_synthetic_scene, make_grid, mosaic_labels, normalize_bands,
                     partition_assigner, read_tile, resample_to_grid, write_tile)
from .spatialcv import (CountryRecord, FoldAssignment, FoldConfig, assign_folds, config_for_test_fold,
                        fold_configs, load_countries, tiles_for_split)
from .stitch import TilingScheme, smooth_predict
from src.utils.file_manager import FileManager
from src.utils.manifest import RunHeader, RunManifest, StageRecord
from src.utils.seeding import derive_seed, derive_rng
from src.utils.validators import (build_dataclass, load_json, to_jsonable, validate_input_path,
                                  validate_positive_int, validate_seed, validate_threads)

T = TypeVar("T")
R = TypeVar("R")

STAGES = ("synth", "composite", "fuse", "folds", "train", "stitch", "evaluate")
DHS_STAGE = "dhs"


@dataclass(frozen=True)
class ContinentConfig:
    """
    A synthetic continent: countries side by side along x, each a block of
    tiles_x × tiles_y tiles.
    """
    countries: Tuple[str, ...] = ("AA", "BB", "CC", "DD")
    names: Tuple[str, ...] = ()
    tiles_x: int = 2
    tiles_y: int = 2
    tile_size_m: float = 10000.0
    pixel_size: float = 10.0
    smod_cell_m: float = 1000.0
    num_years: int = 3
    cloud_fraction: float = 0.1
    origin_x: float = 0.0
    origin_y: float = 0.0
    epsg_code: int = 3857

    def __post_init__(self):
        if not self.countries:
            raise ConfigError("continent.countries must name at least one country")
        if len(set(self.countries)) != len(self.countries):
            raise ConfigError("continent.countries holds duplicate codes")
        if self.names and len(self.names) != len(self.countries):
            raise ConfigError(f"continent.names has {len(self.names)} entries for {len(self.countries)} countries")
        for key in ("tiles_x", "tiles_y", "num_years"):
            ok, _, err = validate_positive_int(getattr(self, key), f"continent.{key}")
            if not ok:
                raise ConfigError(err)
        if not (self.tile_size_m > 0 and self.pixel_size > 0 and self.smod_cell_m > 0):
            raise ConfigError("continent sizes must be positive")
        px = self.tile_size_m / self.pixel_size
        factor = self.smod_cell_m / self.pixel_size
        if px != round(px) or factor != round(factor) or round(px) % round(factor):
            raise ConfigError("tile_size_m must be a whole number of SMOD cells, "
                              "and smod_cell_m a whole number of pixels")
        if not 0.0 <= self.cloud_fraction <= 1.0:
            raise ConfigError(f"continent.cloud_fraction must be in [0, 1], got {self.cloud_fraction}")

    @property
    def tile_pixels(self) -> int:
        return int(round(self.tile_size_m / self.pixel_size))

    @property
    def smod_factor(self) -> int:
        return int(round(self.smod_cell_m / self.pixel_size))

    def partitions(self) -> List[Tuple[str, BBox]]:
        w, h = self.tiles_x * self.tile_size_m, self.tiles_y * self.tile_size_m
        return [(code, BBox(self.origin_x + i * w, self.origin_y, self.origin_x + (i + 1) * w, self.origin_y + h))
                for i, code in enumerate(self.countries)]

    def bbox(self) -> BBox:
        parts = self.partitions()
        return BBox(parts[0][1].xmin, parts[0][1].ymin, parts[-1][1].xmax, parts[-1][1].ymax)

    def grid(self) -> TileGrid:
        return make_grid(self.bbox(), partition_assigner(self.partitions()),
                         spacing=self.tile_size_m, pixel_size=self.pixel_size, epsg_code=self.epsg_code)

    def records(self) -> List[CountryRecord]:
        area = self.tiles_x * self.tiles_y * (self.tile_size_m / 1000.0) ** 2
        names = self.names or self.countries
        return [CountryRecord(code, name, area) for code, name in zip(self.countries, names)]


@dataclass(frozen=True)
class FoldSettings:
    k: int = 4
    floor_eps: float = 1e-4


@dataclass(frozen=True)
class SeedSettings:
    synth: int = 1
    train: int = 2
    dhs: int = 3


@dataclass(frozen=True)
class DhsSettings:
    enabled: bool = False
    clusters: int = 200
    nonhs_points: int = 50
    draws: int = 20
    compare_smod: bool = True
    perturbation: PerturbationModel = field(default_factory=PerturbationModel)


@dataclass(frozen=True)
class PipelineConfig:
    output_dir: str = "output"
    countries_csv: Optional[str] = None
    class_map: Optional[str] = None
    smod_merge: Optional[str] = None
    continent: ContinentConfig = field(default_factory=ContinentConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    tiling: TilingScheme = field(default_factory=TilingScheme)
    weighting: str = "inverse"
    training: TrainingHyperparams = field(default_factory=TrainingHyperparams)
    folds: FoldSettings = field(default_factory=FoldSettings)
    seeds: SeedSettings = field(default_factory=SeedSettings)
    dhs: DhsSettings = field(default_factory=DhsSettings)
    threads: int = 0  # 0 = one per logical core

    def validate(self) -> "PipelineConfig":
        """Check cross-field rules and that every referenced input exists."""
        if self.weighting not in WEIGHTING_STRATEGIES:
            raise ConfigError(f"weighting: unknown strategy '{self.weighting}'; "
                              f"expected one of {WEIGHTING_STRATEGIES}")
        for key in ("countries_csv", "class_map", "smod_merge"):
            path = getattr(self, key)
            if path is not None:
                ok, _, err = validate_input_path(path, key)
                if not ok:
                    raise ConfigError(err)
        for key in ("synth", "train", "dhs"):
            ok, _, err = validate_seed(getattr(self.seeds, key))
            if not ok:
                raise ConfigError(f"seeds.{key}: {err}")
        ok, _, err = validate_threads(self.threads)
        if not ok:
            raise ConfigError(err)
        if self.folds.k < 3:
            raise ConfigError(f"folds.k must be >= 3, got {self.folds.k}")
        if self.folds.k > len(self.continent.countries):
            raise ConfigError(f"folds.k = {self.folds.k} exceeds the {len(self.continent.countries)} countries")
        if not self.folds.floor_eps > 0:
            raise ConfigError("folds.floor_eps must be positive")
        for key in ("clusters", "draws"):
            ok, _, err = validate_positive_int(getattr(self.dhs, key), f"dhs.{key}")
            if not ok:
                raise ConfigError(err)
        if self.dhs.nonhs_points < 0:
            raise ConfigError("dhs.nonhs_points must be >= 0")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()


def config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> PipelineConfig:
    """
    Strictly build a PipelineConfig; relative input paths resolve against
    base_dir (the config file's directory).
    """
    config = build_dataclass(PipelineConfig, data)
    if base_dir is not None:
        paths = {}
        for key in ("countries_csv", "class_map", "smod_merge"):
            value = getattr(config, key)
            if value is not None and not Path(value).is_absolute():
                paths[key] = str(base_dir / value)
        config = replace(config, **paths)
    return config.validate()


def load_config(path: str) -> PipelineConfig:
    data = load_json(path)
    return config_from_dict(data, Path(path).resolve().parent)


class PipelineController:
    def __init__(self, config: PipelineConfig, logger: Optional[logging.Logger] = None):
        self.config = config.validate()
        self.logger = logger or logging.getLogger(__name__)
        self.threads = validate_threads(config.threads)[1]
        self.files = FileManager(config.output_dir)
        self.manifest = RunManifest(config.output_dir)
        self.errors = ErrorTracker(self.logger)
        self.class_map = ClassMap.from_dict(load_json(config.class_map)) if config.class_map else ClassMap()
        self.smod_merge = SmodMerge.from_dict(load_json(config.smod_merge)) if config.smod_merge else SmodMerge()
        self.grid = config.continent.grid()
        if not len(self.grid):
            raise ConfigError("continent grid holds no tile")
        self.folds: Optional[FoldAssignment] = None
        self.models: Dict[str, BaselineParams] = {}
        self._stop_event = threading.Event()

    def stop(self):
        self._stop_event.set()

    def stages(self) -> List[str]:
        return list(STAGES) + ([DHS_STAGE] if self.config.dhs.enabled else [])

    def stage_seed(self, stage: str) -> Optional[int]:
        seeds = self.config.seeds
        return {"synth": seeds.synth, "train": seeds.train, DHS_STAGE: seeds.dhs}.get(stage)

    def run(self, progress: Optional[Callable[[object], None]] = None) -> Dict[str, Dict[str, str]]:
        """
        Run every stage in order.

        Returns:
            stage -> {relative output path: sha256}

        Raises:
            StageError: a stage failed; the manifest holds its failed record
        """
        stages = self.stages()
        seeds = {k: v for k, v in to_jsonable(self.config.seeds).items()}
        self.manifest.reset()
        self.manifest.append(RunHeader(self.config.digest(), seeds, stages))
        self.logger.info(f"Pipeline: {len(self.grid)} tiles in {len(self.grid.countries())} countries, "
                         f"{self.threads} threads -> {self.files.base_output_dir}")
        outputs: Dict[str, Dict[str, str]] = {}

        for i, stage in enumerate(stages, 1):
            if self._stop_event.is_set():
                self.logger.warning(f"Stopped before stage '{stage}'")
                break
            if progress:
                progress({"type": "stage", "stage": stage, "index": i, "total": len(stages), "status": "started"})
            seed = self.stage_seed(stage)
            started = self.manifest.start_stage(stage, seed)
            warned = len(self.errors.warnings)
            try:
                paths = getattr(self, f"_stage_{stage}")()
                digests = self.files.digests(paths)
            except Exception as e:
                self.errors.log_error(e, stage)
                self.manifest.append(StageRecord(stage=stage, status="failed", seed=seed, started_at=started,
                                                 finished_at=time.time(), error=f"{type(e).__name__}: {e}",
                                                 error_summary=self.errors.get_error_summary()))
                if progress:
                    progress({"type": "stage", "stage": stage, "status": "failed", "error": str(e)})
                raise StageError(stage, e) from e
            self.manifest.append(StageRecord(stage=stage, status="completed", seed=seed, outputs=digests,
                                             started_at=started, finished_at=time.time(),
                                             warnings=[w["message"] for w in self.errors.warnings[warned:]]))
            outputs[stage] = digests
            self.logger.info(f"[{i}/{len(stages)}] {stage}: {len(digests)} outputs "
                             f"in {time.time() - started:.1f}s")
            if progress:
                progress({"type": "stage", "stage": stage, "status": "completed", "outputs": len(digests)})

        if progress:
            progress({"type": "counters", "stats": self.files.get_output_stats()})
        return outputs

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
        items = list(items)
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(items))) as ex:
                return list(ex.map(fn, items))
        return [fn(item) for item in items]

    def _read_raster(self, stage: str, name: str) -> RasterTile:
        tile = read_tile(self.files.path_for(stage, name))
        if not isinstance(tile, RasterTile):
            raise ConfigError(f"{stage}/{name} is not a band raster")
        return tile

    def _read_labels(self, stage: str, name: str) -> LabelRaster:
        tile = read_tile(self.files.path_for(stage, name))
        if not isinstance(tile, LabelRaster):
            raise ConfigError(f"{stage}/{name} is not a label raster")
        return tile

    def _scene_spec(self, tile: TileSpec) -> SyntheticSceneSpec:
        c = self.config.continent
        return SyntheticSceneSpec(width=tile.width, height=tile.height, num_years=c.num_years,
                                  cloud_fraction=c.cloud_fraction,
                                  seed=derive_seed(self.config.seeds.synth, "tile", tile.tile_id),
                                  pixel_size=c.pixel_size, origin_x=tile.bbox.xmin, origin_y=tile.bbox.ymax,
                                  epsg_code=c.epsg_code, smod_factor=c.smod_factor)

    def _fold_assignment(self) -> FoldAssignment:
        if self.folds is None:
            self.folds = FoldAssignment.from_dict(load_json(self.files.path_for("folds", "folds.json"))["assignment"])
        return self.folds

    def _model_for(self, tile: TileSpec) -> Tuple[FoldConfig, BaselineParams]:
        k = self.config.folds.k
        fc = config_for_test_fold(self._fold_assignment().fold_of(tile.country), k)
        if fc.name not in self.models:
            self.models[fc.name] = load_model(self.files.path_for("models", f"{fc.name}.json"))
        return fc, self.models[fc.name]

    # ------------------------------------------------------------------
    # stages
    # ------------------------------------------------------------------

    def _stage_synth(self) -> List[str]:
        """Scene spec, raw ESRI truth and coarse SMOD per tile."""
        def work(tile: TileSpec) -> List[str]:
            spec = self._scene_spec(tile)
            scene = gen_synthetic_scene(spec)
            return [
                self.files.write_json("synth", f"{tile.tile_id}.scene.json",
                                      {"tile_id": tile.tile_id, "country": tile.country, "spec": spec.to_dict()}),
                write_tile(scene.truth, self.files.path_for("synth", f"{tile.tile_id}.truth.hurt")),
                write_tile(scene.smod, self.files.path_for("synth", f"{tile.tile_id}.smod.hurt")),
            ]

        return [p for paths in self._map(work, self.grid.tiles) for p in paths]

    def _stage_composite(self) -> List[str]:
        """Median composite of the yearly observations (regenerated from the stored spec)."""
        def work(tile: TileSpec) -> str:
            doc = load_json(self.files.path_for("synth", f"{tile.tile_id}.scene.json"))
            scene = gen_synthetic_scene(SyntheticSceneSpec.from_dict(doc["spec"]))
            composite = median_composite(ObservationStack(scene.observations))
            return write_tile(composite, self.files.path_for("composite", f"{tile.tile_id}.hurt"))

        return self._map(work, self.grid.tiles)

    def _stage_fuse(self) -> List[str]:
        def work(tile: TileSpec) -> str:
            raw = self._read_labels("synth", f"{tile.tile_id}.truth.hurt")
            smod = self._read_labels("synth", f"{tile.tile_id}.smod.hurt")
            labels = build_target_labels(raw, smod, self.class_map, self.smod_merge)
            return write_tile(labels, self.files.path_for("labels", f"{tile.tile_id}.hurt"))

        return self._map(work, self.grid.tiles)

    def _stage_folds(self) -> List[str]:
        present = set(self.grid.countries())
        if self.config.countries_csv:
            records = load_countries(self.config.countries_csv)
            missing = present - {r.code for r in records}
            if missing:
                raise CoverageError(f"{self.config.countries_csv} lacks countries {sorted(missing)}")
        else:
            records = self.config.continent.records()
        records = [r for r in records if r.code in present]
        self.folds = assign_folds(records, self.config.folds.k)
        configs = [{"name": fc.name, "label": fc.label(), "train": list(fc.train),
                    "validation": fc.validation, "test": fc.test} for fc in fold_configs(self.config.folds.k)]
        for fold in range(1, self.config.folds.k + 1):
            self.logger.info(f"Fold {fold}: {', '.join(self.folds.names_in(fold))}")
        return [self.files.write_json("folds", "folds.json", {"assignment": self.folds.to_dict(),
                                                              "configs": configs})]

    def _stage_train(self) -> List[str]:
        """One model per fold configuration, on seeded per-tile pixel samples."""
        cfg = self.config
        fa = self._fold_assignment()

        def sample(tile: TileSpec):
            composite = normalize_bands(self._read_raster("composite", f"{tile.tile_id}.hurt"), DEFAULT_BAND_RANGES)
            labels = self._read_labels("labels", f"{tile.tile_id}.hurt")
            features = extract_features(composite, cfg.features)
            rng = derive_rng(cfg.seeds.train, "sample", tile.tile_id)
            x, y = sample_training_pixels(features, labels.values, cfg.training.max_train_pixels, rng)
            counts = np.bincount(labels.values[labels.values >= 0].astype(np.int64), minlength=NUM_TARGET_CLASSES)
            return x, y, counts

        samples = dict(zip((t.tile_id for t in self.grid), self._map(sample, self.grid.tiles)))
        self.models = {}
        paths = []
        for fc in fold_configs(cfg.folds.k):
            split = tiles_for_split(self.grid, fa, fc)
            if not split.train:
                raise EmptyInputError(f"fold configuration {fc} has no training tile")
            counts = sum(samples[t.tile_id][2] for t in split.train)
            if counts.sum() == 0:
                raise EmptyInputError(f"fold configuration {fc}: every training pixel is ignored")
            for c in np.flatnonzero(counts == 0):
                self.errors.log_warning(f"{fc}: class {TARGET_CLASS_NAMES[c]} absent from the training split, "
                                        f"its share is floored at {cfg.folds.floor_eps:g}", "train")
            p = floor_distribution(counts / counts.sum(), cfg.folds.floor_eps)
            weights = normalize_weights(compute_weights(p, cfg.weighting), p)
            x = np.concatenate([samples[t.tile_id][0] for t in split.train])
            y = np.concatenate([samples[t.tile_id][1] for t in split.train])
            params = train_baseline(x, y, weights, cfg.training, seed=derive_seed(cfg.seeds.train, fc.name),
                                    feature_config=cfg.features, band_ranges=DEFAULT_BAND_RANGES)
            val_acc = None
            if split.validation:
                xv = np.concatenate([samples[t.tile_id][0] for t in split.validation])
                yv = np.concatenate([samples[t.tile_id][1] for t in split.validation])
                if yv.size:
                    val_acc = float((predict_labels(predict(params, xv)) == yv).mean())
            self.logger.info(f"Model {fc}: {y.size} training pixels, final loss "
                             f"{params.loss_trace[-1] if params.loss_trace else float('nan'):.4f}, "
                             f"validation accuracy {val_acc if val_acc is not None else float('nan'):.3f}")
            self.models[fc.name] = params
            paths.append(save_model(
                params, self.files.path_for("models", f"{fc.name}.json"),
                fold_config={"label": fc.label(), "train": list(fc.train), "validation": fc.validation, "test": fc.test},
                class_distribution=[float(v) for v in p],
                class_weights={"strategy": weights.strategy, "w": list(weights.w)},
                validation_accuracy=val_acc))
        return paths

    def _stage_stitch(self) -> List[str]:
        """Each tile is predicted by the model whose test fold holds its country."""
        scheme = self.config.tiling
        for tile in self.grid:
            self._model_for(tile)  # load models once, outside the pool

        def work(tile: TileSpec) -> Tuple[str, str]:
            fc, params = self._model_for(tile)
            composite = self._read_raster("composite", f"{tile.tile_id}.hurt")
            norm = normalize_bands(composite, params.band_ranges or DEFAULT_BAND_RANGES)
            labels = smooth_predict(BaselineClassifier(params), norm, scheme)
            return write_tile(labels, self.files.path_for("maps", f"{tile.tile_id}.hurt")), fc.name

        results = self._map(work, self.grid.tiles)
        scoring = {t.tile_id: {"country": t.country, "model": name} for t, (_, name) in zip(self.grid, results)}
        return [p for p, _ in results] + [self.files.write_json("maps", "scoring.json", scoring)]

    def _stage_evaluate(self) -> List[str]:
        fa = self._fold_assignment()
        k = self.config.folds.k
        by_name = {fc.name: fc for fc in fold_configs(k)}
        scoring = load_json(self.files.path_for("maps", "scoring.json"))

        def work(tile: TileSpec) -> ConfusionMatrix:
            pred = self._read_labels("maps", f"{tile.tile_id}.hurt")
            truth = self._read_labels("labels", f"{tile.tile_id}.hurt")
            return confusion(pred, truth, k=NUM_TARGET_CLASSES)

        cms = self._map(work, self.grid.tiles)
        country_cms: Dict[str, List[ConfusionMatrix]] = {}
        fold_cms: Dict[str, List[ConfusionMatrix]] = {}
        scored_by: Dict[str, FoldConfig] = {}
        for tile, cm in zip(self.grid, cms):
            entry = scoring.get(tile.tile_id)
            if entry is None or entry["model"] not in by_name:
                raise LeakageError(f"tile {tile.tile_id} has no recorded scoring model")
            fc = by_name[entry["model"]]
            if scored_by.setdefault(tile.country, fc) != fc:
                raise LeakageError(f"country '{tile.country}' was scored by more than one model")
            country_cms.setdefault(tile.country, []).append(cm)
            fold_cms.setdefault(fc.name, []).append(cm)

        reports = per_country_report({c: merge_all(v) for c, v in country_cms.items()}, scored_by, fa,
                                     TARGET_CLASS_NAMES)
        folds = fold_average_report({n: merge_all(v) for n, v in fold_cms.items()}, TARGET_CLASS_NAMES)
        merged = reports.continent.confusion
        self.logger.info(f"Continent accuracy {reports.continent.accuracy:.4f}, "
                         f"kappa {reports.continent.kappa:.4f}, mean IoU {reports.continent.mean_iou:.4f}")
        doc = {
            "continent": reports.continent.to_dict(),
            "countries": {code: rep.to_dict() for code, rep in reports.countries.items()},
            "fold_average": {
                "report": folds.report.to_dict(),
                "per_fold": {name: rep.to_dict() for name, rep in folds.per_fold.items()},
                "best_fold": folds.best_fold,
                "worst_fold": folds.worst_fold,
            },
            "recall_matrix": json_safe(recall_matrix(merged)),
            "precision_matrix": json_safe(precision_matrix(merged)),
            "scored_by": {code: fc.label() for code, fc in sorted(scored_by.items())},
        }
        csv_path = str(self.files.path_for("reports", "country_distribution.csv"))
        export_country_distribution(reports.countries, csv_path)
        return [self.files.write_json("reports", "metrics.json", doc), csv_path]

    def _stage_dhs(self) -> List[str]:
        """Survey-style validation of the stitched map, with the SMOD map as comparison."""
        cfg = self.config
        tiles = self.grid.tiles
        truth = mosaic_labels(self._map(lambda t: hur_from_landcover(self._read_labels("labels", f"{t.tile_id}.hurt")),
                                        tiles))
        predicted = mosaic_labels(self._map(lambda t: hur_from_landcover(self._read_labels("maps", f"{t.tile_id}.hurt")),
                                            tiles))
        smod_map = None
        if cfg.dhs.compare_smod:
            smod = mosaic_labels(self._map(lambda t: self._read_labels("synth", f"{t.tile_id}.smod.hurt"), tiles))
            smod_map = resample_to_grid(hur_from_smod(smod, self.smod_merge), predicted)

        country_of = partition_assigner(cfg.continent.partitions())
        pm = cfg.dhs.perturbation
        clusters = synthesize_clusters(truth, cfg.dhs.clusters, pm, seed=derive_seed(cfg.seeds.dhs, "clusters"),
                                       country_of=country_of)
        nonhs = synthesize_nonhs_points(truth, cfg.dhs.nonhs_points, seed=derive_seed(cfg.seeds.dhs, "nonhs"),
                                        country_of=country_of)
        report = evaluate_maps(clusters, predicted, smod_map, prior_map=truth, pm=pm, seed=cfg.seeds.dhs,
                               n=cfg.dhs.draws, nonhs_points=nonhs, names=("hurpipe", "smod"),
                               threads=self.threads)
        clusters_path = str(self.files.path_for("reports", "dhs_clusters.csv"))
        save_clusters(clusters, clusters_path)
        return [self.files.write_json("reports", "dhs.json", report.to_dict()), clusters_path]


def run_pipeline(config: PipelineConfig, logger: Optional[logging.Logger] = None,
                 progress: Optional[Callable[[object], None]] = None) -> Tuple[int, Optional[RunManifest]]:
    """
    Validate the config and run every stage.

    Returns:
        (exit status, manifest): 0 on success, 2 when a configuration or
        stage error stops the run, 1 for anything unexpected. The manifest
        is None when validation failed before any stage ran.
    """
    log = logger or logging.getLogger(__name__)
    try:
        controller = PipelineController(config, log)
    except HurpipeError as e:
        log.error(f"Invalid configuration: {e}")
        return 2, None
    try:
        controller.run(progress)
    except StageError as e:
        log.error(str(e))
        return (2 if isinstance(e.cause, HurpipeError) else 1), controller.manifest
    return 0, controller.manifest
