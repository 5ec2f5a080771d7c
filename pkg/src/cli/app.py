"""
Command-line interface for hurpipe.

Each subcommand runs one pipeline step on HURT files; `pipeline` runs all of
them from a JSON config. Exit status is 0 on success, 2 when a HurpipeError
stops the command and 1 for anything unexpected.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src import __version__
from src.core.controller import load_config, run_pipeline
from src.core.dhs import (HUR_CLASS_NAMES, NonSettlementPoint, PerturbationModel, evaluate_maps,
                          hur_from_landcover, load_clusters)
from src.core.errors import ConfigError, HurpipeError
from src.core.logger import get_logger, initialize_logging
from src.core.metrics import MetricReport, confusion, merge_all
from src.core.model import (WEIGHTING_STRATEGIES, BaselineClassifier, FeatureConfig, TrainingHyperparams,
                            compute_weights, extract_features, load_model, normalize_weights,
                            sample_training_pixels, save_model, train_baseline)
from src.core.preprocess import (NUM_TARGET_CLASSES, TARGET_CLASS_NAMES, ClassMap, ObservationStack, SmodMerge,
                                 build_target_labels, class_counts, floor_distribution, median_composite)
from src.core.raster import (DEFAULT_BAND_RANGES, LabelRaster, RasterTile, SyntheticSceneSpec,
                             gen_synthetic_scene, normalize_bands, read_tile, write_tile)
from src.core.spatialcv import assign_folds, fold_configs, load_countries
from src.core.stitch import TilingScheme, direct_predict, smooth_predict
from src.utils.file_manager import atomic_write_json
from src.utils.seeding import derive_rng
from src.utils.validators import build_dataclass, load_json


def _read_bands(path: str) -> RasterTile:
    tile = read_tile(path)
    if not isinstance(tile, RasterTile):
        raise ConfigError(f"{path}: expected a band raster, found a label raster")
    return tile


def _read_labels(path: str) -> LabelRaster:
    tile = read_tile(path)
    if not isinstance(tile, LabelRaster):
        raise ConfigError(f"{path}: expected a label raster, found a band raster")
    return tile


def _as_hur(raster: LabelRaster, path: str) -> LabelRaster:
    if raster.num_classes == len(HUR_CLASS_NAMES):
        return raster
    if raster.num_classes == NUM_TARGET_CLASSES:
        return hur_from_landcover(raster)
    raise ConfigError(f"{path}: expected a 3-class HUR or 8-class land-cover map, "
                      f"got {raster.num_classes} classes")


def cmd_synth(args, logger: logging.Logger) -> int:
    spec = SyntheticSceneSpec.from_dict(load_json(args.spec)) if args.spec else SyntheticSceneSpec(256, 256)
    if args.seed is not None:
        spec = SyntheticSceneSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    scene = gen_synthetic_scene(spec)
    out = Path(args.out)
    for year, obs in enumerate(scene.observations):
        write_tile(obs, out / f"year_{year}.hurt")
    write_tile(scene.truth, out / "truth.hurt")
    write_tile(scene.smod, out / "smod.hurt")
    atomic_write_json(out / "spec.json", spec.to_dict())
    logger.info(f"Synthetic scene {spec.width}x{spec.height}, {spec.num_years} years -> {out}")
    return 0


def cmd_composite(args, logger: logging.Logger) -> int:
    stack = ObservationStack(tuple(_read_bands(p) for p in args.inputs))
    write_tile(median_composite(stack), args.out)
    logger.info(f"Composite of {len(stack)} observations -> {args.out}")
    return 0


def cmd_fuse(args, logger: logging.Logger) -> int:
    cm = ClassMap.from_dict(load_json(args.class_map)) if args.class_map else ClassMap()
    merge = SmodMerge.from_dict(load_json(args.smod_merge)) if args.smod_merge else SmodMerge()
    labels = build_target_labels(_read_labels(args.esri), _read_labels(args.smod), cm, merge)
    write_tile(labels, args.out)
    counts = class_counts(labels)
    for name, n in zip(TARGET_CLASS_NAMES, counts):
        logger.debug(f"{name}: {int(n)} pixels")
    logger.info(f"Fused labels -> {args.out}")
    return 0


def cmd_folds(args, logger: logging.Logger) -> int:
    fa = assign_folds(load_countries(args.countries), args.k)
    configs = fold_configs(args.k)
    for fold in range(1, args.k + 1):
        print(f"Fold {fold}: {', '.join(fa.names_in(fold))}")
    print(", ".join(str(fc) for fc in configs))
    if args.out:
        atomic_write_json(args.out, {"assignment": fa.to_dict(),
                                     "configs": [{"name": fc.name, "label": fc.label()} for fc in configs]})
    return 0


def cmd_train(args, logger: logging.Logger) -> int:
    if len(args.composites) != len(args.labels):
        raise ConfigError(f"{len(args.composites)} composites for {len(args.labels)} label rasters")
    feature_config = FeatureConfig(context_window=args.context_window)
    hp = TrainingHyperparams(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                             max_train_pixels=args.max_pixels)
    xs, ys, label_rasters = [], [], []
    for i, (cpath, lpath) in enumerate(zip(args.composites, args.labels)):
        composite = normalize_bands(_read_bands(cpath), DEFAULT_BAND_RANGES)
        labels = _read_labels(lpath)
        x, y = sample_training_pixels(extract_features(composite, feature_config), labels.values,
                                      hp.max_train_pixels, derive_rng(args.seed, "sample", i))
        xs.append(x)
        ys.append(y)
        label_rasters.append(labels)
    p = floor_distribution(class_counts(label_rasters) / max(1, int(class_counts(label_rasters).sum())),
                           args.floor_eps)
    weights = normalize_weights(compute_weights(p, args.weighting), p)
    params = train_baseline(np.concatenate(xs), np.concatenate(ys), weights, hp, seed=args.seed,
                            feature_config=feature_config, band_ranges=DEFAULT_BAND_RANGES)
    save_model(params, args.out, class_distribution=[float(v) for v in p],
               class_weights={"strategy": weights.strategy, "w": list(weights.w)})
    logger.info(f"Model trained on {sum(y.size for y in ys)} pixels "
                f"(final loss {params.loss_trace[-1] if params.loss_trace else float('nan'):.4f}) -> {args.out}")
    return 0


def _classifier_input(model_path: str, raster_path: str):
    params = load_model(model_path)
    raster = normalize_bands(_read_bands(raster_path), params.band_ranges or DEFAULT_BAND_RANGES)
    return BaselineClassifier(params), raster


def cmd_predict(args, logger: logging.Logger) -> int:
    classify, raster = _classifier_input(args.model, args.input)
    write_tile(direct_predict(classify, raster), args.out)
    logger.info(f"Predicted {raster.width}x{raster.height} -> {args.out}")
    return 0


def cmd_stitch(args, logger: logging.Logger) -> int:
    classify, raster = _classifier_input(args.model, args.input)
    scheme = TilingScheme(window=args.window, crop_margin=args.margin, padding_mode=args.padding)
    write_tile(smooth_predict(classify, raster, scheme, threads=args.threads), args.out)
    logger.info(f"Stitched {raster.width}x{raster.height} (window {args.window}, margin {args.margin}) -> {args.out}")
    return 0


def cmd_evaluate(args, logger: logging.Logger) -> int:
    if len(args.pred) != len(args.truth):
        raise ConfigError(f"{len(args.pred)} predictions for {len(args.truth)} truth rasters")
    cms = [confusion(_read_labels(p), _read_labels(t), k=args.k) for p, t in zip(args.pred, args.truth)]
    names = TARGET_CLASS_NAMES if args.k == NUM_TARGET_CLASSES else ()
    report = MetricReport.from_confusion(merge_all(cms), "all", names)
    if args.out:
        atomic_write_json(args.out, report.to_dict())
    print(f"accuracy {report.accuracy:.4f}  kappa {report.kappa:.4f}  "
          f"mean IoU {report.mean_iou:.4f}  mean F1 {report.mean_f1:.4f}")
    return 0


def cmd_dhs(args, logger: logging.Logger) -> int:
    clusters = load_clusters(args.clusters)
    map_a = _as_hur(_read_labels(args.map_a), args.map_a)
    map_b = _as_hur(_read_labels(args.map_b), args.map_b) if args.map_b else None
    prior = _as_hur(_read_labels(args.prior), args.prior) if args.prior else None
    pm = build_dataclass(PerturbationModel, load_json(args.perturbation)) if args.perturbation else PerturbationModel()
    nonhs = []
    if args.nonhs:
        df = pd.read_csv(args.nonhs, dtype={"id": str, "country": str}, keep_default_na=False)
        nonhs = [NonSettlementPoint(str(r.id), float(r.lon), float(r.lat), str(getattr(r, "country", "")))
                 for r in df.itertuples(index=False)]
    report = evaluate_maps(clusters, map_a, map_b, prior_map=prior, pm=pm, seed=args.seed, n=args.draws,
                           nonhs_points=nonhs, threads=args.threads)
    if args.out:
        atomic_write_json(args.out, report.to_dict())
    for name, rep in report.maps.items():
        print(f"{name}: accuracy {rep.accuracy:.4f}  kappa {rep.kappa:.4f}")
    print(f"{report.evaluated} clusters evaluated, {len(report.excluded)} excluded")
    return 0


def cmd_pipeline(args, logger: logging.Logger) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.threads_given:
        overrides["threads"] = args.threads
    if overrides:
        config = replace(config, **overrides).validate()
    code, manifest = run_pipeline(config, logger, progress=lambda ev: logger.debug(f"progress: {ev}"))
    if manifest is not None:
        digests = manifest.output_digests()
        print(f"{len(digests)} outputs recorded in {manifest.path}")
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: logical cores)")
    common.add_argument("--log-dir", default="logs", help="directory for log files (default: logs)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug output on the console")

    parser = argparse.ArgumentParser(prog="hurpipe", description="Urban-rural land-cover mapping pipeline")
    parser.add_argument("--version", action="version", version=f"hurpipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene")
    p.add_argument("--spec", help="scene spec JSON (default: 256x256 with the default layout)")
    p.add_argument("--seed", type=int, help="override the scene seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("composite", parents=[common], help="median composite of yearly observations")
    p.add_argument("inputs", nargs="+", help="observation tiles (.hurt)")
    p.add_argument("--out", required=True, help="output composite tile")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("fuse-labels", parents=[common], help="remap ESRI codes and split Built Area by SMOD")
    p.add_argument("--esri", required=True, help="raw ESRI label tile")
    p.add_argument("--smod", required=True, help="SMOD tile")
    p.add_argument("--class-map", help="class map JSON")
    p.add_argument("--smod-merge", help="SMOD merge JSON")
    p.add_argument("--out", required=True, help="output label tile")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("folds", parents=[common], help="country-wise fold assignment")
    p.add_argument("--countries", required=True, help="CSV with code,name,area_km2")
    p.add_argument("-k", "--k", type=int, default=5, help="number of folds (default: 5)")
    p.add_argument("--out", help="write the assignment as JSON")
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("train", parents=[common], help="train the baseline classifier")
    p.add_argument("--composites", "--features", nargs="+", required=True, help="composite tiles")
    p.add_argument("--labels", nargs="+", required=True, help="label tiles, same order as --composites")
    p.add_argument("--weighting", choices=WEIGHTING_STRATEGIES, default="inverse", help="class weighting")
    p.add_argument("--context-window", type=int, default=3, help="odd neighbourhood size (default: 3)")
    p.add_argument("--lr", type=float, default=0.05, help="learning rate")
    p.add_argument("--epochs", type=int, default=15, help="training epochs")
    p.add_argument("--batch-size", type=int, default=1024, help="mini-batch size")
    p.add_argument("--max-pixels", type=int, default=20000, help="pixels sampled per tile")
    p.add_argument("--floor-eps", type=float, default=1e-4, help="floor for absent class proportions")
    p.add_argument("--seed", type=int, default=0, help="training seed")
    p.add_argument("--out", required=True, help="output model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="classify a whole raster in one pass")
    p.add_argument("--model", "--params", required=True, help="model JSON")
    p.add_argument("--input", "--in", required=True, help="composite tile")
    p.add_argument("--out", required=True, help="output label tile")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stitch", parents=[common], help="smooth-tiled prediction")
    p.add_argument("--model", "--params", required=True, help="model JSON")
    p.add_argument("--input", "--in", required=True, help="composite tile")
    p.add_argument("--window", type=int, default=250, help="window size (default: 250)")
    p.add_argument("--margin", type=int, default=25, help="crop margin per side (default: 25)")
    p.add_argument("--padding", choices=("reflect", "symmetric", "edge"), default="reflect",
                   help="edge padding mode")
    p.add_argument("--out", required=True, help="output label tile")
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of predictions against truth")
    p.add_argument("--pred", nargs="+", required=True, help="predicted label tiles")
    p.add_argument("--truth", nargs="+", required=True, help="truth label tiles, same order")
    p.add_argument("--k", type=int, default=NUM_TARGET_CLASSES, help="class count (default: 8)")
    p.add_argument("--out", "--report", dest="out", help="output report JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dhs-eval", parents=[common], help="survey-cluster validation of HUR maps")
    p.add_argument("--clusters", required=True, help="CSV with id,lon,lat,label,year,country")
    p.add_argument("--map-a", required=True, help="map under test (3-class HUR or 8-class land cover)")
    p.add_argument("--map-b", help="comparison map")
    p.add_argument("--prior", help="settlement prior map (default: map A)")
    p.add_argument("--nonhs", help="CSV of non-settlement points with id,lon,lat[,country]")
    p.add_argument("--perturbation", help="perturbation model JSON")
    p.add_argument("--draws", type=int, default=20, help="imputed locations per cluster (default: 20)")
    p.add_argument("--seed", type=int, default=0, help="imputation seed")
    p.add_argument("--out", "--report", dest="out", help="output report JSON")
    p.set_defaults(func=cmd_dhs)

    p = sub.add_parser("pipeline", parents=[common], help="run every stage from a JSON config")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--output-dir", help="override the config's output directory")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.threads_given = args.threads is not None
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    elif args.threads < 1:
        parser.error("--threads must be >= 1")

    initialize_logging(args.log_dir, logging.DEBUG if args.verbose else logging.INFO)
    logger = get_logger("cli")
    try:
        return args.func(args, logger)
    except HurpipeError as e:
        logger.error(str(e))
        print(f"hurpipe: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"Unexpected error in '{args.command}'")
        print(f"hurpipe: unexpected error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
