"""Command-line driver: ``salfuse <subcommand> ...``.

Exit codes: 0 success, 2 configuration/usage error, 3 I/O or format error,
4 numerical abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation, fusion, jsc, pipeline, tddl
from .config import ConfigError, PipelineConfig
from .forest import load_forest, save_forest, train_forest
from .imaging import ImageFormatError, load_gray, load_image, resize_cap, save_gray
from .persist import ModelFormatError

log = logging.getLogger("salfuse")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class IngestError(OSError):
    pass


@dataclass
class DatasetManifest:
    name: str
    entries: list = field(default_factory=list)  # (image path, mask path)
    missing: list = field(default_factory=list)  # image stems with no mask

    def __len__(self):
        return len(self.entries)


def _by_stem(folder: Path) -> dict:
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def ingest(root, cap: int = 400, check: bool = True) -> DatasetManifest:
    """Pair ``images/<stem>.*`` with ``masks/<stem>.*`` under ``root``.

    Pairs whose files fail to decode, disagree in size, or whose mask has no
    salient pixel are dropped with a warning.
    """
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise IngestError(f"{root}: expected images/ and masks/ subdirectories")
    images, masks = _by_stem(img_dir), _by_stem(mask_dir)
    man = DatasetManifest(root.name)
    for stem in sorted(images):
        if stem not in masks:
            man.missing.append(stem)
            log.warning("%s: no mask for image", stem)
            continue
        if check:
            try:
                img, gt = load_image(images[stem]), load_gray(masks[stem])
            except (ImageFormatError, OSError) as exc:
                log.warning("%s: unreadable (%s)", stem, exc)
                continue
            if img.shape[:2] != gt.shape:
                log.warning("%s: image %s and mask %s differ in size", stem, img.shape[:2], gt.shape)
                continue
            if not np.any(gt > 0):
                log.warning("%s: empty mask, excluded", stem)
                continue
        man.entries.append((images[stem], masks[stem]))
    if not man.entries:
        raise IngestError(f"{root}: no usable image/mask pairs")
    return man


def load_pair(img_path, mask_path, cap: int):
    img = resize_cap(load_image(img_path), cap)
    gt = resize_cap(load_gray(mask_path), cap)
    return img, gt


# ---------------------------------------------------------------------------
# worker functions (module level so a process pool can pickle them)


def _forest_job(args):
    img_path, mask_path, cfg = args
    img, gt = load_pair(img_path, mask_path, cfg.resize_cap)
    return pipeline.forest_samples(img, gt, cfg)


def _maps_job(args):
    img_path, forest, cfg = args
    img = resize_cap(load_image(img_path), cfg.resize_cap)
    return pipeline.scale_maps(img, forest, cfg)


def _predict_job(args):
    img_path, forest, model, cfg, stride, params = args
    maps = _maps_job((img_path, forest, cfg))
    grid = fusion.make_grid(maps[0].shape, cfg.patch_size, stride)
    return maps, fusion.fuse(maps, model, grid, params)


def _run(fn, jobs_args, jobs: int):
    """Map ``fn`` over arguments; failures come back as exceptions, in order."""
    def safe(a):
        try:
            return fn(a)
        except (ValueError, OSError, FloatingPointError) as exc:
            return exc

    if jobs <= 1 or len(jobs_args) <= 1:
        return [safe(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, a) for a in jobs_args]
        out = []
        for f in futures:
            try:
                out.append(f.result())
            except (ValueError, OSError, FloatingPointError) as exc:
                out.append(exc)
        return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest_check(args, cfg):
    man = ingest(args.data, cfg.resize_cap)
    print(f"{man.name}: {len(man)} usable pairs, {len(man.missing)} images without mask")
    for img, mask in man.entries:
        print(f"{img}\t{mask}")
    return EXIT_OK


def cmd_train_forest(args, cfg):
    man = ingest(args.data, cfg.resize_cap)
    results = _run(_forest_job, [(i, m, cfg) for i, m in man.entries], args.jobs)
    X, y = [], []
    for (img, _), res in zip(man.entries, results):
        if isinstance(res, Exception):
            log.warning("%s skipped: %s", img, res)
            continue
        X.append(res[0])
        y.append(res[1])
    if not X:
        raise IngestError("no training regions could be extracted")
    X, y = np.concatenate(X), np.concatenate(y)
    log.info("training forest on %d regions", y.size)
    model = train_forest(X, y, cfg.forest_trees, cfg.forest_min_leaf, cfg.forest_seed)
    save_forest(args.out, model)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_train_fusion(args, cfg):
    man = ingest(args.data, cfg.resize_cap)
    forest = load_forest(args.forest)
    stride = args.stride or cfg.stride
    results = _run(_maps_job, [(i, forest, cfg) for i, _ in man.entries], args.jobs)
    X, Y = [], []
    for (img, mask), maps in zip(man.entries, results):
        if isinstance(maps, Exception):
            log.warning("%s skipped: %s", img, maps)
            continue
        gt = resize_cap(load_gray(mask), cfg.resize_cap)
        grid = fusion.make_grid(maps[0].shape, cfg.patch_size, stride)
        X.append(fusion.extract_patches(maps, grid))
        Y.append(fusion.extract_patches([pipeline.binarize_gt(gt, cfg.gt_threshold)], grid)[:, 0])
    if not X:
        raise IngestError("no training patches could be extracted")
    X, Y = np.concatenate(X), np.concatenate(Y)
    log.info("training fusion model on %d patches, T=%d", X.shape[0], cfg.T)
    if args.dump_intermediate:
        fusion.save_training_set(Path(args.dump_intermediate) / "fusion_train", X, Y)
    model = tddl.train(X, Y, cfg.train_config())
    tddl.save_model(args.out, model)
    log.info("wrote %s", args.out)
    return EXIT_OK


def _inputs(path) -> list:
    path = Path(path)
    if path.is_dir():
        sub = path / "images" if (path / "images").is_dir() else path
        return [p for p in sorted(sub.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]
    return [path]


def cmd_predict(args, cfg):
    forest = load_forest(args.forest)
    model = tddl.load_model(args.fusion)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stride = args.stride or cfg.stride
    params = jsc.JscParams(cfg.lambda1, cfg.lambda2, cfg.jsc_max_iter, cfg.jsc_tol)
    files = _inputs(args.input)
    if not files:
        raise IngestError(f"{args.input}: no images found")
    results = _run(_predict_job, [(f, forest, model, cfg, stride, params) for f in files], args.jobs)
    ok = 0
    for f, res in zip(files, results):
        if isinstance(res, Exception):
            log.error("%s: %s", f, res)
            continue
        maps, fused = res
        save_gray(out / f"{f.stem}.png", fused)
        if args.dump_intermediate:
            for k, m in enumerate(maps, 1):
                save_gray(out / f"{f.stem}_scale{k}.png", m)
        ok += 1
    (out / "meta.json").write_text(json.dumps({"resize_cap": cfg.resize_cap, "written": ok}) + "\n")
    if ok == 0:
        raise IngestError("every input failed")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    man = ingest(args.data, cfg.resize_cap, check=False)
    maps_dir = Path(args.maps)
    pairs = []
    for img, mask in man.entries:
        pred = maps_dir / f"{img.stem}.png"
        if not pred.is_file():
            log.warning("%s: no predicted map", img.stem)
            continue
        gmap = load_gray(pred)
        gt = resize_cap(load_gray(mask), cfg.resize_cap)
        if gmap.shape != gt.shape:
            log.warning("%s: map %s vs mask %s, skipped", img.stem, gmap.shape, gt.shape)
            continue
        gt = pipeline.binarize_gt(gt, cfg.gt_threshold)
        if not gt.any():
            log.warning("%s: no salient pixel after binarisation, skipped", img.stem)
            continue
        pairs.append((gmap, gt))
    if not pairs:
        raise IngestError("no predicted map matched a ground-truth mask")
    curve = evaluation.sweep(pairs, mode=args.mode)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    evaluation.write_csv(f"{prefix}_curve.csv", curve)
    evaluation.write_summary(f"{prefix}_summary.json", curve, images=len(pairs), mode=args.mode)
    print(f"max_f={curve.max_f:.6f} auc_roc={curve.auc_roc:.6f} images={len(pairs)}")
    return EXIT_OK


def cmd_print_config(args, cfg):
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides every seed in the configuration")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-image stages")
    common.add_argument("--stride", type=int, help="patch stride (overrides the configuration)")
    common.add_argument("--dump-intermediate", nargs="?", const=".", default=None, metavar="DIR",
                        help="write per-scale maps (predict) or training matrices (train-fusion)")

    p = argparse.ArgumentParser(prog="salfuse", description="Multi-scale saliency with learned fusion.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest-check", parents=[common], help="validate a dataset directory")
    s.add_argument("data")
    s.set_defaults(func=cmd_ingest_check)

    s = sub.add_parser("train-forest", parents=[common], help="train the region regressor")
    s.add_argument("data")
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_train_forest)

    s = sub.add_parser("train-fusion", parents=[common], help="train the fusion dictionaries")
    s.add_argument("data")
    s.add_argument("--forest", required=True)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_train_fusion)

    s = sub.add_parser("predict", parents=[common], help="write fused saliency maps")
    s.add_argument("input", help="image file, directory of images, or dataset root")
    s.add_argument("--forest", required=True)
    s.add_argument("--fusion", required=True)
    s.add_argument("-o", "--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="PR/ROC sweep of predicted maps")
    s.add_argument("maps")
    s.add_argument("data")
    s.add_argument("-o", "--out", required=True, help="output prefix")
    s.add_argument("--mode", choices=("aggregate", "mean"), default="aggregate")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("print-config", parents=[common], help="print the effective configuration")
    s.set_defaults(func=cmd_print_config)
    return p


def _setup_logging():
    level = os.environ.get("SALFUSE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg = cfg.replace(forest_seed=args.seed, tddl_seed=args.seed)
        if args.stride is not None:
            cfg = cfg.replace(stride=args.stride)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO
    try:
        return args.func(args, cfg)
    except ConfigError as exc:
        log.error("configuration: %s", exc)
        return EXIT_CONFIG
    except (tddl.TrainingAborted, FloatingPointError) as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except (OSError, ModelFormatError, ImageFormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
