"""Command-line entry point: ``postdae <subcommand> [options]``.

Every subcommand accepts the shared options ``--config``, ``--set``,
``--workers``, ``--seed`` and ``--output``. Training subcommands read the
dataset and hyper-parameters from the experiment configuration, so
``postdae train-dae --set dae.train.epochs=20`` trains on the same folds an
``experiment`` run would use.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .crf import crf_postprocess
from .dae import load_dae, postprocess_batch
from .data import generate_synthetic_dataset, import_jsrt, load_jsrt_image, read_gray_png
from .errors import InvalidConfig, PostDAEError
from .forest import load_rf, predict_rf, save_rf, train_rf
from .masks import read_mask_png, write_mask_png
from .metrics import EvalRecord, read_records, records_to_csv
from .pipeline import (
    ExperimentConfig,
    build_report,
    format_report,
    load_folds,
    obtain_dae,
    report_plots,
    run_experiment,
    unet_stages,
)
from .unet import load_unet, predict_unet

log = logging.getLogger("postdae")


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    if args.output is not None and args.command == "experiment":
        overrides.append(f"output_dir={args.output}")
    if args.no_invert:
        overrides.append("dataset.invert=false")
    return ExperimentConfig.load(args.config, overrides)


def _out(args, default: str) -> Path:
    path = Path(args.output or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_image(path: Path, invert: bool = True) -> np.ndarray:
    if path.suffix.upper() == ".IMG":
        return load_jsrt_image(path, invert=invert)
    return read_gray_png(path)


# ---------------------------------------------------------------- subcommands

def cmd_import_jsrt(args) -> int:
    manifest = import_jsrt(args.images, args.masks, _out(args, "data/jsrt"), size=args.size)
    print(f"imported {len(manifest)} images, spacing {manifest.spacing:g} mm/px")
    return 0


def cmd_gen_synthetic(args) -> int:
    seed = 0 if args.seed is None else args.seed
    manifest = generate_synthetic_dataset(_out(args, "data/synthetic"), args.count, args.size, seed)
    print(f"wrote {len(manifest)} synthetic pairs to {manifest.root}")
    return 0


def cmd_train_dae(args) -> int:
    cfg = _config(args)
    folds = load_folds(cfg)
    masks = [s.mask for s in folds.train]
    if cfg["dae"]["train_masks"] == "train+val":
        masks += [s.mask for s in folds.val]
    out = _out(args, "checkpoints")
    ckpt = obtain_dae(cfg, masks, out)
    print(f"dae trained for {ckpt.epoch} epochs, final loss {ckpt.loss_history[-1]:.4f}; "
          f"saved to {out / 'dae'}")
    return 0


def cmd_train_unet(args) -> int:
    cfg = _config(args)
    out = _out(args, "checkpoints")
    names = [name for name, _ in unet_stages(cfg, load_folds(cfg), out)]
    print(f"saved {len(names)} unet checkpoints under {out}: {', '.join(names)}")
    return 0


def cmd_train_rf(args) -> int:
    cfg = _config(args)
    folds = load_folds(cfg)
    model = train_rf([s.image for s in folds.train], [s.mask for s in folds.train], cfg.rf_config())
    out = save_rf(model, _out(args, "checkpoints") / "rf")
    print(f"random forest saved to {out}")
    return 0


def _is_rf(path: Path) -> bool:
    return (path / "model.json").exists()


def cmd_predict(args) -> int:
    model_dir = Path(args.model)
    out = _out(args, "predictions")
    paths = [Path(p) for p in args.images]
    images = [_read_image(p, not args.no_invert) for p in paths]
    if _is_rf(model_dir):
        model = load_rf(model_dir)
        probs = [predict_rf(model, img) for img in images]
    else:
        probs = predict_unet(load_unet(load_checkpoint(model_dir)), images)
    for path, prob in zip(paths, probs):
        np.save(out / f"{path.stem}.prob.npy", prob)
        write_mask_png(prob >= 0.5, out / f"{path.stem}.png")
    print(f"wrote {len(paths)} predictions to {out}")
    return 0


def cmd_postprocess(args) -> int:
    cfg = _config(args)
    paths = [Path(p) for p in args.inputs]
    if args.method == "post-dae":
        if not args.model:
            raise InvalidConfig("post-dae needs --model (a DAE checkpoint directory)")
        net = load_dae(load_checkpoint(args.model))
        masks = [read_mask_png(p) for p in paths]
        results = postprocess_batch(net, masks, cfg["dae"]["threshold"])
        stems = [p.stem for p in paths]
    else:
        if not args.image_dir:
            raise InvalidConfig("crf needs --image-dir holding the intensity image for each input")
        params = cfg.crf_params()
        results, stems = [], []
        for p in paths:
            stem = p.name.removesuffix(".prob.npy").removesuffix(p.suffix)
            prob = np.load(p) if p.suffix == ".npy" else read_mask_png(p).astype(float)
            candidates = sorted(Path(args.image_dir).glob(f"{stem}.*"))
            if not candidates:
                raise FileNotFoundError(f"no image named {stem}.* in {args.image_dir}")
            image = _read_image(candidates[0], not args.no_invert)
            results.append(crf_postprocess(image * 255.0, prob, params))
            stems.append(stem)
    out = _out(args, "postprocessed")
    for stem, mask in zip(stems, results):
        write_mask_png(mask, out / f"{stem}.png")
    print(f"wrote {len(results)} {args.method} masks to {out}")
    return 0


def cmd_evaluate(args) -> int:
    truth_dir, pred_dir = Path(args.truth), Path(args.pred)
    records = []
    for pred_path in sorted(pred_dir.glob("*.png")):
        truth_path = truth_dir / pred_path.name
        if not truth_path.exists():
            log.warning("no ground truth for %s", pred_path.name)
            continue
        records.append(EvalRecord.measure(
            pred_path.stem, args.method, args.stage, args.postproc,
            read_mask_png(truth_path), read_mask_png(pred_path), args.spacing,
        ))
    if not records:
        raise InvalidConfig(f"no matching mask pairs between {truth_dir} and {pred_dir}")
    text = records_to_csv(records)
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_experiment(args) -> int:
    cfg = _config(args)
    result = run_experiment(cfg, log_progress=lambda msg: print(msg, flush=True))
    print(format_report(result.report))
    print(f"artifacts in {result.output_dir}")
    return 0


def cmd_report(args) -> int:
    csv_path = Path(args.csv)
    out = Path(args.output) if args.output else csv_path.parent / "plots"
    plots = report_plots(csv_path, out)
    print(format_report(build_report(read_records(csv_path))))
    for name, info in plots.items():
        print(f"{name}: {info['path']}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration JSON")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration value (repeatable), e.g. dae.train.epochs=20")
    common.add_argument("--workers", type=int, help="worker threads for per-image work")
    common.add_argument("--seed", type=int, help="global random seed")
    common.add_argument("--output", help="output directory (or file, for evaluate)")
    common.add_argument("--no-invert", action="store_true",
                        help="keep raw JSRT polarity instead of mapping v to 4095 - v")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="postdae", description="Shape-prior post-processing experiments for binary segmentation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("import-jsrt", parents=[common], help="convert JSRT images and masks")
    p.add_argument("--images", required=True, help="directory of raw .IMG files")
    p.add_argument("--masks", required=True, help="directory of companion mask images")
    p.add_argument("--size", type=int, default=1024, help="mask resolution to store")
    p.set_defaults(func=cmd_import_jsrt)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic dataset")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(func=cmd_gen_synthetic)

    for name, func, helptext in (("train-dae", cmd_train_dae, "train the shape-prior DAE on masks"),
                                 ("train-unet", cmd_train_unet, "train the UNet baseline"),
                                 ("train-rf", cmd_train_rf, "train the random-forest baseline")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", parents=[common], help="segment images with a UNet or RF model")
    p.add_argument("--model", required=True, help="UNet checkpoint or RF model directory")
    p.add_argument("images", nargs="+", help="PNG or raw JSRT .IMG files")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("postprocess", parents=[common], help="apply Post-DAE or the dense CRF")
    p.add_argument("--method", choices=("post-dae", "crf"), default="post-dae")
    p.add_argument("--model", help="DAE checkpoint directory (post-dae)")
    p.add_argument("--image-dir", help="intensity images matched by file stem (crf)")
    p.add_argument("inputs", nargs="+", help="mask PNGs (post-dae) or .prob.npy maps (crf)")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", parents=[common], help="Dice/Hausdorff of predicted vs true masks")
    p.add_argument("--truth", required=True, help="directory of ground-truth mask PNGs")
    p.add_argument("--pred", required=True, help="directory of predicted mask PNGs (same names)")
    p.add_argument("--method", default="external")
    p.add_argument("--stage", default="final")
    p.add_argument("--postproc", default="none", choices=("none", "post-dae", "crf"))
    p.add_argument("--spacing", type=float, default=1.0, help="mm per pixel")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common], help="run the full comparison")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common], help="plots and summary from a results CSV")
    p.add_argument("csv", help="results.csv written by experiment or evaluate")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PostDAEError, FileNotFoundError) as exc:
        print(f"postdae {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
