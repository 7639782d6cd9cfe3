"""``shadoc`` command line: train, infer, eval, mask.

Exit codes: 0 success, 2 data error, 3 checkpoint error, 4 config error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from shadoc.checkpoint import CONFIG_KEY, decode_model_config, load_checkpoint, load_into_model, save_checkpoint
from shadoc.config import RunConfig
from shadoc.data import DatasetIndex, match_files
from shadoc.errors import (
    CheckpointMismatchError,
    ConfigError,
    DataError,
    DecodeError,
    FormatError,
    ShadocError,
)
from shadoc.imaging.image import Image, load_image, save_image
from shadoc.imaging.metrics import MetricReport, evaluate
from shadoc.imaging.otsu import otsu_prior
from shadoc.model import ShaDocFormer
from shadoc.training import restore, train

EXIT_OK, EXIT_DATA, EXIT_CKPT, EXIT_CONFIG = 0, 2, 3, 4
CHECKPOINT_NAME = "model.sdcf"
LOG_NAME = "train.log"
CONFIG_ECHO_PREFIX = "config "

log = logging.getLogger("shadoc")


def parse_config_echo(lines) -> RunConfig:
    """Rebuild the RunConfig echoed at the top of a training log."""
    values = {}
    for line in lines:
        if line.startswith(CONFIG_ECHO_PREFIX):
            key, _, value = line[len(CONFIG_ECHO_PREFIX):].partition(" = ")
            values[key.strip()] = value.strip()
    return RunConfig.from_dict(values)


def _rgb_float(img: Image) -> np.ndarray:
    f = img.to_float()
    return np.repeat(f, 3, axis=2) if img.channels == 1 else f


def load_model(ckpt_path: str | Path, config_path: str | Path | None = None) -> ShaDocFormer:
    """Rebuild the model recorded in a checkpoint (or the one a config describes)."""
    try:
        ckpt = load_checkpoint(ckpt_path)
    except (OSError, DecodeError, FormatError) as exc:
        raise CheckpointMismatchError(f"cannot read checkpoint {ckpt_path}: {exc}") from exc
    if config_path is not None:
        model_cfg = RunConfig.load(config_path).model
    elif CONFIG_KEY in ckpt:
        model_cfg = decode_model_config(ckpt[CONFIG_KEY])
    else:
        raise CheckpointMismatchError(f"{ckpt_path} carries no model config; pass --config")
    model = ShaDocFormer(model_cfg)
    load_into_model(model, ckpt)
    return model


def _write(img: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_image(Image(img), path)


def cmd_train(args) -> int:
    config_path = Path(args.config)
    config = RunConfig.load(config_path).resolve_paths(config_path.parent)
    if not config.data.train_dir:
        raise ConfigError("data.train_dir is required")
    train_set = DatasetIndex.discover(config.data.train_dir).load(config.data.resize)
    val_set = DatasetIndex.discover(config.data.val_dir).load(config.data.resize) if config.data.val_dir else None

    out_dir = Path(config.train.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / LOG_NAME, "w", encoding="utf-8") as fh:
        for key, value in RunConfig.load(config_path).items():
            fh.write(f"{CONFIG_ECHO_PREFIX}{key} = {value}\n")

        def on_log(line: str) -> None:
            fh.write(line + "\n")
            if "val_psnr" in line:
                log.info(line)

        result = train(config, train_set, val_set, on_log=on_log)
    save_checkpoint(result.checkpoint(), out_dir / CHECKPOINT_NAME)
    print(f"wrote {out_dir / CHECKPOINT_NAME} (final val_psnr={result.final_psnr:.4f})")
    return EXIT_OK


def cmd_infer(args) -> int:
    model = load_model(args.ckpt, args.config)
    image = load_image(args.inp)
    out, mask = restore(model, _rgb_float(image))
    _write(out, args.out)
    if args.emit_mask:
        _write(mask, args.emit_mask)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    names = match_files(pred_dir, gt_dir)
    if not names:
        raise DataError(f"no image pairs in {pred_dir} and {gt_dir}")
    reports = []
    for name in names:
        rep = evaluate(load_image(pred_dir / name), load_image(gt_dir / name))
        reports.append(rep)
        print(rep.format(name))
    scores = [r.psnr for r in reports]
    mean_psnr = math.inf if any(math.isinf(s) for s in scores) else float(np.mean(scores))
    mean = MetricReport(mean_psnr, float(np.mean([r.ssim for r in reports])), float(np.mean([r.rmse for r in reports])))
    print(mean.format("mean"))
    return EXIT_OK


def cmd_mask(args) -> int:
    image = load_image(args.inp)
    prior = otsu_prior(image)
    prefix = str(args.out_prefix)
    _write((prior * 255).astype(np.uint8), prefix + "_otsu.png")
    if args.ckpt:
        model = load_model(args.ckpt)
        if model.std is None:
            raise CheckpointMismatchError("checkpoint was trained without the shadow detector (model.use_std = false)")
        _, mask = restore(model, _rgb_float(image))
        _write(mask, prefix + "_soft.png")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shadoc", description="Document shadow removal")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a paired dataset")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="remove shadows from one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-mask", default=None)
    p.add_argument("--config", default=None, help="override the model config stored in the checkpoint")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask", help="write the Otsu prior (and soft mask with --ckpt)")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--ckpt", default=None)
    p.set_defaults(func=cmd_mask)
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CheckpointMismatchError):
        return EXIT_CKPT
    return EXIT_DATA


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if getattr(args, "ckpt", None) and not Path(args.ckpt).is_file():
            print(f"error: checkpoint not found: {args.ckpt}", file=sys.stderr)
            return EXIT_CKPT
        return args.func(args)
    except (ShadocError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
