"""Command-line entry point.

``varbgsub run`` processes one frame sequence.  Every option can come from
a flat ``key = value`` config file, from a command-line flag, or both;
flags override the file.  Exit code 0 on success, 2 with a one-line reason
on any configuration or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .imgio import ImageDecodeError
from .pipeline import MODELS, THRESHOLD_MODES, PipelineConfig, run
from .thresholding import ThresholdConfig

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def load_config_file(path: Path) -> dict[str, str]:
    """Parse a flat UTF-8 ``key = value`` file ('#' starts a comment)."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _parse_bool(text: str, key: str) -> bool:
    try:
        return _BOOL_VALUES[text.lower()]
    except KeyError:
        raise ValueError(f"invalid boolean for {key}: {text!r}") from None


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"invalid size {text!r}, expected HEIGHTxWIDTH like 576x704") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varbgsub",
        description="Streaming background subtraction with value-at-risk thresholding",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="process a frame sequence")
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--input", type=Path, help="directory of numbered input frames")
    p.add_argument("--gt", type=Path, help="directory of ground-truth masks")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--size", help="processing size as HEIGHTxWIDTH (default 576x704)")
    p.add_argument("--history", type=int, help="frame history length (default 50)")
    p.add_argument("--batch", type=int, help="training batch size (default 10)")
    p.add_argument("--vicinity", type=int, choices=(1, 3, 5), help="residual window side")
    p.add_argument("--threshold", choices=THRESHOLD_MODES, help="threshold mode")
    p.add_argument("--noise-rate", type=float, help="tolerated isolated-pattern rate")
    p.add_argument("--hard-threshold", type=int, help="hard lower threshold bound")
    p.add_argument("--scan-halfwidth", type=int, help="histogram window half-width")
    p.add_argument("--passes", type=int, help="passes over the sequence (default 3)")
    p.add_argument("--seed", type=int, help="initialization seed")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--bottleneck", type=int, help="bottleneck width (default 2048)")
    p.add_argument("--dump-backgrounds", action="store_true", default=None)
    p.add_argument("--dump-residuals", action="store_true", default=None)
    p.add_argument("--dump-histograms", action="store_true", default=None)
    p.add_argument("--checkpoint-load", type=Path)
    p.add_argument("--checkpoint-save", type=Path)
    p.add_argument("--skip-empty-masks", action="store_true", default=None)
    return parser


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    file_values = load_config_file(args.config) if args.config else {}

    def pick(flag_value, key: str, convert, default):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            return convert(file_values[key])
        return default

    height, width = 576, 704
    if args.size is not None:
        height, width = _parse_size(args.size)
    elif "size" in file_values:
        height, width = _parse_size(file_values["size"])

    input_dir = pick(args.input, "input", Path, None)
    if input_dir is None:
        raise ValueError("an input directory is required (--input or 'input' in the config file)")
    out_dir = pick(args.out, "out", Path, Path("out"))

    thresholds = ThresholdConfig(
        noise_rate=pick(args.noise_rate, "noise_rate", float, 0.0025),
        hard_threshold=pick(args.hard_threshold, "hard_threshold", int, 25),
        scan_halfwidth=pick(args.scan_halfwidth, "scan_halfwidth", int, 5),
    )
    return PipelineConfig(
        input_dir=input_dir,
        out_dir=out_dir,
        gt_dir=pick(args.gt, "gt", Path, None),
        model=pick(args.model, "model", str, "autoencoder"),
        height=height,
        width=width,
        history=pick(args.history, "history", int, 50),
        batch=pick(args.batch, "batch", int, 10),
        vicinity=pick(args.vicinity, "vicinity", int, 3),
        thresholds=thresholds,
        threshold_mode=pick(args.threshold, "threshold", str, "auto"),
        passes=pick(args.passes, "passes", int, 3),
        seed=pick(args.seed, "seed", int, 0),
        learning_rate=pick(args.lr, "lr", float, 1e-4),
        bottleneck=pick(args.bottleneck, "bottleneck", int, 2048),
        dump_backgrounds=pick(args.dump_backgrounds, "dump_backgrounds",
                              lambda s: _parse_bool(s, "dump_backgrounds"), False),
        dump_residuals=pick(args.dump_residuals, "dump_residuals",
                            lambda s: _parse_bool(s, "dump_residuals"), False),
        dump_histograms=pick(args.dump_histograms, "dump_histograms",
                             lambda s: _parse_bool(s, "dump_histograms"), False),
        checkpoint_load=pick(args.checkpoint_load, "checkpoint_load", Path, None),
        checkpoint_save=pick(args.checkpoint_save, "checkpoint_save", Path, None),
        skip_empty_masks=pick(args.skip_empty_masks, "skip_empty_masks",
                              lambda s: _parse_bool(s, "skip_empty_masks"), False),
    )


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _build_config(args)
        report = run(cfg)
    except (ValueError, ImageDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    mean_t = "-" if report.mean_threshold is None else f"{report.mean_threshold:.2f}"
    print(
        f"processed {report.frames} frames in {report.passes} pass(es); "
        f"{report.masks_written} masks -> {report.out_dir}; mean threshold {mean_t}"
    )
    if report.report is not None:
        o = report.report.overall
        print(
            f"scored {report.scored_frames} frames: "
            f"recall {o.recall:.5f}  precision {o.precision:.5f}  f1 {o.f1:.5f}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
