"""Streaming orchestration: per-frame processing, multi-pass runs, outputs.

A single step standardizes the incoming frame, pushes it into the frame
history, turns the optical flow against the previous frame into loss
weights, lets the background model update itself and emit reconstructions,
computes the residual map, thresholds it, and resizes the binary mask back
to the original frame size.  The very first frame of a stream has no flow
pair yet: it only seeds the history and yields an all-background mask so
that mask and input counts stay aligned for scoring.

A run performs N passes over the sequence; only the final pass emits masks
(and scores them when ground truth is available).  The frame history is
reset between passes while model parameters persist.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean

import numpy as np

from . import evaluation, network
from .bgmodels import make_model
from .evaluation import CDNET_POLICY, ConfusionCounts, confusion, gt_threshold, split_labels
from .flow import BlockMatchingFlow, weights_from_flow
from .imgio import load_frame, resize, write_mask_pgm, write_pgm
from .residual import residual_map
from .thresholding import (
    ThresholdConfig,
    alpha_of_threshold,
    apply_threshold,
    histogram_of_thresholds,
    residual_histogram,
    threshold_from_histogram,
    two_thirds_floor,
    write_histogram_csv,
)

FRAME_EXTENSIONS = {".pgm", ".png", ".jpg", ".jpeg"}
THRESHOLD_MODES = ("auto", "hard", "gt")
MODELS = ("autoencoder", "median")

_STEM_RE = re.compile(r"^(?P<prefix>\D*)(?P<digits>\d+)$")


@dataclass
class PipelineConfig:
    input_dir: Path
    out_dir: Path
    gt_dir: Path | None = None
    model: str = "autoencoder"
    height: int = 576
    width: int = 704
    history: int = 50
    batch: int = 10
    vicinity: int = 3
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    threshold_mode: str = "auto"
    passes: int = 3
    seed: int = 0
    learning_rate: float = network.DEFAULT_LR
    bottleneck: int = 2048
    dump_backgrounds: bool = False
    dump_residuals: bool = False
    dump_histograms: bool = False
    checkpoint_load: Path | None = None
    checkpoint_save: Path | None = None
    skip_empty_masks: bool = False
    flow_provider: object = None  # callable (prev, cur) -> FlowField; default block matching

    def validate(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")
        if self.passes < 1:
            raise ValueError(f"passes must be >= 1, got {self.passes}")
        if not 1 <= self.batch <= self.history:
            raise ValueError(f"need history >= batch >= 1, got {self.history} < {self.batch}")
        if self.vicinity not in (1, 3, 5):
            raise ValueError(f"vicinity must be one of 1, 3, 5, got {self.vicinity}")
        if self.model == "autoencoder" and (self.height % 16 or self.width % 16):
            raise ValueError(
                f"standard size {self.height}x{self.width} must be divisible by 16 "
                "for the autoencoder"
            )
        if self.threshold_mode == "gt" and self.gt_dir is None:
            raise ValueError("threshold mode 'gt' requires a ground-truth directory")
        if self.checkpoint_load is not None and self.model != "autoencoder":
            raise ValueError("checkpoints only apply to the autoencoder model")


@dataclass
class FrameDiagnostics:
    index: int
    threshold: int | None = None
    alpha: float | None = None
    loss: float | None = None
    fg_fraction: float | None = None
    steps: list[str] = field(default_factory=list)
    residuals: np.ndarray | None = None
    threshold_hist: np.ndarray | None = None
    residual_hist: np.ndarray | None = None
    background: np.ndarray | None = None


@dataclass
class StreamState:
    model: object
    prev: np.ndarray | None = None
    frame_index: int = 0
    pass_index: int = 1

    @property
    def history(self):
        return self.model.history

    def new_pass(self, pass_index: int) -> None:
        self.model.reset_history()
        self.prev = None
        self.frame_index = 0
        self.pass_index = pass_index


def init_state(cfg: PipelineConfig) -> StreamState:
    model = make_model(
        cfg.model,
        height=cfg.height,
        width=cfg.width,
        capacity=cfg.history,
        batch_size=cfg.batch,
        bottleneck=cfg.bottleneck,
        seed=cfg.seed,
        lr=cfg.learning_rate,
    )
    return StreamState(model=model)


def _standardize(frame: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    h, w = frame.shape
    if (h, w) == (cfg.height, cfg.width):
        return frame
    return resize(frame, cfg.width, cfg.height, "bilinear")


def _flow_weights(state: StreamState, std: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    provider = cfg.flow_provider or BlockMatchingFlow()
    return weights_from_flow(provider(state.prev, std))


def process_frame(
    state: StreamState,
    frame: np.ndarray,
    cfg: PipelineConfig,
    gt_labels: np.ndarray | None = None,
) -> tuple[np.ndarray, FrameDiagnostics]:
    """One full detection step; returns the original-size boolean mask.

    ``gt_labels`` (original size) is only consulted in 'gt' threshold mode.
    """
    orig_h, orig_w = frame.shape
    state.frame_index += 1
    diag = FrameDiagnostics(index=state.frame_index)
    std = _standardize(frame, cfg)
    diag.steps.append("standardize")
    state.model.ingest(std)
    diag.steps.append("history")
    if state.prev is None:
        state.prev = std
        return np.zeros((orig_h, orig_w), dtype=bool), diag
    wmap = _flow_weights(state, std, cfg)
    diag.steps.append("flow_weights")
    backgrounds = state.model.reconstruct_with_update(wmap)
    diag.steps.append("model_update")
    rmap = residual_map(std, backgrounds, cfg.vicinity)
    diag.steps.append("residual")
    res_hist = residual_histogram(rmap)
    t_hist = None
    if cfg.threshold_mode == "auto" or cfg.dump_histograms:
        t_hist = histogram_of_thresholds(rmap)
    if cfg.threshold_mode == "auto":
        t = threshold_from_histogram(t_hist, two_thirds_floor(rmap), rmap.size, cfg.thresholds)
    elif cfg.threshold_mode == "hard":
        t = cfg.thresholds.hard_threshold
    else:
        if gt_labels is None:
            raise ValueError("threshold mode 'gt' needs a ground-truth mask for every frame")
        gt_std = gt_labels if gt_labels.shape == std.shape else resize(
            gt_labels, cfg.width, cfg.height, "nearest"
        )
        fg, ign = split_labels(gt_std, CDNET_POLICY)
        t = gt_threshold(rmap, fg, ign)
    diag.steps.append("threshold")
    mask_std = apply_threshold(rmap, t)
    if mask_std.shape == (orig_h, orig_w):
        mask = mask_std
    else:
        mask = resize(np.where(mask_std, 255, 0).astype(np.uint8), orig_w, orig_h, "nearest") > 0
    diag.steps.append("mask_resize")
    state.prev = std
    diag.threshold = int(t)
    diag.alpha = alpha_of_threshold(res_hist, int(t))
    diag.loss = state.model.last_loss
    diag.fg_fraction = float(mask.mean())
    if cfg.dump_residuals:
        diag.residuals = rmap
    if cfg.dump_histograms:
        diag.threshold_hist = t_hist
        diag.residual_hist = res_hist
    if cfg.dump_backgrounds:
        diag.background = backgrounds[0]
    return mask, diag


def _training_step(state: StreamState, frame: np.ndarray, cfg: PipelineConfig) -> float | None:
    """Update-only step used on non-final passes (no detection output)."""
    state.frame_index += 1
    std = _standardize(frame, cfg)
    state.model.ingest(std)
    if state.prev is None:
        state.prev = std
        return None
    wmap = _flow_weights(state, std, cfg)
    state.model.reconstruct_with_update(wmap)
    state.prev = std
    return state.model.last_loss


def discover_frames(input_dir: Path) -> list[tuple[int, int, Path]]:
    """Sorted (number, digit_width, path) triples for the input sequence.

    Stems must end in a zero-padded digit run of uniform width; anything
    else is rejected so silently misordered sequences cannot happen.
    """
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise ValueError(f"input directory not found: {input_dir}")
    files = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS)
    if not files:
        raise ValueError(f"empty input directory: {input_dir}")
    entries = []
    widths = set()
    for p in files:
        m = _STEM_RE.match(p.stem)
        if not m:
            raise ValueError(f"frame name without a trailing frame number: {p.name}")
        digits = m.group("digits")
        widths.add(len(digits))
        entries.append((int(digits), len(digits), p))
    if len(widths) > 1:
        raise ValueError(
            f"inconsistent zero padding across frame names in {input_dir} "
            f"(digit widths {sorted(widths)})"
        )
    if len(entries) < 2:
        raise ValueError(f"need at least 2 frames, found {len(entries)} in {input_dir}")
    return entries


def _gt_index(gt_dir: Path) -> dict[int, Path]:
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise ValueError(f"ground-truth directory not found: {gt_dir}")
    index: dict[int, Path] = {}
    for p in sorted(gt_dir.iterdir()):
        if p.suffix.lower() not in FRAME_EXTENSIONS:
            continue
        m = _STEM_RE.match(p.stem)
        if m:
            index[int(m.group("digits"))] = p
    if not index:
        raise ValueError(f"no ground-truth frames in {gt_dir}")
    return index


def _infer_category_video(input_dir: Path) -> tuple[str, str]:
    p = Path(input_dir).resolve()
    if p.name.lower() == "input" and p.parent.name:
        return p.parent.parent.name or "default", p.parent.name
    return p.parent.name or "default", p.name


@dataclass
class ExitReport:
    frames: int
    passes: int
    masks_written: int
    scored_frames: int
    mean_threshold: float | None
    pass_first_losses: list[float | None]
    report: evaluation.Report | None
    out_dir: Path


def _fmt(value, spec: str = "{:.6f}") -> str:
    return "" if value is None else spec.format(value)


def run(cfg: PipelineConfig) -> ExitReport:
    """Process a sequence per the configured number of passes."""
    cfg.validate()
    frames = discover_frames(cfg.input_dir)
    gt_index = _gt_index(cfg.gt_dir) if cfg.gt_dir is not None else {}
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for flag, sub in (
        (cfg.dump_backgrounds, "backgrounds"),
        (cfg.dump_residuals, "residuals"),
        (cfg.dump_histograms, "histograms"),
    ):
        if flag:
            (out_dir / sub).mkdir(exist_ok=True)

    state = init_state(cfg)
    if cfg.checkpoint_load is not None:
        state.model.params = network.load_checkpoint(cfg.checkpoint_load)

    category, video = _infer_category_video(cfg.input_dir)
    pass_first_losses: list[float | None] = []
    diagnostics: list[tuple[int, FrameDiagnostics]] = []
    scores: list[tuple[int, ConfusionCounts]] = []
    masks_written = 0

    for pass_index in range(1, cfg.passes + 1):
        state.new_pass(pass_index)
        first_loss: float | None = None
        final = pass_index == cfg.passes
        for number, width, path in frames:
            frame = load_frame(path)
            if not final:
                loss = _training_step(state, frame, cfg)
                if first_loss is None and loss is not None:
                    first_loss = loss
                continue
            gt_labels = None
            if number in gt_index and (cfg.threshold_mode == "gt" or cfg.gt_dir is not None):
                gt_labels = load_frame(gt_index[number])
            mask, diag = process_frame(state, frame, cfg, gt_labels=gt_labels)
            if first_loss is None and diag.loss is not None:
                first_loss = diag.loss
            write_mask_pgm(out_dir / f"mask{number:0{width}d}.pgm", mask)
            masks_written += 1
            if diag.residuals is not None:
                write_pgm(out_dir / "residuals" / f"res{number:0{width}d}.pgm", diag.residuals)
            if diag.background is not None:
                write_pgm(out_dir / "backgrounds" / f"bg{number:0{width}d}.pgm", diag.background)
            if diag.threshold_hist is not None:
                write_histogram_csv(
                    out_dir / "histograms" / f"hist{number:0{width}d}.csv",
                    diag.threshold_hist,
                    diag.residual_hist,
                )
            diagnostics.append((number, diag))
            if gt_labels is not None:
                if cfg.skip_empty_masks and not mask.any():
                    continue
                scores.append((number, confusion(mask, gt_labels)))
        pass_first_losses.append(first_loss)

    if cfg.checkpoint_save is not None:
        network.save_checkpoint(state.model.params, cfg.checkpoint_save)

    with open(out_dir / "diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "threshold", "alpha", "loss", "fg_fraction"])
        for number, diag in diagnostics:
            writer.writerow(
                [
                    number,
                    "" if diag.threshold is None else diag.threshold,
                    _fmt(diag.alpha),
                    _fmt(diag.loss),
                    _fmt(diag.fg_fraction),
                ]
            )

    report = None
    if scores:
        with open(out_dir / "metrics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["category", "video", "frame", "tp", "fp", "tn", "fn",
                 "recall", "specificity", "fpr", "fnr", "precision", "f1"]
            )
            for number, counts in scores:
                rec = evaluation.metrics(counts)
                writer.writerow(
                    [category, video, number, counts.tp, counts.fp, counts.tn, counts.fn]
                    + [f"{getattr(rec, m):.6f}" for m in
                       ("recall", "specificity", "fpr", "fnr", "precision", "f1")]
                )
        report = evaluation.aggregate((category, video, c) for _n, c in scores)
        frame_range = f"{scores[0][0]}-{scores[-1][0]}"
        evaluation.write_summary_csv(
            out_dir / "summary.csv", report, {(category, video): frame_range}
        )

    thresholds = [d.threshold for _n, d in diagnostics if d.threshold is not None]
    return ExitReport(
        frames=len(frames),
        passes=cfg.passes,
        masks_written=masks_written,
        scored_frames=len(scores),
        mean_threshold=fmean(thresholds) if thresholds else None,
        pass_first_losses=pass_first_losses,
        report=report,
        out_dir=out_dir,
    )
