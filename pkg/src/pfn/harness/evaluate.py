"""Checkpoint evaluation on synthetic (or exported) triplets.

Depth runs write ``eval_depth.csv`` with one row per frame, columns
``DEPTH_COLUMNS``, followed by a ``mean`` row. Segmentation runs write
``eval_segmentation.csv`` with per-frame pixel accuracy and mIoU plus a
dataset-level row built from the pooled confusion matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..arch import PfnModel
from ..depth import disparity_to_depth
from ..engine import Tensor, bilinear_resample, no_grad
from ..metrics import (
    DepthEvalReport,
    EvaluationError,
    confusion_matrix,
    depth_metrics,
    format_table,
    mean_reports,
    miou,
    reports_to_csv,
    tac_trc,
)
from . import plotting
from .checkpoint import Checkpoint, latest_checkpoint
from .config import TrainConfig
from .train import load_split

DEPTH_COLUMNS = ("frame",) + DepthEvalReport.COLUMNS + ("tac", "trc")
SEG_COLUMNS = ("frame", "pixel_accuracy", "miou")


@dataclass
class EvalResult:
    task: str
    rows: list[dict]
    summary: dict
    files: list[Path] = field(default_factory=list)

    def table(self) -> str:
        cols = DEPTH_COLUMNS if self.task == "depth" else SEG_COLUMNS
        return format_table(self.rows, cols)


def resolve_checkpoint(path: Path) -> Path:
    """Accept a checkpoint directory or a run directory (latest checkpoint)."""
    path = Path(path)
    if (path / "manifest.json").exists():
        return path
    latest = latest_checkpoint(path)
    if latest is None:
        raise FileNotFoundError(f"no checkpoint found under {path}")
    return latest


def load_model(checkpoint: Path | Checkpoint, config: TrainConfig | None = None) -> tuple[PfnModel, TrainConfig]:
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else Checkpoint.load(resolve_checkpoint(checkpoint))
    if config is not None:
        ck.check_compatible(config)
    cfg = config or ck.config
    model = PfnModel(cfg.model, seed=cfg.seed)
    model_params = {k: v for k, v in ck.params.items() if k in model.parameters}
    Checkpoint(ck.config, ck.iteration, model_params).restore(model.parameters, optimizer_state=False)
    return model, cfg


def _batched(model: PfnModel, images: np.ndarray, batch: int = 8) -> np.ndarray:
    outs = []
    with no_grad():
        for i in range(0, len(images), batch):
            outs.append(model(Tensor(images[i : i + batch].astype(np.float32)))[0].data)
    return np.concatenate(outs)


def predict_depth(model: PfnModel, images: np.ndarray, config: TrainConfig, out_hw=None) -> np.ndarray:
    """Finest-scale depth, upsampled to ``out_hw`` when it differs. Shape (N, H, W)."""
    out = _batched(model, images)
    _, depth = disparity_to_depth(out, config.loss.min_depth, config.loss.max_depth)
    depth = depth.data
    if out_hw is not None and tuple(depth.shape[-2:]) != tuple(out_hw):
        with no_grad():
            depth = bilinear_resample(Tensor(depth), *out_hw).data
    return depth[:, 0]


def predict_labels(model: PfnModel, images: np.ndarray, out_hw=None) -> np.ndarray:
    logits = _batched(model, images)
    if out_hw is not None and tuple(logits.shape[-2:]) != tuple(out_hw):
        with no_grad():
            logits = bilinear_resample(Tensor(logits), *out_hw).data
    return logits.argmax(axis=1)


def depth_rows(pred_t, pred_next, triplets, median_scaling: bool = True, cap: float = 80.0) -> tuple[list[dict], dict]:
    """Per-frame depth metrics and TAC/TRC from already computed predictions."""
    rows, reports, tacs, trcs = [], [], [], []
    for i, t in enumerate(triplets):
        rep = depth_metrics(pred_t[i], t.gt_depth, median_scaling=median_scaling, cap=cap)
        row = {"frame": t.index, **rep.to_dict()}
        try:
            tac, trc = tac_trc(pred_t[i], pred_next[i], t.gt_flow)
            row.update(tac=tac, trc=trc)
            tacs.append(tac)
            trcs.append(trc)
        except EvaluationError:
            row.update(tac="", trc="")
        rows.append(row)
        reports.append(rep)
    mean = {"frame": "mean", **mean_reports(reports).to_dict()}
    mean["tac"] = float(np.mean(tacs)) if tacs else ""
    mean["trc"] = float(np.mean(trcs)) if trcs else ""
    return rows + [mean], mean


def segmentation_rows(preds, triplets, num_classes: int) -> tuple[list[dict], dict]:
    rows = []
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(preds, triplets):
        _, m = miou(p, t.gt_labels, num_classes)
        rows.append({"frame": t.index, "pixel_accuracy": float((p == t.gt_labels).mean()), "miou": m})
        cm += confusion_matrix(p, t.gt_labels, num_classes)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    summary = {"frame": "all", "pixel_accuracy": float(tp.sum() / cm.sum()), "miou": float(np.nanmean(iou))}
    return rows + [summary], summary


def evaluate(
    checkpoint,
    triplets=None,
    config: TrainConfig | None = None,
    median_scaling: bool = True,
    out_dir: Path | None = None,
    split: str = "val",
) -> EvalResult:
    """Run the metric suite for a checkpoint; write CSV, JSON and a figure to ``out_dir``."""
    model, cfg = load_model(checkpoint, config)
    if triplets is None:
        triplets = load_split(cfg, split).triplets
    if not triplets:
        raise EvaluationError("no frames to evaluate")
    images = np.stack([t.target for t in triplets])
    hw = triplets[0].gt_depth.shape
    files = []
    if cfg.task == "depth":
        pred_t = predict_depth(model, images, cfg, hw)
        pred_next = predict_depth(model, np.stack([t.sources[1] for t in triplets]), cfg, hw)
        rows, summary = depth_rows(pred_t, pred_next, triplets, median_scaling)
        columns = DEPTH_COLUMNS
    else:
        pred_t = predict_labels(model, images, hw)
        rows, summary = segmentation_rows(pred_t, triplets, cfg.num_classes)
        columns = SEG_COLUMNS
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"eval_{cfg.task}.csv"
        csv_path.write_text(reports_to_csv(rows, columns))
        json_path = out_dir / f"eval_{cfg.task}.json"
        json_path.write_text(json.dumps({"median_scaling": median_scaling, "frames": len(triplets), **summary}, indent=2))
        fig_path = out_dir / f"eval_{cfg.task}.png"
        if cfg.task == "depth":
            plotting.depth_samples(images, pred_t, [t.gt_depth for t in triplets], fig_path)
        else:
            plotting.segmentation_samples(images, pred_t, [t.gt_labels for t in triplets], cfg.num_classes, fig_path)
        files = [csv_path, json_path, fig_path]
    return EvalResult(cfg.task, rows, summary, files)
