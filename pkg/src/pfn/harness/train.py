"""Training loop for the depth and segmentation recipes.

Each run directory holds::

    config.ini        the resolved configuration
    metrics.csv       one row per step, columns METRIC_COLUMNS
    timing.csv        step, seconds (kept apart so metrics.csv is reproducible)
    checkpoints/      step_XXXXXX/ per saved iteration
    summary.json      final numbers
    training_curves.png
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..arch import PfnModel
from ..depth import PoseHead, RigidPose, total_loss
from ..engine import (
    Tensor,
    UsageError,
    adam_step,
    clip_global_grad_norm,
    log_softmax,
    sum_,
    zero_grad,
)
from ..synth import dataset
from . import plotting
from .checkpoint import Checkpoint, latest_checkpoint
from .config import TrainConfig, write_config_file

RUNS_ENV = "PFN_RUNS_DIR"
METRIC_COLUMNS = (
    "step",
    "lr",
    "loss",
    "appearance",
    "photometric",
    "smoothness",
    "automask_fraction",
    "pixel_accuracy",
    "grad_norm",
    "clipped",
)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, names: list[str]):
        self.step = step
        self.names = names
        super().__init__(f"non-finite loss at step {step}; offending tensors: {', '.join(names) or 'loss'}")


def runs_root() -> Path:
    return Path(os.environ.get(RUNS_ENV, "runs"))


def poly_lr(base_lr: float, iteration: int, max_iter: int, power: float = 0.9) -> float:
    """``base_lr * (1 - iteration / max_iter) ** power``, zero past the end."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if max_iter <= 0 or iteration >= max_iter:
        return 0.0
    return base_lr * (1.0 - iteration / max_iter) ** power


def downsample_labels(labels: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour label reduction by an integer factor."""
    if factor == 1:
        return labels
    off = factor // 2
    return labels[..., off::factor, off::factor]


def segmentation_loss(logits_per_scale, labels, ignore_label: int = 255) -> Tensor:
    """Pixel cross-entropy at every output scale, averaged across scales."""
    labels = np.asarray(labels)
    if not (labels != ignore_label).any():
        raise UsageError("every label is ignored")
    full_w = labels.shape[-1]
    total = None
    for logits in logits_per_scale:
        n, k, h, w = logits.shape
        lab = downsample_labels(labels, full_w // w)
        keep = lab != ignore_label
        if not keep.any():
            raise UsageError(f"every label is ignored at {h}x{w}")
        onehot = np.zeros((n, k, h, w), dtype=logits.dtype)
        idx = np.where(keep, lab, 0)
        np.put_along_axis(onehot, idx[:, None], 1.0, axis=1)
        onehot *= keep[:, None]
        nll = -sum_(log_softmax(logits, axis=1) * Tensor(onehot)) / float(keep.sum())
        total = nll if total is None else total + nll
    return total / len(logits_per_scale)


# -- data -------------------------------------------------------------------------


@dataclass
class TripletBatchSource:
    targets: np.ndarray  # (M, 3, H, W)
    sources: np.ndarray  # (M, 2, 3, H, W)
    rotations: np.ndarray  # (M, 2, 3)
    translations: np.ndarray  # (M, 2, 3)
    labels: np.ndarray  # (M, H, W)
    depths: np.ndarray  # (M, H, W)
    intrinsics: object
    triplets: list

    @classmethod
    def from_triplets(cls, triplets, dtype=np.float32) -> "TripletBatchSource":
        if not triplets:
            raise ValueError("empty dataset")
        return cls(
            np.stack([t.target for t in triplets]).astype(dtype),
            np.stack([np.stack(t.sources) for t in triplets]).astype(dtype),
            np.array([[np.asarray(p.rotation, dtype=np.float64) for p in t.gt_poses] for t in triplets], dtype=dtype),
            np.array([[np.asarray(p.translation, dtype=np.float64) for p in t.gt_poses] for t in triplets], dtype=dtype),
            np.stack([t.gt_labels for t in triplets]),
            np.stack([t.gt_depth for t in triplets]),
            triplets[0].intrinsics,
            list(triplets),
        )

    def __len__(self) -> int:
        return len(self.targets)


def load_split(config: TrainConfig, split: str) -> TripletBatchSource:
    count = config.train_count if split == "train" else config.val_count
    return TripletBatchSource.from_triplets(list(dataset(config.data, 2 * count, config.data_seed, split)))


def batch_indices(step: int, batch_size: int, size: int, seed: int) -> np.ndarray:
    """Dataset indices for ``step``: a fixed shuffled permutation per epoch."""
    out = []
    for pos in range(step * batch_size, (step + 1) * batch_size):
        epoch, offset = divmod(pos, size)
        perm = np.random.default_rng([seed, epoch]).permutation(size)
        out.append(perm[offset])
    return np.array(out)


# -- trainer ----------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Trainer:
    def __init__(self, config: TrainConfig, run_dir: Path, data: TripletBatchSource | None = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.model = PfnModel(config.model, seed=config.seed)
        self.pose_head = PoseHead(seed=config.seed) if config.task == "depth" and config.pose_source == "learned" else None
        self.params = dict(self.model.parameters)
        if self.pose_head is not None:
            self.params.update(self.pose_head.parameters)
        self.param_list = list(self.params.values())
        self.data = data if data is not None else load_split(config, "train")
        self.iteration = 0
        self.rows: list[dict] = []

    # -- one step --------------------------------------------------------------

    def lr_at(self, step: int) -> float:
        cfg = self.config
        if cfg.lr_schedule == "poly":
            return poly_lr(cfg.lr, step, cfg.max_iter)
        return cfg.lr

    def _batch(self, step: int):
        cfg = self.config
        idx = batch_indices(step, cfg.batch_size, len(self.data), cfg.seed)
        d = self.data
        target, sources, labels = d.targets[idx], d.sources[idx], d.labels[idx]
        if cfg.hflip:
            flip = np.random.default_rng([cfg.seed, step, 1]).random(len(idx)) < 0.5
            if cfg.task == "depth" and flip.any():
                raise UsageError("horizontal flip is only supported for segmentation")
            target = np.where(flip[:, None, None, None], target[..., ::-1], target)
            labels = np.where(flip[:, None, None], labels[..., ::-1], labels)
        return idx, np.ascontiguousarray(target), sources, labels

    def forward_loss(self, step: int):
        cfg = self.config
        idx, target, sources, labels = self._batch(step)
        preds = self.model(Tensor(target))
        if cfg.task == "segmentation":
            loss = segmentation_loss(preds, labels)
            acc = float((preds[0].data.argmax(axis=1) == labels).mean())
            return loss, {"pixel_accuracy": acc}, preds
        srcs = [sources[:, k] for k in range(sources.shape[1])]
        if self.pose_head is None:
            poses = [RigidPose(self.data.rotations[idx, k], self.data.translations[idx, k]) for k in range(len(srcs))]
        else:
            poses = [self.pose_head(Tensor(target), Tensor(s)) for s in srcs]
        br = total_loss(preds, target, srcs, poses, self.data.intrinsics, cfg.loss)
        extras = {
            "appearance": br.appearance,
            "photometric": br.photometric,
            "smoothness": br.smoothness,
            "automask_fraction": br.automask_fraction,
        }
        return br.total, extras, preds

    def step(self, step: int) -> dict:
        cfg = self.config
        zero_grad(self.param_list)
        loss, extras, preds = self.forward_loss(step)
        if not np.isfinite(loss.data).all():
            self._diverged(step, preds)
        loss.backward()
        norm = clip_global_grad_norm(self.param_list, cfg.grad_clip_max_norm)
        if not np.isfinite(norm):
            bad = [k for k, p in self.params.items() if p.grad is not None and not np.isfinite(p.grad).all()]
            raise TrainingDiverged(step, [f"{k}.grad" for k in bad])
        lr = self.lr_at(step)
        adam_step(self.param_list, lr, skip_missing=True)
        row = {"step": step, "lr": float(lr), "loss": float(loss.data), "grad_norm": float(norm),
               "clipped": int(norm > cfg.grad_clip_max_norm)}
        row.update(extras)
        return row

    def _diverged(self, step: int, preds) -> None:
        names = [k for k, p in self.params.items() if not np.isfinite(p.data).all()]
        names += [f"prediction.scale{i + 1}" for i, p in enumerate(preds) if not np.isfinite(p.data).all()]
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "diverged.json").write_text(json.dumps({"step": step, "tensors": names}, indent=2))
        raise TrainingDiverged(step, names)

    # -- run -------------------------------------------------------------------

    def save(self, metrics=None) -> Path:
        ck = Checkpoint.capture(self.config, self.iteration, self.params, metrics)
        return ck.save(self.run_dir / "checkpoints" / f"step_{self.iteration:06d}")

    def resume(self) -> bool:
        path = latest_checkpoint(self.run_dir)
        if path is None:
            return False
        ck = Checkpoint.load(path)
        ck.check_compatible(self.config)
        ck.restore(self.params)
        self.iteration = ck.iteration
        self.rows = [r for r in _read_rows(self.run_dir / "metrics.csv") if r["step"] < self.iteration]
        return True

    def run(self, resume: bool = False, progress=None) -> "TrainResult":
        cfg = self.config
        self.run_dir.mkdir(parents=True, exist_ok=True)
        if not (resume and self.resume()):
            self.rows = []
            self.iteration = 0
        write_config_file(cfg, self.run_dir / "config.ini")
        metrics_path = self.run_dir / "metrics.csv"
        timing_path = self.run_dir / "timing.csv"
        mode = "a" if self.rows else "w"
        _rewrite(metrics_path, self.rows)
        with open(metrics_path, "a", newline="") as mf, open(timing_path, mode, newline="") as tf:
            mw = csv.DictWriter(mf, METRIC_COLUMNS, lineterminator="\n")
            tw = csv.writer(tf, lineterminator="\n")
            if mode == "w":
                tw.writerow(["step", "seconds"])
            while self.iteration < cfg.max_iter:
                start = time.perf_counter()
                row = self.step(self.iteration)
                elapsed = time.perf_counter() - start
                self.rows.append(row)
                mw.writerow({k: _fmt(row.get(k, "")) for k in METRIC_COLUMNS})
                tw.writerow([self.iteration, f"{elapsed:.6f}"])
                self.iteration += 1
                if progress is not None:
                    progress(row)
                if cfg.checkpoint_every and self.iteration % cfg.checkpoint_every == 0 and self.iteration < cfg.max_iter:
                    mf.flush()
                    self.save()
        summary = summarize(self.rows)
        ckpt = self.save(summary)
        (self.run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
        if self.rows:
            plotting.training_curves(self.rows, self.run_dir / "training_curves.png")
        return TrainResult(self.run_dir, ckpt, self.rows, summary)


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint: Path
    rows: list[dict]
    summary: dict


def summarize(rows: list[dict]) -> dict:
    if not rows:
        return {"steps": 0}
    out = {"steps": len(rows), "final_loss": float(rows[-1]["loss"])}
    out["clipped_fraction"] = float(np.mean([int(r["clipped"]) for r in rows]))
    photo = [float(r["photometric"]) for r in rows if r.get("photometric") not in (None, "")]
    if photo:
        out["photometric_step20_avg"] = float(np.mean(photo[10:20] if len(photo) >= 20 else photo))
        out["photometric_final_avg"] = float(np.mean(photo[-10:]))
    return out


def _parse_row(raw: dict) -> dict:
    row = {}
    for k, v in raw.items():
        if v == "":
            continue
        row[k] = int(v) if k in ("step", "clipped") else float(v)
    return row


def _read_rows(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as f:
        return [_parse_row(r) for r in csv.DictReader(f)]


def _rewrite(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in METRIC_COLUMNS})


def train(config: TrainConfig, run_dir: Path | None = None, resume: bool = False, progress=None) -> TrainResult:
    run_dir = Path(run_dir) if run_dir is not None else runs_root() / f"{config.task}-{config.hash()}"
    return Trainer(config, run_dir).run(resume=resume, progress=progress)
