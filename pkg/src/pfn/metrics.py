"""Evaluation metrics: depth error suite, temporal consistency, mIoU.

None of these are differentiable; they work on plain numpy arrays (tensors
are unwrapped).
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .engine import Tensor


class EvaluationError(ValueError):
    pass


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


@dataclass
class DepthEvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    pixel_count: int

    COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "pixel_count")

    def as_row(self) -> list:
        return [getattr(self, c) for c in self.COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def depth_metrics(pred, gt, valid_mask=None, median_scaling: bool = True, cap: float = 80.0, min_depth: float = 1e-3) -> DepthEvalReport:
    """The standard seven depth errors over valid pixels.

    With ``median_scaling`` the prediction is first rescaled by
    ``median(gt) / median(pred)``; predictions are then clipped to
    ``[min_depth, cap]``.
    """
    pred, gt = _array(pred), _array(gt)
    if pred.shape != gt.shape:
        raise EvaluationError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt > 0 if valid_mask is None else (np.asarray(valid_mask, dtype=bool) & (gt > 0))
    if not valid.any():
        raise EvaluationError("no valid ground-truth pixels")
    p, g = pred[valid], gt[valid]
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, min_depth, cap)
    ratio = np.maximum(g / p, p / g)
    return DepthEvalReport(
        abs_rel=float(np.mean(np.abs(g - p) / g)),
        sq_rel=float(np.mean((g - p) ** 2 / g)),
        rmse=float(np.sqrt(np.mean((g - p) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(g) - np.log(p)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        pixel_count=int(valid.sum()),
    )


def mean_reports(reports: list[DepthEvalReport]) -> DepthEvalReport:
    """Pixel-weighted average of per-frame reports (RMSE terms pooled in squares)."""
    if not reports:
        raise EvaluationError("no reports to average")
    w = np.array([r.pixel_count for r in reports], dtype=np.float64)
    w /= w.sum()

    def avg(name):
        return float(sum(wi * getattr(r, name) for wi, r in zip(w, reports)))

    def rms(name):
        return float(np.sqrt(sum(wi * getattr(r, name) ** 2 for wi, r in zip(w, reports))))

    return DepthEvalReport(
        abs_rel=avg("abs_rel"),
        sq_rel=avg("sq_rel"),
        rmse=rms("rmse"),
        rmse_log=rms("rmse_log"),
        delta1=avg("delta1"),
        delta2=avg("delta2"),
        delta3=avg("delta3"),
        pixel_count=int(sum(r.pixel_count for r in reports)),
    )


@dataclass
class FlowField:
    dx: np.ndarray
    dy: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (self.dx.shape == self.dy.shape == self.valid.shape):
            raise ValueError("flow components and mask must share a shape")

    @classmethod
    def zeros(cls, h: int, w: int) -> "FlowField":
        return cls(np.zeros((h, w)), np.zeros((h, w)), np.ones((h, w), dtype=bool))


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(int), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(int), max(h - 2, 0))
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def tac_trc(pred_t, pred_t1, flow: FlowField) -> tuple[float, float]:
    """Temporal absolute / relative consistency between consecutive predictions.

    ``pred_t1`` is sampled at ``(x + dx, y + dy)`` to bring it into frame t;
    only flow-valid pixels landing inside frame t+1 count.
    """
    a, b = _array(pred_t).squeeze(), _array(pred_t1).squeeze()
    if a.ndim != 2 or a.shape != b.shape or a.shape != flow.dx.shape:
        raise EvaluationError(f"expected matching 2-D maps, got {a.shape}, {b.shape}, flow {flow.dx.shape}")
    h, w = a.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx, ty = xs + flow.dx, ys + flow.dy
    valid = flow.valid & (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    if not valid.any():
        raise EvaluationError("no pixels with valid flow")
    warped = _bilinear(b, tx, ty)
    diff = np.abs(a - warped)[valid]
    rel = diff / np.maximum(a, warped)[valid]
    return float(diff.mean()), float(rel.mean())


def confusion_matrix(pred_labels, gt_labels, num_classes: int, ignore_label: int = 255) -> np.ndarray:
    pred = np.asarray(pred_labels).reshape(-1).astype(np.int64)
    gt = np.asarray(gt_labels).reshape(-1).astype(np.int64)
    keep = gt != ignore_label
    pred, gt = pred[keep], gt[keep]
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def miou(pred_labels, gt_labels, num_classes: int, ignore_label: int = 255) -> tuple[list[float], float]:
    """Per-class IoU (NaN for classes absent from both maps) and their mean."""
    cm = confusion_matrix(pred_labels, gt_labels, num_classes, ignore_label)
    if cm.sum() == 0:
        raise EvaluationError("every pixel is ignored")
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    return [float(v) for v in iou], float(np.nanmean(iou))


def reports_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in columns})
    return buf.getvalue()


def format_table(rows: list[dict], columns) -> str:
    """Fixed-width text table for terminal output."""
    cells = [[str(c) for c in columns]]
    for row in rows:
        cells.append([_fmt(row.get(c, "")) for c in columns])
    widths = [max(len(r[i]) for r in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)

