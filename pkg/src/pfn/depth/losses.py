"""Self-supervised depth objective: photometric reprojection with auto-masking
plus edge-aware smoothness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import (
    Tensor,
    UsageError,
    absolute,
    as_tensor,
    bilinear_resample,
    box_filter,
    clamp,
    downsample,
    exp_neg,
    getitem,
    mean,
    mean_spatial,
    min_over_list,
    no_grad,
)
from .geometry import CameraIntrinsics, RigidPose, disparity_to_depth, warp

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
# added to an invalid source's loss so it can never win the per-pixel minimum
INVALID_PENALTY = 1e3


@dataclass
class DepthLossConfig:
    alpha: float = 0.85
    gamma: float = 1e-3
    min_depth: float = 0.1
    max_depth: float = 100.0
    ssim_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0 < self.min_depth < self.max_depth:
            raise ValueError(f"need 0 < min_depth < max_depth, got {self.min_depth}, {self.max_depth}")


def ssim(a, b, window: int = 3) -> Tensor:
    """Per-pixel SSIM from ``window x window`` local statistics, clipped to [-1, 1]."""
    a, b = as_tensor(a), as_tensor(b)
    mu_a = box_filter(a, window)
    mu_b = box_filter(b, window)
    var_a = box_filter(a * a, window) - mu_a * mu_a
    var_b = box_filter(b * b, window) - mu_b * mu_b
    cov = box_filter(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return clamp(num / den, -1.0, 1.0)


def photometric_loss(target, synthesized, config: DepthLossConfig | None = None) -> Tensor:
    """``alpha * |a - b| + (1 - alpha) * (1 - SSIM) / 2``, channel-averaged to (N, 1, H, W).

    ``alpha`` weights the L1 term, as in the published loss.
    """
    cfg = config or DepthLossConfig()
    target, synthesized = as_tensor(target), as_tensor(synthesized)
    l1 = mean(absolute(target - synthesized), axis=1, keepdims=True)
    if cfg.alpha == 1.0:
        return l1
    dssim = mean((1 - ssim(target, synthesized, cfg.ssim_window)) * 0.5, axis=1, keepdims=True)
    return cfg.alpha * l1 + (1 - cfg.alpha) * dssim


@dataclass
class ReprojectionResult:
    loss_map: Tensor
    automask: np.ndarray
    warped_min: Tensor
    valid: np.ndarray
    winner: np.ndarray


def min_reprojection_automask(
    target,
    sources: Sequence,
    warped: Sequence,
    config: DepthLossConfig | None = None,
    valid_masks: Sequence[np.ndarray] | None = None,
) -> ReprojectionResult:
    """Per-pixel minimum over sources of the warped photometric loss, masked.

    A pixel survives when its best warped loss is strictly below the best
    loss of the unwarped sources (stationary pixels are dropped) and at least
    one source projects it inside the frame.
    """
    if not sources:
        raise UsageError("need at least one source frame")
    if len(sources) != len(warped):
        raise UsageError(f"{len(sources)} sources but {len(warped)} warped images")
    cfg = config or DepthLossConfig()
    target = as_tensor(target)
    warped_losses = []
    for k, w in enumerate(warped):
        loss = photometric_loss(target, w, cfg)
        if valid_masks is not None:
            loss = loss + (1.0 - valid_masks[k]) * INVALID_PENALTY
        warped_losses.append(loss)
    warped_min, winner = min_over_list(warped_losses)
    with no_grad():
        unwarped_min, _ = min_over_list([photometric_loss(target, as_tensor(s), cfg) for s in sources])
    automask = (warped_min.data < unwarped_min.data).astype(target.dtype)
    if valid_masks is not None:
        valid = np.max(np.stack(valid_masks), axis=0).astype(target.dtype)
    else:
        valid = np.ones_like(automask)
    loss_map = warped_min * (automask * valid)
    return ReprojectionResult(loss_map, automask, warped_min, valid, winner)


def smoothness_loss(disparity, image) -> Tensor:
    """Edge-aware first-order smoothness of the mean-normalised disparity."""
    disparity, image = as_tensor(disparity), as_tensor(image)
    norm = clamp(mean_spatial(disparity), 1e-7, None)
    d = disparity / norm
    dx = absolute(getitem(d, np.s_[..., :, 1:]) - getitem(d, np.s_[..., :, :-1]))
    dy = absolute(getitem(d, np.s_[..., 1:, :]) - getitem(d, np.s_[..., :-1, :]))
    img = image.data
    ix = np.abs(img[..., :, 1:] - img[..., :, :-1]).mean(axis=1, keepdims=True)
    iy = np.abs(img[..., 1:, :] - img[..., :-1, :]).mean(axis=1, keepdims=True)
    return mean(dx * exp_neg(Tensor(ix))) + mean(dy * exp_neg(Tensor(iy)))


@dataclass
class LossBreakdown:
    total: Tensor
    appearance: float
    photometric: float
    smoothness: float
    automask_fraction: float
    per_scale: list[float]


def total_loss(
    predictions: Sequence[Tensor],
    target,
    sources: Sequence,
    poses: Sequence[RigidPose],
    K: CameraIntrinsics,
    config: DepthLossConfig | None = None,
) -> LossBreakdown:
    """Multi-scale objective averaged over scales.

    Each scale's disparity is upsampled to full resolution for the
    reprojection term; smoothness is evaluated at the native scale and
    weighted by ``gamma / 2**scale_index``.

    ``photometric`` reports the unmasked best-source loss averaged over
    in-frame pixels, a reconstruction measure that the auto-mask cannot hide.
    """
    cfg = config or DepthLossConfig()
    if len(sources) != len(poses):
        raise UsageError(f"got {len(sources)} source frames but {len(poses)} poses")
    target = as_tensor(target)
    sources = [as_tensor(s) for s in sources]
    h, w = target.shape[-2:]
    terms, per_scale = [], []
    appearance = photometric = smooth_total = mask_frac = 0.0
    for i, pred in enumerate(predictions):
        disp, _ = disparity_to_depth(pred, cfg.min_depth, cfg.max_depth)
        disp_full = bilinear_resample(disp, h, w)
        depth = 1.0 / disp_full
        warped, masks = [], []
        for src, pose in zip(sources, poses):
            wimg, valid = warp(src, depth, pose, K)
            warped.append(wimg)
            masks.append(valid)
        rep = min_reprojection_automask(target, sources, warped, cfg, masks)
        app = mean(rep.loss_map)
        level = int(round(np.log2(w / pred.shape[-1])))
        smooth = smoothness_loss(disp, downsample(target, level))
        term = app + (cfg.gamma / 2 ** level) * smooth if cfg.gamma else app
        terms.append(term)
        per_scale.append(float(term.data))
        appearance += float(app.data)
        smooth_total += float(smooth.data)
        in_frame = rep.valid > 0
        photometric += float(rep.warped_min.data[in_frame].mean()) if in_frame.any() else 0.0
        mask_frac += float(rep.automask.mean())
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total = total / len(terms)
    k = len(terms)
    return LossBreakdown(total, appearance / k, photometric / k, smooth_total / k, mask_frac / k, per_scale)
