"""Pinhole cameras, rigid poses and differentiable inverse warping."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..engine import (
    Tensor,
    as_tensor,
    clamp,
    cos,
    getitem,
    grid_sample,
    matmul,
    reshape,
    sin,
    sqrt,
    stack,
    sum_,
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def default_for(cls, height: int, width: int, fov_scale: float = 0.9) -> "CameraIntrinsics":
        # pixel centres sit at integer coordinates, so the optical axis is at (W-1)/2
        f = fov_scale * width
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix())

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the image resized by ``factor`` with half-pixel centres."""
        return CameraIntrinsics(
            self.fx * factor, self.fy * factor, (self.cx + 0.5) * factor - 0.5, (self.cy + 0.5) * factor - 0.5
        )


def axis_angle_to_matrix_np(rotation) -> np.ndarray:
    r = np.asarray(rotation, dtype=np.float64)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        return np.eye(3)
    k = r / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


def matrix_to_axis_angle_np(rot: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(rot) - 1) / 2, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta < 1e-12:
        return np.zeros(3)
    w = np.array([rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]])
    return theta * w / (2 * np.sin(theta))


@dataclass
class RigidPose:
    """Axis-angle rotation (radians) plus translation.

    Fields may be ``(3,)`` arrays for a single pose or ``(N, 3)`` tensors for
    a differentiable batch. A pose maps target-camera coordinates into the
    other camera: ``X' = R X + t``.
    """

    rotation: object
    translation: object

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, transform: np.ndarray) -> "RigidPose":
        return cls(matrix_to_axis_angle_np(transform[:3, :3]), np.array(transform[:3, 3], dtype=np.float64))

    def matrix(self) -> np.ndarray:
        """4x4 transform of a single (non-batched) pose."""
        rot = self.rotation.data if isinstance(self.rotation, Tensor) else self.rotation
        trans = self.translation.data if isinstance(self.translation, Tensor) else self.translation
        rot = np.asarray(rot, dtype=np.float64).reshape(-1, 3)[0]
        trans = np.asarray(trans, dtype=np.float64).reshape(-1, 3)[0]
        out = np.eye(4)
        out[:3, :3] = axis_angle_to_matrix_np(rot)
        out[:3, 3] = trans
        return out

    def inverse(self) -> "RigidPose":
        m = self.matrix()
        inv = np.eye(4)
        inv[:3, :3] = m[:3, :3].T
        inv[:3, 3] = -m[:3, :3].T @ m[:3, 3]
        return RigidPose.from_matrix(inv)

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self`` applied after ``other``."""
        return RigidPose.from_matrix(self.matrix() @ other.matrix())

    def batched(self, n: int, dtype) -> tuple[Tensor, Tensor]:
        """(N, 3) rotation and translation tensors."""
        return _as_batch(self.rotation, n, dtype), _as_batch(self.translation, n, dtype)


def _as_batch(value, n: int, dtype) -> Tensor:
    if isinstance(value, Tensor):
        if value.ndim == 1:
            value = reshape(value, (1, 3))
        return value
    arr = np.asarray(value, dtype=dtype).reshape(-1, 3)
    if arr.shape[0] == 1 and n > 1:
        arr = np.repeat(arr, n, axis=0)
    return Tensor(arr)


def rotation_matrix(axis_angle) -> Tensor:
    """Rodrigues' formula on an (N, 3) tensor, differentiable, -> (N, 3, 3)."""
    r = as_tensor(axis_angle)
    n = r.shape[0]
    theta_sq = sum_(r * r, axis=1, keepdims=True) + 1e-12
    theta = sqrt(theta_sq)
    a = sin(theta) / theta
    b = (1 - cos(theta)) / theta_sq
    rx, ry, rz = getitem(r, np.s_[:, 0:1]), getitem(r, np.s_[:, 1:2]), getitem(r, np.s_[:, 2:3])
    zero = Tensor(np.zeros((n, 1), dtype=r.dtype))
    skew = reshape(stack([zero, -rz, ry, rz, zero, -rx, -ry, rx, zero], axis=1), (n, 3, 3))
    eye = Tensor(np.broadcast_to(np.eye(3, dtype=r.dtype), (n, 3, 3)).copy())
    a3 = reshape(a, (n, 1, 1))
    b3 = reshape(b, (n, 1, 1))
    return eye + a3 * skew + b3 * matmul(skew, skew)


@lru_cache(maxsize=32)
def _pixel_rays(h: int, w: int, fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)]).reshape(3, h * w)


def project(depth, pose: RigidPose, K: CameraIntrinsics) -> tuple[Tensor, Tensor, Tensor]:
    """Source-frame pixel coordinates of every target pixel.

    Returns ``(x, y, z)`` each shaped (N, H, W); ``z`` is the depth in the
    source camera.
    """
    depth = as_tensor(depth)
    n, _, h, w = depth.shape
    rays = Tensor(_pixel_rays(h, w, K.fx, K.fy, K.cx, K.cy).astype(depth.dtype))
    points = reshape(depth, (n, 1, h * w)) * rays
    rot, trans = pose.batched(n, depth.dtype)
    cam = matmul(rotation_matrix(rot), points) + reshape(trans, (n, 3, 1))
    z = getitem(cam, np.s_[:, 2])
    z_safe = clamp(z, 1e-3, None)
    x = getitem(cam, np.s_[:, 0]) / z_safe * K.fx + K.cx
    y = getitem(cam, np.s_[:, 1]) / z_safe * K.fy + K.cy
    return reshape(x, (n, h, w)), reshape(y, (n, h, w)), reshape(z, (n, h, w))


def warp(source, depth_target, pose: RigidPose, K: CameraIntrinsics) -> tuple[Tensor, np.ndarray]:
    """Synthesize the target view by sampling ``source`` through the target depth.

    The mask is 1 where the projected point lies in front of the source
    camera and inside its frame (all four bilinear taps exist).
    """
    depth_target = as_tensor(depth_target)
    # NaN passes through so that the caller's non-finite check can name its source
    if np.any(depth_target.data <= 0):
        raise ValueError("warp needs strictly positive depth")
    source = as_tensor(source)
    n, _, h, w = source.shape
    x, y, z = project(depth_target, pose, K)
    # round-off in the back-projection can land border pixels a hair outside
    tol = 1e-4
    valid = (z.data > 1e-3) & (x.data >= -tol) & (x.data <= w - 1 + tol) & (y.data >= -tol) & (y.data <= h - 1 + tol)
    warped = grid_sample(source, x, y)
    return warped, valid[:, None].astype(source.dtype)


def disparity_to_depth(sigmoid_out, min_depth: float = 0.1, max_depth: float = 100.0) -> tuple[Tensor, Tensor]:
    """Map a (0, 1) network output to (disparity, depth) within [min_depth, max_depth]."""
    x = as_tensor(sigmoid_out)
    lo, hi = 1.0 / max_depth, 1.0 / min_depth
    disp = x * (hi - lo) + lo
    return disp, 1.0 / disp
