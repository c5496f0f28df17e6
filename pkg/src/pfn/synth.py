"""Procedural multi-plane scenes rendered under a pinhole camera.

Every scene comes with exact depth, relative poses, optical flow and labels.
Geometry here is plain numpy ray casting and deliberately does not reuse the
differentiable warp, so the two can check each other.

Colour encodes the scene: the red/green balance follows log-depth of the
world point and the blue channel follows the class label, on top of a
grey value-noise texture. That gives a single-image network something to
learn depth and labels from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .depth.geometry import CameraIntrinsics, RigidPose, axis_angle_to_matrix_np
from .metrics import FlowField


class GenerationError(ValueError):
    pass


@dataclass
class SynthConfig:
    height: int = 64
    width: int = 64
    min_depth: float = 1.0
    max_depth: float = 16.0
    min_planes: int = 2
    max_planes: int = 4
    slanted_prob: float = 0.3
    num_classes: int = 8
    track_length: int = 3
    translation: tuple[float, float] = (0.08, 0.2)
    max_rotation: float = 0.01
    texture_cell_px: float = 5.0
    texture_contrast: float = 0.3
    fov_scale: float = 0.9
    static: bool = False

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.default_for(self.height, self.width, self.fov_scale)


@dataclass
class Plane:
    """A textured planar patch in world coordinates.

    ``region`` is the (u0, v0, u1, v1) pixel box the patch covers in the
    reference view; ``None`` makes the plane unbounded.
    """

    depth: float
    texture_seed: int
    label: int
    region: tuple[float, float, float, float] | None
    tilt: tuple[float, float] = (0.0, 0.0)  # radians about the camera x and y axes
    origin: np.ndarray = field(default=None, repr=False)
    normal: np.ndarray = field(default=None, repr=False)
    basis: np.ndarray = field(default=None, repr=False)  # rows: in-plane axes e1, e2
    bounds: tuple[float, float, float, float] | None = field(default=None, repr=False)
    cell: float = 1.0


@dataclass
class SyntheticScene:
    planes: list[Plane]
    camera_track: list[RigidPose]  # camera-to-world
    intrinsics: CameraIntrinsics
    resolution: tuple[int, int]
    depth_range: tuple[float, float] = (1.0, 16.0)
    num_classes: int = 8
    texture_contrast: float = 0.3


@dataclass
class FrameTriplet:
    target: np.ndarray  # (3, H, W) in [0, 1]
    sources: list[np.ndarray]  # previous, next
    gt_depth: np.ndarray  # (H, W)
    gt_poses: list[RigidPose]  # target camera -> each source camera
    gt_flow: FlowField  # target -> next
    gt_labels: np.ndarray  # (H, W) int
    intrinsics: CameraIntrinsics
    index: int = 0


# -- planes ---------------------------------------------------------------------


def make_plane(
    depth: float,
    region,
    K: CameraIntrinsics,
    texture_seed: int,
    label: int,
    tilt=(0.0, 0.0),
    cell_px: float = 5.0,
) -> Plane:
    """Place a patch so that it covers ``region`` of the reference view at ``depth``."""
    plane = Plane(float(depth), int(texture_seed), int(label), None if region is None else tuple(map(float, region)), tuple(tilt))
    if region is None:
        center = np.array([0.0, 0.0, depth])
    else:
        u0, v0, u1, v1 = region
        uc, vc = (u0 + u1) / 2, (v0 + v1) / 2
        center = np.array([(uc - K.cx) / K.fx * depth, (vc - K.cy) / K.fy * depth, depth])
    rot = axis_angle_to_matrix_np([tilt[0], 0, 0]) @ axis_angle_to_matrix_np([0, tilt[1], 0])
    e1 = rot @ np.array([1.0, 0, 0])
    e2 = rot @ np.array([0, 1.0, 0])
    plane.origin = center
    plane.normal = np.cross(e1, e2)
    plane.basis = np.stack([e1, e2])
    if region is not None:
        u0, v0, u1, v1 = region
        half_w = (u1 - u0) / 2 / K.fx * depth
        half_h = (v1 - v0) / 2 / K.fy * depth
        plane.bounds = (-half_w, half_w, -half_h, half_h)
    # texture cells of roughly cell_px pixels when seen from the reference view
    plane.cell = cell_px * depth / K.fx
    return plane


# -- texture ----------------------------------------------------------------------


def _hash01(i: np.ndarray, j: np.ndarray, seed: int) -> np.ndarray:
    m = np.uint64(0xFFFFFFFF)
    s = np.uint64((seed * 2246822519) & 0xFFFFFFFF)
    with np.errstate(over="ignore"):
        x = (i.astype(np.int64).astype(np.uint64) * np.uint64(374761393) + j.astype(np.int64).astype(np.uint64) * np.uint64(668265263) + s) & m
        x = ((x ^ (x >> np.uint64(13))) * np.uint64(1274126177)) & m
    x = x ^ (x >> np.uint64(16))
    return (x & np.uint64(0xFFFFFF)).astype(np.float64) / float(0x1000000)


def value_noise(s: np.ndarray, t: np.ndarray, seed: int) -> np.ndarray:
    """Smooth lattice noise in [0, 1] with two octaves."""
    total = np.zeros_like(s)
    amp_sum = 0.0
    for octave, amp in ((1.0, 0.7), (2.0, 0.3)):
        x, y = s * octave, t * octave
        i, j = np.floor(x), np.floor(y)
        fx, fy = x - i, y - j
        fx, fy = fx * fx * (3 - 2 * fx), fy * fy * (3 - 2 * fy)
        sd = seed * 31 + int(octave)
        v00 = _hash01(i, j, sd)
        v10 = _hash01(i + 1, j, sd)
        v01 = _hash01(i, j + 1, sd)
        v11 = _hash01(i + 1, j + 1, sd)
        total += amp * ((v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy)
        amp_sum += amp
    return total / amp_sum


def depth_color(z: np.ndarray, depth_range: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = depth_range
    u = np.clip((np.log(z) - np.log(lo)) / (np.log(hi) - np.log(lo)), 0, 1)
    return 0.2 + 0.6 * u, 0.8 - 0.6 * u


def label_color(label: np.ndarray, num_classes: int) -> np.ndarray:
    return 0.15 + 0.7 * label / max(num_classes - 1, 1)


# -- ray casting --------------------------------------------------------------------


def _rays(scene: SyntheticScene, pose: RigidPose, pixels_u: np.ndarray, pixels_v: np.ndarray):
    K = scene.intrinsics
    c2w = pose.matrix()
    dirs_cam = np.stack([(pixels_u - K.cx) / K.fx, (pixels_v - K.cy) / K.fy, np.ones_like(pixels_u)], axis=-1)
    dirs = dirs_cam @ c2w[:3, :3].T
    return c2w[:3, 3], dirs


def cast(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit along each ray: (camera depth, plane index), inf / -1 on a miss.

    ``dirs`` have unit z in camera coordinates, so the ray parameter equals the
    depth along the camera axis.
    """
    best = np.full(dirs.shape[:-1], np.inf)
    which = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    for k, pl in enumerate(scene.planes):
        denom = dirs @ pl.normal
        offset = np.dot(pl.origin - origin, pl.normal)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = offset / denom
        hit = np.isfinite(lam) & (lam > 1e-9)
        if pl.bounds is not None:
            pts = origin + lam[..., None] * dirs
            local = (pts - pl.origin) @ pl.basis.T
            s0, s1, t0, t1 = pl.bounds
            hit &= (local[..., 0] >= s0) & (local[..., 0] <= s1) & (local[..., 1] >= t0) & (local[..., 1] <= t1)
        closer = hit & (lam < best)
        best = np.where(closer, lam, best)
        which = np.where(closer, k, which)
    return best, which


def _check_camera(scene: SyntheticScene, pose: RigidPose) -> None:
    origin = pose.matrix()[:3, 3]
    for pl in scene.planes:
        dist = abs(np.dot(origin - pl.origin, pl.normal))
        if dist < 1e-6:
            if pl.bounds is None:
                raise GenerationError("camera centre lies on a plane")
            local = (origin - pl.origin) @ pl.basis.T
            s0, s1, t0, t1 = pl.bounds
            if s0 <= local[0] <= s1 and t0 <= local[1] <= t1:
                raise GenerationError("camera centre lies on a plane")


def render_view(scene: SyntheticScene, pose: RigidPose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Image (3, H, W), camera depth (H, W) and labels (H, W) seen from ``pose``."""
    _check_camera(scene, pose)
    h, w = scene.resolution
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    origin, dirs = _rays(scene, pose, u, v)
    depth, which = cast(scene, origin, dirs)
    if (which < 0).any():
        raise GenerationError("some pixels see no plane; add a background plane")
    pts = origin + depth[..., None] * dirs
    img = np.zeros((3, h, w))
    labels = np.zeros((h, w), dtype=np.int64)
    for k, pl in enumerate(scene.planes):
        sel = which == k
        if not sel.any():
            continue
        local = (pts[sel] - pl.origin) @ pl.basis.T
        noise = value_noise(local[:, 0] / pl.cell, local[:, 1] / pl.cell, pl.texture_seed)
        # colour follows the world point's depth in the reference frame, so it is fixed to the surface
        r, g = depth_color(pts[sel][:, 2], scene.depth_range)
        b = np.full_like(r, label_color(pl.label, scene.num_classes))
        grey = scene.texture_contrast * (noise - 0.5)
        img[0][sel], img[1][sel], img[2][sel] = r + grey, g + grey, b + grey
        labels[sel] = pl.label
    return np.clip(img, 0.0, 1.0), depth, labels


def relative_pose(scene: SyntheticScene, src: int, dst: int) -> RigidPose:
    """Transform taking camera ``src`` coordinates into camera ``dst`` coordinates."""
    m_src = scene.camera_track[src].matrix()
    m_dst = scene.camera_track[dst].matrix()
    return RigidPose.from_matrix(np.linalg.inv(m_dst) @ m_src)


def analytic_flow(scene: SyntheticScene, src: int, dst: int) -> FlowField:
    """Pixel displacement of every surface point from view ``src`` to view ``dst``.

    Valid where the point is in front of ``dst``, lands inside its frame and
    is not occluded there.
    """
    h, w = scene.resolution
    K = scene.intrinsics
    if np.array_equal(scene.camera_track[src].matrix(), scene.camera_track[dst].matrix()):
        return FlowField.zeros(h, w)
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    origin, dirs = _rays(scene, scene.camera_track[src], u, v)
    depth, _ = cast(scene, origin, dirs)
    pts = origin + depth[..., None] * dirs
    c2w = scene.camera_track[dst].matrix()
    cam = (pts - c2w[:3, 3]) @ c2w[:3, :3]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u2 = K.fx * cam[..., 0] / z + K.cx
        v2 = K.fy * cam[..., 1] / z + K.cy
    valid = (z > 1e-6) & (u2 >= 0) & (u2 <= w - 1) & (v2 >= 0) & (v2 <= h - 1)
    # occlusion: the first surface along the ray from dst must be this point
    dst_origin = c2w[:3, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        dirs2 = (cam / z[..., None]) @ c2w[:3, :3].T
    dirs2 = np.where(np.isfinite(dirs2), dirs2, 0.0)
    seen, _ = cast(scene, dst_origin, dirs2)
    valid &= np.abs(seen - z) <= 1e-6 * np.maximum(z, 1.0)
    dx = np.where(valid, u2 - u, 0.0)
    dy = np.where(valid, v2 - v, 0.0)
    return FlowField(dx, dy, valid)


def render_scene(scene: SyntheticScene, frame_index: int) -> FrameTriplet:
    """Target ``frame_index`` with its previous and next frames as sources."""
    n = len(scene.camera_track)
    if not 1 <= frame_index or frame_index + 1 >= n:
        raise GenerationError(f"frame_index {frame_index} needs a neighbour on both sides (track length {n})")
    views = [render_view(scene, scene.camera_track[i]) for i in (frame_index - 1, frame_index, frame_index + 1)]
    target, depth, labels = views[1]
    return FrameTriplet(
        target=target,
        sources=[views[0][0], views[2][0]],
        gt_depth=depth,
        gt_poses=[relative_pose(scene, frame_index, frame_index - 1), relative_pose(scene, frame_index, frame_index + 1)],
        gt_flow=analytic_flow(scene, frame_index, frame_index + 1),
        gt_labels=labels,
        intrinsics=scene.intrinsics,
    )


# -- scene sampling ---------------------------------------------------------------


def random_scene(config: SynthConfig, rng: np.random.Generator) -> SyntheticScene:
    cfg = config
    K = cfg.intrinsics()
    h, w = cfg.height, cfg.width
    lo, hi = np.log(cfg.min_depth), np.log(cfg.max_depth)
    planes = [make_plane(cfg.max_depth, None, K, int(rng.integers(1 << 30)), int(rng.integers(cfg.num_classes)), cell_px=cfg.texture_cell_px)]
    count = int(rng.integers(cfg.min_planes, cfg.max_planes + 1))
    # nearer patches later so they are not fully hidden
    depths = np.sort(np.exp(rng.uniform(lo, hi, size=count)))[::-1]
    for d in depths:
        bw, bh = rng.uniform(0.25, 0.6) * w, rng.uniform(0.25, 0.6) * h
        u0, v0 = rng.uniform(-0.1 * w, w - 0.9 * bw), rng.uniform(-0.1 * h, h - 0.9 * bh)
        tilt = (0.0, 0.0)
        if rng.random() < cfg.slanted_prob:
            tilt = tuple(rng.uniform(-0.5, 0.5, size=2))
        planes.append(
            make_plane(
                d, (u0, v0, u0 + bw, v0 + bh), K, int(rng.integers(1 << 30)), int(rng.integers(cfg.num_classes)), tilt, cfg.texture_cell_px
            )
        )
    track = random_track(cfg, rng)
    return SyntheticScene(planes, track, K, (h, w), (cfg.min_depth, cfg.max_depth), cfg.num_classes, cfg.texture_contrast)


def random_track(config: SynthConfig, rng: np.random.Generator) -> list[RigidPose]:
    """Constant-velocity camera track whose middle frame is the world origin."""
    n = config.track_length
    if config.static:
        step = np.eye(4)
    else:
        lo, hi = config.translation
        t = np.array([rng.choice([-1, 1]) * rng.uniform(lo, hi), rng.uniform(-0.2, 0.2) * lo, rng.uniform(-0.5, 0.5) * hi])
        rot = rng.uniform(-config.max_rotation, config.max_rotation, size=3)
        step = RigidPose(rot, t).matrix()
    mid = n // 2
    return [RigidPose.from_matrix(np.linalg.matrix_power(step, i - mid) if i >= mid else np.linalg.inv(np.linalg.matrix_power(step, mid - i))) for i in range(n)]


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def dataset(config: SynthConfig, count: int, seed: int = 0, split: str | None = None) -> Iterator[FrameTriplet]:
    """Reproducible triplets; ``split`` keeps even (train) or odd (val) indices."""
    for i in range(count):
        if split == "train" and i % 2:
            continue
        if split == "val" and i % 2 == 0:
            continue
        scene = random_scene(config, scene_rng(seed, i))
        triplet = render_scene(scene, config.track_length // 2)
        triplet.index = i
        yield triplet


# -- files ------------------------------------------------------------------------


def write_ppm(path: Path, image: np.ndarray) -> None:
    """Binary P6 from a (3, H, W) float image in [0, 1]."""
    arr = (np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return pixels.transpose(2, 0, 1).astype(np.float64) / maxval


def export_triplets(triplets, out_dir: Path) -> Path:
    """Write each triplet as PPM frames plus ``.npy`` ground truth and a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in triplets:
        stem = f"{t.index:05d}"
        names = {"target": f"{stem}_t.ppm", "prev": f"{stem}_prev.ppm", "next": f"{stem}_next.ppm"}
        write_ppm(out_dir / names["target"], t.target)
        write_ppm(out_dir / names["prev"], t.sources[0])
        write_ppm(out_dir / names["next"], t.sources[1])
        np.save(out_dir / f"{stem}_depth.npy", t.gt_depth)
        np.save(out_dir / f"{stem}_labels.npy", t.gt_labels)
        np.save(out_dir / f"{stem}_flow.npy", np.stack([t.gt_flow.dx, t.gt_flow.dy, t.gt_flow.valid.astype(np.float64)]))
        K = t.intrinsics
        entries.append(
            {
                "index": t.index,
                "frames": names,
                "depth": f"{stem}_depth.npy",
                "labels": f"{stem}_labels.npy",
                "flow": f"{stem}_flow.npy",
                "intrinsics": [K.fx, K.fy, K.cx, K.cy],
                "poses": [
                    {"rotation": np.asarray(p.rotation, dtype=float).tolist(), "translation": np.asarray(p.translation, dtype=float).tolist()}
                    for p in t.gt_poses
                ],
            }
        )
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"format": "pfn-triplets/1", "triplets": entries}, indent=2))
    return manifest


def load_triplets(manifest_path: Path) -> list[FrameTriplet]:
    """Read a manifest written by :func:`export_triplets`.

    Images are quantised to 8 bits on export; ground-truth arrays are exact.
    Missing ``depth``/``labels``/``flow`` entries are allowed for real footage.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    meta = json.loads(manifest_path.read_text())
    out = []
    for e in meta["triplets"]:
        frames = e["frames"]
        target = read_ppm(root / frames["target"])
        h, w = target.shape[1:]
        flow = None
        if e.get("flow"):
            f = np.load(root / e["flow"])
            flow = FlowField(f[0], f[1], f[2] > 0.5)
        out.append(
            FrameTriplet(
                target=target,
                sources=[read_ppm(root / frames["prev"]), read_ppm(root / frames["next"])],
                gt_depth=np.load(root / e["depth"]) if e.get("depth") else np.zeros((h, w)),
                gt_poses=[RigidPose(np.array(p["rotation"]), np.array(p["translation"])) for p in e.get("poses", [])],
                gt_flow=flow if flow is not None else FlowField.zeros(h, w),
                gt_labels=np.load(root / e["labels"]) if e.get("labels") else np.zeros((h, w), dtype=np.int64),
                intrinsics=CameraIntrinsics(*e["intrinsics"]),
                index=int(e["index"]),
            )
        )
    return out
