import numpy as np
import pytest

from pfn.depth import RigidPose, project
from pfn.synth import (
    GenerationError,
    SynthConfig,
    SyntheticScene,
    dataset,
    export_triplets,
    load_triplets,
    make_plane,
    random_scene,
    read_ppm,
    render_scene,
    scene_rng,
    write_ppm,
)

CFG = SynthConfig()
K = CFG.intrinsics()


def lateral_track(tx):
    step = np.array([tx, 0.0, 0.0])
    return [RigidPose(np.zeros(3), -step), RigidPose.identity(), RigidPose(np.zeros(3), step)]


class TestRenderScene:
    def test_static_track_zero_flow(self):
        trip = next(iter(dataset(SynthConfig(static=True), 1, seed=0)))
        assert np.all(trip.gt_flow.dx == 0) and np.all(trip.gt_flow.dy == 0)
        np.testing.assert_array_equal(trip.sources[0], trip.target)

    @pytest.mark.parametrize("d", [1.5, 4.0, 12.0])
    def test_single_plane_uniform_flow(self, d):
        t = 0.05
        scene = SyntheticScene([make_plane(d, None, K, 7, 0)], lateral_track(t), K, (64, 64))
        trip = render_scene(scene, 1)
        # camera moves +x, so the image content moves -x
        flow = trip.gt_flow
        assert flow.valid.sum() > 0.8 * 64 * 64
        np.testing.assert_allclose(flow.dx[flow.valid], -K.fx * t / d, atol=1e-9)
        np.testing.assert_allclose(flow.dy[flow.valid], 0.0, atol=1e-9)
        np.testing.assert_allclose(trip.gt_depth, d, rtol=1e-12)

    def test_two_plane_discontinuity_at_region_boundary(self):
        region = (20.5, -5.0, 70.0, 70.0)  # near patch covers columns 21.. of the reference view
        planes = [make_plane(10.0, None, K, 1, 0), make_plane(2.0, region, K, 2, 1)]
        trip = render_scene(SyntheticScene(planes, lateral_track(0.02), K, (64, 64)), 1)
        row, valid = trip.gt_flow.dx[32], trip.gt_flow.valid[32]
        assert valid[1:21].all()
        np.testing.assert_allclose(row[1:21], -K.fx * 0.02 / 10, atol=1e-9)
        np.testing.assert_allclose(row[21:][valid[21:]], -K.fx * 0.02 / 2, atol=1e-9)
        assert np.all(trip.gt_labels[32, :21] == 0) and np.all(trip.gt_labels[32, 21:] == 1)

    def test_camera_on_plane_rejected(self):
        track = [RigidPose(np.zeros(3), [0, 0, 5.0])] * 3
        scene = SyntheticScene([make_plane(5.0, None, K, 1, 0)], track, K, (64, 64))
        with pytest.raises(GenerationError):
            render_scene(scene, 1)

    def test_needs_neighbours(self):
        scene = random_scene(CFG, scene_rng(0, 0))
        with pytest.raises(GenerationError):
            render_scene(scene, 0)
        with pytest.raises(GenerationError):
            render_scene(scene, 2)

    def test_flow_agrees_with_warp_geometry(self):
        for trip in dataset(CFG, 6, seed=21):
            flow = trip.gt_flow
            x, y, _ = project(trip.gt_depth[None, None], trip.gt_poses[1], trip.intrinsics)
            h, w = trip.gt_depth.shape
            v, u = np.mgrid[0:h, 0:w]
            assert flow.valid.mean() > 0.5
            np.testing.assert_allclose((x.data[0] - u)[flow.valid], flow.dx[flow.valid], atol=1e-3)
            np.testing.assert_allclose((y.data[0] - v)[flow.valid], flow.dy[flow.valid], atol=1e-3)


class TestDataset:
    def test_reproducible(self):
        a = next(iter(dataset(CFG, 1, seed=9)))
        b = next(iter(dataset(CFG, 1, seed=9)))
        for x, y in [(a.target, b.target), (a.gt_depth, b.gt_depth), (a.sources[1], b.sources[1]), (a.gt_labels, b.gt_labels)]:
            assert x.tobytes() == y.tobytes()
        c = next(iter(dataset(CFG, 1, seed=10)))
        assert c.target.tobytes() != a.target.tobytes()

    def test_empty(self):
        assert list(dataset(CFG, 0)) == []

    def test_split_by_parity(self):
        assert [t.index for t in dataset(CFG, 5, split="train")] == [0, 2, 4]
        assert [t.index for t in dataset(CFG, 5, split="val")] == [1, 3]

    def test_depth_octaves_and_image_range(self):
        octaves = set()
        small = SynthConfig(height=16, width=16)
        for trip in dataset(small, 100, seed=0):
            assert trip.target.min() >= 0 and trip.target.max() <= 1
            assert all(s.min() >= 0 and s.max() <= 1 for s in trip.sources)
            assert trip.gt_depth.min() >= small.min_depth * 0.5 and np.isfinite(trip.gt_depth).all()
            octaves.update(np.floor(np.log2(trip.gt_depth / small.min_depth)).astype(int).ravel().tolist())
        assert len([o for o in octaves if 0 <= o < 4]) >= 3

    def test_shapes(self):
        trip = next(iter(dataset(SynthConfig(height=32, width=48), 1)))
        assert trip.target.shape == (3, 32, 48) and trip.gt_depth.shape == (32, 48)
        assert trip.gt_flow.dx.shape == (32, 48) and len(trip.gt_poses) == 2


class TestFiles:
    def test_ppm_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (3, 5, 7)) / 255.0
        write_ppm(tmp_path / "a.ppm", img)
        np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)

    def test_ppm_rejects_other_formats(self, tmp_path):
        (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValueError):
            read_ppm(tmp_path / "b.ppm")

    def test_export_load(self, tmp_path):
        trips = list(dataset(SynthConfig(height=16, width=16), 3, seed=2))
        loaded = load_triplets(export_triplets(trips, tmp_path))
        assert [t.index for t in loaded] == [0, 1, 2]
        for a, b in zip(trips, loaded):
            np.testing.assert_array_equal(a.gt_depth, b.gt_depth)
            np.testing.assert_array_equal(a.gt_flow.valid, b.gt_flow.valid)
            assert np.abs(a.target - b.target).max() <= 0.5 / 255 + 1e-12
            np.testing.assert_allclose(a.gt_poses[1].matrix(), b.gt_poses[1].matrix(), atol=1e-12)
            assert a.intrinsics == b.intrinsics
