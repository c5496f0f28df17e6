import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfn.metrics import (
    DepthEvalReport,
    EvaluationError,
    FlowField,
    depth_metrics,
    format_table,
    mean_reports,
    miou,
    reports_to_csv,
    tac_trc,
)
from pfn.depth import RigidPose
from pfn.synth import SynthConfig, SyntheticScene, make_plane, render_scene, render_view


def depth_oracle(p, g):
    r = np.maximum(p / g, g / p)
    return dict(
        abs_rel=np.mean(np.abs(p - g) / g),
        sq_rel=np.mean((p - g) ** 2 / g),
        rmse=np.sqrt(np.mean((p - g) ** 2)),
        rmse_log=np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2)),
        delta1=np.mean(r < 1.25),
        delta2=np.mean(r < 1.25 ** 2),
        delta3=np.mean(r < 1.25 ** 3),
    )


class TestDepthMetrics:
    def test_perfect(self, rng):
        gt = rng.uniform(1, 50, (8, 8))
        rep = depth_metrics(gt, gt, median_scaling=False)
        assert rep.abs_rel == 0 and rep.rmse == 0 and rep.delta1 == 1
        assert rep.pixel_count == 64

    def test_double_prediction(self, rng):
        gt = rng.uniform(1, 30, (8, 8))
        rep = depth_metrics(2 * gt, gt, median_scaling=False)
        assert rep.abs_rel == pytest.approx(1.0)
        assert rep.delta3 == 0.0  # ratio 2 > 1.25**3 = 1.953

    def test_double_prediction_median_scaled(self, rng):
        gt = rng.uniform(1, 30, (8, 8))
        rep = depth_metrics(2 * gt, gt, median_scaling=True)
        assert rep.abs_rel == pytest.approx(0.0, abs=1e-12) and rep.delta1 == 1.0

    def test_matches_oracle(self, rng):
        gt = rng.uniform(1, 30, (16, 16))
        pred = gt * rng.uniform(0.6, 1.6, gt.shape)
        rep = depth_metrics(pred, gt, median_scaling=False)
        for k, v in depth_oracle(pred, gt).items():
            assert getattr(rep, k) == pytest.approx(v, rel=1e-12)

    def test_cap_and_mask(self, rng):
        gt = np.full((4, 4), 10.0)
        pred = np.full((4, 4), 10.0)
        pred[0, 0] = 500.0
        mask = np.ones((4, 4), bool)
        rep = depth_metrics(pred, gt, median_scaling=False)
        assert rep.abs_rel == pytest.approx((80 - 10) / 10 / 16)
        mask[0, 0] = False
        assert depth_metrics(pred, gt, mask, median_scaling=False).abs_rel == 0
        assert depth_metrics(pred, gt, mask, median_scaling=False).pixel_count == 15

    def test_empty_valid_set(self):
        with pytest.raises(EvaluationError):
            depth_metrics(np.ones((2, 2)), np.zeros((2, 2)))

    def test_perturbation_monotone(self, rng):
        gt = rng.uniform(1, 30, (16, 16))
        base = depth_metrics(gt, gt, median_scaling=False)
        for scale in (0.02, 0.2, 0.6):
            pert = depth_metrics(gt * np.exp(scale * rng.standard_normal(gt.shape)), gt, median_scaling=False)
            assert pert.abs_rel > base.abs_rel and pert.rmse > base.rmse
            assert pert.delta1 <= base.delta1 and pert.delta2 <= base.delta2 and pert.delta3 <= base.delta3

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.1, 2.0))
    def test_delta_ordering(self, seed, spread):
        r = np.random.default_rng(seed)
        gt = r.uniform(1, 50, (6, 6))
        rep = depth_metrics(gt * np.exp(spread * r.standard_normal(gt.shape)), gt, median_scaling=bool(seed % 2))
        assert 0 <= rep.delta1 <= rep.delta2 <= rep.delta3 <= 1
        assert all(np.isfinite(v) for v in rep.as_row())

    def test_mean_reports_pixel_weighted_counts(self):
        a = DepthEvalReport(0.1, 0.2, 1.0, 0.1, 0.9, 1.0, 1.0, 10)
        b = DepthEvalReport(0.3, 0.4, 2.0, 0.2, 0.5, 0.8, 1.0, 30)
        m = mean_reports([a, b])
        assert m.abs_rel == pytest.approx((0.1 * 10 + 0.3 * 30) / 40) and m.pixel_count == 40
        assert m.rmse == pytest.approx(np.sqrt((10 * 1.0 + 30 * 4.0) / 40))


class TestTemporal:
    def test_identical_zero_flow(self, rng):
        d = rng.uniform(1, 5, (8, 8))
        assert tac_trc(d, d, FlowField.zeros(8, 8)) == (0.0, 0.0)

    def test_one_vs_two(self):
        tac, trc = tac_trc(np.ones((6, 6)), np.full((6, 6), 2.0), FlowField.zeros(6, 6))
        assert tac == pytest.approx(1.0) and trc == pytest.approx(0.5)

    def test_shifted_by_integer_flow(self, rng):
        b = rng.uniform(1, 5, (8, 8))
        a = np.roll(b, -2, axis=1)
        flow = FlowField(np.full((8, 8), 2.0), np.zeros((8, 8)), np.ones((8, 8), bool))
        tac, _ = tac_trc(a, b, flow)
        assert tac == pytest.approx(0.0, abs=1e-12)

    def test_no_valid_flow(self):
        flow = FlowField(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4), bool))
        with pytest.raises(EvaluationError):
            tac_trc(np.ones((4, 4)), np.ones((4, 4)), flow)

    def test_exact_geometry_consistent(self):
        # lateral motion over fronto-parallel planes keeps each point's depth; shifts are 1, 2 and 4 px
        K = SynthConfig().intrinsics()
        planes = [make_plane(16.0, None, K, 1, 0), make_plane(8.0, (5.5, 5.5, 30.5, 30.5), K, 2, 1),
                  make_plane(4.0, (30.5, 20.5, 50.5, 45.5), K, 3, 2)]
        step = np.array([16.0 / K.fx, 0.0, 0.0])
        track = [RigidPose(np.zeros(3), -step), RigidPose.identity(), RigidPose(np.zeros(3), step)]
        scene = SyntheticScene(planes, track, K, (64, 64))
        trip = render_scene(scene, 1)
        _, next_depth, _ = render_view(scene, track[2])
        tac, trc = tac_trc(trip.gt_depth, next_depth, trip.gt_flow)
        assert trip.gt_flow.valid.mean() > 0.8
        assert tac < 1e-3 and 0 <= trc < 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_bounds(self, seed):
        r = np.random.default_rng(seed)
        a, b = r.uniform(0.1, 10, (2, 5, 5))
        flow = FlowField(r.uniform(-2, 2, (5, 5)), r.uniform(-2, 2, (5, 5)), np.ones((5, 5), bool))
        try:
            tac, trc = tac_trc(a, b, flow)
        except EvaluationError:
            return
        assert tac >= 0 and 0 <= trc < 1


class TestMiou:
    def test_perfect(self, rng):
        gt = rng.integers(0, 3, (8, 8))
        gt[0, :3] = [0, 1, 2]
        ious, m = miou(gt, gt, 3)
        assert ious == [1.0, 1.0, 1.0] and m == 1.0

    def test_half_half(self):
        gt = np.zeros((4, 4), int)
        gt[:, 2:] = 1
        ious, m = miou(np.zeros((4, 4), int), gt, 2)
        assert ious == [0.5, 0.0] and m == 0.25

    def test_all_ignored(self):
        with pytest.raises(EvaluationError):
            miou(np.zeros((3, 3)), np.full((3, 3), 255), 4)

    def test_ignore_excluded(self):
        gt = np.array([[0, 1], [255, 255]])
        pred = np.array([[0, 1], [1, 0]])
        assert miou(pred, gt, 2)[1] == 1.0

    def test_absent_class_skipped(self):
        gt = np.array([[0, 0], [1, 1]])
        ious, m = miou(gt, gt, 4)
        assert np.isnan(ious[2]) and m == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        gt, pred = r.integers(0, 5, (2, 6, 6))
        perm = r.permutation(5)
        assert miou(perm[pred], perm[gt], 5)[1] == pytest.approx(miou(pred, gt, 5)[1], abs=1e-12)


class TestReports:
    def test_csv_column_order(self):
        rep = DepthEvalReport(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 8)
        text = reports_to_csv([{"frame": 0, **rep.to_dict()}], ("frame",) + DepthEvalReport.COLUMNS)
        header, row = text.strip().split("\n")
        assert header == "frame,abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,pixel_count"
        assert row == "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,8"

    def test_table(self):
        out = format_table([{"a": 1.23456, "b": "x"}], ("a", "b"))
        assert "1.2346" in out and out.splitlines()[0].split() == ["a", "b"]
