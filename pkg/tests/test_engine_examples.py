import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfn import engine as E
from pfn.engine import Parameter, Tensor, UsageError
from pfn.engine.serialize import SerializationError, from_bytes, read_tensor, to_bytes, write_tensor


class TestWorkedExamples:
    def test_conv_scalar_kernel(self, f64):
        out = E.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, 2.0)

    def test_conv_laplacian_kills_constant(self, f64):
        lap = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=float).reshape(3, 3, 1, 1)
        out = E.conv2d(Tensor(np.full((1, 1, 6, 6), 3.0)), Tensor(lap), padding=1).data
        np.testing.assert_array_equal(out[0, 0, 1:-1, 1:-1], 0.0)

    def test_avg_pool_block(self, f64):
        out = E.avg_pool2(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])))
        np.testing.assert_array_equal(out.data, [[[[2.5]]]])

    def test_avg_pool_gradient_quarter(self, f64):
        x = Tensor(np.ones((1, 1, 4, 4)), requires_grad=True)
        E.sum_(E.avg_pool2(x)).backward()
        np.testing.assert_array_equal(x.grad, 0.25)

    def test_bilinear_constant(self, f64):
        out = E.bilinear_resample(Tensor(np.full((1, 2, 3, 5), 7.0)), 8, 4)
        np.testing.assert_allclose(out.data, 7.0)

    def test_bilinear_half_pixel_example(self, f64):
        out = E.bilinear_resample(Tensor(np.array([[[[0.0, 1.0]]]])), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0, 0.25, 0.75, 1])

    def test_bilinear_preserves_interior_ramp(self, f64):
        # upsampling a linear ramp reproduces the ramp at interior output centres
        w = 8
        ramp = np.tile(np.arange(w, dtype=float), (4, 1))[None, None]
        up = E.bilinear_resample(Tensor(ramp), 8, 2 * w).data[0, 0, 0]
        centres = (np.arange(2 * w) + 0.5) / 2 - 0.5
        inner = (centres >= 0) & (centres <= w - 1)
        np.testing.assert_allclose(up[inner], centres[inner], atol=1e-6)

    def test_pool_then_upsample_shapes(self, f64):
        x = Tensor(np.ones((1, 1, 32, 32)))
        y = E.downsample(x, 3)
        assert y.shape[-2:] == (4, 4)
        assert E.bilinear_resample(y, 32, 32).shape[-2:] == (32, 32)

    def test_concat_slices(self, rng, f64):
        a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 3, 3, 3))
        out = E.concat_channels([Tensor(a), Tensor(b)]).data
        np.testing.assert_array_equal(out[:, :2], a)
        np.testing.assert_array_equal(out[:, 2:], b)

    def test_cws_one_hot_selects(self, rng, f64):
        xs = [Tensor(rng.standard_normal((1, 2, 3, 3))) for _ in range(3)]
        w = np.zeros((3, 2))
        w[1] = 1
        np.testing.assert_array_equal(E.channel_weighted_sum(xs, Tensor(w)).data, xs[1].data)

    def test_cws_weight_gradient_is_dot_product(self, rng, f64):
        xs = [rng.standard_normal((2, 2, 3, 3)) for _ in range(3)]
        up = rng.standard_normal((2, 2, 3, 3))
        w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
        E.sum_(E.channel_weighted_sum([Tensor(x) for x in xs], w) * Tensor(up)).backward()
        expected = np.array([[np.sum(x[:, c] * up[:, c]) for c in range(2)] for x in xs])
        np.testing.assert_allclose(w.grad, expected)

    def test_clamp_example(self):
        np.testing.assert_array_equal(E.clamp(Tensor(np.array([-1.0, 5.0, 1e6])), 0, 1e4).data, [0, 5, 1e4])

    def test_relu_gradient(self, f64):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        E.sum_(E.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_min_single_and_shifted(self, rng, f64):
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        out, _ = E.min_over_list([x])
        np.testing.assert_array_equal(out.data, x.data)
        y = Tensor(x.data + 1, requires_grad=True)
        out, win = E.min_over_list([x, y])
        E.sum_(out).backward()
        assert (win == 0).all()
        np.testing.assert_array_equal(x.grad, 1.0)
        assert y.grad is None or not y.grad.any()

    def test_mean_of_square_gradient(self, rng, f64):
        x = Tensor(rng.standard_normal(5), requires_grad=True)
        E.mean(x * x).backward()
        np.testing.assert_allclose(x.grad, 2 * x.data / 5)

    def test_backward_accumulates(self, f64):
        x = Tensor(np.ones(3), requires_grad=True)
        E.sum_(x).backward()
        E.sum_(x).backward()
        np.testing.assert_array_equal(x.grad, 2.0)


class TestLinearity:
    @settings(max_examples=15, deadline=None)
    @given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 10_000))
    def test_linear_ops(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 2, 4, 4))
        w = Tensor(rng.standard_normal((3, 3, 2, 2)))
        cw = Tensor(rng.standard_normal((2, 2)))
        other = Tensor(rng.standard_normal((1, 2, 4, 4)))
        ops = [
            lambda t: E.conv2d(t, w),
            lambda t: E.channel_weighted_sum([t, other * 0.0], cw),
            lambda t: E.concat_channels([t, t]),
            lambda t: E.bilinear_resample(t, 7, 3),
            lambda t: E.resample_to(t, 2, 2),
        ]
        with E.default_dtype(np.float64):
            for op in ops:
                lhs = op(Tensor(a * x + b * y)).data
                rhs = a * op(Tensor(x)).data + b * op(Tensor(y)).data
                np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_forward_is_deterministic(self, rng):
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((3, 3, 3, 4)).astype(np.float32)
        a = E.conv2d(Tensor(x), Tensor(w)).data
        b = E.conv2d(Tensor(x), Tensor(w)).data
        assert a.tobytes() == b.tobytes()


class TestAdam:
    def test_first_step_hand_evaluated(self, f64):
        p = Parameter(np.array([1.0]), dtype=np.float64)
        p.grad = np.array([0.5])
        E.adam_step([p], lr=0.1)
        m = 0.1 * 0.5
        v = 0.001 * 0.25
        m_hat, v_hat = m / 0.1, v / 0.001
        assert p.data[0] == pytest.approx(1.0 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), abs=1e-15)
        assert p.step_count == 1

    def test_two_steps_recurrence(self, f64):
        p = Parameter(np.array([0.0, 0.0]), dtype=np.float64)
        g = np.array([0.3, -2.0])
        for _ in range(2):
            p.grad = g.copy()
            E.adam_step([p], lr=0.01)
        np.testing.assert_allclose(p.adam_m, (1 - 0.9 ** 2) * g)
        np.testing.assert_allclose(p.adam_v, (1 - 0.999 ** 2) * g * g)

    def test_zero_grad_moves_nothing(self, f64):
        p = Parameter(np.array([2.0]), dtype=np.float64)
        p.grad = np.zeros(1)
        E.adam_step([p], lr=0.01)
        assert abs(p.data[0] - 2.0) < 0.01 * 1e-6

    def test_grads_untouched(self, f64):
        p = Parameter(np.array([2.0]), dtype=np.float64)
        p.grad = np.array([1.5])
        E.adam_step([p], lr=0.01)
        np.testing.assert_array_equal(p.grad, [1.5])

    def test_missing_grad_is_usage_error(self):
        with pytest.raises(UsageError):
            E.adam_step([Parameter(np.ones(2))], lr=0.1)

    def test_fresh_parameter_state(self):
        p = Parameter(np.ones((2, 2)))
        assert p.step_count == 0 and not p.adam_m.any() and not p.adam_v.any()


class TestClip:
    def _params(self, *grads):
        ps = []
        for g in grads:
            p = Parameter(np.zeros_like(g), dtype=np.float64)
            p.grad = np.array(g, dtype=np.float64)
            ps.append(p)
        return ps

    def test_small_norm_untouched(self):
        ps = self._params([0.3], [0.4])
        assert E.clip_global_grad_norm(ps, 1.0) == pytest.approx(0.5)
        np.testing.assert_array_equal(ps[0].grad, [0.3])

    def test_large_norm_scaled(self):
        ps = self._params([0.0, 4.0], [0.0])
        pre = [p.grad.copy() for p in ps]
        assert E.clip_global_grad_norm(ps, 1.0) == pytest.approx(4.0)
        assert E.global_grad_norm(ps) == pytest.approx(1.0, abs=1e-6)
        a = np.concatenate(pre)
        b = np.concatenate([p.grad for p in ps])
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) == pytest.approx(1.0, abs=1e-6)


class TestSerialization:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64, np.int64])
    def test_round_trip(self, rng, dtype):
        arr = (rng.standard_normal((2, 3, 4)) * 100).astype(dtype)
        back = from_bytes(to_bytes(arr))
        assert back.dtype == arr.dtype and back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()

    def test_header_layout(self):
        blob = to_bytes(np.array([[1.0, 2.0]], dtype=np.float32))
        assert blob[0] == 1 and blob[1] == 2
        assert np.frombuffer(blob[2:10], dtype="<u4").tolist() == [1, 2]
        assert np.frombuffer(blob[10:], dtype="<f4").tolist() == [1.0, 2.0]

    def test_scalar(self):
        assert from_bytes(to_bytes(np.float64(3.5))) == 3.5

    def test_stream_of_records(self, rng):
        buf = io.BytesIO()
        arrs = [rng.standard_normal(3), rng.standard_normal((2, 2)).astype(np.float32)]
        for a in arrs:
            write_tensor(buf, a)
        buf.seek(0)
        for a in arrs:
            np.testing.assert_array_equal(read_tensor(buf), a)

    def test_truncated_rejected(self):
        blob = to_bytes(np.ones(4))
        with pytest.raises(SerializationError):
            from_bytes(blob[:-3])

    def test_unsupported_dtype(self):
        with pytest.raises(SerializationError):
            to_bytes(np.ones(2, dtype=np.complex64))
