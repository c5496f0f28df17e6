import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfn import engine as E
from pfn.engine import ConfigurationError, Tensor, UsageError


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


class TestForwardValues:
    def test_elementwise_match_numpy(self, rng, f64):
        a = rng.uniform(0.5, 2.0, (3, 4))
        b = rng.uniform(0.5, 2.0, (3, 4))
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose((ta + tb).data, a + b)
        np.testing.assert_allclose((ta - tb).data, a - b)
        np.testing.assert_allclose((ta * tb).data, a * b)
        np.testing.assert_allclose((ta / tb).data, a / b)
        np.testing.assert_allclose(E.power(ta, 1.5).data, a ** 1.5)
        np.testing.assert_allclose(E.log(ta).data, np.log(a))
        np.testing.assert_allclose(E.sqrt(ta).data, np.sqrt(a))
        np.testing.assert_allclose(E.exp_neg(ta).data, np.exp(-a))
        np.testing.assert_allclose(E.sigmoid(ta).data, 1 / (1 + np.exp(-a)))

    def test_sigmoid_is_stable_for_large_inputs(self, f64):
        out = E.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])
        assert np.isfinite(out).all()

    def test_broadcast_gradient_is_reduced(self, f64):
        a = leaf(np.ones((2, 3)))
        b = leaf(np.ones(3))
        E.sum_(a * b).backward()
        np.testing.assert_allclose(b.grad, [2, 2, 2])

    def test_log_softmax_rows_normalise(self, rng, f64):
        x = Tensor(rng.standard_normal((4, 5)))
        np.testing.assert_allclose(np.exp(E.log_softmax(x, axis=1).data).sum(axis=1), 1.0)

    def test_matmul_batched(self, rng, f64):
        a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
        np.testing.assert_allclose(E.matmul(Tensor(a), Tensor(b)).data, a @ b)

    def test_concat_single_input_is_identity(self):
        t = Tensor(np.ones((2, 2)))
        assert E.concat([t], axis=0) is t


class TestClamp:
    def test_values(self, f64):
        x = Tensor(np.array([-2.0, 0.5, 3.0]))
        np.testing.assert_allclose(E.clamp(x, 0.0, 1.0).data, [0.0, 0.5, 1.0])

    def test_gradient_zero_outside_interval(self, f64):
        x = leaf([-2.0, 0.5, 3.0])
        E.sum_(E.clamp(x, 0.0, 1.0)).backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 0.0])

    def test_nan_propagates(self):
        out = E.clamp(Tensor(np.array([np.nan, 1.0])), 0.0, 0.5).data
        assert np.isnan(out[0]) and out[1] == 0.5

    def test_inverted_bounds_raise(self):
        with pytest.raises(ConfigurationError):
            E.clamp(Tensor(np.ones(2)), 1.0, 0.0)


class TestMinOverList:
    def test_first_wins_ties(self, f64):
        a, b = leaf([1.0, 2.0]), leaf([1.0, 1.0])
        out, winner = E.min_over_list([a, b])
        np.testing.assert_array_equal(winner, [0, 1])
        E.sum_(out).backward()
        np.testing.assert_allclose(a.grad, [1.0, 0.0])
        np.testing.assert_allclose(b.grad, [0.0, 1.0])

    def test_empty_list_rejected(self):
        with pytest.raises(ConfigurationError):
            E.min_over_list([])

    def test_nan_preserved(self):
        out, _ = E.min_over_list([Tensor(np.array([np.nan])), Tensor(np.array([0.0]))])
        assert np.isnan(out.data[0])


class TestAutodiffMechanics:
    def test_shared_subexpression_accumulates(self, f64):
        x = leaf([3.0])
        y = x * x + x  # dy/dx = 2x + 1
        y.backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_deep_chain_does_not_recurse(self, f64):
        x = leaf([1.0])
        y = x
        for _ in range(5000):
            y = y + 0.0
        E.sum_(y).backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_no_grad_builds_no_graph(self, f64):
        x = leaf([1.0])
        with E.no_grad():
            y = x * 2
        assert not y.requires_grad

    def test_backward_needs_scalar(self, f64):
        with pytest.raises(UsageError):
            (leaf([1.0, 2.0]) * 2).backward()

    def test_default_dtype_context(self):
        with E.default_dtype(np.float64):
            assert Tensor(np.ones(1)).dtype == np.float64
        assert E.get_default_dtype() == np.float32


class TestGradientsByFiniteDifferences:
    @pytest.mark.parametrize(
        "name",
        [
            "add", "sub", "mul", "div", "neg", "power", "absolute", "relu", "sigmoid", "exp", "exp_neg", "log",
            "sqrt", "sin", "cos", "clamp", "sum", "mean", "mean_spatial", "reshape", "transpose", "getitem_slice",
            "getitem_fancy", "concat", "stack", "matmul", "log_softmax", "min_over_list",
        ],
    )
    def test_op(self, name):
        from pfn.harness.gradsuite import run_op_checks

        (res,) = run_op_checks(names=[name])
        assert res.max_rel_err < 1e-4, (name, res.max_rel_err)


finite = st.floats(-10, 10, allow_nan=False, width=64)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=finite), st.floats(-3, 3), st.floats(-3, 3))
    def test_gradient_is_linear_in_upstream(self, x, alpha, beta):
        # d/dx sum((alpha*u + beta*v) * f(x)) = alpha*grad_u + beta*grad_v
        u = np.linspace(-1, 1, 12).reshape(3, 4)
        v = np.cos(np.arange(12.0)).reshape(3, 4)

        def grad(weights):
            with E.default_dtype(np.float64):
                t = leaf(x)
                E.sum_(E.sin(t) * t * Tensor(weights)).backward()
                return t.grad

        np.testing.assert_allclose(grad(alpha * u + beta * v), alpha * grad(u) + beta * grad(v), atol=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, (2, 5), elements=finite))
    def test_repeated_backward_is_deterministic(self, x):
        grads = []
        for _ in range(2):
            t = leaf(x)
            E.sum_(E.log_softmax(t, axis=1) * Tensor(np.arange(10.0).reshape(2, 5))).backward()
            grads.append(t.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (4,), elements=finite), st.floats(-5, 0), st.floats(0, 5))
    def test_clamp_output_in_bounds(self, x, lo, hi):
        out = E.clamp(Tensor(x), lo, hi).data
        assert (out >= lo).all() and (out <= hi).all()
