"""Finite-difference gradient checks over every differentiable op and a whole PFN.

Each case contracts the op output with a fixed random tensor so that every
output element contributes to the scalar being differentiated. Inputs are
drawn away from kinks (|x|, relu, clamp bounds, min ties) so that central
differences stay on one side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import engine as E
from ..arch import PfnConfig, PfnModel
from ..depth import CameraIntrinsics, RigidPose, photometric_loss, rotation_matrix, smoothness_loss, ssim, warp

OP_TOL = 1e-4
MODEL_TOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    checked: int
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _away_from_zero(rng, shape, lo=0.2, hi=1.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _leaf(arr):
    return E.Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def _unary(op, sample):
    def build(rng):
        x = _leaf(sample(rng))
        return _fixed(lambda: op(x)), [x], ["x"]

    return build


def _binary(op, sample_a, sample_b):
    def build(rng):
        a, b = _leaf(sample_a(rng)), _leaf(sample_b(rng))
        return _fixed(lambda: op(a, b)), [a, b], ["a", "b"]

    return build


def _fixed(make_out):
    """Wrap ``make_out`` so the contraction weights are drawn once."""
    state = {}

    def fn():
        out = make_out()
        if "w" not in state:
            state["w"] = E.Tensor(np.random.default_rng(7).standard_normal(out.shape))
        return E.sum_(out * state["w"])

    return fn


def _op_cases() -> list[tuple[str, Callable]]:
    pos = lambda rng: rng.uniform(0.5, 2.0, size=(3, 4))  # noqa: E731
    signed = lambda rng: _away_from_zero(rng, (3, 4))  # noqa: E731
    img = lambda rng, c=2, h=6, w=6: rng.uniform(0.1, 0.9, size=(2, c, h, w))  # noqa: E731

    cases = [
        ("add", _binary(E.add, signed, lambda r: r.standard_normal((4,)))),
        ("sub", _binary(E.sub, signed, signed)),
        ("mul", _binary(E.mul, signed, lambda r: r.standard_normal((3, 1)))),
        ("div", _binary(E.div, signed, pos)),
        ("neg", _unary(E.neg, signed)),
        ("power", _unary(lambda x: E.power(x, 1.7), pos)),
        ("absolute", _unary(E.absolute, signed)),
        ("relu", _unary(E.relu, signed)),
        ("sigmoid", _unary(E.sigmoid, signed)),
        ("exp", _unary(E.exp, signed)),
        ("exp_neg", _unary(E.exp_neg, signed)),
        ("log", _unary(E.log, pos)),
        ("sqrt", _unary(E.sqrt, pos)),
        ("sin", _unary(E.sin, signed)),
        ("cos", _unary(E.cos, signed)),
        ("clamp", _unary(lambda x: E.clamp(x, -0.5, 0.6), lambda r: np.array([[-0.9, -0.3, 0.1, 0.8]] * 3))),
        ("sum", _unary(lambda x: E.sum_(x, axis=1, keepdims=True), signed)),
        ("mean", _unary(lambda x: E.mean(x, axis=0), signed)),
        ("mean_spatial", _unary(E.mean_spatial, img)),
        ("reshape", _unary(lambda x: E.reshape(x, (4, 3)), signed)),
        ("transpose", _unary(lambda x: E.transpose(x, (1, 0)), signed)),
        ("getitem_slice", _unary(lambda x: E.getitem(x, np.s_[1:, ::2]), signed)),
        ("getitem_fancy", _unary(lambda x: E.getitem(x, (np.array([0, 2, 0]), np.array([1, 3, 1]))), signed)),
        ("concat", _binary(lambda a, b: E.concat([a, b], axis=1), signed, signed)),
        ("stack", _binary(lambda a, b: E.stack([a, b], axis=0), signed, signed)),
        ("matmul", _binary(E.matmul, signed, lambda r: r.standard_normal((4, 5)))),
        ("log_softmax", _unary(lambda x: E.log_softmax(x, axis=1), signed)),
        ("min_over_list", _binary(lambda a, b: E.min_over_list([a, b])[0], lambda r: r.uniform(0, 1, (3, 4)),
                                  lambda r: r.uniform(0, 1, (3, 4)) + 1.5 * (r.random((3, 4)) < 0.5) - 0.75)),
        ("conv2d", _binary(lambda x, w: E.conv2d(x, w), img, lambda r: r.standard_normal((3, 3, 2, 3)))),
        ("conv2d_stride2", _binary(lambda x, w: E.conv2d(x, w, stride=2), img, lambda r: r.standard_normal((3, 3, 2, 3)))),
        ("conv2d_bias", _binary(lambda x, b: E.conv2d(x, E.Tensor(np.ones((1, 1, 2, 3))), b), img, lambda r: r.standard_normal(3))),
        ("avg_pool2", _unary(E.avg_pool2, img)),
        ("box_filter", _unary(lambda x: E.box_filter(x, 3), img)),
        ("bilinear_up", _unary(lambda x: E.bilinear_resample(x, 12, 12), img)),
        ("bilinear_down", _unary(lambda x: E.bilinear_resample(x, 3, 3), img)),
        ("resample_to", _unary(lambda x: E.resample_to(x, 3, 3), img)),
        ("concat_channels", _binary(lambda a, b: E.concat_channels([a, b]), img, img)),
        ("channel_weighted_sum", _binary(lambda a, w: E.channel_weighted_sum([a, E.Tensor(np.ones((2, 2, 6, 6)))], w),
                                         img, lambda r: r.standard_normal((2, 2)))),
        ("grid_sample", _grid_case),
        ("rotation_matrix", _unary(rotation_matrix, lambda r: r.uniform(-0.5, 0.5, (2, 3)))),
        ("warp", _warp_case),
        ("ssim", _binary(ssim, img, img)),
        ("photometric_loss", _binary(photometric_loss, img, img)),
        ("smoothness_loss", _unary(lambda d: smoothness_loss(d, np.random.default_rng(3).uniform(0, 1, (2, 3, 6, 6))),
                                   lambda r: r.uniform(0.2, 1.0, (2, 1, 6, 6)))),
    ]
    return cases


def _grid_case(rng):
    image = _leaf(rng.uniform(0, 1, (1, 2, 5, 5)))
    # sample positions off the integer lattice so the bilinear weights are smooth
    x = _leaf(rng.integers(0, 4, (1, 3, 3)) + rng.uniform(0.2, 0.8, (1, 3, 3)))
    y = _leaf(rng.integers(0, 4, (1, 3, 3)) + rng.uniform(0.2, 0.8, (1, 3, 3)))
    return _fixed(lambda: E.grid_sample(image, x, y)), [image, x, y], ["image", "x", "y"]


def _warp_case(rng):
    K = CameraIntrinsics.default_for(8, 8)
    source = _leaf(rng.uniform(0, 1, (1, 3, 8, 8)))
    depth = _leaf(rng.uniform(2.0, 3.0, (1, 1, 8, 8)))
    rot = _leaf([[0.01, -0.02, 0.015]])
    trans = _leaf([[0.13, 0.02, 0.01]])

    def out():
        return warp(source, depth, RigidPose(rot, trans), K)[0]

    return _fixed(out), [source, depth, rot, trans], ["source", "depth", "rotation", "translation"]


def run_op_checks(tol: float = OP_TOL, names=None) -> list[SuiteResult]:
    results = []
    with E.default_dtype(np.float64):
        for name, build in _op_cases():
            if names and name not in names:
                continue
            start = time.perf_counter()
            fn, leaves, leaf_names = build(np.random.default_rng(0))
            rs = E.check_gradients(fn, leaves, leaf_names)
            results.append(
                SuiteResult(name, max(r.max_rel_err for r in rs), sum(r.checked for r in rs), tol, time.perf_counter() - start)
            )
    return results


def run_model_check(
    config: PfnConfig | None = None, size: int = 16, entries_per_leaf: int = 16, tol: float = MODEL_TOL, seed: int = 0
) -> SuiteResult:
    """Whole-network check: every parameter tensor and the input image."""
    cfg = config or PfnConfig(scales=3, sc=2, pc=4, output_scales=3)
    start = time.perf_counter()
    with E.default_dtype(np.float64):
        model = PfnModel(cfg, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed)
        image = _leaf(rng.uniform(0, 1, (1, cfg.in_channels, size, size)))
        weights = None

        def fn():
            nonlocal weights
            outs = model(image)
            if weights is None:
                wr = np.random.default_rng(seed + 1)
                weights = [E.Tensor(wr.standard_normal(o.shape)) for o in outs]
            total = E.sum_(outs[0] * weights[0])
            for o, w in zip(outs[1:], weights[1:]):
                total = total + E.sum_(o * w)
            return total

        names, leaves = zip(*model.named_parameters())
        rs = E.check_gradients(
            fn, [image, *leaves], ["image", *names], max_entries=entries_per_leaf, rng=np.random.default_rng(seed)
        )
    worst = max(rs, key=lambda r: r.max_rel_err)
    return SuiteResult(
        f"pfn S={cfg.scales} sc={cfg.sc} pc={cfg.pc} (worst: {worst.name})",
        worst.max_rel_err,
        sum(r.checked for r in rs),
        tol,
        time.perf_counter() - start,
    )
