"""The recursive network, its input/output heads, and structural statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import (
    ConfigurationError,
    Parameter,
    Tensor,
    as_tensor,
    avg_pool2,
    concat_channels,
    relu,
    sigmoid,
)
from .config import PfnConfig
from .modules import Conv, FusionBlock, ParamFactory, SAModule, ScaleFeature

FeaturePyramid = list  # list[ScaleFeature], finest scale first


class Fractal:
    """``f_s``: the base case is one SA module, larger ``s`` nest smaller fractals.

    ``f_{s}(Z_s) = FU(f_{s-1}^{n_{s-1}}(Z_{s-1}) + [SA(z_s)])``
    """

    def __init__(self, factory: ParamFactory, name: str, s: int, config: PfnConfig):
        self.name, self.s = name, s
        cfg = config
        self.sa = SAModule(factory, f"{name}.sa", s, cfg.sc, cfg.pc, cfg.kernel, cfg.clamp_hi)
        self.inner: list[Fractal] = []
        self.fusion: FusionBlock | None = None
        if s > 1:
            reps = cfg.compositions[s - 2]
            self.inner = [Fractal(factory, f"{name}.inner{i}", s - 1, cfg) for i in range(reps)]
            self.fusion = FusionBlock(
                factory, f"{name}.fuse", s, cfg.sc, cfg.fusion_inner, cfg.kernel, cfg.clamp_hi, cfg.cws_weighted
            )

    def __call__(self, pyramid: Sequence[ScaleFeature]) -> FeaturePyramid:
        if len(pyramid) != self.s:
            raise ConfigurationError(f"{self.name} expects {self.s} scales, got {len(pyramid)}")
        if self.s == 1:
            return [self.sa(pyramid[0])]
        lower = list(pyramid[:-1])
        for f in self.inner:
            lower = f(lower)
        top = self.sa(pyramid[-1])
        merged = lower + [top]
        shared = self.fusion([z.shared for z in merged])
        # private halves bypass the fusion block
        return [ScaleFeature(z.scale, sh, z.private) for z, sh in zip(merged, shared)]

    def walk(self):
        yield self
        for f in self.inner:
            yield from f.walk()


class PfnModel:
    """A fractal pyramid network with parameters drawn from ``seed``."""

    def __init__(self, config: PfnConfig, seed: int = 0, dtype=None):
        self.config = config
        self.seed = seed
        factory = ParamFactory(seed, dtype)
        cfg = config
        self.input_shared = Conv(factory, "input.shared", cfg.kernel, cfg.in_channels, cfg.sc)
        self.input_private = Conv(factory, "input.private", cfg.kernel, cfg.in_channels, cfg.pc) if cfg.pc else None
        reps = cfg.compositions[cfg.scales - 1]
        self.body = [Fractal(factory, f"body{i}.f{cfg.scales}", cfg.scales, cfg) for i in range(reps)]
        width = cfg.sc + cfg.pc
        targets = list(range(cfg.output_scales))
        self.output_fusion = FusionBlock(
            factory, "output.fuse", cfg.scales, width, cfg.fusion_output, cfg.kernel, cfg.clamp_hi, cfg.cws_weighted, targets
        )
        self.output_convs = [
            Conv(factory, f"output.to{a + 1}.conv", cfg.kernel, width, cfg.output_channels) for a in targets
        ]
        self.parameters: dict[str, Parameter] = factory.registry

    # -- forward pieces -------------------------------------------------------

    def input_head(self, image) -> FeaturePyramid:
        image = as_tensor(image)
        cfg = self.config
        if image.ndim != 4 or image.shape[1] != cfg.in_channels:
            raise ConfigurationError(f"expected an (N, {cfg.in_channels}, H, W) image, got {image.shape}")
        cfg.check_input(*image.shape[-2:])
        shared = relu(self.input_shared(image))
        if self.input_private is not None:
            private = relu(self.input_private(image))
        else:
            n, _, h, w = image.shape
            private = Tensor(np.zeros((n, 0, h, w), dtype=shared.dtype))
        pyramid = [ScaleFeature(1, shared, private)]
        for s in range(2, cfg.scales + 1):
            prev = pyramid[-1]
            pyramid.append(ScaleFeature(s, avg_pool2(prev.shared), _pool_or_empty(prev.private)))
        return pyramid

    def body_forward(self, pyramid: Sequence[ScaleFeature]) -> FeaturePyramid:
        out = list(pyramid)
        for f in self.body:
            out = f(out)
        return out

    def output_head(self, pyramid: Sequence[ScaleFeature]) -> list[Tensor]:
        cfg = self.config
        merged = [concat_channels([z.shared, z.private]) if cfg.pc else z.shared for z in pyramid]
        fused = self.output_fusion(merged)
        preds = []
        for feat, conv in zip(fused, self.output_convs):
            y = conv(feat)
            preds.append(sigmoid(y) if cfg.output_activation == "sigmoid" else y)
        return preds

    def forward(self, image) -> list[Tensor]:
        """Multi-scale predictions, finest first."""
        return self.output_head(self.body_forward(self.input_head(image)))

    __call__ = forward

    # -- introspection --------------------------------------------------------

    def fractals(self):
        for f in self.body:
            yield from f.walk()

    def sa_modules(self) -> list[SAModule]:
        return [f.sa for f in self.fractals()]

    def fusion_blocks(self) -> list[FusionBlock]:
        return [f.fusion for f in self.fractals() if f.fusion is not None]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return list(self.parameters.items())

    def param_list(self) -> list[Parameter]:
        return list(self.parameters.values())

    @property
    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters.values()))

    def stats(self) -> "GraphStats":
        return graph_stats(self)


def _pool_or_empty(t: Tensor) -> Tensor:
    if t.shape[1] == 0:
        n, _, h, w = t.shape
        return Tensor(np.zeros((n, 0, h // 2, w // 2), dtype=t.dtype))
    return avg_pool2(t)


def init_parameters(config: PfnConfig, seed: int = 0, dtype=None) -> dict[str, Parameter]:
    return PfnModel(config, seed, dtype).parameters


def forward(model: PfnModel, image) -> list[Tensor]:
    return model.forward(image)


# -- structural statistics ------------------------------------------------------


@dataclass
class GraphStats:
    sa_count_per_scale: list[int]
    fusion_count: int
    param_count: int
    max_conv_depth_input_to_output: int
    longest_conv_path: int
    shortest_conv_path: int

    def to_dict(self) -> dict:
        return {
            "sa_count_per_scale": list(self.sa_count_per_scale),
            "fusion_count": self.fusion_count,
            "param_count": self.param_count,
            "max_conv_depth_input_to_output": self.max_conv_depth_input_to_output,
            "longest_conv_path": self.longest_conv_path,
            "shortest_conv_path": self.shortest_conv_path,
        }


class _FeatureGraph:
    """Feature-level DAG whose edge weights count convolution layers."""

    def __init__(self):
        self.edges: list[list[tuple[int, int]]] = []  # node -> [(child, convs)]

    def node(self, parents: Sequence[tuple[int, int]] = ()) -> int:
        idx = len(self.edges)
        self.edges.append([])
        for parent, w in parents:
            self.edges[parent].append((idx, w))
        return idx


def _trace(model: PfnModel) -> tuple[_FeatureGraph, int, list[int]]:
    cfg = model.config
    g = _FeatureGraph()
    image = g.node()
    shared = g.node([(image, 1)])
    private = g.node([(image, 1)]) if cfg.pc else None
    pyramid = [(shared, private)]
    for _ in range(1, cfg.scales):
        sh, pr = pyramid[-1]
        pyramid.append((g.node([(sh, 0)]), g.node([(pr, 0)]) if pr is not None else None))

    def sa(feature):
        sh, pr = feature
        inputs = [sh] if pr is None else [sh, pr]
        new_sh = g.node([(i, 1) for i in inputs])
        new_pr = g.node([(i, 1) for i in inputs]) if pr is not None else None
        return new_sh, new_pr

    def fuse(block: FusionBlock, nodes: list[int]) -> list[int]:
        w = 1 if block.mode == "ctc" else 0
        return [g.node([(n, w) for n in nodes]) for _ in block.targets]

    def run(f: Fractal, feats):
        if f.s == 1:
            return [sa(feats[0])]
        lower = list(feats[:-1])
        for inner in f.inner:
            lower = run(inner, lower)
        merged = lower + [sa(feats[-1])]
        shared = fuse(f.fusion, [m[0] for m in merged])
        return [(s, m[1]) for s, m in zip(shared, merged)]

    for f in model.body:
        pyramid = run(f, pyramid)
    merged = [g.node([(sh, 0)] + ([(pr, 0)] if pr is not None else [])) for sh, pr in pyramid]
    fused = fuse(model.output_fusion, merged)
    outputs = [g.node([(n, 1)]) for n in fused]
    return g, image, outputs


def graph_stats(model: PfnModel) -> GraphStats:
    """Exact module counts plus convolution path lengths.

    ``max_conv_depth_input_to_output`` is, over every feature in the graph,
    the largest value of (fewest convolutions from the image to the feature)
    + (fewest convolutions from the feature to a prediction): how many layers
    the worst-placed feature needs when it uses its best routes.
    ``longest_conv_path`` is the plain longest path, which grows like
    ``n^S`` along the finest scale.
    """
    cfg = model.config
    sa_counts = [0] * cfg.scales
    for m in model.sa_modules():
        sa_counts[m.scale - 1] += 1
    g, image, outputs = _trace(model)
    count = len(g.edges)
    inf = np.iinfo(np.int64).max // 4
    near = np.full(count, inf, dtype=np.int64)
    far = np.full(count, -inf, dtype=np.int64)
    near[image] = far[image] = 0
    # nodes are created in topological order
    for u in range(count):
        for v, w in g.edges[u]:
            near[v] = min(near[v], near[u] + w)
            far[v] = max(far[v], far[u] + w)
    to_out = np.full(count, inf, dtype=np.int64)
    for o in outputs:
        to_out[o] = 0
    for u in range(count - 1, -1, -1):
        for v, w in g.edges[u]:
            to_out[u] = min(to_out[u], to_out[v] + w)
    reachable = to_out < inf
    through = near[reachable] + to_out[reachable]
    return GraphStats(
        sa_count_per_scale=sa_counts,
        fusion_count=len(model.fusion_blocks()),
        param_count=model.param_count,
        max_conv_depth_input_to_output=int(through.max()),
        longest_conv_path=int(max(far[o] for o in outputs)),
        shortest_conv_path=int(min(near[o] for o in outputs)),
    )
