"""Building blocks of the fractal: convolutions, SA modules, fusion blocks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import (
    ConfigurationError,
    Parameter,
    Tensor,
    channel_weighted_sum,
    clamp,
    concat,
    concat_channels,
    conv2d,
    get_default_dtype,
    getitem,
    resample_to,
)
from .config import FUSION_MODES


@dataclass
class ScaleFeature:
    scale: int
    shared: Tensor
    private: Tensor

    @property
    def resolution(self) -> tuple[int, int]:
        return self.shared.shape[-2:]


class ParamFactory:
    """Creates parameters in a fixed order from one seeded generator."""

    def __init__(self, seed: int, dtype=None):
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype or get_default_dtype()
        self.registry: dict[str, Parameter] = {}

    def _add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self.registry:
            raise ConfigurationError(f"duplicate parameter name {name}")
        p = Parameter(data, name=name, dtype=self.dtype)
        self.registry[name] = p
        return p

    def conv_weight(self, name: str, k: int, cin: int, cout: int) -> Parameter:
        bound = np.sqrt(6.0 / (k * k * cin))
        return self._add(name, self.rng.uniform(-bound, bound, size=(k, k, cin, cout)))

    def zeros(self, name: str, shape) -> Parameter:
        return self._add(name, np.zeros(shape))

    def full(self, name: str, shape, value: float) -> Parameter:
        return self._add(name, np.full(shape, value))


def bounded_relu(x: Tensor, hi: float) -> Tensor:
    # ReLU followed by a clip to [0, hi]; one clamp is the same map and gradient
    return clamp(x, 0.0, hi)


class Conv:
    def __init__(self, factory: ParamFactory, name: str, k: int, cin: int, cout: int, stride: int = 1):
        self.name = name
        self.k, self.cin, self.cout, self.stride = k, cin, cout, stride
        self.weight = factory.conv_weight(f"{name}.weight", k, cin, cout)
        self.bias = factory.zeros(f"{name}.bias", (cout,))

    def __call__(self, x: Tensor) -> Tensor:
        pad = (self.k - 1) // 2
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=pad)

    @property
    def param_count(self) -> int:
        return self.k * self.k * self.cin * self.cout + self.cout


class SAModule:
    """Separation and aggregation: two convolutions over ``cat(shared, private)``."""

    def __init__(self, factory: ParamFactory, name: str, scale: int, sc: int, pc: int, k: int, clamp_hi: float):
        self.name, self.scale = name, scale
        self.sc, self.pc, self.clamp_hi = sc, pc, clamp_hi
        self.shared_conv = Conv(factory, f"{name}.shared", k, sc + pc, sc)
        self.private_conv = Conv(factory, f"{name}.private", k, sc + pc, pc) if pc else None

    def __call__(self, z: ScaleFeature) -> ScaleFeature:
        x = concat_channels([z.shared, z.private]) if self.pc else z.shared
        if self.private_conv is None:
            shared = bounded_relu(self.shared_conv(x), self.clamp_hi)
            return ScaleFeature(z.scale, shared, z.private)
        # both convolutions read the same input: run them as one GEMM and split
        weight = concat([self.shared_conv.weight, self.private_conv.weight], axis=3)
        bias = concat([self.shared_conv.bias, self.private_conv.bias], axis=0)
        pad = (self.shared_conv.k - 1) // 2
        y = bounded_relu(conv2d(x, weight, bias, padding=pad), self.clamp_hi)
        return ScaleFeature(z.scale, getitem(y, np.s_[:, : self.sc]), getitem(y, np.s_[:, self.sc :]))

    def convs(self) -> list[Conv]:
        return [c for c in (self.shared_conv, self.private_conv) if c is not None]


class FusionBlock:
    """Resample every source to each target scale, then fuse per target.

    ``sources`` is the number of input scales (finest first); ``targets`` are
    the 0-based scale indices to produce, all of them by default.
    """

    def __init__(
        self,
        factory: ParamFactory,
        name: str,
        sources: int,
        channels: int,
        mode: str,
        k: int,
        clamp_hi: float,
        weighted: bool = True,
        targets: Sequence[int] | None = None,
    ):
        if mode not in FUSION_MODES:
            raise ConfigurationError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        self.name, self.sources, self.channels = name, sources, channels
        self.mode, self.weighted, self.clamp_hi = mode, weighted, clamp_hi
        self.targets = list(range(sources)) if targets is None else list(targets)
        self.weights: list[Parameter | np.ndarray] = []
        self.convs: list[Conv] = []
        for a in self.targets:
            if mode == "cws":
                if weighted:
                    self.weights.append(factory.full(f"{name}.to{a + 1}.cws", (sources, channels), 1.0 / sources))
                else:
                    self.weights.append(np.full((sources, channels), 1.0 / sources, dtype=factory.dtype))
            else:
                self.convs.append(Conv(factory, f"{name}.to{a + 1}.ctc", k, sources * channels, channels))

    def __call__(self, features: Sequence[Tensor]) -> list[Tensor]:
        if len(features) != self.sources:
            raise ConfigurationError(f"{self.name} expects {self.sources} scales, got {len(features)}")
        for f in features:
            if f.shape[1] != self.channels:
                raise ConfigurationError(f"{self.name} expects {self.channels} channels, got {f.shape[1]}")
        outputs = []
        for i, a in enumerate(self.targets):
            h, w = features[a].shape[-2:]
            moved = [resample_to(f, h, w) for f in features]
            if self.mode == "cws":
                outputs.append(channel_weighted_sum(moved, self.weights[i]))
            else:
                outputs.append(bounded_relu(self.convs[i](concat_channels(moved)), self.clamp_hi))
        return outputs
