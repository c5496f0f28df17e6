from __future__ import annotations

import numpy as np

from ..arch.modules import Conv, ParamFactory
from ..engine import Parameter, concat_channels, getitem, mean_spatial, relu, reshape
from .geometry import RigidPose


class PoseHead:
    """Small relative-pose regressor over a concatenated image pair.

    Four stride-2 conv+ReLU stages, global average pooling and a 1x1 conv to
    six numbers (axis-angle, translation) scaled by 0.01.
    """

    def __init__(self, seed: int = 0, in_channels: int = 3, widths=(16, 32, 32, 32), dtype=None):
        factory = ParamFactory(seed + 7919, dtype)
        self.stages = []
        cin = 2 * in_channels
        for i, cout in enumerate(widths):
            self.stages.append(Conv(factory, f"pose.stage{i}", 3, cin, cout, stride=2))
            cin = cout
        self.head = Conv(factory, "pose.out", 1, cin, 6)
        self.parameters: dict[str, Parameter] = factory.registry
        self.scale = 0.01

    def __call__(self, target, source) -> RigidPose:
        x = concat_channels([target, source])
        for conv in self.stages:
            x = relu(conv(x))
        out = reshape(self.head(mean_spatial(x)), (x.shape[0], 6)) * self.scale
        return RigidPose(getitem(out, np.s_[:, :3]), getitem(out, np.s_[:, 3:]))

    def param_list(self) -> list[Parameter]:
        return list(self.parameters.values())


def pose_head(target, source, head: PoseHead) -> RigidPose:
    return head(target, source)
