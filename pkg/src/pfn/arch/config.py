from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Any, Mapping

from ..engine import ConfigurationError

FUSION_MODES = ("cws", "ctc")
OUTPUT_ACTIVATIONS = ("sigmoid", "none")


@dataclass
class PfnConfig:
    """Hyper-parameters of a fractal pyramid network.

    ``n`` is either one composition count used at every level or a list
    ``n_1 .. n_S`` where ``n_s`` is how many times ``f_s`` is repeated; the
    last entry is the repetition of the outermost fractal.
    """

    scales: int = 5
    n: int | tuple[int, ...] = 2
    sc: int = 18
    pc: int = 54
    kernel: int = 3
    fusion_inner: str = "cws"
    fusion_output: str = "ctc"
    cws_weighted: bool = True
    clamp_hi: float = 1e4
    output_scales: int = 4
    output_channels: int = 1
    output_activation: str = "sigmoid"
    in_channels: int = 3

    def __post_init__(self):
        if isinstance(self.n, list):
            self.n = tuple(self.n)
        self.fusion_inner = self.fusion_inner.lower()
        self.fusion_output = self.fusion_output.lower()
        self.output_activation = self.output_activation.lower()
        self.validate()

    def validate(self) -> None:
        if self.scales < 1:
            raise ConfigurationError(f"scales must be >= 1, got {self.scales}")
        if self.sc < 1 or self.pc < 0:
            raise ConfigurationError(f"need sc >= 1 and pc >= 0, got sc={self.sc}, pc={self.pc}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel must be odd, got {self.kernel}")
        for mode in (self.fusion_inner, self.fusion_output):
            if mode not in FUSION_MODES:
                raise ConfigurationError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")
        if not 1 <= self.output_scales <= self.scales:
            raise ConfigurationError(
                f"output_scales={self.output_scales} must lie in [1, scales={self.scales}]"
            )
        if self.output_channels < 1:
            raise ConfigurationError("output_channels must be positive")
        if not self.clamp_hi > 0:
            raise ConfigurationError("clamp_hi must be positive")
        counts = self.compositions
        if len(counts) != self.scales or any(c < 1 for c in counts):
            raise ConfigurationError(f"n must give {self.scales} positive counts, got {self.n}")

    @property
    def compositions(self) -> tuple[int, ...]:
        if isinstance(self.n, int):
            return (self.n,) * self.scales
        return tuple(int(c) for c in self.n)

    @property
    def multiple(self) -> int:
        return 2 ** (self.scales - 1)

    def check_input(self, height: int, width: int) -> None:
        m = self.multiple
        if height % m or width % m:
            raise ConfigurationError(
                f"input {height}x{width} must be divisible by {m} (2^(scales-1)) for scales={self.scales}"
            )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["n"] = list(self.n) if isinstance(self.n, tuple) else self.n
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PfnConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(data))


# (sc, pc) splits and (inner, output, weighted) fusion pairs used by ablation runs.
SA_RATIOS = ((48, 0), (32, 32), (24, 48), (18, 54), (14, 56))
FUSION_COMBINATIONS = (
    ("cws", "cws", True),
    ("ctc", "ctc", True),
    ("cws", "ctc", True),
    ("cws", "ctc", False),
)
