"""Run configuration and its INI-style file format.

A config file has up to four sections whose keys mirror the dataclass
fields below::

    [train]
    task = depth
    max_iter = 500
    [model]
    scales = 3
    n = 2, 2, 2
    [loss]
    gamma = 0.001
    [data]
    height = 64

Values are parsed by the type of the field's default: ``true``/``false`` for
flags, comma-separated lists for tuples.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..arch import PfnConfig
from ..depth import DepthLossConfig
from ..engine import ConfigurationError
from ..synth import SynthConfig

TASKS = ("depth", "segmentation")
POSE_SOURCES = ("learned", "ground_truth")
SCHEDULES = ("constant", "poly")


def desk_model(task: str = "depth", num_classes: int = 8) -> PfnConfig:
    """Small model used by default at desk scale."""
    if task == "segmentation":
        return PfnConfig(scales=3, sc=4, pc=8, output_scales=3, output_channels=num_classes, output_activation="none")
    return PfnConfig(scales=3, sc=4, pc=8, output_scales=3)


def desk_loss() -> DepthLossConfig:
    # depth range matched to the synthetic scenes (1 to 16 units)
    return DepthLossConfig(min_depth=0.5, max_depth=32.0)


@dataclass
class TrainConfig:
    task: str = "depth"
    lr: float | None = None  # None picks the task default
    lr_schedule: str | None = None
    max_iter: int = 500
    batch_size: int = 2
    grad_clip_max_norm: float = 1.0
    seed: int = 0
    pose_source: str = "ground_truth"
    checkpoint_every: int = 0
    train_count: int = 16
    val_count: int = 8
    data_seed: int = 0
    hflip: bool = False
    num_classes: int = 8
    model: PfnConfig = field(default_factory=desk_model)
    loss: DepthLossConfig = field(default_factory=desk_loss)
    data: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.lr is None:
            self.lr = 1e-4 if self.task == "depth" else 1e-2
        if self.lr_schedule is None:
            self.lr_schedule = "constant" if self.task == "depth" else "poly"
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.pose_source not in POSE_SOURCES:
            raise ConfigurationError(f"pose_source must be one of {POSE_SOURCES}, got {self.pose_source!r}")
        if self.lr_schedule not in SCHEDULES:
            raise ConfigurationError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iter < 0:
            raise ConfigurationError("max_iter must be non-negative")
        if self.train_count < 1:
            raise ConfigurationError("train_count must be positive")
        self.model.check_input(self.data.height, self.data.width)
        if self.task == "segmentation":
            if self.model.output_channels != self.num_classes or self.model.output_activation != "none":
                raise ConfigurationError(
                    f"segmentation needs output_channels={self.num_classes} and output_activation=none"
                )
        elif self.model.output_channels != 1 or self.model.output_activation != "sigmoid":
            raise ConfigurationError("depth needs output_channels=1 and output_activation=sigmoid")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        kwargs = dict(task=task)
        if task == "segmentation":
            ncls = overrides.get("num_classes", 8)
            kwargs["model"] = desk_model(task, ncls)
        kwargs.update(overrides)
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("model", "loss", "data")}
        d["model"] = self.model.to_dict()
        d["loss"] = asdict(self.loss)
        d["data"] = asdict(self.data)
        d["data"]["translation"] = list(self.data.translation)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        data = dict(data)
        model = PfnConfig.from_dict(data.pop("model"))
        loss = DepthLossConfig(**data.pop("loss"))
        synth = data.pop("data")
        synth["translation"] = tuple(synth["translation"])
        return cls(model=model, loss=loss, data=SynthConfig(**synth), **data)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- parsing ------------------------------------------------------------------------


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def coerce(text: str, default: Any, key: str) -> Any:
    """Parse ``text`` into the type of ``default``."""
    try:
        if isinstance(default, bool):
            return _parse_bool(text)
        if isinstance(default, int):
            if "," in text:
                return tuple(int(v) for v in text.split(","))
            return int(text)
        if isinstance(default, float) or (default is None and key.endswith(".lr")):
            return float(text)
        if isinstance(default, tuple):
            return tuple(type(default[0])(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from exc
    return text.strip()


def _apply(obj, values: dict[str, str], section: str):
    names = {f.name for f in fields(obj)}
    unknown = set(values) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(unknown)}")
    updates = {k: coerce(v, getattr(obj, k), f"{section}.{k}") for k, v in values.items()}
    return replace(obj, **updates)


def apply_overrides(base: TrainConfig, sections: dict[str, dict[str, str]]) -> TrainConfig:
    """Return ``base`` with string overrides per section applied."""
    unknown = set(sections) - {"train", "model", "loss", "data"}
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    train_vals = dict(sections.get("train", {}))
    task = train_vals.get("task", base.task).strip()
    if task != base.task:
        base = TrainConfig.for_task(task)
    model = _apply(base.model, sections.get("model", {}), "model")
    loss = _apply(base.loss, sections.get("loss", {}), "loss")
    data = _apply(base.data, sections.get("data", {}), "data")
    top = {f.name for f in fields(base)} - {"model", "loss", "data"}
    bad = set(train_vals) - top
    if bad:
        raise ConfigurationError(f"unknown keys in [train]: {sorted(bad)}")
    updates = {k: coerce(v, getattr(base, k), f"train.{k}") for k, v in train_vals.items()}
    return replace(base, model=model, loss=loss, data=data, **updates)


def read_config_file(path: Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as f:
        parser.read_file(f)
    return {s: dict(parser.items(s)) for s in parser.sections()}


def load_config(path: Path, base: TrainConfig | None = None) -> TrainConfig:
    return apply_overrides(base or TrainConfig(), read_config_file(Path(path)))


def write_config_file(config: TrainConfig, path: Path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    d = config.to_dict()
    parser["train"] = {k: _fmt(v) for k, v in d.items() if k not in ("model", "loss", "data")}
    for section in ("model", "loss", "data"):
        parser[section] = {k: _fmt(v) for k, v in d[section].items()}
    with open(path, "w") as f:
        parser.write(f)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)


def diff_configs(a: dict, b: dict, prefix: str = "") -> list[str]:
    """Dotted names of fields whose values differ between two config dicts."""
    out = []
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        name = f"{prefix}{key}"
        if isinstance(va, dict) and isinstance(vb, dict):
            out.extend(diff_configs(va, vb, name + "."))
        elif va != vb:
            out.append(name)
    return out
