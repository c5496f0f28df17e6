"""Checkpoints: a JSON manifest next to flat binary tensor blobs.

Layout of a checkpoint directory::

    manifest.json   config, config hash, iteration, parameter names/shapes, metrics
    params.bin      one tensor record per parameter, manifest order
    optim.bin       adam m then v for each parameter, manifest order
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..engine import Parameter
from ..engine.serialize import read_tensor, write_tensor
from .config import TrainConfig, diff_configs

FORMAT = "pfn-checkpoint/1"


class IncompatibleCheckpoint(ValueError):
    def __init__(self, fields_: list[str], detail: str = ""):
        self.fields = fields_
        msg = "checkpoint does not match the requested config; differing fields: " + ", ".join(fields_)
        super().__init__(msg + (f" ({detail})" if detail else ""))


@dataclass
class Checkpoint:
    config: TrainConfig
    iteration: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step_counts: dict[str, int] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, config: TrainConfig, iteration: int, params: dict[str, Parameter], metrics=None) -> "Checkpoint":
        return cls(
            config,
            iteration,
            {k: p.data.copy() for k, p in params.items()},
            {k: p.adam_m.copy() for k, p in params.items()},
            {k: p.adam_v.copy() for k, p in params.items()},
            {k: int(p.step_count) for k, p in params.items()},
            dict(metrics or {}),
        )

    def restore(self, params: dict[str, Parameter], optimizer_state: bool = True) -> None:
        missing = sorted(set(params) ^ set(self.params))
        if missing:
            raise IncompatibleCheckpoint(missing, "parameter sets differ")
        bad = [k for k in params if params[k].shape != self.params[k].shape]
        if bad:
            raise IncompatibleCheckpoint(bad, "parameter shapes differ")
        for k, p in params.items():
            p.data = self.params[k].astype(p.dtype, copy=True)
            if optimizer_state:
                p.adam_m = self.adam_m.get(k, np.zeros_like(p.data)).astype(p.dtype, copy=True)
                p.adam_v = self.adam_v.get(k, np.zeros_like(p.data)).astype(p.dtype, copy=True)
                p.step_count = self.step_counts.get(k, 0)

    def save(self, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = list(self.params)
        with open(directory / "params.bin", "wb") as f:
            for k in names:
                write_tensor(f, self.params[k])
        with open(directory / "optim.bin", "wb") as f:
            for k in names:
                write_tensor(f, self.adam_m[k])
                write_tensor(f, self.adam_v[k])
        manifest = {
            "format": FORMAT,
            "config_hash": self.config.hash(),
            "config": self.config.to_dict(),
            "iteration": self.iteration,
            "parameters": [
                {"name": k, "shape": list(self.params[k].shape), "dtype": str(self.params[k].dtype), "step": self.step_counts.get(k, 0)}
                for k in names
            ],
            "metrics": self.metrics,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return directory

    @classmethod
    def load(cls, directory: Path) -> "Checkpoint":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest.get("format") != FORMAT:
            raise ValueError(f"{directory} is not a checkpoint ({manifest.get('format')!r})")
        config = TrainConfig.from_dict(manifest["config"])
        entries = manifest["parameters"]
        params, m, v = {}, {}, {}
        with open(directory / "params.bin", "rb") as f:
            for e in entries:
                arr = read_tensor(f)
                if list(arr.shape) != e["shape"]:
                    raise ValueError(f"blob for {e['name']} has shape {arr.shape}, manifest says {e['shape']}")
                params[e["name"]] = arr
        optim_path = directory / "optim.bin"
        if optim_path.exists():
            with open(optim_path, "rb") as f:
                for e in entries:
                    m[e["name"]] = read_tensor(f)
                    v[e["name"]] = read_tensor(f)
        steps = {e["name"]: int(e.get("step", 0)) for e in entries}
        return cls(config, int(manifest["iteration"]), params, m, v, steps, manifest.get("metrics", {}))

    def check_compatible(self, config: TrainConfig) -> None:
        """Raise unless ``config`` builds the same network as this checkpoint."""
        diffs = diff_configs({"model": self.config.model.to_dict(), "task": self.config.task},
                             {"model": config.model.to_dict(), "task": config.task})
        if diffs:
            raise IncompatibleCheckpoint(diffs)


def latest_checkpoint(run_dir: Path) -> Path | None:
    ckpts = sorted(Path(run_dir, "checkpoints").glob("step_*"))
    return ckpts[-1] if ckpts else None
