"""Plain-text ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .model import ALL_SCALES, AcnetConfig
from .optim import HyperParams


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str = "fixed-scale"
    scales: tuple[int, ...] = (2,)
    channels: int = 64
    steps: int = 660_000
    batch: int = 16
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halving_period: int = 400_000
    patch: int = 64
    loss_reduction: str = "per_pixel"
    sigma_range: tuple[float, ...] | None = None
    seed: int = 0
    data_dir: str = ""
    eval_dir: str = ""
    checkpoint: str = "acnet.ckpt"
    resume: str = ""
    checkpoint_every: int = 1000
    log: str = "train_log.tsv"
    shave: int | None = None

    def __post_init__(self):
        if self.mode != "fixed-scale" and self.scales == (2,):
            self.scales = ALL_SCALES
        if self.sigma_range is None:
            self.sigma_range = (0.0, 55.0) if self.mode == "blind-noise" else (0.0, 0.0)
        if len(self.sigma_range) != 2:
            raise ConfigError("sigma_range takes two values: low, high")
        for name in ("steps", "batch", "patch", "halving_period", "checkpoint_every"):
            v = getattr(self, name)
            if v < 0 or (v == 0 and name != "steps"):
                raise ConfigError(f"{name} must be positive, got {v}")

    def model_config(self) -> AcnetConfig:
        try:
            return AcnetConfig(channels=self.channels, scales=tuple(self.scales), mode=self.mode,
                               noise_sigma_range=tuple(self.sigma_range),
                               loss_reduction=self.loss_reduction, seed=self.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def hyper(self) -> HyperParams:
        return HyperParams(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                           halving_period=self.halving_period, total_steps=self.steps,
                           batch=self.batch)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = {
        "scales": "ints", "sigma_range": "floats",
        "mode": str, "loss_reduction": str, "data_dir": str, "eval_dir": str,
        "checkpoint": str, "resume": str, "log": str,
        "lr": float, "beta1": float, "beta2": float, "eps": float,
        "shave": "opt_int",
    }.get(key, int)
    try:
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind == "opt_int":
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        return kind(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e


def parse_config(text: str) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        elif v is None:
            v = "auto"
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"
