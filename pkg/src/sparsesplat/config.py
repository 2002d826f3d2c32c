"""Run configuration shared by inference and per-scene fitting."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class FitConfig:
    iterations: int = 2000
    lr: float = 1.0  # global multiplier on the per-group rates below
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-15
    n_gaussians: int = 500
    lr_means: float = 2e-3  # times the median initial distance to the camera
    lr_scales: float = 1e-2  # log-scale
    lr_rotations: float = 1e-2
    lr_opacities: float = 5e-2  # logit
    lr_sh: float = 2e-2
    init: str = "random"  # "random" or "infer"
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    log_every: int = 0


@dataclass
class RunConfig:
    depth_candidates: int = 32
    points: int = 4
    channels: int = 32
    ddmt_repeats: int = 1
    window: int = 4
    sh_degree: int = 1
    seed: int = 0
    residual_scale: float = 0.1
    attn_dim: int = 16
    depth_attn_dim: int = 16
    gate_hidden: int = 16
    theta_hidden: int = 32
    head_hidden: int = 32
    refine_channels: tuple[int, int, int] = (8, 16, 32)
    depth_mode: str = "expectation"  # or "argmax" (diagnostics)
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    threads: int = 1
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.depth_candidates < 1:
            raise ValueError("depth_candidates must be >= 1")
        if self.points < 1:
            raise ValueError("points must be >= 1")
        if self.ddmt_repeats < 0:
            raise ValueError("ddmt_repeats must be >= 0")
        if self.channels < 1 or self.window < 1:
            raise ValueError("channels and window must be positive")
        if not 0 <= self.sh_degree <= 3:
            raise ValueError("sh_degree must be in [0, 3]")
        if isinstance(self.fit, dict):
            self.fit = _build(FitConfig, self.fit)
        self.refine_channels = tuple(self.refine_channels)
        self.background = tuple(self.background)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _build(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = dict(data)
    for k in ("betas", "background", "refine_channels"):
        if k in kwargs and isinstance(kwargs[k], list):
            kwargs[k] = tuple(kwargs[k])
    return cls(**kwargs)
