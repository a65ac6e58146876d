"""Run configuration: a YAML document with model / training / env / ablation sections."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

# Reference values used by the original large-scale system (documentation only).
PAPER_DEFAULTS = {
    "experts": 8,
    "top_k": 1,
    "horizon": 50,
    "euler_steps": 10,
    "train_steps": 60_000,
    "force_dim": 14,
    "tactile_dim": 60,
    "image_tokens_per_view": 256,
    "image_views": 3,
}

VARIANTS = ("full", "no-force", "no-tactile", "no-copilot", "baseline")


@dataclass
class ModelConfig:
    d_pali: int = 64
    horizon: int = 8
    experts: int = 8
    top_k: int = 1
    euler_steps: int = 10
    suffix_layers: int = 2
    heads: int = 4
    expert_hidden_mult: int = 4
    load_balance: bool = True
    load_balance_coef: float = 0.01


@dataclass
class TrainingConfig:
    steps: int = 3000
    batch: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    demos: int = 200
    checkpoint_every: int = 500


@dataclass
class EnvConfig:
    task: str = "insertion"
    max_steps: int | None = None  # task default when unset
    vision_noise_ratio: float = 3.0
    randomize: bool = True


@dataclass
class CopilotConfig:
    iterations: int = 120
    n_envs: int = 256
    rollout_steps: int = 80
    lr: float = 3e-4
    latent: int = 8
    hidden: int = 128
    distill_episodes: int = 1024
    distill_epochs: int = 30
    randomize: bool = True


@dataclass
class AblationConfig:
    force: bool = True
    tactile: bool = True
    copilot: bool = True
    mode: bool = True

    @classmethod
    def for_variant(cls, variant: str) -> "AblationConfig":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        return cls(force=variant != "no-force", tactile=variant != "no-tactile",
                   copilot=variant != "no-copilot", mode=variant != "baseline")

    @property
    def variant(self) -> str:
        off = [k for k in ("force", "tactile", "copilot", "mode") if not getattr(self, k)]
        if not off:
            return "full"
        if off == ["mode"]:
            return "baseline"
        if len(off) == 1:
            return f"no-{off[0]}"
        return "custom"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    copilot: CopilotConfig = field(default_factory=CopilotConfig)

    def validate(self) -> None:
        m = self.model
        if m.top_k != 1:
            raise ValueError("only top-1 routing is supported")
        if m.d_pali % m.heads:
            raise ValueError("d_pali must be divisible by heads")
        if m.horizon < 1 or m.euler_steps < 1 or m.experts < 1:
            raise ValueError("horizon, euler_steps and experts must be positive")
        a = self.ablation
        if not a.mode and not (a.force and a.tactile):
            raise ValueError("baseline variant has no modal pathway; force/tactile flags must stay on")
        if self.env.task not in ("insertion", "peel"):
            raise ValueError(f"unknown task {self.env.task!r}")
        t = self.training
        if t.steps < 1 or t.batch < 1 or t.lr <= 0:
            raise ValueError("training steps, batch and lr must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, data: dict, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"section {where!r} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"unknown keys in {where!r}: {unknown}")
    return cls(**data)


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    sections = {"model": ModelConfig, "training": TrainingConfig, "env": EnvConfig,
                "ablation": AblationConfig, "copilot": CopilotConfig}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise ValueError(f"unknown config sections: {unknown}")
    cfg = RunConfig(**{k: _build(cls, data.get(k), k) for k, cls in sections.items()})
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    return from_dict(yaml.safe_load(Path(path).read_text()) or {})
