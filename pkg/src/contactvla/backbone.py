"""Stand-in for the pretrained vision-language backbone and the action expert.

The prefix encoder lifts the vision proxy, the instruction id and the
proprioceptive state to one token each and mixes them with a frozen
self-attention layer. The suffix expert embeds a noisy action chunk plus the
flow time and runs trainable layers whose keys/values span prefix and suffix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import F, Tensor
from .config import ModelConfig
from .flow import ActionPartition
from .nn import Embedding, LayerNorm, Linear, MLP, Module, MultiHeadAttention, sinusoid_table


@dataclass(frozen=True)
class ObsSpec:
    vision: int
    proprio: int
    force: int
    tactile: int
    instructions: int = 4


@dataclass
class ObservationBatch:
    """Batched observation; every array has a leading batch axis."""

    vision: np.ndarray
    instruction: np.ndarray
    proprio: np.ndarray
    force: np.ndarray
    tactile: np.ndarray

    def __post_init__(self):
        self.instruction = np.asarray(self.instruction, dtype=np.int64).reshape(-1)

    def __len__(self) -> int:
        return len(self.instruction)

    def check(self, spec: ObsSpec) -> None:
        for name in ("vision", "proprio", "force", "tactile"):
            arr = getattr(self, name)
            want = getattr(spec, name)
            if arr.ndim != 2 or arr.shape[1] != want:
                raise ValueError(f"{name}: expected (batch, {want}), got {arr.shape}")
            if arr.shape[0] != len(self):
                raise ValueError(f"{name}: batch size {arr.shape[0]} != {len(self)}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite observation")
        if np.any(self.instruction < 0) or np.any(self.instruction >= spec.instructions):
            raise ValueError("instruction id out of range")

    def take(self, idx) -> "ObservationBatch":
        return ObservationBatch(self.vision[idx], self.instruction[idx], self.proprio[idx],
                                self.force[idx], self.tactile[idx])


@dataclass
class PrefixTokens:
    tokens: Tensor  # (B, S_p, d_pali)

    @property
    def length(self) -> int:
        return self.tokens.shape[-2]


@dataclass
class SuffixTokens:
    tokens: Tensor  # (B, H, d_pali)
    t: np.ndarray


class PrefixEncoder(Module):
    def __init__(self, spec: ObsSpec, d: int, heads: int, rng: np.random.Generator):
        self.spec = spec
        self.vision = Linear(spec.vision, d, rng)
        self.instruction = Embedding(spec.instructions, d, rng)
        self.proprio = Linear(spec.proprio, d, rng)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm = LayerNorm(d)
        self.freeze()

    def forward(self, obs: ObservationBatch) -> PrefixTokens:
        obs.check(self.spec)
        dt = self.vision.weight.dtype
        rows = [
            self.vision(Tensor(obs.vision, dtype=dt)),
            self.instruction(obs.instruction),
            self.proprio(Tensor(obs.proprio, dtype=dt)),
        ]
        b = len(obs)
        d = rows[0].shape[-1]
        x = F.concat([r.reshape(b, 1, d) for r in rows], axis=1)
        return PrefixTokens(self.norm(x + self.attn(x)))


class SuffixLayer(Module):
    def __init__(self, d: int, heads: int, mult: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.mlp = MLP(d, mult * d, d, rng)
        self.norm2 = LayerNorm(d)

    def forward(self, h: Tensor, prefix: Tensor) -> Tensor:
        kv = F.concat([prefix, h], axis=-2)
        h = self.norm1(h + self.attn(h, kv))
        return self.norm2(h + self.mlp(h))


def time_embedding(t, d: int) -> np.ndarray:
    """Sinusoidal embedding of the flow time (scaled so t in [0, 1] spans many periods)."""
    return sinusoid_table(np.asarray(t, dtype=np.float64) * 1000.0, d)


class SuffixExpert(Module):
    def __init__(self, cfg: ModelConfig, d_action: int, rng: np.random.Generator):
        d = cfg.d_pali
        self.cfg = cfg
        self.lift = Linear(d_action, d, rng)
        self.time = Linear(d, d, rng)
        self.layers = [SuffixLayer(d, cfg.heads, cfg.expert_hidden_mult, rng)
                       for _ in range(cfg.suffix_layers)]
        self.d_action = d_action

    def forward(self, x_t, t, prefix: PrefixTokens) -> SuffixTokens:
        x_t = np.asarray(x_t)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), x_t.shape[:1]).copy()
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("flow time must lie in [0, 1]")
        H = self.cfg.horizon
        if x_t.ndim != 3 or x_t.shape[1:] != (H, self.d_action):
            raise ValueError(f"noisy chunk must be (B, {H}, {self.d_action}), got {x_t.shape}")
        dt = self.lift.weight.dtype
        d = self.cfg.d_pali
        temb = self.time(Tensor(time_embedding(t, d), dtype=dt)).reshape(len(t), 1, d)
        steps = Tensor(sinusoid_table(np.arange(1, H + 1), d), dtype=dt)
        h = self.lift(Tensor(x_t, dtype=dt)) + temb + steps
        for layer in self.layers:
            h = layer(h, prefix.tokens)
        return SuffixTokens(h, t)


class SplitHead(Module):
    """Two linear read-outs: one emits arm+other columns, the other the hand columns."""

    def __init__(self, d: int, part: ActionPartition, rng: np.random.Generator):
        self.part = part
        self.w_arm = Linear(d, part.arm + part.waist + 1, rng)
        self.w_hand = Linear(d, part.hand, rng) if part.hand else None
        order = np.r_[part.arm_other_columns, part.hand_columns]
        self._perm = np.argsort(order)

    def forward(self, z_arm: Tensor, z_hand: Tensor) -> Tensor:
        cols = [self.w_arm(z_arm)]
        if self.w_hand is not None:
            cols.append(self.w_hand(z_hand))
        return F.gather(F.concat(cols, axis=-1), self._perm, axis=-1)


class BackboneStub(Module):
    def __init__(self, spec: ObsSpec, part: ActionPartition, cfg: ModelConfig, rng: np.random.Generator):
        self.prefix_encoder = PrefixEncoder(spec, cfg.d_pali, cfg.heads, rng)
        self.suffix_expert = SuffixExpert(cfg, part.dim, rng)
        self.head = SplitHead(cfg.d_pali, part, rng)

    def encode_prefix(self, obs: ObservationBatch) -> PrefixTokens:
        return self.prefix_encoder(obs)

    def encode_suffix(self, x_t, t, prefix: PrefixTokens) -> SuffixTokens:
        return self.suffix_expert(x_t, t, prefix)

    def base_velocity(self, suffix: SuffixTokens) -> Tensor:
        return self.head(suffix.tokens, suffix.tokens)
