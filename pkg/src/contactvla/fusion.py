"""Force/tactile fusion block with sparse expert routing and residual injection.

Pipeline per forward pass::

    z_f = W_f f + b_f,  z_g = W_g g + b_g            (project_modal)
    Zf~[h] = z_f + PE(h), h = 1..H                    (tile_with_pe)
    Z_in = [prefix | suffix | Zf~ | Zg~]              (concat_streams)
    Z = LN(Z_in + MHA(Z_in))                          (mode_attention)
    modal rows -> top-1 MoE -> output projection      (moe_route_top1, expert_apply)
    v = [W1(Zf + Zs) | W2(Zg + Zs)]                   (residual_inject)

The per-modality output projections start at zero, so an untrained block
adds exactly nothing and the model reproduces the backbone-only head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import F, Tensor
from .backbone import BackboneStub, ObservationBatch, ObsSpec, PrefixTokens, SuffixTokens
from .config import ModelConfig
from .flow import ActionPartition
from .nn import LayerNorm, Linear, MLP, Module, MultiHeadAttention, sinusoid_table

MODALITIES = ("force", "tactile")


@dataclass
class ModalTokens:
    tokens: Tensor  # (B, H, d_pali)
    modality: str


@dataclass
class RouterAssignment:
    expert: np.ndarray  # (n,) selected expert per token
    gate: np.ndarray  # (n,) probability of the selected expert
    probs: np.ndarray  # (n, E)

    def utilization(self, n_experts: int) -> np.ndarray:
        return np.bincount(self.expert.reshape(-1), minlength=n_experts)

    def entropy(self) -> np.ndarray:
        p = np.clip(self.probs, 1e-12, 1.0)
        return -(self.probs * np.log(p)).sum(axis=-1)


@dataclass
class FusionOutput:
    force: Tensor  # refined force tokens (B, H, d)
    tactile: Tensor
    routing: dict[str, RouterAssignment] = field(default_factory=dict)
    aux_loss: Tensor | None = None
    attention: np.ndarray | None = None


def route_top1(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax expert per row (ties -> lowest index) and its probability."""
    sel = np.argmax(probs, axis=-1)
    gate = np.take_along_axis(probs, sel[..., None], axis=-1)[..., 0]
    return sel, gate


def concat_streams(prefix: Tensor, suffix: Tensor, zf: Tensor, zg: Tensor) -> tuple[Tensor, tuple[int, int, int]]:
    widths = {x.shape[-1] for x in (prefix, suffix, zf, zg)}
    if len(widths) != 1:
        raise ValueError(f"stream widths differ: {sorted(widths)}")
    sp, h = prefix.shape[-2], suffix.shape[-2]
    if zf.shape[-2] != h or zg.shape[-2] != h:
        raise ValueError("modal token sequences must have H rows")
    return F.concat([prefix, suffix, zf, zg], axis=-2), (sp, sp + h, sp + 2 * h)


class MoDEBlock(Module):
    def __init__(self, spec: ObsSpec, cfg: ModelConfig, rng: np.random.Generator):
        d = cfg.d_pali
        self.cfg = cfg
        self.spec = spec
        self.proj_force = Linear(spec.force, d, rng)
        self.proj_tactile = Linear(spec.tactile, d, rng)
        self.attn = MultiHeadAttention(d, cfg.heads, rng)
        self.norm = LayerNorm(d)
        self.router = Linear(d, cfg.experts, rng, bias=False)
        self.experts = [MLP(d, cfg.expert_hidden_mult * d, d, rng) for _ in range(cfg.experts)]
        self.out_force = Linear(d, d, rng, zero=True)
        self.out_tactile = Linear(d, d, rng, zero=True)
        self.single_stream = False  # diagnostic: skip cross-stream attention mixing

    # -- token construction ----------------------------------------------
    def project_modal(self, reading, modality: str) -> Tensor:
        lin, want = {"force": (self.proj_force, self.spec.force),
                     "tactile": (self.proj_tactile, self.spec.tactile)}[modality]
        reading = F.as_tensor(reading, dtype=lin.weight.dtype) if not isinstance(reading, Tensor) else reading
        if reading.shape[-1] != want:
            raise ValueError(f"{modality} reading must have length {want}, got {reading.shape[-1]}")
        return lin(reading)

    def tile_with_pe(self, z: Tensor, modality: str = "force") -> ModalTokens:
        H, d = self.cfg.horizon, self.cfg.d_pali
        pe = Tensor(sinusoid_table(np.arange(1, H + 1), d), dtype=z.dtype)
        z = z.reshape(*z.shape[:-1], 1, d)
        return ModalTokens(z + pe, modality)

    # -- attention + experts ----------------------------------------------
    def mode_attention(self, z_in: Tensor, return_weights: bool = False):
        # sequence positions enter queries/keys/values only, so stream order is visible
        pe = Tensor(sinusoid_table(np.arange(z_in.shape[-2]), z_in.shape[-1]), dtype=z_in.dtype)
        out, w = self.attn(z_in + pe, return_weights=True)
        res = self.norm(z_in + out)
        return (res, w.data) if return_weights else res

    def moe(self, x: Tensor) -> tuple[Tensor, RouterAssignment, Tensor]:
        """Top-1 token routing over rows of ``x`` (n, d): out = x + gate * MLP_e(x)."""
        n = x.shape[0]
        E = self.cfg.experts
        probs = F.softmax(self.router(x), axis=-1)
        sel, gate_np = route_top1(probs.data)
        gate = F.gather(probs.reshape(n * E), np.arange(n) * E + sel)
        parts = []
        for e, expert in enumerate(self.experts):
            idx = np.nonzero(sel == e)[0]
            if idx.size == 0:
                continue
            xe = F.gather(x, idx, axis=0)
            ge = F.gather(gate, idx).reshape(idx.size, 1)
            parts.append(F.scatter(expert(xe) * ge, idx, n, axis=0))
        y = parts[0]
        for p in parts[1:]:
            y = y + p
        frac = np.bincount(sel, minlength=E).astype(x.dtype) / n
        # mean over experts of (fraction routed * mean probability * E)
        aux = F.mean(F.mean(probs, axis=0) * Tensor(frac * E, dtype=x.dtype))
        return x + y, RouterAssignment(sel, gate_np, probs.data.copy()), aux

    def forward(self, prefix: PrefixTokens, suffix: SuffixTokens, force, tactile) -> FusionOutput:
        H, d = self.cfg.horizon, self.cfg.d_pali
        zf = self.tile_with_pe(self.project_modal(force, "force"), "force").tokens
        zg = self.tile_with_pe(self.project_modal(tactile, "tactile"), "tactile").tokens
        b = zf.shape[0]
        if self.single_stream:
            att_f = self.mode_attention(zf)
            att_g = self.mode_attention(zg)
            weights = None
        else:
            z_in, (s0, s1, s2) = concat_streams(prefix.tokens, suffix.tokens, zf, zg)
            z, weights = self.mode_attention(z_in, return_weights=True)
            att_f = z[:, s1:s2]
            att_g = z[:, s2:]
        modal = F.concat([att_f, att_g], axis=1).reshape(b * 2 * H, d)
        refined, assign, aux = self.moe(modal)
        refined = refined.reshape(b, 2, H, d)
        zf_out = self.out_force(refined[:, 0])
        zg_out = self.out_tactile(refined[:, 1])
        sel = assign.expert.reshape(b, 2, H)
        gate = assign.gate.reshape(b, 2, H)
        probs = assign.probs.reshape(b, 2, H, -1)
        routing = {m: RouterAssignment(sel[:, i], gate[:, i], probs[:, i]) for i, m in enumerate(MODALITIES)}
        return FusionOutput(zf_out, zg_out, routing, aux, weights)


class ContactPolicy(Module):
    """Backbone stub plus the fusion block; ``use_mode=False`` gives the backbone-only baseline."""

    def __init__(self, spec: ObsSpec, part: ActionPartition, cfg: ModelConfig, seed: int = 0,
                 use_mode: bool = True):
        rng = np.random.default_rng(seed)
        self.spec, self.part, self.cfg = spec, part, cfg
        self.backbone = BackboneStub(spec, part, cfg, rng)
        self.mode = MoDEBlock(spec, cfg, rng)
        self.use_mode = use_mode

    def encode_prefix(self, obs: ObservationBatch) -> PrefixTokens:
        return self.backbone.encode_prefix(obs)

    def residual_inject(self, zf: Tensor, zg: Tensor, suffix: SuffixTokens) -> Tensor:
        if zf.shape != suffix.tokens.shape or zg.shape != suffix.tokens.shape:
            raise ValueError("refined tokens must match the suffix shape")
        return self.backbone.head(zf + suffix.tokens, zg + suffix.tokens)

    def velocity(self, obs: ObservationBatch, x_t, t, prefix: PrefixTokens | None = None):
        """Velocity for a noisy chunk; returns (velocity Tensor, FusionOutput or None)."""
        prefix = self.encode_prefix(obs) if prefix is None else prefix
        suffix = self.backbone.encode_suffix(x_t, t, prefix)
        if not self.use_mode:
            return self.backbone.base_velocity(suffix), None
        fused = self.mode(prefix, suffix, obs.force, obs.tactile)
        return self.residual_inject(fused.force, fused.tactile, suffix), fused

    def mode_velocity(self, obs: ObservationBatch, x_t, t):
        return self.velocity(obs, x_t, t)
