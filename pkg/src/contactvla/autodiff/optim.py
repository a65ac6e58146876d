"""AdamW with cosine learning-rate decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def cosine_multiplier(step: int, horizon: int) -> float:
    s = min(max(step, 0), horizon)
    return 0.5 * (1.0 + math.cos(math.pi * s / horizon))


@dataclass
class OptimizerState:
    base_lr: float
    horizon: int
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @property
    def lr(self) -> float:
        return self.base_lr * cosine_multiplier(self.step, self.horizon)


class AdamW:
    """Decoupled weight decay Adam.

    Parameters are updated in place; ``state`` holds everything needed to
    resume (moments and step counter).
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3, horizon: int = 1000,
                 weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8,
                 grad_clip: float | None = None):
        self.params = list(params)
        self.grad_clip = grad_clip
        self.state = OptimizerState(lr, horizon, weight_decay, tuple(betas), eps)
        self.state.m = [np.zeros_like(p.data) for p in self.params]
        self.state.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        optimizer_step(self.state, self.params, grads, self.grad_clip)


def optimizer_step(state: OptimizerState, params: list[Tensor], grads: list[np.ndarray],
                   grad_clip: float | None = None) -> None:
    if len(params) != len(grads) or len(state.m) != len(params):
        raise ValueError("params, grads and optimizer moments must align")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
    if grad_clip is not None:
        total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
        if total > grad_clip:
            scale = grad_clip / (total + 1e-12)
            grads = [g * np.asarray(scale, dtype=g.dtype) for g in grads]
    lr = state.lr
    b1, b2 = state.betas
    t = state.step + 1
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        dt = p.data.dtype
        m *= dt.type(b1)
        m += dt.type(1.0 - b1) * g
        v *= dt.type(b2)
        v += dt.type(1.0 - b2) * (g * g)
        update = (m / dt.type(c1)) / (np.sqrt(v / dt.type(c2)) + dt.type(state.eps))
        if state.weight_decay:
            update = update + dt.type(state.weight_decay) * p.data
        p.data -= dt.type(lr) * update
    state.step = t
