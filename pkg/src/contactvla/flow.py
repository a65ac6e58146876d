"""Flow-matching objective and Euler sampler for action chunks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import F, NumericError, Tensor

BETA_ALPHA = 1.5


@dataclass(frozen=True)
class ActionPartition:
    """Column ranges of the action vector: ``[arm | hand | other]``.

    ``other`` holds the waist dims followed by the trigger scalar, which is
    always the last column.
    """

    arm: int
    hand: int
    waist: int = 1

    @property
    def dim(self) -> int:
        return self.arm + self.hand + self.waist + 1

    @property
    def arm_slice(self) -> slice:
        return slice(0, self.arm)

    @property
    def hand_slice(self) -> slice:
        return slice(self.arm, self.arm + self.hand)

    @property
    def other_slice(self) -> slice:
        return slice(self.arm + self.hand, self.dim)

    @property
    def trigger_index(self) -> int:
        return self.dim - 1

    @property
    def arm_other_columns(self) -> np.ndarray:
        return np.r_[np.arange(self.arm), np.arange(self.arm + self.hand, self.dim)]

    @property
    def hand_columns(self) -> np.ndarray:
        return np.arange(self.arm, self.arm + self.hand)

    def split(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return a[..., self.arm_slice], a[..., self.hand_slice], a[..., self.other_slice]


def timestep_from_uniform(u):
    """Inverse CDF of Beta(1.5, 1): the CDF is t**1.5."""
    return np.asarray(u, dtype=np.float64) ** (1.0 / BETA_ALPHA)


def sample_timestep(rng: np.random.Generator, size=None):
    return timestep_from_uniform(rng.uniform(0.0, 1.0, size))


def interpolate(x0, eps, t):
    """x_t = t * eps + (1 - t) * x0; ``t`` broadcasts over trailing axes."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    t = np.asarray(t, dtype=x0.dtype)
    t = t.reshape(t.shape + (1,) * (x0.ndim - t.ndim))
    return t * eps + (1 - t) * x0


def fm_loss(v_pred, x0, eps) -> Tensor:
    """Mean squared error between the predicted velocity and ``eps - x0``."""
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    v_pred = F.as_tensor(v_pred)
    if v_pred.shape != x0.shape or x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {v_pred.shape}, {x0.shape}, {eps.shape}")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(eps)) and np.all(np.isfinite(v_pred.data))):
        raise NumericError("non-finite input to flow-matching loss")
    target = Tensor((eps - x0).astype(v_pred.dtype), dtype=v_pred.dtype)
    diff = v_pred - target
    return F.mean(diff * diff)


def euler_sample(velocity_fn: Callable[[np.ndarray, float], np.ndarray], noise: np.ndarray,
                 n_steps: int = 10) -> np.ndarray:
    """Integrate dx/dt = v(x, t) from t=1 to t=0 with ``n_steps`` uniform steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.array(noise, copy=True)
    dt = -1.0 / n_steps
    for k in range(n_steps):
        t = 1.0 - k / n_steps
        v = np.asarray(velocity_fn(x, t))
        x = x + np.asarray(dt, dtype=x.dtype) * v
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite sample at Euler step {k}")
    return x
