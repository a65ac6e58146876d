"""Teacher/student networks for the rotation primitive.

The teacher sees ``[o_t | enc(e_t)]``: the observation history concatenated
with a latent of the privileged state. The student replaces the privileged
encoder with one that reads only ``o_t`` and reuses the teacher's action head.

Both act in a canonical frame: episodes asking for clockwise rotation are
mirrored into counter-clockwise ones on the way in, and the action is mirrored
back on the way out, so one learned gait serves both directions.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import F, Parameter, Tensor, no_grad
from ..nn import Linear, Module
from .history import ACTION_PERM, ACTION_SIGN, OBS_DIM, PRIV_DIM, canonical
from .rotor import N_JOINTS

LOG2PI = float(np.log(2 * np.pi))
_ACTION_MIRROR = np.zeros((N_JOINTS, N_JOINTS))
_ACTION_MIRROR[ACTION_PERM, np.arange(N_JOINTS)] = ACTION_SIGN


class Trunk(Module):
    """tanh MLP with any number of hidden layers."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, out_scale: float = 1.0):
        self.layers = [Linear(a, b, rng, scale=out_scale if i == len(sizes) - 2 else 1.0)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    def forward(self, x) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.tanh(x)
        return x


class PolicyNets(Module):
    def __init__(self, latent: int = 8, hidden: int = 128, seed: int = 0, init_log_std: float = -0.5):
        rng = np.random.default_rng(seed)
        self.latent = latent
        self.encoder = Trunk([PRIV_DIM, 64, latent], rng)
        self.actor = Trunk([OBS_DIM + latent, hidden, hidden, N_JOINTS], rng, out_scale=0.1)
        self.critic = Trunk([OBS_DIM + latent, hidden, hidden, 1], rng)
        self.log_std = Parameter(np.full(N_JOINTS, init_log_std), requires_grad=True)
        self.student = Trunk([OBS_DIM, hidden, hidden, latent], rng)

    def teacher_parameters(self) -> list[Tensor]:
        return (self.encoder.parameters() + self.actor.parameters() + self.critic.parameters()
                + [self.log_std])

    def encode_privileged(self, priv, obs) -> Tensor:
        _, priv_c, _ = canonical(_np(obs), _np(priv))
        return F.tanh(self.encoder(_t(priv_c, self)))

    def encode_student(self, obs) -> Tensor:
        obs_c, _, _ = canonical(_np(obs))
        return F.tanh(self.student(_t(obs_c, self)))

    def mean(self, obs, latent: Tensor) -> Tensor:
        obs_c, _, m = canonical(_np(obs))
        mu = F.tanh(self.actor(F.concat([_t(obs_c, self), latent], axis=-1)))
        if not m.any():
            return mu
        flip = _t(m.astype(np.float64)[:, None], self)
        return mu + flip * (mu @ _t(_ACTION_MIRROR, self) - mu)

    def value(self, obs, latent: Tensor) -> Tensor:
        obs_c, _, _ = canonical(_np(obs))
        return self.critic(F.concat([_t(obs_c, self), latent], axis=-1)).reshape(-1)

    def log_prob(self, mean: Tensor, action) -> Tensor:
        a = _t(action, self)
        std = F.exp(self.log_std)
        z = (a - mean) / std
        per_dim = F.square(z) * -0.5 - self.log_std - 0.5 * LOG2PI
        return per_dim.sum(axis=-1)

    def entropy(self) -> Tensor:
        return (self.log_std + 0.5 * (1.0 + LOG2PI)).sum()

    # -- numpy conveniences ----------------------------------------------
    def teacher_act(self, obs, priv, rng=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sampled action (or mean when rng is None), its log-prob and the value estimate."""
        with no_grad():
            z = self.encode_privileged(priv, obs)
            mu = self.mean(obs, z)
            v = self.value(obs, z).data.astype(np.float64)
            if rng is None:
                a = mu.data.astype(np.float64)
            else:
                std = np.exp(self.log_std.data.astype(np.float64))
                a = mu.data + std * rng.standard_normal(mu.shape)
            logp = self.log_prob(mu, a).data.astype(np.float64)
        return a, logp, v

    def student_act(self, obs) -> np.ndarray:
        with no_grad():
            return self.mean(obs, self.encode_student(obs)).data.astype(np.float64)


def _np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _t(x, mod: Module) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=mod.log_std.dtype)
