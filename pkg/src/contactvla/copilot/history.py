"""Three-step observation history fed to the rotation policies."""

from __future__ import annotations

import numpy as np

from .rotor import N_FINGERS, N_JOINTS, PrivilegedInfo, RotorParams, RotorState

HISTORY = 3
FRAME_DIM = N_JOINTS + 2 * N_FINGERS + 1
OBS_DIM = HISTORY * FRAME_DIM
PRIV_DIM = 14
FORCE_SCALE = 2.0


def observation_frame(state: RotorState, target_dir, p: RotorParams) -> np.ndarray:
    """(q - q_default, N, F, target direction) for every env, roughly unit scaled."""
    d = np.broadcast_to(np.asarray(target_dir, dtype=np.float64), state.phi.shape)
    return np.column_stack([
        state.q - p.q_default,
        state.normal / FORCE_SCALE,
        state.tangential / FORCE_SCALE,
        d,
    ])


def privileged_features(domain: PrivilegedInfo, state: RotorState) -> np.ndarray:
    """Physical parameters plus object pose/velocity; the COM offset is expressed in the world frame."""
    c, s = np.cos(state.phi), np.sin(state.phi)
    com = np.column_stack([c * domain.com_offset[:, 0] - s * domain.com_offset[:, 1],
                           s * domain.com_offset[:, 0] + c * domain.com_offset[:, 1]])
    return np.column_stack([
        domain.friction, np.log(domain.mass), domain.inertia, com / 0.08, (domain.scale - 1.0) / 0.03,
        (domain.kp - 100.0) / 20.0, (domain.kd - 20.0) / 4.0, (domain.gravity - 1.0) / 0.1,
        state.pos * 10.0, state.vel, state.omega,
    ])


# Mirroring the hand about its vertical axis (x -> -x) maps the task onto itself:
# fingers 1 and 2 swap, tangential quantities and spin flip sign, and so does the
# target direction. The policies act in the frame where the target is +1.
_JOINT_PERM = np.array([0, 1, 4, 5, 2, 3])
_JOINT_SIGN = np.array([1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
_FINGER_PERM = np.array([0, 2, 1])
_FRAME_PERM = np.concatenate([_JOINT_PERM, N_JOINTS + _FINGER_PERM, N_JOINTS + N_FINGERS + _FINGER_PERM,
                              [FRAME_DIM - 1]])
_FRAME_SIGN = np.concatenate([_JOINT_SIGN, np.ones(N_FINGERS), -np.ones(N_FINGERS), [-1.0]])
OBS_PERM = np.concatenate([k * FRAME_DIM + _FRAME_PERM for k in range(HISTORY)])
OBS_SIGN = np.tile(_FRAME_SIGN, HISTORY)
PRIV_SIGN = np.ones(PRIV_DIM)
PRIV_SIGN[[3, 9, 11, 13]] = -1.0  # com x, pos x, vel x, omega
ACTION_PERM = _JOINT_PERM
ACTION_SIGN = _JOINT_SIGN


def mirror_mask(obs: np.ndarray) -> np.ndarray:
    """Rows whose target direction (last entry of the newest frame) is negative."""
    return np.asarray(obs)[:, OBS_DIM - 1] < 0


def mirror_obs(obs: np.ndarray) -> np.ndarray:
    return np.asarray(obs)[:, OBS_PERM] * OBS_SIGN


def mirror_priv(priv: np.ndarray) -> np.ndarray:
    return np.asarray(priv) * PRIV_SIGN


def canonical(obs: np.ndarray, priv: np.ndarray | None = None):
    """Map rows with target -1 into the +1 frame; returns (obs, priv, mask)."""
    obs = np.asarray(obs, dtype=np.float64)
    m = mirror_mask(obs)
    obs_c = np.where(m[:, None], mirror_obs(obs), obs)
    priv_c = None if priv is None else np.where(m[:, None], mirror_priv(priv), priv)
    return obs_c, priv_c, m


class ObsHistory:
    """Ring buffer of the last three frames per env, oldest first."""

    def __init__(self, n: int):
        self.buf = np.zeros((n, HISTORY, FRAME_DIM))

    def reset(self, frame: np.ndarray, idx=None) -> None:
        """Fill every slot (or the slots of envs ``idx``) with the initial frame."""
        if idx is None:
            self.buf[:] = frame[:, None, :]
        else:
            self.buf[idx] = frame[:, None, :]

    def push(self, frame: np.ndarray) -> None:
        self.buf[:, :-1] = self.buf[:, 1:]
        self.buf[:, -1] = frame

    def vector(self) -> np.ndarray:
        return self.buf.reshape(len(self.buf), OBS_DIM).copy()

    def latest(self) -> np.ndarray:
        return self.buf[:, -1].copy()
