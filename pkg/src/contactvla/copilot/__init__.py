"""In-hand rotation primitive: rotor surrogate, PPO teacher, distilled student."""

from __future__ import annotations

import numpy as np

from .distill import DistillConfig, distill_student, evaluate_rotation, rotation_policy, teacher_rollouts
from .history import OBS_DIM, ObsHistory, observation_frame, privileged_features
from .nets import PolicyNets
from .ppo import PPOConfig, clipped_surrogate, gae, load_policy, ppo_train, save_checkpoint
from .rotor import (DomainRanges, InitializationError, PrivilegedInfo, RotorEnv, RotorParams, RotorState,
                    compute_reward, env_reset, env_step, integrate_joint_targets, randomize_domain)
from .scripted import ScriptedGait


def copilot_act(obs, nets: PolicyNets) -> np.ndarray:
    """Deterministic student action for an observation history (or its flattened vectors)."""
    if isinstance(obs, ObsHistory):
        obs = obs.vector()
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    if obs.shape[-1] != OBS_DIM:
        raise ValueError(f"copilot observations have {OBS_DIM} entries, got {obs.shape[-1]}")
    return nets.student_act(obs)


__all__ = [
    "DistillConfig", "DomainRanges", "InitializationError", "OBS_DIM", "ObsHistory", "PPOConfig",
    "PolicyNets", "PrivilegedInfo", "RotorEnv", "RotorParams", "RotorState", "ScriptedGait",
    "clipped_surrogate", "compute_reward", "copilot_act", "distill_student", "env_reset", "env_step",
    "evaluate_rotation", "gae", "integrate_joint_targets", "load_policy", "observation_frame",
    "ppo_train", "privileged_features", "randomize_domain", "rotation_policy", "save_checkpoint",
    "teacher_rollouts",
]
