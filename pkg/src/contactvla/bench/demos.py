"""Scripted demonstrations for the surrogate tasks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..copilot.scripted import ScriptedGait
from .common import EpisodeBuffer, EpisodeRecord
from .insertion import InsertionEnv, InsertionParams, InsertionScript
from .peel import PeelEnv, PeelParams, PeelScript


class CalibrationError(RuntimeError):
    """The scripted expert fails too often for the environment settings."""


def env_from_config(env_cfg):
    """Environment for an ``EnvConfig`` section."""
    over = {} if env_cfg.max_steps is None else {"max_steps": env_cfg.max_steps}
    if env_cfg.task == "insertion":
        over["vision_noise_ratio"] = env_cfg.vision_noise_ratio
    else:
        over["randomize"] = env_cfg.randomize
    return make_env(env_cfg.task, **over)


def make_env(task: str, **overrides):
    if task == "insertion":
        return InsertionEnv(InsertionParams(**overrides))
    if task == "peel":
        return PeelEnv(PeelParams(**overrides))
    raise ValueError(f"unknown task {task!r}")


# action column -> std of Gaussian noise on the executed command (insertion: vertical arm axis)
PERTURB = {"insertion": {1: 0.5}, "peel": {}}


def run_script(env, script: Callable, seeds, perturb: dict[int, float] | None = None) -> list[EpisodeRecord]:
    """Roll a scripted controller over one batch of episodes.

    ``perturb`` adds Gaussian noise to the executed command on the given
    action columns while the recorded label stays the controller's clean
    action, so the data shows how the expert recovers from states it would
    not visit itself.
    """
    perturb = perturb or {}
    obs = env.reset(seeds)
    buf = EpisodeBuffer(env.n)
    part = env.partition
    rngs = [np.random.default_rng([int(s), 13]) for s in np.asarray(seeds)]
    while not env.done.all():
        out = script(env)
        action = out[0] if isinstance(out, tuple) else out
        trigger = (action[:, part.trigger_index] > 0.5).astype(np.float64)
        source = np.where(trigger > 0, "copilot", "vla")
        buf.add(obs, action, trigger, source, ~env.done)
        executed = action
        if perturb:
            executed = action.copy()
            cols = list(perturb)
            noise = np.stack([r.normal(0.0, 1.0, len(cols)) for r in rngs]) * np.array([perturb[c] for c in cols])
            executed[:, cols] = np.clip(action[:, cols] + noise, -1.0, 1.0)
        obs = env.step(executed)
    res = env.outcomes()
    ids = np.asarray(seeds)
    return buf.records(env.task, seeds, ids, res["success"], res["pcr"])


def demonstrator(task: str, copilot: Callable | None = None, hand: str = "copilot") -> Callable:
    """Scripted expert for ``task``; peel needs a copilot unless ``hand='gait'``."""
    if task == "insertion":
        return InsertionScript("expert")
    if hand == "gait":
        return PeelScript(gait=ScriptedGait())
    if copilot is None:
        raise ValueError("peel demonstrations need a trained copilot (or hand='gait')")
    return PeelScript(copilot=copilot)


def generate_demos(task: str, count: int, seed: int = 0, copilot: Callable | None = None,
                   hand: str = "copilot", success_filter: bool = True, batch: int = 50,
                   env=None, perturb: dict[int, float] | None = None) -> list[EpisodeRecord]:
    """``count`` demonstrations; failures are discarded and replaced when filtering.

    Raises CalibrationError if more than half of the attempts fail.
    """
    env = env if env is not None else make_env(task)
    script = demonstrator(task, copilot, hand)
    perturb = PERTURB[task] if perturb is None else perturb
    kept: list[EpisodeRecord] = []
    attempts = failures = 0
    next_seed = seed * 1_000_003
    while len(kept) < count:
        n = min(batch, max(1, count - len(kept)))
        seeds = np.arange(next_seed, next_seed + n)
        next_seed += n
        for ep in run_script(env, script, seeds, perturb):
            attempts += 1
            if success_filter and not ep.success:
                failures += 1
                if attempts >= 20 and failures > attempts / 2:
                    raise CalibrationError(f"{task} expert failed {failures}/{attempts} attempts")
                continue
            if len(kept) < count:
                kept.append(ep)
    for i, ep in enumerate(kept):
        ep.episode_id = i
    return kept
