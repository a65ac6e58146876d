"""Closed-loop execution: chunked inference with per-step hand dispatch.

Each chunk is generated once and its first ``h_exec`` rows are executed. At
every step the trigger column decides who drives the hand: the policy's own
hand columns (option 1) or the rotation copilot (option 2, when the trigger
exceeds 0.5 and a copilot is loaded). Arm and waist always come from the
policy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .bench.common import EpisodeBuffer, EpisodeRecord

log = logging.getLogger(__name__)

TRIGGER_THRESHOLD = 0.5


class Option(Enum):
    VLA = 1
    COPILOT = 2


def select_option(c: float, copilot_loaded: bool) -> Option:
    if not np.isfinite(c):
        raise ValueError("trigger value must be finite")
    if c > TRIGGER_THRESHOLD:
        if copilot_loaded:
            return Option.COPILOT
        log.warning("trigger %.3f requests the copilot but none is loaded; hand stays with the policy", c)
    return Option.VLA


@dataclass
class ExecutorConfig:
    horizon: int = 8
    h_exec: int | None = None  # default: half the chunk
    euler_steps: int = 10
    copilot: Callable[[np.ndarray], np.ndarray] | None = None
    trigger_enabled: bool = True  # False for the no-copilot variant: c is forced to 0

    def __post_init__(self):
        if self.h_exec is None:
            self.h_exec = max(1, self.horizon // 2)
        if not 1 <= self.h_exec <= self.horizon:
            raise ValueError(f"h_exec must lie in [1, {self.horizon}]")

    @property
    def copilot_loaded(self) -> bool:
        return self.copilot is not None


@dataclass
class RolloutResult:
    episodes: list[EpisodeRecord]
    replans: int
    steps: int
    triggers: np.ndarray  # c value of every executed step (live episodes only)
    hand_sources: np.ndarray  # "vla" / "copilot" for the same steps
    failed_chunks: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def outcomes(self) -> dict:
        return {"success": np.array([e.success for e in self.episodes]),
                "pcr": np.array([e.pcr if e.pcr is not None else np.nan for e in self.episodes])}


def dispatch(chunk_row: np.ndarray, part, cfg: ExecutorConfig, copilot_obs: Callable[[], np.ndarray] | None):
    """Build the executed command for one step of a batch; returns (action, c, copilot mask)."""
    act = np.array(chunk_row, dtype=np.float64, copy=True)
    c = np.clip(act[:, part.trigger_index], 0.0, 1.0)
    if not cfg.trigger_enabled:
        c = np.zeros_like(c)
    act[:, part.trigger_index] = c
    use = np.array([select_option(float(ci), cfg.copilot_loaded) is Option.COPILOT for ci in c])
    if use.any():
        hand = np.asarray(cfg.copilot(copilot_obs()), dtype=np.float64)
        act[np.ix_(use, part.hand_columns)] = hand[use]
    return act, c, use


def rollout(env, policy: Callable, cfg: ExecutorConfig, seeds) -> RolloutResult:
    """Run one batch of episodes (one per seed) to completion."""
    part = env.partition
    obs = env.reset(seeds)
    n = env.n
    buf = EpisodeBuffer(n)
    failed = np.zeros(n, dtype=bool)
    replans = steps = 0
    triggers, sources = [], []
    copilot_obs = getattr(env, "copilot_observation", None)
    while not env.done.all():
        chunk = np.asarray(policy(obs), dtype=np.float64)
        replans += 1
        if chunk.shape[1:] != (cfg.horizon, part.dim):
            raise ValueError(f"policy returned chunk {chunk.shape}, expected (n, {cfg.horizon}, {part.dim})")
        bad = ~np.all(np.isfinite(chunk.reshape(n, -1)), axis=1)
        if bad.any():
            failed |= bad & ~env.done
            env.done |= bad
            chunk = np.where(bad[:, None, None], 0.0, chunk)
        for k in range(cfg.h_exec):
            if env.done.all():
                break
            live = ~env.done
            act, c, use = dispatch(chunk[:, k], part, cfg, copilot_obs)
            src = np.where(use, "copilot", "vla")
            buf.add(obs, act, (c > TRIGGER_THRESHOLD).astype(np.float64), src, live)
            triggers.append(c[live])
            sources.append(src[live])
            obs = env.step(act)
            steps += 1
    res = env.outcomes()
    success = res["success"] & ~failed
    episodes = buf.records(env.task, seeds, seeds, success, res["pcr"])
    return RolloutResult(episodes, replans, steps,
                         np.concatenate(triggers) if triggers else np.zeros(0),
                         np.concatenate(sources) if sources else np.zeros(0, dtype=str), failed)
