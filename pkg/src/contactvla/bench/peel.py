"""Peel-and-rotate surrogate built on the rotor hand.

A tool presses on the object at a fixed world angle. Pushing the stroke
forward while the tool force stays inside [f_min, f_max] advances the
stroke; a finished stroke marks the arc under the tool as peeled. Between
strokes the hand must turn the object by a quarter turn so fresh surface
faces the tool. The rotor dynamics, domain randomisation and drop rule are
the ones used to train the rotation copilot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..backbone import ObservationBatch, ObsSpec
from ..copilot.history import ObsHistory, observation_frame
from ..copilot.rotor import (N_JOINTS, DomainRanges, PrivilegedInfo, RotorParams, RotorState,
                             env_reset, env_step, randomize_domain)
from ..flow import ActionPartition
from .common import FORCE_DIM, TACTILE_DIM, compute_pcr, sensor_lift

INSTRUCTION = 1
PARTITION = ActionPartition(arm=2, hand=N_JOINTS, waist=1)
SPEC = ObsSpec(vision=4, proprio=2 + N_JOINTS, force=FORCE_DIM, tactile=TACTILE_DIM)
BINS = 360

_J_FORCE = sensor_lift(7, FORCE_DIM, seed=21)
_J_TACTILE = sensor_lift(6, TACTILE_DIM, seed=22)


@dataclass
class PeelParams:
    tool_angle: float = -np.pi / 2  # between the two lower fingers
    arc_width: float = 0.75 * np.pi
    window: float = 0.125 * np.pi  # half-width of the vision window under the tool
    contact_depth: float = 0.5
    tool_k: float = 10.0
    f_min: float = 1.0
    f_max: float = 3.0
    depth_rate: float = 0.1
    stroke_rate: float = 0.3  # four full pushes finish a stroke with some slack for imprecise commands
    push_share: float = 0.2  # fraction of tool force transmitted to the object centre
    strokes: int = 4
    max_steps: int = 200
    randomize: bool = True


def _bins(center: np.ndarray, half: float) -> np.ndarray:
    """Boolean (n, BINS) mask of the arc [center - half, center + half] (object frame)."""
    grid = (np.arange(BINS) + 0.5) * 2 * np.pi / BINS
    d = np.angle(np.exp(1j * (grid[None, :] - center[:, None])))
    return np.abs(d) <= half


class PeelEnv:
    task = "peel"
    partition = PARTITION
    spec = SPEC

    def __init__(self, params: PeelParams | None = None, rotor: RotorParams | None = None,
                 ranges: DomainRanges | None = None):
        self.p = params or PeelParams()
        self.rp = rotor or RotorParams()
        self.ranges = ranges or (DomainRanges() if self.p.randomize else DomainRanges.nominal())

    @property
    def max_steps(self) -> int:
        return self.p.max_steps

    def reset(self, seeds) -> ObservationBatch:
        self.seeds = np.asarray(seeds, dtype=np.int64)
        n = self.n = len(self.seeds)
        domains, states = [], []
        for s in self.seeds:
            rng = np.random.default_rng([int(s), 9])
            dom = randomize_domain(rng, self.ranges, 1)
            domains.append(dom)
            states.append(env_reset(rng, dom, self.rp))
        self.domain = PrivilegedInfo(**{k: np.concatenate([getattr(d, k) for d in domains])
                                        for k in vars(domains[0])})
        self.state = RotorState(**{k: np.concatenate([getattr(s, k) for s in states])
                                   for k in vars(states[0])})
        self.target_dir = np.ones(n)
        self.depth = np.zeros(n)
        self.progress = np.zeros(n)
        self.tool_force = np.zeros(n)
        self.peeled = np.zeros((n, BINS), dtype=bool)
        self.strokes = np.zeros(n, dtype=np.int64)
        self.dropped = np.zeros(n, dtype=bool)
        self.done = np.zeros(n, dtype=bool)
        self.t = np.zeros(n, dtype=np.int64)
        self.history = ObsHistory(n)
        self.history.reset(observation_frame(self.state, self.target_dir, self.rp))
        return self.observe()

    # -- geometry ------------------------------------------------------------
    @property
    def turned(self) -> np.ndarray:
        return self.state.phi - self.state.phi0

    def tool_position(self) -> np.ndarray:
        """Object-frame angle currently under the tool."""
        return np.mod(self.p.tool_angle - self.turned, 2 * np.pi)

    def peeled_fraction(self) -> np.ndarray:
        return self.peeled.mean(axis=1)

    def unpeeled_under_tool(self) -> np.ndarray:
        win = _bins(self.tool_position(), self.p.window)
        return 1.0 - (self.peeled & win).sum(axis=1) / win.sum(axis=1)

    def in_band(self) -> np.ndarray:
        return (self.tool_force >= self.p.f_min) & (self.tool_force <= self.p.f_max)

    # -- dynamics --------------------------------------------------------------
    def step(self, action) -> ObservationBatch:
        p = self.p
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (self.n, PARTITION.dim):
            raise ValueError(f"action must be ({self.n}, {PARTITION.dim})")
        arm, hand, _other = PARTITION.split(a)
        live = ~self.done
        self.depth = np.where(live, np.clip(self.depth + p.depth_rate * arm[:, 0], 0.0, 1.0), self.depth)
        self.tool_force = p.tool_k * np.maximum(0.0, self.depth - p.contact_depth)
        push = np.zeros((self.n, 2))
        push[:, 0] = p.push_share * self.tool_force * -np.cos(p.tool_angle)
        push[:, 1] = p.push_share * self.tool_force * -np.sin(p.tool_angle)
        hand = np.where(live[:, None], hand, 0.0)
        new, _r, _terms, dropped, _timeout = env_step(self.state, hand, self.domain, self.rp, self.target_dir,
                                                     external_force=push)
        keep = live[:, None]
        for k in vars(new):
            cur = getattr(self.state, k)
            nxt = getattr(new, k)
            mask = keep if nxt.ndim == 2 else live
            setattr(self.state, k, np.where(mask, nxt, cur))
        self.dropped |= live & dropped

        advance = live & self.in_band() & ~self.dropped
        self.progress = np.where(advance, self.progress + p.stroke_rate * np.maximum(arm[:, 1], 0.0), self.progress)
        finished = self.progress >= 1.0 - 1e-9
        if finished.any():
            arc = _bins(self.tool_position(), p.arc_width / 2)
            self.peeled |= arc & finished[:, None]
            self.strokes += finished
            self.progress = np.where(finished, 0.0, self.progress)
        self.history.push(observation_frame(self.state, self.target_dir, self.rp))
        self.t = self.t + live
        complete = self.peeled.all(axis=1)
        self.done |= self.dropped | complete | (self.t >= p.max_steps)
        return self.observe()

    # -- sensing ---------------------------------------------------------------
    def copilot_observation(self) -> np.ndarray:
        return self.history.vector()

    def observe(self) -> ObservationBatch:
        s = self.state
        turned = self.turned
        vision = np.column_stack([self.unpeeled_under_tool(), self.peeled_fraction(),
                                  np.sin(turned), np.cos(turned)])
        proprio = np.column_stack([self.depth, self.progress, s.q - self.rp.q_default])
        raw_f = np.column_stack([self.tool_force / self.p.f_max, s.normal / 2.0, s.tangential / 2.0])
        raw_g = np.column_stack([s.normal / 2.0, s.tangential / 2.0])
        return ObservationBatch(vision=vision, instruction=np.full(self.n, INSTRUCTION), proprio=proprio,
                                force=raw_f @ _J_FORCE.T, tactile=raw_g @ _J_TACTILE.T)

    def outcomes(self) -> dict:
        frac = self.peeled_fraction()
        pcr = np.array([compute_pcr(f) for f in frac])
        return {"success": pcr >= 1.0, "pcr": pcr}


class PeelScript:
    """Stroke, then turn a quarter; the turn uses the copilot (trigger 1) or a hand gait (trigger 0)."""

    press_target = 0.7

    def __init__(self, copilot=None, gait=None):
        if (copilot is None) == (gait is None):
            raise ValueError("give exactly one of copilot or gait")
        self.copilot = copilot
        self.gait = gait
        self.rotating = None
        self.start = None

    def reset(self, n: int) -> None:
        self.rotating = np.zeros(n, dtype=bool)
        self.start = np.zeros(n)
        self.seen = np.zeros(n, dtype=np.int64)
        if self.gait is not None:
            self.gait.reset(n)

    def __call__(self, env: PeelEnv) -> tuple[np.ndarray, np.ndarray]:
        """Returns (action with trigger column, hand action the rotation skill would apply)."""
        if self.rotating is None or len(self.rotating) != env.n or env.t.max() == 0:
            self.reset(env.n)
        part = PARTITION
        new_stroke = env.strokes > self.seen
        self.seen = env.strokes.copy()
        start_turn = new_stroke & (env.strokes < env.p.strokes)
        self.start = np.where(start_turn, env.turned, self.start)
        self.rotating |= start_turn
        if self.gait is not None and start_turn.any():
            self.gait.phase[start_turn] = 0
        turned = env.turned - self.start
        self.rotating &= turned < np.pi / 2 - 0.02

        a = np.zeros((env.n, part.dim))
        arm0 = np.clip((self.press_target - env.depth) / env.p.depth_rate, -1.0, 1.0)
        arm0 = np.where(self.rotating, -1.0, arm0)
        arm1 = np.where(~self.rotating & env.in_band(), 1.0, 0.0)
        a[:, 0], a[:, 1] = arm0, arm1
        if self.copilot is not None:
            skill = self.copilot(env.copilot_observation())
        else:
            skill = self.gait(env.state, env.target_dir)
        hand = np.where(self.rotating[:, None], skill, 0.0)
        a[:, part.hand_columns] = hand
        if self.copilot is not None:
            a[:, part.trigger_index] = self.rotating.astype(np.float64)
        return a, skill
