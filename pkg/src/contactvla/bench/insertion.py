"""Peg-in-hole surrogate where only contact forces locate the hole precisely.

The camera proxy reports the hole centre with a per-episode error about three
times the insertion tolerance, so reaching the estimate and pushing succeeds
only occasionally. Pressing on the surface near the hole produces a chamfer
force that points toward the true centre; a policy that reads it can slide
into place. The peg only catches the hole edge when moving slowly, so fast
blind sweeps skip over it. The tactile proxy reports grip slip, which builds
up when the peg is pressed much harder than needed, plus a noisy shear cue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..backbone import ObservationBatch, ObsSpec
from ..flow import ActionPartition
from .common import FORCE_DIM, TACTILE_DIM, sensor_lift

INSTRUCTION = 0
PARTITION = ActionPartition(arm=2, hand=1, waist=1)
SPEC = ObsSpec(vision=3, proprio=3, force=FORCE_DIM, tactile=TACTILE_DIM)


@dataclass
class InsertionParams:
    tolerance: float = 0.02
    vision_noise_ratio: float = 3.0
    hole_range: float = 0.15
    start_range: float = 0.25
    start_height: tuple[float, float] = (0.15, 0.25)
    depth: float = 0.05
    step: float = 0.04  # metres per unit action
    contact_k: float = 50.0
    chamfer_width: float = 0.1
    chamfer_gain: float = 0.8
    catch_speed: float = 0.01  # faster lateral motion skips over the hole edge
    slip_force: float = 2.0
    slip_rate: float = 0.3
    shear_saturation: float = 2.0
    shear_noise: float = 0.3
    max_push: float = 0.1
    max_steps: int = 40

    @property
    def vision_noise(self) -> float:
        return self.vision_noise_ratio * self.tolerance


_J_FORCE = sensor_lift(3, FORCE_DIM, seed=11)
_J_TACTILE = sensor_lift(6, TACTILE_DIM, seed=12)


class InsertionEnv:
    """Batch of independent insertion episodes; episode ``i`` is driven by ``seeds[i]``."""

    task = "insertion"
    partition = PARTITION
    spec = SPEC

    def __init__(self, params: InsertionParams | None = None):
        self.p = params or InsertionParams()

    @property
    def max_steps(self) -> int:
        return self.p.max_steps

    def reset(self, seeds) -> ObservationBatch:
        p = self.p
        self.seeds = np.asarray(seeds, dtype=np.int64)
        n = len(self.seeds)
        self.n = n
        hole = np.zeros(n)
        noise = np.zeros(n)
        x0 = np.zeros(n)
        z0 = np.zeros(n)
        self._shear_noise = np.zeros((n, p.max_steps + 1, 3))
        for i, s in enumerate(self.seeds):
            rng = np.random.default_rng([int(s), 7])
            hole[i] = rng.uniform(-p.hole_range, p.hole_range)
            noise[i] = rng.normal(0.0, p.vision_noise)
            x0[i] = rng.uniform(-p.start_range, p.start_range)
            z0[i] = rng.uniform(*p.start_height)
            self._shear_noise[i] = rng.normal(0.0, p.shear_noise, (p.max_steps + 1, 3))
        self.hole = hole
        self.hole_estimate = hole + noise
        self.x, self.z = x0, z0
        self.z_cmd = z0.copy()
        self.grip = np.full(n, 0.5)
        self.inserted = np.zeros(n, dtype=bool)
        self.force_xz = np.zeros((n, 2))
        self.slip = np.zeros(n)
        self.lost = np.zeros(n, dtype=bool)
        self.success = np.zeros(n, dtype=bool)
        self.done = np.zeros(n, dtype=bool)
        self.t = np.zeros(n, dtype=np.int64)
        return self.observe()

    # -- physics -------------------------------------------------------------
    def step(self, action) -> ObservationBatch:
        p = self.p
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        if a.shape != (self.n, PARTITION.dim):
            raise ValueError(f"action must be ({self.n}, {PARTITION.dim})")
        arm, hand, _other = PARTITION.split(a)
        live = ~self.done
        dx = np.where(live, p.step * arm[:, 0], 0.0)
        dz = np.where(live, p.step * arm[:, 1], 0.0)
        self.grip = np.where(live, 0.5 * (hand[:, 0] + 1.0), self.grip)

        x = self.x + dx
        # inside the hole the walls pin the peg laterally
        x = np.where(self.inserted, np.clip(x, self.hole - p.tolerance, self.hole + p.tolerance), x)
        aligned = np.abs(x - self.hole) < p.tolerance
        z_cmd = self.z_cmd + dz
        enter = aligned & (z_cmd < 0) & ((np.abs(dx) <= p.catch_speed) | self.inserted)
        self.inserted |= enter & live
        floor = np.where(self.inserted, -p.depth, 0.0)
        z = np.maximum(z_cmd, floor)
        blocked = (z_cmd < floor) & ~self.inserted
        push = np.where(blocked, floor - z_cmd, 0.0)
        fz = p.contact_k * push
        lateral = np.clip((self.hole - x) / p.chamfer_width, -1.0, 1.0)
        fx = np.where(blocked, p.chamfer_gain * fz * lateral, 0.0)
        # the commanded height does not wind up below the surface indefinitely
        self.z_cmd = np.where(live, np.maximum(z_cmd, floor - p.max_push), self.z_cmd)
        self.x = np.where(live, x, self.x)
        self.z = np.where(live, z, self.z)
        self.force_xz = np.where(live[:, None], np.column_stack([fx, fz]), 0.0)

        slip_force = p.slip_force * (0.5 + self.grip)
        self.slip = self.slip + np.where(live, p.slip_rate * np.maximum(0.0, fz - slip_force), 0.0)
        self.lost |= live & (self.slip >= 1.0)
        self.success |= live & self.inserted & (self.z <= -p.depth + 1e-9) & ~self.lost
        self.t = self.t + live
        self.done |= self.success | self.lost | (self.t >= p.max_steps)
        return self.observe()

    # -- sensing -------------------------------------------------------------
    def raw_force(self) -> np.ndarray:
        return np.column_stack([self.force_xz, np.zeros(self.n)])

    def raw_tactile(self) -> np.ndarray:
        p = self.p
        slip = np.minimum(self.slip, 1.0)[:, None] * np.array([1.0, 0.8, 0.6])
        t = np.minimum(self.t, p.max_steps)
        noise = self._shear_noise[np.arange(self.n), t]
        contact = (self.force_xz[:, 1] > 0)[:, None]
        shear = np.tanh(self.force_xz[:, :1] / p.shear_saturation) * np.array([1.0, 0.7, 0.4])
        return np.column_stack([slip, np.where(contact, shear + noise, 0.0)])

    def observe(self) -> ObservationBatch:
        vision = np.column_stack([self.x, self.z, self.hole_estimate])
        proprio = np.column_stack([self.x, self.z, self.grip])
        return ObservationBatch(vision=vision, instruction=np.full(self.n, INSTRUCTION),
                                proprio=proprio, force=self.raw_force() @ _J_FORCE.T,
                                tactile=self.raw_tactile() @ _J_TACTILE.T)

    def outcomes(self) -> dict:
        return {"success": self.success.copy(), "pcr": None}


# -- scripted controllers ----------------------------------------------------
def _toward(target, current, step, gain=1.0):
    return np.clip(gain * (target - current) / step, -1.0, 1.0)


def _assemble(arm_x, arm_z, grip=0.0):
    n = len(arm_x)
    a = np.zeros((n, PARTITION.dim))
    a[:, 0], a[:, 1] = arm_x, arm_z
    a[:, 2] = grip
    return a


class InsertionScript:
    """Approach the camera estimate, touch down, then correct laterally.

    ``mode`` chooses the lateral cue after touch-down: ``"expert"`` uses the
    true hole position (privileged), ``"force"`` follows the chamfer force,
    ``"vision"`` does not correct at all.
    """

    hover = 0.03
    press = 0.02  # commanded depth below the surface while searching

    def __init__(self, mode: str = "expert"):
        if mode not in ("expert", "force", "vision"):
            raise ValueError(f"unknown insertion script mode {mode!r}")
        self.mode = mode

    def __call__(self, env: InsertionEnv) -> np.ndarray:
        p = env.p
        x, z = env.x, env.z
        est = env.hole_estimate
        touching = env.force_xz[:, 1] > 0
        far = np.abs(est - x) > 1e-3
        # phase A: fly to the estimate above the surface
        ax = _toward(est, x, p.step)
        hold = _toward(-self.press, env.z_cmd, p.step)
        # descend proportionally so the first touch lands as a light press
        az = np.where(far & ~touching & ~env.inserted, _toward(self.hover, z, p.step), hold)
        if self.mode == "vision":
            search = np.zeros_like(x)
        elif self.mode == "expert":
            search = _toward(env.hole, x, p.step, gain=0.5)
        else:
            search = np.sign(env.force_xz[:, 0]) * np.minimum(1.0, np.abs(env.force_xz[:, 0]) * 5.0) * 0.5
        # phase B: in contact, hold a light press and slide along the lateral cue
        ax = np.where(touching | env.inserted, search, ax)
        az = np.where(env.inserted, -1.0, az)
        return _assemble(ax, az)
