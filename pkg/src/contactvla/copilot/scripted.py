"""Hand-written finger gait used as the teleoperation-like rotation baseline.

Fingers sweep in the target direction at a fixed rate; the finger that
reaches the end of its tangential range lifts, returns and re-presses at the
nominal squeeze. Nothing adapts to friction or mass, which is why it drops
heavy or slippery objects during the one-finger-off phase.
"""

from __future__ import annotations

import numpy as np

from .rotor import N_FINGERS, N_JOINTS, RotorParams, RotorState


class ScriptedGait:
    def __init__(self, params: RotorParams | None = None, sweep: float = 0.5, lift: float = 0.08,
                 margin: float = 0.08):
        self.p = params or RotorParams()
        self.sweep = sweep
        self.lift = lift
        self.margin = margin
        self.phase: np.ndarray | None = None  # 0 press+sweep, 1 lift, 2 return, 3 press

    def reset(self, n: int) -> None:
        self.phase = np.zeros((n, N_FINGERS), dtype=np.int64)

    def __call__(self, state: RotorState, target_dir) -> np.ndarray:
        n = len(state.phi)
        if self.phase is None or len(self.phase) != n:
            self.reset(n)
        p = self.p
        d = np.asarray(target_dir, dtype=np.float64).reshape(-1, 1)
        s = state.q[:, 1::2] * d  # progress along the sweep direction
        r_tgt = state.q_target[:, 0::2]
        r_home = p.q_default[0]
        lo, hi = p.tangential_limits[0] + self.margin, p.tangential_limits[1] - self.margin
        ph = self.phase
        busy = np.isin(ph, (1, 2, 3))
        # only one finger may leave contact at a time
        start = (ph == 0) & (s >= hi) & ~busy.any(axis=1, keepdims=True)
        first = np.cumsum(start, axis=1) == 1
        ph[start & first] = 1
        lifted = (ph == 1) & (r_tgt >= r_home + self.lift - 1e-9)
        ph[lifted] = 2
        back = (ph == 2) & (s <= lo)
        ph[back] = 3
        pressed = (ph == 3) & (r_tgt <= r_home + 1e-9)
        ph[pressed] = 0

        a = np.zeros((n, N_JOINTS))
        ar = np.zeros((n, N_FINGERS))
        at = np.zeros((n, N_FINGERS))
        scale = p.action_scale
        ar[ph == 1] = 1.0
        ar[ph == 3] = np.clip((r_home - r_tgt[ph == 3]) / scale, -1.0, 0.0)
        ar[ph == 0] = np.clip((r_home - r_tgt[ph == 0]) / scale, -1.0, 1.0)
        at[ph == 0] = self.sweep
        at[ph == 2] = -1.0
        a[:, 0::2] = ar
        a[:, 1::2] = at * d
        return a
