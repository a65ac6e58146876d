"""Planar rotor-hand surrogate: a disk held by three PD-tracked fingers.

Each finger has a radial joint (fingertip distance from the hand centre) and
a tangential joint (angular offset of the fingertip around the centre).
Contacts are penalty springs; tangential friction is a clamped viscous law
inside the Coulomb cone. The out-of-plane share of gravity has to be carried
by friction, so the grasp holds only while ``mu * sum(N) >= weight``; a drop
is declared after ``drop_steps`` consecutive steps below that level.

All arrays carry a leading environment axis so many instances step together.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

N_FINGERS = 3
N_JOINTS = 2 * N_FINGERS
FINGER_ANGLES = np.pi / 2 + np.arange(N_FINGERS) * 2 * np.pi / 3


class InitializationError(RuntimeError):
    """Stable-grasp rejection sampling gave up."""


@dataclass
class PrivilegedInfo:
    """Physical parameters hidden from the deployed policy (one row per env)."""

    friction: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    com_offset: np.ndarray  # (n, 2)
    scale: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    gravity: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        if np.any(self.friction <= 0) or np.any(self.inertia <= 0):
            raise ValueError("friction and inertia must be positive")

    def __len__(self) -> int:
        return len(self.friction)

    def take(self, idx) -> "PrivilegedInfo":
        return PrivilegedInfo(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def vector(self) -> np.ndarray:
        return np.column_stack([
            self.friction, np.log(self.mass), self.inertia, self.com_offset, self.scale,
            self.kp / 100.0, self.kd / 20.0, self.gravity,
        ])


@dataclass
class DomainRanges:
    friction: tuple[float, float] = (0.4, 1.2)  # log-uniform
    mass: tuple[float, float] = (0.8, 1.25)  # log-uniform
    com_offset: tuple[float, float] = (0.0, 0.08)  # radius, uniform
    scale: tuple[float, float] = (0.97, 1.03)
    kp: tuple[float, float] = (80.0, 120.0)
    kd: tuple[float, float] = (16.0, 24.0)
    gravity: tuple[float, float] = (0.9, 1.1)

    @classmethod
    def nominal(cls) -> "DomainRanges":
        return cls(friction=(0.8, 0.8), mass=(1.0, 1.0), com_offset=(0.0, 0.0), scale=(1.0, 1.0),
                   kp=(100.0, 100.0), kd=(20.0, 20.0), gravity=(1.0, 1.0))


def randomize_domain(rng: np.random.Generator, ranges: DomainRanges | None = None, n: int = 1) -> PrivilegedInfo:
    ranges = ranges or DomainRanges()
    for f in fields(ranges):
        lo, hi = getattr(ranges, f.name)
        if lo > hi:
            raise ValueError(f"inverted range for {f.name}: ({lo}, {hi})")

    def uni(r):
        return rng.uniform(r[0], r[1], n)

    def loguni(r):
        return np.exp(rng.uniform(np.log(r[0]), np.log(r[1]), n))

    friction = loguni(ranges.friction)
    mass = loguni(ranges.mass)
    scale = uni(ranges.scale)
    rad = uni(ranges.com_offset)
    ang = rng.uniform(0, 2 * np.pi, n)
    return PrivilegedInfo(
        friction=friction, mass=mass, inertia=0.5 * mass * scale**2,
        com_offset=np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]),
        scale=scale, kp=uni(ranges.kp), kd=uni(ranges.kd), gravity=uni(ranges.gravity),
    )


@dataclass
class RotorParams:
    radius: float = 1.0
    contact_k: float = 200.0
    tangential_k: float = 4.0
    ang_damping: float = 0.5
    lin_damping: float = 2.0
    palm_k: float = 40.0  # in-plane centring spring from the palm
    tilt: float = 0.25  # hand tilt; sin(tilt) of gravity acts in-plane
    dt: float = 0.05
    substeps: int = 5
    action_scale: float = 0.1
    drop_steps: int = 10
    horizon: int = 80
    default_squeeze: float = 0.03
    radial_limits: tuple[float, float] = (0.75, 1.4)
    tangential_limits: tuple[float, float] = (-0.6, 0.6)
    init_joint_noise: float = 0.005
    init_tangential_spread: float = 0.3
    init_object_spread: float = 0.01
    settle_steps: int = 20
    success_angle: float = np.pi / 2
    reward_weights: tuple[float, float, float, float, float] = (1.0, 0.3, 0.01, 0.001, 0.1)
    omega_cap: float = 2.0

    @property
    def q_default(self) -> np.ndarray:
        r = self.radius - self.default_squeeze
        return np.tile([r, 0.0], N_FINGERS)

    @property
    def q_low(self) -> np.ndarray:
        return np.tile([self.radial_limits[0], self.tangential_limits[0]], N_FINGERS)

    @property
    def q_high(self) -> np.ndarray:
        return np.tile([self.radial_limits[1], self.tangential_limits[1]], N_FINGERS)


@dataclass
class RotorState:
    q: np.ndarray  # (n, 6) joint positions [r0, s0, r1, s1, r2, s2]
    qd: np.ndarray
    q_target: np.ndarray
    phi: np.ndarray  # (n,)
    omega: np.ndarray
    pos: np.ndarray  # (n, 2)
    vel: np.ndarray
    normal: np.ndarray  # (n, 3)
    tangential: np.ndarray  # (n, 3)
    torque: np.ndarray  # (n, 6) PD effort
    drop_counter: np.ndarray  # (n,) int
    phi0: np.ndarray
    steps: np.ndarray

    def copy(self) -> "RotorState":
        return RotorState(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def take(self, idx) -> "RotorState":
        return RotorState(**{f.name: getattr(self, f.name)[idx].copy() for f in fields(self)})

    def put(self, idx, other: "RotorState") -> None:
        for f in fields(self):
            getattr(self, f.name)[idx] = getattr(other, f.name)


def integrate_joint_targets(q_prev, delta, scale, low=None, high=None):
    """q = q_prev + scale * delta, clamped to joint limits when given."""
    q_prev = np.asarray(q_prev, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if q_prev.shape != delta.shape:
        raise ValueError(f"shape mismatch: {q_prev.shape} vs {delta.shape}")
    q = q_prev + scale * delta
    if low is not None or high is not None:
        q = np.clip(q, low, high)
    return q


def _unit(angle):
    return np.stack([np.cos(angle), np.sin(angle)], axis=-1)


def contact_forces(q, qd, phi, omega, pos, vel, domain: PrivilegedInfo, p: RotorParams):
    """Normal and tangential contact force per finger, plus geometry for the object update."""
    r = q[:, 0::2]
    s = q[:, 1::2]
    sd = qd[:, 1::2]
    ang = FINGER_ANGLES + s
    tip = r[..., None] * _unit(ang)
    rel = tip - pos[:, None, :]
    dist = np.linalg.norm(rel, axis=-1)
    n_hat = rel / np.maximum(dist, 1e-9)[..., None]
    t_hat = np.stack([-n_hat[..., 1], n_hat[..., 0]], axis=-1)
    radius = p.radius * domain.scale[:, None]
    normal = p.contact_k * np.maximum(0.0, radius - dist)
    v_tip = (r * sd)[..., None] * _unit(ang + np.pi / 2)
    surface = omega[:, None] * radius  # slip against the spinning surface only
    v_rel = np.einsum("njk,njk->nj", v_tip, t_hat) - surface
    cap = domain.friction[:, None] * normal
    tang = np.clip(p.tangential_k * v_rel, -cap, cap)
    return normal, tang, n_hat, t_hat, radius


class RotorEnv:
    """Vectorised rotor-hand environment.

    ``reset`` runs rejection sampling for a stable grasp; ``step`` takes joint
    offsets in [-1, 1] that are integrated into PD targets.
    """

    def __init__(self, n_envs: int = 1, params: RotorParams | None = None,
                 ranges: DomainRanges | None = None, seed: int = 0, randomize: bool = True):
        self.n = n_envs
        self.p = params or RotorParams()
        self.ranges = ranges or (DomainRanges() if randomize else DomainRanges.nominal())
        self.rng = np.random.default_rng(seed)
        self.domain: PrivilegedInfo | None = None
        self.state: RotorState | None = None
        self.target_dir = np.ones(n_envs)

    # -- reset -------------------------------------------------------------
    def reset(self, domain: PrivilegedInfo | None = None, target_dir=None) -> RotorState:
        self.domain = domain if domain is not None else randomize_domain(self.rng, self.ranges, self.n)
        if target_dir is None:
            target_dir = self.rng.choice([-1.0, 1.0], self.n)
        self.target_dir = np.broadcast_to(np.asarray(target_dir, dtype=np.float64), (self.n,)).copy()
        self.state = env_reset(self.rng, self.domain, self.p)
        return self.state

    def reset_where(self, mask: np.ndarray) -> None:
        idx = np.nonzero(mask)[0]
        if idx.size == 0:
            return
        dom = randomize_domain(self.rng, self.ranges, idx.size)
        for f in fields(dom):
            getattr(self.domain, f.name)[idx] = getattr(dom, f.name)
        self.target_dir[idx] = self.rng.choice([-1.0, 1.0], idx.size)
        self.state.put(idx, env_reset(self.rng, dom, self.p))

    def step(self, action: np.ndarray):
        self.state, reward, terms, dropped, timeout = env_step(self.state, action, self.domain, self.p,
                                                                self.target_dir)
        return self.state, reward, terms, dropped, timeout

    def rotation(self) -> np.ndarray:
        return self.target_dir * (self.state.phi - self.state.phi0)

    def success(self) -> np.ndarray:
        return self.rotation() >= self.p.success_angle


def _zero_state(n: int) -> RotorState:
    z6 = np.zeros((n, N_JOINTS))
    z3 = np.zeros((n, N_FINGERS))
    z = np.zeros(n)
    return RotorState(q=z6.copy(), qd=z6.copy(), q_target=z6.copy(), phi=z.copy(), omega=z.copy(),
                      pos=np.zeros((n, 2)), vel=np.zeros((n, 2)), normal=z3.copy(), tangential=z3.copy(),
                      torque=z6.copy(), drop_counter=np.zeros(n, dtype=np.int64), phi0=z.copy(),
                      steps=np.zeros(n, dtype=np.int64))


def sample_initial(rng: np.random.Generator, n: int, p: RotorParams, scale=1.0) -> RotorState:
    """Joints around the default pose, closed onto the object's actual radius."""
    st = _zero_state(n)
    q = p.q_default + rng.normal(0.0, p.init_joint_noise, (n, N_JOINTS))
    q[:, 0::2] += (np.asarray(scale).reshape(-1, 1) - 1.0) * p.radius
    q[:, 1::2] = rng.uniform(-p.init_tangential_spread, p.init_tangential_spread, (n, N_FINGERS))
    q = np.clip(q, p.q_low, p.q_high)
    st.q = q
    st.q_target = q.copy()
    st.pos = rng.uniform(-p.init_object_spread, p.init_object_spread, (n, 2))
    st.phi = rng.uniform(-np.pi, np.pi, n)
    st.phi0 = st.phi.copy()
    return st


def settle(state: RotorState, domain: PrivilegedInfo, p: RotorParams) -> tuple[RotorState, np.ndarray]:
    """Zero-action rollout; returns the settled state and the stable-grasp mask."""
    zero = np.zeros((len(state.phi), N_JOINTS))
    ok = np.ones(len(state.phi), dtype=bool)
    for _ in range(p.settle_steps):
        state, *_rest = env_step(state, zero, domain, p, np.ones(len(state.phi)), count_steps=False)
        ok &= state.drop_counter == 0
    ok &= np.all(state.normal > 0, axis=1)
    return state, ok


def env_reset(rng: np.random.Generator, domain: PrivilegedInfo, p: RotorParams,
              max_attempts: int = 100) -> RotorState:
    n = len(domain)
    out = _zero_state(n)
    todo = np.arange(n)
    for _ in range(max_attempts):
        cand = sample_initial(rng, todo.size, p, domain.scale[todo])
        settled, ok = settle(cand, domain.take(todo), p)
        settled.phi0 = settled.phi.copy()
        settled.steps[:] = 0
        settled.drop_counter[:] = 0
        out.put(todo[ok], settled.take(ok))
        todo = todo[~ok]
        if todo.size == 0:
            return out
    raise InitializationError(f"{todo.size} environment(s) found no stable grasp in {max_attempts} attempts")


def env_step(state: RotorState, action, domain: PrivilegedInfo, p: RotorParams, target_dir,
             count_steps: bool = True, external_force=None):
    action = np.asarray(action, dtype=np.float64)
    if not np.all(np.isfinite(action)):
        raise FloatingPointError("non-finite action")
    action = np.clip(action, -1.0, 1.0)
    st = state.copy()
    q_start = st.q.copy()
    st.q_target = integrate_joint_targets(st.q_target, action, p.action_scale, p.q_low, p.q_high)
    kp = domain.kp[:, None]
    kd = domain.kd[:, None]
    h = p.dt / p.substeps
    weight = domain.mass * domain.gravity * np.cos(p.tilt)
    g_plane = np.zeros((len(st.phi), 2))
    g_plane[:, 1] = -domain.gravity * np.sin(p.tilt)
    for _ in range(p.substeps):
        normal, tang, n_hat, t_hat, radius = contact_forces(st.q, st.qd, st.phi, st.omega, st.pos, st.vel, domain, p)
        effort = kp * (st.q_target - st.q) - kd * st.qd
        acc = effort.copy()
        acc[:, 0::2] += normal  # contact pushes the fingertip outward
        st.qd += h * acc
        st.q += h * st.qd
        hit_lo = st.q < p.q_low
        hit_hi = st.q > p.q_high
        st.q = np.clip(st.q, p.q_low, p.q_high)
        st.qd[hit_lo | hit_hi] = 0.0
        force = (-normal[..., None] * n_hat + tang[..., None] * t_hat).sum(axis=1)
        if external_force is not None:
            force = force + external_force
        c, s = np.cos(st.phi), np.sin(st.phi)
        com = np.column_stack([c * domain.com_offset[:, 0] - s * domain.com_offset[:, 1],
                               s * domain.com_offset[:, 0] + c * domain.com_offset[:, 1]])
        grav_torque = domain.mass * (com[:, 0] * g_plane[:, 1] - com[:, 1] * g_plane[:, 0])
        torque = (tang * radius).sum(axis=1) + grav_torque
        st.omega += h * (torque / domain.inertia - p.ang_damping * st.omega)
        st.phi += h * st.omega
        st.vel += h * (force / domain.mass[:, None] + g_plane - p.palm_k * st.pos - p.lin_damping * st.vel)
        st.pos += h * st.vel
    normal, tang, *_ = contact_forces(st.q, st.qd, st.phi, st.omega, st.pos, st.vel, domain, p)
    st.normal, st.tangential = normal, tang
    st.torque = kp * (st.q_target - st.q) - kd * st.qd
    holding = domain.friction * normal.sum(axis=1) >= weight
    st.drop_counter = np.where(holding, 0, st.drop_counter + 1)
    if count_steps:
        st.steps = st.steps + 1
    for arr in (st.q, st.phi, st.omega, st.pos, st.vel):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite rotor dynamics")
    reward, terms = compute_reward(st, st.q - q_start, target_dir, p)
    dropped = st.drop_counter >= p.drop_steps
    timeout = st.steps >= p.horizon
    return st, reward, terms, dropped, timeout


REWARD_TERMS = ("rot", "vel", "work", "torq", "diff")


def compute_reward(state: RotorState, dq, target_dir, p: RotorParams):
    """Weighted sum of rotation, linear-velocity, work, torque and pose-deviation terms."""
    terms = {
        "rot": np.clip(np.asarray(target_dir) * state.omega, -p.omega_cap, p.omega_cap),
        "vel": -np.sum(state.vel**2, axis=-1),
        "work": -np.sum(np.abs(state.torque * dq), axis=-1),
        "torq": -np.sum(state.torque**2, axis=-1),
        "diff": -np.sum((state.q - p.q_default) ** 2, axis=-1),
    }
    r = sum(w * terms[k] for w, k in zip(p.reward_weights, REWARD_TERMS))
    return r, terms
