"""Student distillation and policy evaluation on the rotor surrogate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import F, AdamW, Tensor, grad, no_grad
from .history import ObsHistory, observation_frame, privileged_features
from .nets import PolicyNets
from .ppo import EpisodeTracker
from .rotor import DomainRanges, RotorEnv
from .scripted import ScriptedGait


@dataclass
class DistillConfig:
    episodes: int = 512
    epochs: int = 30
    batch: int = 1024
    lr: float = 1e-3
    seed: int = 0
    holdout: float = 0.1


def teacher_rollouts(nets: PolicyNets, episodes: int, seed: int, randomize: bool = True,
                     n_envs: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """(o_t, teacher latent) pairs from deterministic teacher episodes."""
    obs_rows, lat_rows = [], []
    done = 0
    k = 0
    while done < episodes:
        n = min(n_envs, episodes - done)
        env = RotorEnv(n, seed=seed * 7919 + k, randomize=randomize)
        env.reset()
        hist = ObsHistory(n)
        hist.reset(observation_frame(env.state, env.target_dir, env.p))
        alive = np.ones(n, dtype=bool)
        for _ in range(env.p.horizon):
            obs = hist.vector()
            priv = privileged_features(env.domain, env.state)
            with no_grad():
                lat = nets.encode_privileged(priv, obs).data
            obs_rows.append(obs[alive])
            lat_rows.append(lat[alive])
            act, _, _ = nets.teacher_act(obs, priv, None)
            state, _, _, dropped, _ = env.step(act)
            hist.push(observation_frame(state, env.target_dir, env.p))
            alive &= ~dropped
            if not alive.any():
                break
        done += n
        k += 1
    return np.concatenate(obs_rows), np.concatenate(lat_rows)


def distill_student(nets: PolicyNets, obs: np.ndarray, latent: np.ndarray,
                    cfg: DistillConfig | None = None, log: Callable[[dict], None] | None = None) -> dict:
    """Fit ``nets.student`` to regress the teacher latent (MSE); returns train/held-out losses."""
    cfg = cfg or DistillConfig()
    rng = np.random.default_rng(cfg.seed)
    n = len(obs)
    perm = rng.permutation(n)
    n_hold = int(cfg.holdout * n)
    hold, train = perm[:n_hold], perm[n_hold:]
    params = nets.student.parameters()
    steps = cfg.epochs * max(1, len(train) // cfg.batch)
    opt = AdamW(params, lr=cfg.lr, horizon=steps)
    dt = nets.log_std.dtype

    def loss_on(idx):
        pred = nets.encode_student(obs[idx])
        return F.mean(F.square(pred - Tensor(latent[idx], dtype=dt)))

    train_loss = float("nan")
    for epoch in range(cfg.epochs):
        order = rng.permutation(train)
        losses = []
        for lo in range(0, len(order) - cfg.batch + 1, cfg.batch):
            loss = loss_on(order[lo:lo + cfg.batch])
            opt.step(grad(loss, params))
            losses.append(float(loss.data))
        train_loss = float(np.mean(losses)) if losses else float("nan")
        if log is not None:
            log({"epoch": epoch, "train_mse": train_loss})
    with no_grad():
        held = float(loss_on(hold).data) if n_hold else float("nan")
    return {"train_mse": train_loss, "holdout_mse": held, "samples": n}


# -- evaluation ----------------------------------------------------------------
def rotation_policy(kind: str, nets: PolicyNets | None = None) -> Callable:
    """Deterministic controller ``(env, history) -> action`` for evaluation."""
    if kind == "zero":
        return lambda env, hist: np.zeros((env.n, 6))
    if kind == "scripted":
        gait = ScriptedGait()

        def scripted(env, hist):
            if gait.phase is None or env.state.steps.max() == 0:
                gait.reset(env.n)
            return gait(env.state, env.target_dir)
        return scripted
    if nets is None:
        raise ValueError(f"{kind} policy needs trained nets")
    if kind == "teacher":
        return lambda env, hist: nets.teacher_act(hist.vector(), privileged_features(env.domain, env.state), None)[0]
    if kind == "student":
        return lambda env, hist: nets.student_act(hist.vector())
    raise ValueError(f"unknown rotation policy {kind!r}")


def evaluate_rotation(policy: Callable, episodes: int = 100, seed: int = 0, randomize: bool = True,
                      ranges: DomainRanges | None = None, target_dir=None) -> dict:
    """Run ``episodes`` full-horizon episodes; success latches when the object turns by the goal angle."""
    env = RotorEnv(episodes, seed=10_000 + seed, randomize=randomize, ranges=ranges)
    env.reset(target_dir=target_dir)
    hist = ObsHistory(episodes)
    hist.reset(observation_frame(env.state, env.target_dir, env.p))
    tracker = EpisodeTracker(episodes)
    alive = np.ones(episodes, dtype=bool)
    dropped_any = np.zeros(episodes, dtype=bool)
    succ = np.zeros(episodes, dtype=bool)
    rot = np.zeros(episodes)
    omega_sign = np.zeros(episodes)
    for _ in range(env.p.horizon):
        act = policy(env, hist)
        state, reward, terms, dropped, _ = env.step(act)
        hist.push(observation_frame(state, env.target_dir, env.p))
        reward = np.where(alive, reward, 0.0)
        terms = {k: np.where(alive, v, 0.0) for k, v in terms.items()}
        tracker.add(reward, terms, alive & env.success())
        succ |= alive & env.success()
        rot = np.where(alive, env.state.phi - env.state.phi0, rot)
        dropped_any |= alive & dropped
        alive &= ~dropped
    tracker.finish(np.ones(episodes, dtype=bool), dropped_any)
    row = tracker.drain()
    row.update({
        "success": float(succ.mean()), "drop": float(dropped_any.mean()),
        "mean_abs_rotation": float(np.abs(rot).mean()),
        "direction_match": float(np.mean(np.sign(rot) == env.target_dir)),
    })
    return row
