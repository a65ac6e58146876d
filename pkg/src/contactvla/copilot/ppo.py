"""Clipped-surrogate PPO with an asymmetric (privileged) actor-critic."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import F, AdamW, NumericError, Tensor, grad, load_tensors, save_tensors
from .history import ObsHistory, observation_frame, privileged_features
from .nets import PolicyNets
from .rotor import REWARD_TERMS, RotorEnv


@dataclass
class PPOConfig:
    iterations: int = 150
    n_envs: int = 256
    rollout_steps: int = 80
    epochs: int = 4
    minibatch: int = 4096
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.0
    reward_scale: float = 0.1
    drop_penalty: float = 50.0  # training-only cost on a drop; without it ending early beats the penalties
    max_grad_norm: float = 1.0
    latent: int = 8
    hidden: int = 128
    seed: int = 0
    randomize: bool = True
    checkpoint_every: int = 25


def gae(rewards, values, next_values, terminated, episode_end, gamma: float = 0.99, lam: float = 0.95):
    """Generalised advantage estimation over (T, n) arrays.

    ``next_values[t]`` is V(s_{t+1}) of the same episode (used to bootstrap
    time-outs); ``terminated`` zeroes it, ``episode_end`` cuts the trace.
    Returns (advantages, value targets).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        boot = np.where(terminated[t], 0.0, next_values[t])
        delta = rewards[t] + gamma * boot - values[t]
        running = delta + gamma * lam * np.where(episode_end[t], 0.0, running)
        adv[t] = running
    return adv, adv + values


def clipped_surrogate(ratio, advantage, clip: float = 0.2):
    """Per-sample PPO objective min(r A, clip(r) A) (to be maximised)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1 - clip, 1 + clip) * advantage)


def ppo_loss(nets: PolicyNets, batch: dict, cfg: PPOConfig) -> tuple[Tensor, dict]:
    z = nets.encode_privileged(batch["priv"], batch["obs"])
    mu = nets.mean(batch["obs"], z)
    logp = nets.log_prob(mu, batch["act"])
    dt = mu.dtype
    ratio = F.exp(logp - Tensor(batch["logp"], dtype=dt))
    adv = Tensor(batch["adv"], dtype=dt)
    surr = F.minimum(ratio * adv, F.clip(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv)
    v = nets.value(batch["obs"], z)
    v_loss = F.mean(F.square(v - Tensor(batch["ret"], dtype=dt)))
    loss = -F.mean(surr) + cfg.vf_coef * v_loss - cfg.ent_coef * nets.entropy()
    stats = {"policy": float(-surr.data.mean()), "value": float(v_loss.data)}
    return loss, stats


class EpisodeTracker:
    """Accumulates per-env returns/terms and flushes them when episodes end."""

    def __init__(self, n: int):
        self.ret = np.zeros(n)
        self.terms = {k: np.zeros(n) for k in REWARD_TERMS}
        self.success = np.zeros(n, dtype=bool)
        self.done_returns: list[float] = []
        self.done_terms: dict[str, list[float]] = {k: [] for k in REWARD_TERMS}
        self.done_success: list[bool] = []
        self.done_drop: list[bool] = []

    def add(self, reward, terms, success) -> None:
        self.ret += reward
        for k in REWARD_TERMS:
            self.terms[k] += terms[k]
        self.success |= success

    def finish(self, mask, dropped) -> None:
        idx = np.nonzero(mask)[0]
        self.done_returns.extend(self.ret[idx].tolist())
        for k in REWARD_TERMS:
            self.done_terms[k].extend(self.terms[k][idx].tolist())
            self.terms[k][idx] = 0.0
        self.done_success.extend(self.success[idx].tolist())
        self.done_drop.extend(np.asarray(dropped)[idx].tolist())
        self.ret[idx] = 0.0
        self.success[idx] = False

    def drain(self) -> dict:
        n = len(self.done_returns)
        row = {"episodes": n,
               "mean_return": float(np.mean(self.done_returns)) if n else float("nan"),
               "success": float(np.mean(self.done_success)) if n else float("nan"),
               "drop": float(np.mean(self.done_drop)) if n else float("nan")}
        for k in REWARD_TERMS:
            row[f"term_{k}"] = float(np.mean(self.done_terms[k])) if n else float("nan")
        self.__init__(len(self.ret))
        return row


def collect(env: RotorEnv, hist: ObsHistory, nets: PolicyNets, steps: int, rng: np.random.Generator,
            tracker: EpisodeTracker) -> dict:
    n = env.n
    buf = {k: [] for k in ("obs", "priv", "act", "logp", "val", "rew", "next_val", "term", "end")}
    for _ in range(steps):
        obs = hist.vector()
        priv = privileged_features(env.domain, env.state)
        act, logp, val = nets.teacher_act(obs, priv, rng)
        state, reward, terms, dropped, timeout = env.step(act)
        hist.push(observation_frame(state, env.target_dir, env.p))
        tracker.add(reward, terms, env.success())
        end = dropped | timeout
        _, _, next_val = nets.teacher_act(hist.vector(), privileged_features(env.domain, state), None)
        for k, v in (("obs", obs), ("priv", priv), ("act", act), ("logp", logp), ("val", val),
                     ("rew", reward), ("next_val", next_val), ("term", dropped), ("end", end)):
            buf[k].append(v)
        if end.any():
            tracker.finish(end, dropped)
            env.reset_where(end)
            hist.reset(observation_frame(env.state, env.target_dir, env.p)[end], end)
    out = {k: np.asarray(v) for k, v in buf.items()}
    assert out["obs"].shape[:2] == (steps, n)
    return out


def _train_state(nets: PolicyNets, opt: AdamW) -> dict[str, np.ndarray]:
    state = {f"net.{k}": v for k, v in nets.state_dict().items()}
    for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
        state[f"opt.m.{i}"] = m
        state[f"opt.v.{i}"] = v
    return state


def save_checkpoint(path, nets: PolicyNets, opt: AdamW | None = None, meta: dict | None = None) -> None:
    tensors = _train_state(nets, opt) if opt is not None else {f"net.{k}": v for k, v in nets.state_dict().items()}
    meta = dict(meta or {})
    if opt is not None:
        meta["opt_step"] = opt.state.step
    save_tensors(path, tensors, meta)


def load_policy(path) -> tuple[PolicyNets, dict]:
    tensors, meta = load_tensors(path)
    cfg = meta.get("config", {})
    nets = PolicyNets(latent=cfg.get("latent", 8), hidden=cfg.get("hidden", 128))
    nets.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
    return nets, meta


def ppo_train(cfg: PPOConfig, env_factory: Callable[[int, int], RotorEnv] | None = None,
              out_dir=None, log: Callable[[dict], None] | None = None,
              resume: bool = True) -> tuple[PolicyNets, list[dict]]:
    """Train the teacher; returns the nets and one curve row per iteration.

    With ``out_dir`` set, a checkpoint is written every ``checkpoint_every``
    iterations and an existing one is resumed from.
    """
    env_factory = env_factory or (lambda n, seed: RotorEnv(n, seed=seed, randomize=cfg.randomize))
    nets = PolicyNets(cfg.latent, cfg.hidden, seed=cfg.seed)
    params = nets.teacher_parameters()
    total_updates = cfg.iterations * cfg.epochs * max(1, (cfg.n_envs * cfg.rollout_steps) // cfg.minibatch)
    opt = AdamW(params, lr=cfg.lr, horizon=total_updates, grad_clip=cfg.max_grad_norm)
    curve: list[dict] = []
    start = 0
    ckpt = Path(out_dir) / "teacher_state.bin" if out_dir else None
    if ckpt is not None and resume and ckpt.exists():
        tensors, meta = load_tensors(ckpt)
        nets.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("net.")})
        opt.state.m = [tensors[f"opt.m.{i}"] for i in range(len(params))]
        opt.state.v = [tensors[f"opt.v.{i}"] for i in range(len(params))]
        opt.state.step = meta["opt_step"]
        start = meta["iteration"]
        curve = meta.get("curve", [])
    # the env stream restarts on resume (seeded by the start iteration)
    env = env_factory(cfg.n_envs, cfg.seed * 1000 + start)
    env.reset()
    hist = ObsHistory(cfg.n_envs)
    hist.reset(observation_frame(env.state, env.target_dir, env.p))
    tracker = EpisodeTracker(cfg.n_envs)
    for it in range(start, cfg.iterations):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, it])
        data = collect(env, hist, nets, cfg.rollout_steps, rng, tracker)
        rs = cfg.reward_scale
        shaped = data["rew"] - cfg.drop_penalty * data["term"]
        adv, ret = gae(shaped * rs, data["val"], data["next_val"], data["term"], data["end"],
                       cfg.gamma, cfg.gae_lambda)
        flat = {
            "obs": data["obs"].reshape(-1, data["obs"].shape[-1]),
            "priv": data["priv"].reshape(-1, data["priv"].shape[-1]),
            "act": data["act"].reshape(-1, data["act"].shape[-1]),
            "logp": data["logp"].reshape(-1),
            "adv": adv.reshape(-1),
            "ret": ret.reshape(-1),
        }
        n = len(flat["adv"])
        stats = {"policy": 0.0, "value": 0.0}
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for lo in range(0, n - cfg.minibatch + 1, cfg.minibatch):
                idx = perm[lo:lo + cfg.minibatch]
                mb = {k: v[idx] for k, v in flat.items()}
                a = mb["adv"]
                mb["adv"] = (a - a.mean()) / (a.std() + 1e-8)
                loss, stats = ppo_loss(nets, mb, cfg)
                try:
                    grads = grad(loss, params)
                except NumericError as exc:
                    raise NumericError(f"non-finite PPO loss at iteration {it}", exc.node_id) from exc
                opt.step(grads)
        row = {"iteration": it, **tracker.drain(), **stats,
               "std": float(np.exp(nets.log_std.data).mean()), "seconds": time.perf_counter() - t0}
        curve.append(row)
        if log is not None:
            log(row)
        if ckpt is not None and ((it + 1) % cfg.checkpoint_every == 0 or it + 1 == cfg.iterations):
            ckpt.parent.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, nets, opt, {"iteration": it + 1, "config": asdict(cfg), "curve": curve})
    return nets, curve


def curve_rows(curve: list[dict]) -> list[str]:
    """Structured text rows (one JSON object per iteration)."""
    return [json.dumps(r, sort_keys=True) for r in curve]
