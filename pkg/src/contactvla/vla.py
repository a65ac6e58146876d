"""Training and inference for the flow-matching policy on recorded demonstrations."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import AdamW, grad, load_tensors, no_grad, save_tensors
from .backbone import ObservationBatch, ObsSpec
from .bench import insertion, peel
from .bench.common import EpisodeRecord
from .config import AblationConfig, ModelConfig, RunConfig
from .data import NormStats, compute_norm_stats
from .flow import ActionPartition, euler_sample, fm_loss, interpolate, sample_timestep
from .fusion import ContactPolicy

TASKS: dict[str, tuple[ObsSpec, ActionPartition]] = {
    "insertion": (insertion.SPEC, insertion.PARTITION),
    "peel": (peel.SPEC, peel.PARTITION),
}


def task_layout(task: str) -> tuple[ObsSpec, ActionPartition]:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    return TASKS[task]


def build_model(cfg: RunConfig, seed: int | None = None) -> ContactPolicy:
    spec, part = task_layout(cfg.env.task)
    seed = cfg.training.seed if seed is None else seed
    return ContactPolicy(spec, part, cfg.model, seed=seed, use_mode=cfg.ablation.mode)


def prepare_obs(obs: ObservationBatch, stats: NormStats, ablation: AblationConfig) -> ObservationBatch:
    """Normalise every stream; ablated modalities are zeroed after normalisation."""
    force = stats.normalize("force", obs.force)
    tactile = stats.normalize("tactile", obs.tactile)
    if not ablation.force:
        force = np.zeros_like(force)
    if not ablation.tactile:
        tactile = np.zeros_like(tactile)
    return ObservationBatch(vision=stats.normalize("vision", obs.vision), instruction=obs.instruction,
                            proprio=stats.normalize("proprio", obs.proprio), force=force, tactile=tactile)


@dataclass
class ChunkData:
    """Every (observation, future action chunk) pair of a dataset, normalised."""

    obs: ObservationBatch
    chunks: np.ndarray  # (N, H, d_a)

    def __len__(self) -> int:
        return len(self.chunks)


def build_chunks(episodes: list[EpisodeRecord], stats: NormStats, horizon: int,
                 ablation: AblationConfig) -> ChunkData:
    """Chunks past the episode end repeat the final action."""
    obs_parts = {k: [] for k in ("vision", "proprio", "force", "tactile")}
    instr, chunks = [], []
    for ep in episodes:
        T = len(ep)
        if T == 0:
            continue
        idx = np.minimum(np.arange(T)[:, None] + np.arange(horizon)[None, :], T - 1)
        chunks.append(stats.normalize("action", ep.action)[idx])
        for k in obs_parts:
            obs_parts[k].append(getattr(ep, k))
        instr.append(np.full(T, ep.instruction))
    raw = ObservationBatch(vision=np.concatenate(obs_parts["vision"]), instruction=np.concatenate(instr),
                           proprio=np.concatenate(obs_parts["proprio"]), force=np.concatenate(obs_parts["force"]),
                           tactile=np.concatenate(obs_parts["tactile"]))
    return ChunkData(prepare_obs(raw, stats, ablation), np.concatenate(chunks))


@dataclass
class TrainState:
    step: int = 0
    history: list[dict] = field(default_factory=list)


class VLATrainer:
    """AdamW + cosine decay on the flow-matching loss (plus the router balance term).

    ``save``/``load`` capture parameters, optimiser moments, the step counter
    and the batch-sampling generator, so a resumed run continues bit-exactly.
    """

    def __init__(self, cfg: RunConfig, episodes: list[EpisodeRecord], stats: NormStats | None = None):
        cfg.validate()
        self.cfg = cfg
        self.stats = stats or compute_norm_stats(episodes)
        self.model = build_model(cfg)
        self.data = build_chunks(episodes, self.stats, cfg.model.horizon, cfg.ablation)
        if len(self.data) == 0:
            raise ValueError("training needs at least one step record")
        self.params = self.model.parameters()
        t = cfg.training
        self.opt = AdamW(self.params, lr=t.lr, horizon=t.steps, weight_decay=t.weight_decay)
        self.rng = np.random.default_rng([t.seed, 1])
        self.state = TrainState()

    def loss(self, idx: np.ndarray, rng: np.random.Generator):
        x0 = self.data.chunks[idx]
        b = len(idx)
        t = sample_timestep(rng, b)
        eps = rng.standard_normal(x0.shape)
        x_t = interpolate(x0, eps, t)
        obs = self.data.obs.take(idx)
        v, fused = self.model.velocity(obs, x_t, t)
        loss = fm_loss(v, x0, eps)
        fm = float(loss.data)
        aux = None
        m = self.cfg.model
        if fused is not None and m.load_balance and fused.aux_loss is not None:
            aux = fused.aux_loss
            loss = loss + m.load_balance_coef * aux
        return loss, {"fm": fm, "aux": float(aux.data) if aux is not None else 0.0}

    def train_step(self) -> dict:
        idx = self.rng.integers(0, len(self.data), self.cfg.training.batch)
        loss, stats = self.loss(idx, self.rng)
        self.opt.step(grad(loss, self.params))
        self.state.step += 1
        stats.update(step=self.state.step, loss=float(loss.data), lr=self.opt.state.lr)
        return stats

    def train(self, steps: int | None = None, out_dir=None, log: Callable[[dict], None] | None = None,
              log_every: int = 100) -> list[dict]:
        """Train up to ``steps`` total steps (default: config), checkpointing into ``out_dir``."""
        target = self.cfg.training.steps if steps is None else steps
        every = self.cfg.training.checkpoint_every
        t0 = time.perf_counter()
        while self.state.step < target:
            row = self.train_step()
            if self.state.step % log_every == 0 or self.state.step == target:
                row["seconds"] = time.perf_counter() - t0
                self.state.history.append(row)
                if log is not None:
                    log(row)
            if out_dir is not None and (self.state.step % every == 0 or self.state.step == target):
                self.save(Path(out_dir) / "checkpoints" / f"step_{self.state.step:07d}.bin")
        return self.state.history

    # -- persistence ---------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors = {f"model.{k}": v for k, v in self.model.state_dict().items()}
        for i, (m, v) in enumerate(zip(self.opt.state.m, self.opt.state.v)):
            tensors[f"opt.m.{i}"] = m
            tensors[f"opt.v.{i}"] = v
        meta = {"step": self.state.step, "opt_step": self.opt.state.step,
                "rng": self.rng.bit_generator.state, "config": self.cfg.to_dict(),
                "stats": self.stats.to_dict(), "history": self.state.history}
        save_tensors(path, tensors, meta)

    def load(self, path) -> None:
        tensors, meta = load_tensors(path)
        self.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        n = len(self.params)
        self.opt.state.m = [tensors[f"opt.m.{i}"] for i in range(n)]
        self.opt.state.v = [tensors[f"opt.v.{i}"] for i in range(n)]
        self.opt.state.step = meta["opt_step"]
        self.rng.bit_generator.state = meta["rng"]
        self.state = TrainState(meta["step"], meta.get("history", []))


def latest_checkpoint(run_dir) -> Path | None:
    ckpts = sorted((Path(run_dir) / "checkpoints").glob("step_*.bin"))
    return ckpts[-1] if ckpts else None


class VLAPolicy:
    """Chunk generator: normalise, Euler-integrate the learned field, denormalise.

    The prefix tokens are computed once per chunk and reused across Euler steps.
    Routing assignments from every velocity call are accumulated in ``routing_log``.
    """

    def __init__(self, model: ContactPolicy, stats: NormStats, ablation: AblationConfig,
                 euler_steps: int = 10, seed: int = 0):
        self.model = model
        self.stats = stats
        self.ablation = ablation
        self.euler_steps = euler_steps
        self.rng = np.random.default_rng([seed, 2])
        self.routing_log: list[dict] = []
        self.calls = 0

    @classmethod
    def from_checkpoint(cls, path, seed: int = 0) -> "VLAPolicy":
        tensors, meta = load_tensors(path)
        from .config import from_dict
        cfg = from_dict(meta["config"])
        model = build_model(cfg)
        model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        return cls(model, NormStats.from_dict(meta["stats"]), cfg.ablation, cfg.model.euler_steps, seed)

    @property
    def partition(self) -> ActionPartition:
        return self.model.part

    def __call__(self, obs: ObservationBatch) -> np.ndarray:
        self.calls += 1
        o = prepare_obs(obs, self.stats, self.ablation)
        H, d = self.model.cfg.horizon, self.model.part.dim
        noise = self.rng.standard_normal((len(o), H, d))
        with no_grad():
            prefix = self.model.encode_prefix(o)

            def field(x, t):
                v, fused = self.model.velocity(o, x, t, prefix=prefix)
                if fused is not None:
                    self.routing_log.append({m: a for m, a in fused.routing.items()} | {"t": t})
                return v.data.astype(np.float64)

            x0 = euler_sample(field, noise, self.euler_steps)
        return self.stats.denormalize("action", x0)
