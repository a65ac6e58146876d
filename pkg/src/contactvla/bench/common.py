"""Pieces shared by the surrogate tasks: sensor lifting, metrics, episode records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FORCE_DIM = 14  # 7 joints x (force, torque) on the real wrist sensors
TACTILE_DIM = 60


def sensor_lift(raw_dim: int, out_dim: int, seed: int) -> np.ndarray:
    """Fixed random map from a few physical quantities to a wide sensor vector.

    Columns are orthonormal, so the raw quantities are recoverable by a linear read-out.
    """
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(out_dim, raw_dim)))
    return q * np.sqrt(out_dim / raw_dim)


def compute_sr(outcomes) -> float:
    outcomes = np.asarray(list(outcomes), dtype=bool)
    if outcomes.size == 0:
        raise ValueError("success rate of an empty outcome list is undefined")
    return float(outcomes.mean())


def compute_pcr(fraction: float) -> float:
    """Completed quarter rings: floor(4 * fraction) / 4, capped at 1."""
    if not 0.0 <= fraction <= 1.0 + 1e-12:
        raise ValueError(f"peeled fraction must lie in [0, 1], got {fraction}")
    return min(1.0, np.floor(4.0 * fraction + 1e-9) / 4.0)


@dataclass
class EpisodeRecord:
    """One episode: per-step rows plus a single terminal outcome."""

    episode_id: int
    task: str
    seed: int
    vision: np.ndarray  # (T, d_v)
    proprio: np.ndarray
    force: np.ndarray
    tactile: np.ndarray
    action: np.ndarray  # (T, d_a)
    trigger: np.ndarray  # (T,) labels in {0, 1}
    source: list[str] = field(default_factory=list)  # hand source per step
    instruction: int = 0
    success: bool = False
    pcr: float | None = None

    def __len__(self) -> int:
        return len(self.action)

    def validate(self, max_steps: int | None = None) -> None:
        T = len(self.action)
        for name in ("vision", "proprio", "force", "tactile", "trigger"):
            if len(getattr(self, name)) != T:
                raise ValueError(f"episode {self.episode_id}: {name} has {len(getattr(self, name))} rows, expected {T}")
        if self.source and len(self.source) != T:
            raise ValueError(f"episode {self.episode_id}: source tags do not match rows")
        if max_steps is not None and T > max_steps:
            raise ValueError(f"episode {self.episode_id}: {T} rows exceed max steps {max_steps}")
        if not np.all(np.isin(self.trigger, (0.0, 1.0))):
            raise ValueError(f"episode {self.episode_id}: trigger labels must be 0 or 1")


class EpisodeBuffer:
    """Collects batched per-step rows and splits them into EpisodeRecords."""

    def __init__(self, n: int):
        self.rows: list[list[dict]] = [[] for _ in range(n)]

    def add(self, obs, action, trigger, source, active) -> None:
        for i in np.nonzero(active)[0]:
            self.rows[i].append({
                "vision": obs.vision[i], "proprio": obs.proprio[i], "force": obs.force[i],
                "tactile": obs.tactile[i], "action": action[i], "trigger": trigger[i],
                "source": source[i], "instruction": int(obs.instruction[i]),
            })

    def records(self, task: str, seeds, ids, success, pcr=None) -> list[EpisodeRecord]:
        out = []
        for i, rows in enumerate(self.rows):
            def stack(k):
                return np.array([r[k] for r in rows], dtype=np.float64)
            out.append(EpisodeRecord(
                episode_id=int(ids[i]), task=task, seed=int(seeds[i]),
                vision=stack("vision"), proprio=stack("proprio"), force=stack("force"),
                tactile=stack("tactile"), action=stack("action"), trigger=stack("trigger"),
                source=[r["source"] for r in rows], instruction=rows[0]["instruction"] if rows else 0,
                success=bool(success[i]), pcr=None if pcr is None else float(pcr[i]),
            ))
        return out
