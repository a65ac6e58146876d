"""Line-oriented dataset files and per-dimension normalisation statistics.

Each line is one JSON object: a ``step`` record per executed step, then one
``meta`` record that closes the episode. Floats are written with ``repr``
precision, so reading a file back reproduces the arrays bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .bench.common import EpisodeRecord

SCHEMA_VERSION = 1
OBS_FIELDS = ("vision", "proprio", "force", "tactile")
STAT_FIELDS = ("action",) + OBS_FIELDS
STD_FLOOR = 1e-6


class DatasetError(ValueError):
    """Malformed or incompatible dataset file."""


def _floats(arr) -> list[float]:
    return [float(x) for x in np.asarray(arr, dtype=np.float64).reshape(-1)]


def episode_lines(ep: EpisodeRecord) -> Iterator[str]:
    ep.validate()
    for k in range(len(ep)):
        row = {"type": "step", "episode_id": ep.episode_id, "step_index": k}
        for name in OBS_FIELDS + ("action",):
            row[name] = _floats(getattr(ep, name)[k])
        row["trigger"] = float(ep.trigger[k])
        row["source"] = ep.source[k] if ep.source else "vla"
        yield json.dumps(row)
    meta = {"type": "meta", "episode_id": ep.episode_id, "schema_version": SCHEMA_VERSION,
            "task": ep.task, "instruction": ep.instruction, "seed": ep.seed, "steps": len(ep),
            "success": bool(ep.success), "pcr": ep.pcr}
    yield json.dumps(meta)


def write_dataset(path, episodes: Iterable[EpisodeRecord]) -> int:
    """Write episodes atomically; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    count = 0
    with open(tmp, "w") as fh:
        for ep in episodes:
            for line in episode_lines(ep):
                fh.write(line + "\n")
            count += 1
    tmp.replace(path)
    return count


def read_dataset(path) -> list[EpisodeRecord]:
    episodes: list[EpisodeRecord] = []
    pending: dict[int, list[dict]] = {}
    closed: set[int] = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec["type"]
                eid = int(rec["episode_id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetError(f"line {lineno}: cannot parse record ({exc})") from exc
            if eid in closed:
                raise DatasetError(f"line {lineno}: episode {eid} already has a meta record")
            rows = pending.setdefault(eid, [])
            if kind == "step":
                if rec.get("step_index") != len(rows):
                    raise DatasetError(f"line {lineno}: episode {eid} step index {rec.get('step_index')} "
                                       f"out of order (expected {len(rows)})")
                rows.append(rec)
            elif kind == "meta":
                version = rec.get("schema_version")
                if version != SCHEMA_VERSION:
                    raise DatasetError(f"line {lineno}: episode {eid} has schema version {version}, "
                                       f"this reader supports {SCHEMA_VERSION}")
                if rec.get("steps", len(rows)) != len(rows):
                    raise DatasetError(f"line {lineno}: episode {eid} declares {rec['steps']} steps, found {len(rows)}")
                episodes.append(_assemble(eid, rows, rec))
                closed.add(eid)
                del pending[eid]
            else:
                raise DatasetError(f"line {lineno}: unknown record type {kind!r}")
    if pending:
        raise DatasetError(f"episodes without a meta record: {sorted(pending)[:5]}")
    return episodes


def _assemble(eid: int, rows: list[dict], meta: dict) -> EpisodeRecord:
    def col(name, width=None):
        if not rows:
            return np.zeros((0, width or 0))
        return np.array([r[name] for r in rows], dtype=np.float64)

    return EpisodeRecord(
        episode_id=eid, task=meta["task"], seed=int(meta["seed"]),
        vision=col("vision"), proprio=col("proprio"), force=col("force"), tactile=col("tactile"),
        action=col("action"), trigger=np.array([r["trigger"] for r in rows], dtype=np.float64),
        source=[r["source"] for r in rows], instruction=int(meta["instruction"]),
        success=bool(meta["success"]), pcr=meta["pcr"],
    )


@dataclass
class NormStats:
    mean: dict[str, np.ndarray]
    std: dict[str, np.ndarray]

    def normalize(self, name: str, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean[name]) / self.std[name]

    def denormalize(self, name: str, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std[name] + self.mean[name]

    def to_dict(self) -> dict:
        return {k: {"mean": _floats(self.mean[k]), "std": _floats(self.std[k])} for k in self.mean}

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls({k: np.array(v["mean"]) for k, v in data.items()},
                   {k: np.array(v["std"]) for k, v in data.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_norm_stats(episodes: list[EpisodeRecord]) -> NormStats:
    """Exact per-dimension mean and (population) standard deviation, floored at 1e-6."""
    rows = [ep for ep in episodes if len(ep)]
    if not rows:
        raise ValueError("normalisation statistics need at least one step record")
    mean, std = {}, {}
    # sort by id so the result does not depend on episode order
    rows = sorted(rows, key=lambda e: e.episode_id)
    for name in STAT_FIELDS:
        x = np.concatenate([getattr(ep, name) for ep in rows], axis=0)
        mean[name] = x.mean(axis=0)
        std[name] = np.maximum(x.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)
