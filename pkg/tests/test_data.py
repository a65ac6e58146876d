import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from contactvla.bench import EpisodeRecord
from contactvla.data import (SCHEMA_VERSION, STD_FLOOR, DatasetError, NormStats, compute_norm_stats, read_dataset,
                             write_dataset)


def random_episode(rng, eid, steps=None, d_a=5):
    T = int(rng.integers(1, 8)) if steps is None else steps
    return EpisodeRecord(
        episode_id=eid, task="insertion", seed=int(rng.integers(0, 10**6)),
        vision=rng.normal(size=(T, 3)), proprio=rng.normal(size=(T, 3)), force=rng.normal(size=(T, 14)),
        tactile=rng.normal(size=(T, 60)), action=rng.normal(size=(T, d_a)) * 1e-3,
        trigger=rng.integers(0, 2, T).astype(np.float64), source=list(rng.choice(["vla", "copilot"], T)),
        instruction=0, success=bool(rng.integers(0, 2)), pcr=None if eid % 2 else float(rng.integers(0, 5)) / 4,
    )


def assert_same(a: EpisodeRecord, b: EpisodeRecord):
    for name in ("vision", "proprio", "force", "tactile", "action", "trigger"):
        x, y = getattr(a, name), getattr(b, name)
        assert x.shape == y.shape and x.tobytes() == y.tobytes(), name
    assert (a.episode_id, a.task, a.seed, a.source, a.instruction, a.success, a.pcr) == \
           (b.episode_id, b.task, b.seed, b.source, b.instruction, b.success, b.pcr)


def test_round_trip_ten_random_episodes(tmp_path):
    rng = np.random.default_rng(0)
    eps = [random_episode(rng, i) for i in range(10)]
    assert write_dataset(tmp_path / "d.jsonl", eps) == 10
    back = read_dataset(tmp_path / "d.jsonl")
    assert len(back) == 10
    for a, b in zip(eps, back):
        assert_same(a, b)


def test_empty_dataset(tmp_path):
    write_dataset(tmp_path / "e.jsonl", [])
    assert read_dataset(tmp_path / "e.jsonl") == []


def test_one_meta_record_per_episode_with_version(tmp_path):
    rng = np.random.default_rng(1)
    write_dataset(tmp_path / "d.jsonl", [random_episode(rng, i) for i in range(4)])
    metas = [json.loads(line) for line in open(tmp_path / "d.jsonl") if '"meta"' in line]
    assert sorted(m["episode_id"] for m in metas) == [0, 1, 2, 3]
    assert all(m["schema_version"] == SCHEMA_VERSION for m in metas)


def _lines(tmp_path, n=2):
    rng = np.random.default_rng(2)
    write_dataset(tmp_path / "d.jsonl", [random_episode(rng, i, steps=3) for i in range(n)])
    return (tmp_path / "d.jsonl").read_text().splitlines()


def test_out_of_order_step_names_episode(tmp_path):
    lines = _lines(tmp_path)
    lines[0], lines[1] = lines[1], lines[0]
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="episode 0"):
        read_dataset(tmp_path / "bad.jsonl")


def test_malformed_line_reports_line_number(tmp_path):
    lines = _lines(tmp_path)
    lines[2] = lines[2][:20]
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="line 3"):
        read_dataset(tmp_path / "bad.jsonl")


def test_version_mismatch(tmp_path):
    lines = _lines(tmp_path, 1)
    meta = json.loads(lines[-1])
    meta["schema_version"] = SCHEMA_VERSION + 1
    lines[-1] = json.dumps(meta)
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="schema version"):
        read_dataset(tmp_path / "bad.jsonl")


def test_missing_meta(tmp_path):
    lines = _lines(tmp_path, 1)
    (tmp_path / "bad.jsonl").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DatasetError, match="without a meta"):
        read_dataset(tmp_path / "bad.jsonl")


def test_norm_stats_examples():
    rng = np.random.default_rng(3)
    ep = random_episode(rng, 0, steps=2)
    ep.action[:] = 4.0
    ep.force[:, 0] = [0.0, 2.0]
    s = compute_norm_stats([ep])
    assert np.all(s.mean["action"] == 4.0) and np.all(s.std["action"] == STD_FLOOR)
    assert s.mean["force"][0] == 1.0 and s.std["force"][0] == 1.0


def test_norm_stats_order_invariant_and_exact():
    rng = np.random.default_rng(4)
    eps = [random_episode(rng, i) for i in range(6)]
    a, b = compute_norm_stats(eps), compute_norm_stats(eps[::-1])
    for k in a.mean:
        assert a.mean[k].tobytes() == b.mean[k].tobytes() and a.std[k].tobytes() == b.std[k].tobytes()
    x = np.concatenate([e.tactile for e in sorted(eps, key=lambda e: e.episode_id)])
    np.testing.assert_allclose(a.mean["tactile"], x.sum(0) / len(x), rtol=1e-12)
    np.testing.assert_allclose(a.std["tactile"], np.sqrt(((x - x.mean(0)) ** 2).mean(0)), rtol=1e-10)


def test_norm_stats_empty_rejected():
    with pytest.raises(ValueError):
        compute_norm_stats([])


def test_norm_stats_save_load(tmp_path):
    rng = np.random.default_rng(5)
    s = compute_norm_stats([random_episode(rng, i) for i in range(3)])
    s.save(tmp_path / "s.json")
    t = NormStats.load(tmp_path / "s.json")
    for k in s.mean:
        assert s.mean[k].tobytes() == t.mean[k].tobytes()
    x = rng.normal(size=(4, 5))
    np.testing.assert_allclose(t.denormalize("action", t.normalize("action", x)), x, rtol=1e-10, atol=1e-14)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False), min_size=1, max_size=6))
def test_property_float_round_trip(tmp_path_factory, values):
    rng = np.random.default_rng(0)
    ep = random_episode(rng, 0, steps=len(values))
    ep.action[:, 0] = values
    path = tmp_path_factory.mktemp("rt") / "d.jsonl"
    write_dataset(path, [ep])
    assert read_dataset(path)[0].action.tobytes() == ep.action.tobytes()


@given(st.integers(1, 5))
def test_property_std_floor(n):
    rng = np.random.default_rng(n)
    eps = [random_episode(rng, i) for i in range(n)]
    s = compute_norm_stats(eps)
    assert all(np.all(v >= STD_FLOOR) for v in s.std.values())
