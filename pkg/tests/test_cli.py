import csv
import json

import pytest
import yaml

from contactvla.cli import main
from contactvla.config import RunConfig, from_dict, load_config
from contactvla.data import read_dataset

TINY = {"model": {"d_pali": 16, "horizon": 4, "heads": 2, "suffix_layers": 1, "expert_hidden_mult": 2},
        "training": {"steps": 4, "batch": 8, "checkpoint_every": 2, "demos": 5}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_config_round_trip_and_unknown_keys(tmp_path):
    cfg = from_dict(TINY)
    cfg.dump(tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"model": {"bogus": 1}})
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"extra": {}})
    assert RunConfig().model.experts == 8 and RunConfig().model.top_k == 1


def test_gen_demos_count(tmp_path, config):
    out = tmp_path / "demos"
    assert main(["gen-demos", "--config", str(config), "--out", str(out), "--episodes", "100"]) == 0
    metas = [json.loads(line) for line in open(out / "demos.jsonl") if '"meta"' in line]
    assert len(metas) == 100 and len(read_dataset(out / "demos.jsonl")) == 100
    assert (out / "config.yaml").exists() and (out / "seeds.txt").exists()


def test_missing_dataset_named(tmp_path, config, capsys):
    missing = tmp_path / "nowhere" / "d.jsonl"
    code = main(["train-vla", "--config", str(config), "--out", str(tmp_path / "r"), "--dataset", str(missing)])
    assert code != 0 and str(missing) in capsys.readouterr().err


def test_missing_checkpoint_named(tmp_path, config, capsys):
    run = tmp_path / "empty"
    code = main(["eval", "--config", str(config), "--out", str(run)])
    err = capsys.readouterr().err
    assert code != 0 and "checkpoint" in err and str(run) in err


def test_peel_demos_need_copilot(tmp_path, config, capsys):
    code = main(["gen-demos", "--config", str(config), "--task", "peel", "--out", str(tmp_path / "p"),
                 "--episodes", "2"])
    assert code != 0 and "--copilot" in capsys.readouterr().err


def test_bad_config_rejected_before_compute(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"ablation": {"mode": False, "force": False}}))
    code = main(["gen-demos", "--config", str(bad), "--out", str(tmp_path / "x"), "--episodes", "1"])
    assert code != 0 and not (tmp_path / "x").exists()


def test_train_resume_and_eval(tmp_path, config):
    run = tmp_path / "run"
    assert main(["gen-demos", "--config", str(config), "--out", str(run), "--episodes", "5"]) == 0
    assert main(["train-vla", "--config", str(config), "--out", str(run)]) == 0
    ckpts = sorted((run / "checkpoints").glob("*.bin"))
    assert [c.name for c in ckpts] == ["step_0000002.bin", "step_0000004.bin"]
    # a second invocation resumes at the final step and does no extra work
    assert main(["train-vla", "--config", str(config), "--out", str(run)]) == 0
    assert sorted((run / "checkpoints").glob("*.bin")) == ckpts
    assert main(["eval", "--config", str(config), "--out", str(run), "--episodes", "4"]) == 0
    (m,) = rows(run / "eval" / "metrics.csv")
    assert {"sr", "pcr", "expert_0_share", "dispatch_violations"} <= set(m)
    assert float(m["dispatch_violations"]) == 0
    assert sum(float(m[f"expert_{e}_share"]) for e in range(8)) == pytest.approx(1.0)
    assert rows(run / "eval" / "routing.csv")


def test_ablate_grid_rows_share_seeds(tmp_path, config):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(config), "--out", str(out), "--episodes", "3", "--num-seeds", "2",
                 "--demos", "4"]) == 0
    table = rows(out / "ablation.csv")
    assert [r["variant"] for r in table] == ["full", "no-force", "no-tactile", "no-copilot", "baseline"]
    assert len({r["seeds"] for r in table}) == 1 and table[0]["seeds"] == "0 1"
    # variants differ only in their ablation flags
    cfgs = {v: yaml.safe_load(open(out / v / "seed_0" / "config.yaml")) for v in ("full", "baseline")}
    assert {k: v for k, v in cfgs["full"].items() if k != "ablation"} == \
           {k: v for k, v in cfgs["baseline"].items() if k != "ablation"}


def test_train_copilot_outputs(tmp_path):
    cfg = tmp_path / "cop.yaml"
    cfg.write_text(yaml.safe_dump({"copilot": {"iterations": 2, "n_envs": 8, "rollout_steps": 10, "hidden": 16,
                                               "distill_episodes": 8, "distill_epochs": 1}}))
    out = tmp_path / "cop"
    assert main(["train-copilot", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    assert (out / "copilot.bin").exists() and len(rows(out / "curve.csv")) == 2
    assert [r["policy"] for r in rows(out / "copilot_eval.csv")] == ["teacher", "student", "scripted", "zero"]
    assert yaml.safe_load(open(out / "config.yaml"))["training"]["seed"] == 3
