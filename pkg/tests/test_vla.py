import numpy as np
import pytest

from contactvla.bench import generate_demos
from contactvla.config import AblationConfig, from_dict
from contactvla.executor import ExecutorConfig, rollout
from contactvla.bench import make_env
from contactvla.vla import VLAPolicy, VLATrainer, build_chunks, build_model, latest_checkpoint, prepare_obs

SMALL = {"model": {"d_pali": 16, "horizon": 4, "heads": 2, "suffix_layers": 1, "expert_hidden_mult": 2},
         "training": {"steps": 6, "batch": 8, "checkpoint_every": 3}}


def cfg_for(variant="full", **training):
    data = {k: dict(v) for k, v in SMALL.items()}
    data["training"].update(training)
    data["ablation"] = AblationConfig.for_variant(variant).__dict__
    return from_dict(data)


@pytest.fixture(scope="module")
def demos():
    return generate_demos("insertion", 6, seed=0)


def test_chunks_pad_with_last_action(demos):
    trainer = VLATrainer(cfg_for(), demos)
    ep = demos[0]
    T = len(ep)
    last = trainer.stats.normalize("action", ep.action)[-1]
    assert len(trainer.data) == sum(len(e) for e in demos)
    np.testing.assert_array_equal(trainer.data.chunks[T - 1], np.tile(last, (4, 1)))


def test_ablation_zeroes_inputs_after_normalisation(demos):
    trainer = VLATrainer(cfg_for("no-force"), demos)
    assert not trainer.data.obs.force.any() and trainer.data.obs.tactile.any()
    obs = make_env("insertion").reset(np.arange(2))
    prepared = prepare_obs(obs, trainer.stats, AblationConfig.for_variant("no-tactile"))
    assert not prepared.tactile.any() and prepared.force.shape == (2, 14)


def test_variants_share_parameter_counts():
    counts = {v: build_model(cfg_for(v)).num_parameters() for v in ("full", "no-force", "no-tactile", "no-copilot")}
    assert len(set(counts.values())) == 1


def test_training_keeps_prefix_frozen_and_lowers_loss(demos):
    trainer = VLATrainer(cfg_for(steps=30, batch=32, lr=3e-3), demos)
    frozen = trainer.model.backbone.prefix_encoder.checksum()
    first = trainer.train_step()["fm"]
    trainer.train(log_every=10)
    assert trainer.model.backbone.prefix_encoder.checksum() == frozen
    assert np.mean([r["fm"] for r in trainer.state.history[-1:]]) < first


def test_resume_matches_uninterrupted(tmp_path, demos):
    full = VLATrainer(cfg_for(), demos)
    full.train(out_dir=tmp_path / "a")
    half = VLATrainer(cfg_for(), demos)
    half.train(steps=3, out_dir=tmp_path / "b")
    resumed = VLATrainer(cfg_for(), demos)
    resumed.load(latest_checkpoint(tmp_path / "b"))
    assert resumed.state.step == 3
    resumed.train(out_dir=tmp_path / "b")
    assert resumed.model.checksum() == full.model.checksum()
    for m1, m2 in zip(resumed.opt.state.m, full.opt.state.m):
        assert m1.tobytes() == m2.tobytes()


def test_policy_from_checkpoint_and_rollout(tmp_path, demos):
    trainer = VLATrainer(cfg_for(), demos)
    trainer.train(out_dir=tmp_path)
    pol = VLAPolicy.from_checkpoint(latest_checkpoint(tmp_path), seed=1)
    assert pol.model.checksum() == trainer.model.checksum()
    res = rollout(make_env("insertion"), pol, ExecutorConfig(horizon=4), np.arange(3))
    assert len(res.episodes) == 3 and res.replans >= 1
    # one routing record per Euler step per replan, every modal token routed once
    assert len(pol.routing_log) == res.replans * pol.euler_steps
    for entry in pol.routing_log:
        for m in ("force", "tactile"):
            assert entry[m].expert.shape == (3, 4)


def test_untrained_mode_matches_baseline_eval(demos):
    seeds = np.arange(4)
    results = []
    for variant in ("full", "baseline"):
        trainer = VLATrainer(cfg_for(variant), demos)
        pol = VLAPolicy(trainer.model, trainer.stats, trainer.cfg.ablation, seed=0)
        res = rollout(make_env("insertion"), pol, ExecutorConfig(horizon=4), seeds)
        results.append(np.concatenate([e.action.ravel() for e in res.episodes]))
    np.testing.assert_allclose(results[0], results[1], atol=1e-5)


def test_baseline_flag_contradiction_rejected():
    data = {k: dict(v) for k, v in SMALL.items()}
    data["ablation"] = {"mode": False, "force": False}
    with pytest.raises(ValueError):
        from_dict(data)
