"""Command-line entry point: train-copilot, gen-demos, train-vla, eval, ablate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import VARIANTS, AblationConfig, RunConfig, from_dict, load_config

log = logging.getLogger("contactvla")


class MissingArtifact(FileNotFoundError):
    pass


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return Path(path)


def resolve_config(args) -> RunConfig:
    data = load_config(args.config).to_dict() if args.config else RunConfig().to_dict()
    if getattr(args, "task", None):
        data["env"]["task"] = args.task
    if args.seed is not None:
        data["training"]["seed"] = args.seed
    if getattr(args, "variant", None):
        data["ablation"] = asdict(AblationConfig.for_variant(args.variant))
    return from_dict(data)


def write_rows(path, rows: list[dict]) -> None:
    """Comma-separated rows with a header line (union of keys, first-seen order)."""
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def read_metrics(path) -> dict:
    """First row of a metrics file as a dict of strings."""
    with open(path, newline="") as fh:
        return next(csv.DictReader(fh))


def record_run(out: Path, cfg: RunConfig, seeds) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    (out / "seeds.txt").write_text("\n".join(str(s) for s in seeds) + "\n")
    log.info("resolved config: %s", json.dumps(cfg.to_dict()))


# -- commands -------------------------------------------------------------------
def train_copilot(cfg: RunConfig, out: Path) -> dict:
    from .copilot import DistillConfig, PPOConfig, distill_student, evaluate_rotation, ppo_train, rotation_policy
    from .copilot import save_checkpoint, teacher_rollouts

    c = cfg.copilot
    seed = cfg.training.seed
    record_run(out, cfg, [seed])
    pcfg = PPOConfig(iterations=c.iterations, n_envs=c.n_envs, rollout_steps=c.rollout_steps, lr=c.lr,
                     latent=c.latent, hidden=c.hidden, seed=seed, randomize=c.randomize)
    nets, curve = ppo_train(pcfg, out_dir=out, log=lambda r: log.info("ppo %s", json.dumps(r)))
    write_rows(out / "curve.csv", curve)
    obs, lat = teacher_rollouts(nets, c.distill_episodes, seed=seed, randomize=c.randomize)
    dres = distill_student(nets, obs, lat, DistillConfig(epochs=c.distill_epochs, seed=seed))
    save_checkpoint(out / "copilot.bin", nets, meta={"config": asdict(pcfg), "distill": dres})
    rows = []
    for kind in ("teacher", "student", "scripted", "zero"):
        r = evaluate_rotation(rotation_policy(kind, nets), 100, seed=seed, randomize=c.randomize)
        rows.append({"policy": kind, **r})
    write_rows(out / "copilot_eval.csv", rows)
    (out / "distill.json").write_text(json.dumps(dres, indent=2))
    return {"distill": dres, "eval": rows}


def _copilot_fn(path):
    from .copilot import copilot_act, load_policy
    nets, _ = load_policy(_require(Path(path), "copilot checkpoint"))
    return lambda obs: copilot_act(obs, nets)


def gen_demos(cfg: RunConfig, out: Path, episodes: int, copilot_path=None) -> Path:
    from .bench import env_from_config, generate_demos
    from .data import write_dataset

    seed = cfg.training.seed
    env = env_from_config(cfg.env)
    if cfg.env.task == "peel" and not cfg.ablation.copilot:
        # without the copilot the demonstrator turns the object with the hand gait; not success-filtered
        demos = generate_demos("peel", episodes, seed, hand="gait", success_filter=False, env=env)
    elif cfg.env.task == "peel":
        if copilot_path is None:
            raise MissingArtifact("peel demonstrations need --copilot PATH (a train-copilot output)")
        demos = generate_demos("peel", episodes, seed, copilot=_copilot_fn(copilot_path), env=env)
    else:
        demos = generate_demos(cfg.env.task, episodes, seed, env=env)
    record_run(out, cfg, [seed])
    path = out / "demos.jsonl"
    write_dataset(path, demos)
    return path


def train_vla(cfg: RunConfig, out: Path, dataset) -> Path:
    from .data import read_dataset
    from .vla import VLATrainer, latest_checkpoint

    episodes = read_dataset(_require(Path(dataset), "dataset"))
    record_run(out, cfg, [cfg.training.seed])
    trainer = VLATrainer(cfg, episodes)
    prev = latest_checkpoint(out)
    if prev is not None:
        trainer.load(prev)
        log.info("resumed from %s at step %d", prev, trainer.state.step)
    trainer.train(out_dir=out, log=lambda r: log.info("train %s", json.dumps(r)))
    write_rows(out / "train.csv", trainer.state.history)
    return latest_checkpoint(out)


def evaluate(cfg: RunConfig, out: Path, checkpoint, episodes: int, copilot_path=None, eval_seed: int = 0) -> dict:
    from .bench import env_from_config
    from .data import write_dataset
    from .executor import ExecutorConfig, rollout
    from .vla import VLAPolicy

    ckpt = _require(Path(checkpoint), "checkpoint")
    policy = VLAPolicy.from_checkpoint(ckpt, seed=eval_seed)
    copilot = None
    if cfg.env.task == "peel" and policy.ablation.copilot:
        if copilot_path is None:
            raise MissingArtifact("peel evaluation with the copilot needs --copilot PATH")
        copilot = _copilot_fn(copilot_path)
    env = env_from_config(cfg.env)
    ecfg = ExecutorConfig(horizon=policy.model.cfg.horizon, euler_steps=policy.euler_steps, copilot=copilot,
                          trigger_enabled=policy.ablation.copilot)
    seeds = 10**6 * (eval_seed + 1) + np.arange(episodes)
    res = rollout(env, policy, ecfg, seeds)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "episodes.jsonl", res.episodes)
    o = res.outcomes()
    metrics = {
        "variant": policy.ablation.variant, "task": cfg.env.task, "seed": cfg.training.seed,
        "eval_seed": eval_seed, "episodes": episodes, "sr": float(o["success"].mean()),
        "pcr": float(np.nanmean(o["pcr"])) if cfg.env.task == "peel" else "",
        "replans": res.replans, "steps": res.steps,
        "copilot_steps": int(np.sum(res.hand_sources == "copilot")),
        "dispatch_violations": int(np.sum((res.hand_sources == "copilot") != ((res.triggers > 0.5) & (copilot is not None)))),
    }
    util = routing_utilization(policy.routing_log, policy.model.cfg.experts)
    for e, u in enumerate(util):
        metrics[f"expert_{e}_share"] = float(u)
    write_rows(out / "metrics.csv", [metrics])
    write_rows(out / "routing.csv", routing_rows(policy.routing_log, policy.model.cfg.experts))
    return metrics


def routing_utilization(routing_log, experts: int) -> np.ndarray:
    counts = np.zeros(experts)
    for entry in routing_log:
        for m in ("force", "tactile"):
            counts += np.bincount(entry[m].expert.ravel(), minlength=experts)
    return counts / max(1.0, counts.sum())


def routing_rows(routing_log, experts: int) -> list[dict]:
    rows = []
    for i, entry in enumerate(routing_log):
        for m in ("force", "tactile"):
            a = entry[m]
            row = {"call": i, "flow_t": entry["t"], "modality": m, "tokens": a.expert.size,
                   "mean_entropy": float(a.entropy().mean())}
            for e, n in enumerate(a.utilization(experts)):
                row[f"expert_{e}"] = int(n)
            rows.append(row)
    return rows


def ablate(cfg: RunConfig, out: Path, episodes: int, demos_count: int, seeds: list[int], copilot_path=None,
           variants=VARIANTS) -> list[dict]:
    """Variant grid over shared seeds; demos are shared by every variant that keeps the copilot."""
    rows = []
    for variant in variants:
        per_seed = []
        for s in seeds:
            data = cfg.to_dict()
            data["training"]["seed"] = s
            data["ablation"] = asdict(AblationConfig.for_variant(variant))
            vcfg = from_dict(data)
            demo_key = "gait" if (cfg.env.task == "peel" and variant == "no-copilot") else "expert"
            demo_dir = out / "demos" / demo_key / f"seed_{s}"
            if not (demo_dir / "demos.jsonl").exists():
                gen_demos(vcfg, demo_dir, demos_count, copilot_path)
            run = out / variant / f"seed_{s}"
            ckpt = train_vla(vcfg, run, demo_dir / "demos.jsonl")
            per_seed.append(evaluate(vcfg, run / "eval", ckpt, episodes, copilot_path, eval_seed=s))
        row = {"variant": variant, "seeds": " ".join(map(str, seeds)),
               "sr": float(np.mean([m["sr"] for m in per_seed]))}
        if cfg.env.task == "peel":
            row["pcr"] = float(np.mean([m["pcr"] for m in per_seed]))
        row["sr_per_seed"] = " ".join(f"{m['sr']:.3f}" for m in per_seed)
        rows.append(row)
    write_rows(out / "ablation.csv", rows)
    return rows


# -- argument parsing -------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contactvla", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variant=True, episodes=False):
        sp.add_argument("--config", type=Path, help="YAML run config (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="overrides training.seed")
        sp.add_argument("--out", type=Path, required=True, help="run directory")
        sp.add_argument("--threads", type=int, default=1, help="BLAS threads (1 keeps runs bit-reproducible)")
        sp.add_argument("--task", choices=("insertion", "peel"), help="overrides env.task")
        if variant:
            sp.add_argument("--variant", choices=VARIANTS, help="ablation variant (overrides the config flags)")
        if episodes:
            sp.add_argument("--episodes", type=int, default=100)
        return sp

    common(sub.add_parser("train-copilot", help="PPO teacher + distilled student on the rotor surrogate"),
           variant=False)
    sp = common(sub.add_parser("gen-demos", help="scripted demonstrations"), episodes=True)
    sp.add_argument("--copilot", type=Path, help="copilot checkpoint (peel task)")
    sp = common(sub.add_parser("train-vla", help="train the flow-matching policy (resumes from checkpoints)"))
    sp.add_argument("--dataset", type=Path, help="dataset file (default: OUT/demos.jsonl)")
    sp = common(sub.add_parser("eval", help="closed-loop evaluation of a checkpoint"), episodes=True)
    sp.add_argument("--checkpoint", type=Path, help="checkpoint file or run directory (default: OUT)")
    sp.add_argument("--copilot", type=Path, help="copilot checkpoint (peel task)")
    sp = common(sub.add_parser("ablate", help="variant grid with shared seeds"), variant=False, episodes=True)
    sp.add_argument("--copilot", type=Path, help="copilot checkpoint (peel task)")
    sp.add_argument("--num-seeds", type=int, default=3)
    sp.add_argument("--demos", type=int, default=None, help="demonstrations per seed (default: training.demos)")
    sp.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except ValueError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out: Path = args.out
    try:
        with threadpool_limits(limits=args.threads):
            if args.command == "train-copilot":
                train_copilot(cfg, out)
            elif args.command == "gen-demos":
                gen_demos(cfg, out, args.episodes, args.copilot)
            elif args.command == "train-vla":
                train_vla(cfg, out, args.dataset or out / "demos.jsonl")
            elif args.command == "eval":
                from .vla import latest_checkpoint
                ckpt = args.checkpoint or out
                if Path(ckpt).is_dir():
                    found = latest_checkpoint(ckpt)
                    if found is None:
                        raise MissingArtifact(f"no checkpoints under {Path(ckpt) / 'checkpoints'}")
                    ckpt = found
                m = evaluate(cfg, out / "eval", ckpt, args.episodes, args.copilot, eval_seed=cfg.training.seed)
                print(json.dumps(m))
            elif args.command == "ablate":
                base = cfg.training.seed
                rows = ablate(cfg, out, args.episodes, args.demos or cfg.training.demos,
                              [base + i for i in range(args.num_seeds)], args.copilot, tuple(args.variants))
                for r in rows:
                    print(json.dumps(r))
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
