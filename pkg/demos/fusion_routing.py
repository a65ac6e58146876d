"""The fusion block on random inputs: zero-init equivalence, routing and a few training steps."""

import numpy as np

from contactvla.bench import generate_demos
from contactvla.config import from_dict
from contactvla.flow import interpolate, sample_timestep
from contactvla.vla import VLATrainer

demos = generate_demos("insertion", 40, seed=0)
print(f"{len(demos)} insertion demos, mean length {np.mean([len(e) for e in demos]):.1f} steps")

small = {"model": {"d_pali": 32, "horizon": 8, "heads": 4}, "training": {"steps": 200, "batch": 32}}
full = VLATrainer(from_dict(small), demos)
base = VLATrainer(from_dict({**small, "ablation": {"mode": False}}), demos)

# before training, the fused policy and the backbone-only policy agree exactly
rng = np.random.default_rng(1)
idx = rng.choice(len(full.data), 16, replace=False)
obs = full.data.obs.take(idx)
t = sample_timestep(rng, 16)
x_t = interpolate(full.data.chunks[idx], rng.standard_normal(full.data.chunks[idx].shape), t)
v_full, fused = full.model.velocity(obs, x_t, t)
v_base, _ = base.model.velocity(obs, x_t, t)
print("max |v_full - v_base| at init:", float(np.abs(v_full.data - v_base.data).max()))

# every modal token goes to exactly one of the experts
for name, a in fused.routing.items():
    print(f"{name:>8} tokens {a.expert.size:>4}  per-expert {a.utilization(8)}")

full.train(log=lambda r: print(f"step {r['step']:>4}  fm {r['fm']:.4f}  aux {r['aux']:.4f}"), log_every=50)
_, fused = full.model.velocity(obs, x_t, t)
counts = sum(a.utilization(8) for a in fused.routing.values())
print("utilization after training:", np.round(counts / counts.sum(), 3))
