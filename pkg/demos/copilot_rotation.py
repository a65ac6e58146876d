"""Train the rotation copilot briefly and compare it with the scripted finger gait.

A full run (contactvla train-copilot) uses 120 iterations; 40 are enough to
see the learned policy pull away from the gait.
"""

import numpy as np

from contactvla.copilot import (DistillConfig, PPOConfig, distill_student, evaluate_rotation, ppo_train,
                                rotation_policy, teacher_rollouts)

nets, curve = ppo_train(PPOConfig(iterations=40, seed=0),
                        log=lambda r: print(f"iter {r['iteration']:>3}  return {r['mean_return']:7.2f}"
                                            f"  success {r.get('success', float('nan')):.2f}"))
obs, latent = teacher_rollouts(nets, 256, seed=0)
print("distillation:", distill_student(nets, obs, latent, DistillConfig(epochs=10, seed=0)))

for kind in ("zero", "scripted", "teacher", "student"):
    r = evaluate_rotation(rotation_policy(kind, nets), 100, seed=7)
    print(f"{kind:>8}: success {r['success']:.2f}  drop {r['drop']:.2f}  return {r['mean_return']:6.2f}"
          f"  |rotation| {r['mean_abs_rotation']:.2f} rad")
