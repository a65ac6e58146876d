"""Timestep distribution and Euler sampling on toy velocity fields."""

import numpy as np

from contactvla.flow import euler_sample, sample_timestep

rng = np.random.default_rng(0)

# training timesteps lean toward the noisy end: density 1.5 * sqrt(t)
t = sample_timestep(rng, 100_000)
hist, edges = np.histogram(t, bins=5, range=(0, 1))
print("timestep mean %.4f (target 0.6)" % t.mean())
for lo, hi, n in zip(edges, edges[1:], hist):
    print(f"  [{lo:.1f}, {hi:.1f})  empirical {n / t.size:.3f}  exact {hi**1.5 - lo**1.5:.3f}")

# a constant field maps noise onto the data point in any number of steps
x_data = rng.normal(size=4)
eps = rng.normal(size=4)
for n in (1, 5, 10):
    out = euler_sample(lambda x, t: eps - x_data, eps, n)
    print(f"constant field, {n:>2} steps: max error {np.abs(out - x_data).max():.1e}")

# dx/dt = -x from t=1 to t=0 has the closed form x(0) = e * x(1); error halves as steps double
x1 = np.array([1.0, -2.0])
prev = None
for n in (10, 20, 40, 80):
    err = np.abs(euler_sample(lambda x, t: -x, x1, n) - np.e * x1).max()
    ratio = "" if prev is None else f"  ratio {prev / err:.2f}"
    print(f"decay field, {n:>2} steps: error {err:.2e}{ratio}")
    prev = err
