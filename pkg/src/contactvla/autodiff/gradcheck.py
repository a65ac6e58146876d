from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor, grad


def _value(out) -> float:
    v = float(out.data) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(v):
        raise NumericError("function under check returned a non-finite value")
    return v


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and reads ``params`` by reference; each entry is
    perturbed in place and restored. The relative error of an entry is
    ``|analytic - numeric| / max(1e-8, |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = f()
    _value(loss)
    analytic = grad(loss, list(params))
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _value(f())
            flat[i] = orig - eps
            down = _value(f())
            flat[i] = orig
            num = (up - down) / (2 * eps)
            err = abs(float(gflat[i]) - num) / max(1e-8, abs(num))
            worst = max(worst, err)
    return worst
