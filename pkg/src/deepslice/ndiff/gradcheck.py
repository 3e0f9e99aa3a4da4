"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Tensor | Sequence[Tensor],
    h: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` maps the input tensors to a scalar tensor. The error at each
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. With ``max_coords`` only
    a seeded random subset of coordinates per input is probed.
    """
    ts = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in ts:
        t.requires_grad = True
        t.grad = None
    out = fn(*ts)
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in ts]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, a in zip(ts, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*ts).data)
            flat[i] = orig - h
            fm = float(fn(*ts).data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = float(a.reshape(-1)[i])
            err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
            worst = max(worst, err)
    return worst
