"""Parameter storage, seeded initialisation and the Adam update."""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

from ..errors import KeyMismatch
from .tensor import Tensor

# std of a standard normal truncated to [-2, 2]; used to undo the shrinkage
_TRUNC2_STD = 0.8796256610342398


class ParamStore:
    """Ordered named parameters plus per-parameter Adam moments."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None, dtype=np.float32):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        for name, arr in (tensors or {}).items():
            self.add(name, np.asarray(arr, dtype=dtype))

    def add(self, name: str, arr: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyMismatch(f"duplicate parameter {name!r}")
        t = Tensor(arr, requires_grad=True, dtype=arr.dtype, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def num_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in self.params.items()}

    def astype(self, dtype) -> "ParamStore":
        """Copy of the parameter values (fresh optimiser state) at another precision."""
        return ParamStore({k: t.data.astype(dtype) for k, t in self.params.items()}, dtype=dtype)

    def copy(self) -> "ParamStore":
        out = ParamStore({k: t.data.copy() for k, t in self.params.items()}, dtype=None)
        out.m = {k: a.copy() for k, a in self.m.items()}
        out.v = {k: a.copy() for k, a in self.v.items()}
        out.t = self.t
        return out

    def equal(self, other: "ParamStore") -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(self[k].data, other[k].data) for k in self.params)


def _fan_in(shape: tuple[int, ...]) -> int:
    return int(math.prod(shape[1:]))


def truncated_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Standard normal samples truncated to two standard deviations by resampling."""
    out = rng.standard_normal(size)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out


def init_params(
    shapes: Mapping[str, tuple[int, ...]],
    seed: int,
    dtype=np.float32,
    zero: Iterable[str] = (),
) -> ParamStore:
    """He-style initialisation from a PCG64 stream seeded with ``seed``.

    Tensors with one dimension are biases and start at zero, as do names in
    ``zero``. Weights draw from a 2-sigma truncated normal rescaled so the
    sample std is ``sqrt(2 / fan_in)``. Draws are made in float64 in the
    iteration order of ``shapes`` and then cast, so results do not depend on
    ``dtype`` beyond rounding.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    zero = set(zero)
    store = ParamStore(dtype=dtype)
    for name, shape in shapes.items():
        shape = tuple(int(s) for s in shape)
        if len(shape) == 1 or name in zero:
            arr = np.zeros(shape, dtype=dtype)
        else:
            std = math.sqrt(2.0 / _fan_in(shape)) / _TRUNC2_STD
            arr = (truncated_normal(rng, math.prod(shape)) * std).reshape(shape).astype(dtype)
        store.add(name, arr)
    return store


def adam_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    if set(grads) != set(params.params):
        missing = set(params.params) ^ set(grads)
        raise KeyMismatch(f"gradient keys differ from parameters: {sorted(missing)}")
    params.t += 1
    t = params.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.params.items():
        g = np.asarray(grads[name], dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise KeyMismatch(f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}")
        m, v = params.m[name], params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype, copy=False)
