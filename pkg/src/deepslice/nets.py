"""RDN-family networks for marginal super-resolution, fusion, refinement
and the 2D/3D CNN baselines.

Every network shares one trunk: a shallow feature extractor (two convs),
``num_rdbs`` residual dense blocks, global feature fusion (1x1 + 3x3 conv)
and a global feature residual. Only the head differs. Msr and Baseline3d
end in a conv that emits ``out * k`` channels followed by a pixel shuffle
along the sparse (last) axis; the others end in one plain conv.

Each network also carries a parameter-free image-level skip path (linear
interpolation along the sparse axis, view averaging, or identity) and its
head starts at zero, so an untrained network reproduces the skip exactly.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import ndiff as nd
from .errors import InvalidSpec, ShapeMismatch
from .ndiff import ParamStore, Tensor
from .volgeom import Slab, SliceRef, lerp_matrix


class Kind(str, enum.Enum):
    MSR = "msr"
    FUSION = "fusion"
    REFINE = "refine"
    BASELINE2D = "baseline2d"
    BASELINE3D = "baseline3d"


@dataclass(frozen=True)
class RdbConfig:
    g0: int = 32
    g: int = 16
    c: int = 4

    def __post_init__(self):
        if min(self.g0, self.g, self.c) < 1:
            raise InvalidSpec(f"RDB sizes must be positive: {self}")


PROFILES = {
    "default": RdbConfig(32, 16, 4),
    "tiny": RdbConfig(8, 8, 2),
}


def profile(name: str | RdbConfig) -> RdbConfig:
    if isinstance(name, RdbConfig):
        return name
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidSpec(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class NetworkSpec:
    kind: Kind
    in_channels: int
    out_channels: int
    num_rdbs: int
    rdb: RdbConfig
    upsample_k: int = 1
    kernel: int = 3
    k: int = 0  # sparsity factor the network was built for

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if isinstance(self.rdb, dict):
            object.__setattr__(self, "rdb", RdbConfig(**self.rdb))
        self.validate()

    @property
    def spatial_dims(self) -> int:
        return 3 if self.kind is Kind.BASELINE3D else 2

    def validate(self) -> None:
        kind, k = self.kind, self.k
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidSpec("kernel size must be odd")
        if min(self.in_channels, self.out_channels, self.num_rdbs, self.upsample_k) < 1:
            raise InvalidSpec(f"channel/block counts must be positive: {self}")
        expected = {
            Kind.MSR: (None, 1, 2, k),
            Kind.FUSION: (2, 1, 2, 1),
            Kind.REFINE: (k + 1, k + 1, 2, 1),
            Kind.BASELINE2D: (2, k - 1, 2, 1),
            Kind.BASELINE3D: (1, 1, 1, k),
        }[kind]
        if kind is not Kind.FUSION and k < 2:
            raise InvalidSpec(f"{kind.value} network needs a sparsity factor k >= 2")
        got = (self.in_channels, self.out_channels, self.num_rdbs, self.upsample_k)
        for name, want, have in zip(("in_channels", "out_channels", "num_rdbs", "upsample_k"), expected, got):
            if want is not None and want != have:
                raise InvalidSpec(f"{kind.value}: {name} must be {want}, got {have}")
        if kind is Kind.MSR and self.in_channels % 2 == 0:
            raise InvalidSpec("Msr slab width s must be odd")

    @classmethod
    def msr(cls, k: int, s: int = 3, rdb: RdbConfig | str = "default") -> "NetworkSpec":
        return cls(Kind.MSR, s, 1, 2, profile(rdb), upsample_k=k, k=k)

    @classmethod
    def fusion(cls, rdb: RdbConfig | str = "default", k: int = 0) -> "NetworkSpec":
        return cls(Kind.FUSION, 2, 1, 2, profile(rdb), k=k)

    @classmethod
    def refine(cls, k: int, rdb: RdbConfig | str = "default") -> "NetworkSpec":
        return cls(Kind.REFINE, k + 1, k + 1, 2, profile(rdb), k=k)

    @classmethod
    def baseline2d(cls, k: int, rdb: RdbConfig | str = "default") -> "NetworkSpec":
        return cls(Kind.BASELINE2D, 2, k - 1, 2, profile(rdb), k=k)

    @classmethod
    def baseline3d(cls, k: int, rdb: RdbConfig | str = "default") -> "NetworkSpec":
        return cls(Kind.BASELINE3D, 1, 1, 1, profile(rdb), upsample_k=k, k=k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["rdb"] = RdbConfig(**d["rdb"])
        return cls(**d)


HEAD = ("head.w", "head.b")


def param_shapes(spec: NetworkSpec) -> dict[str, tuple[int, ...]]:
    """Ordered parameter shapes for the trunk and head of ``spec``."""
    k3 = (spec.kernel,) * spec.spatial_dims
    k1 = (1,) * spec.spatial_dims
    g0, g, c = spec.rdb.g0, spec.rdb.g, spec.rdb.c
    shapes: dict[str, tuple[int, ...]] = {
        "sfe1.w": (g0, spec.in_channels) + k3,
        "sfe1.b": (g0,),
        "sfe2.w": (g0, g0) + k3,
        "sfe2.b": (g0,),
    }
    for i in range(spec.num_rdbs):
        for j in range(c):
            shapes[f"rdb{i}.conv{j}.w"] = (g, g0 + j * g) + k3
            shapes[f"rdb{i}.conv{j}.b"] = (g,)
        shapes[f"rdb{i}.lff.w"] = (g0, g0 + c * g) + k1
        shapes[f"rdb{i}.lff.b"] = (g0,)
    shapes["gff1.w"] = (g0, spec.num_rdbs * g0) + k1
    shapes["gff1.b"] = (g0,)
    shapes["gff2.w"] = (g0, g0) + k3
    shapes["gff2.b"] = (g0,)
    shapes["head.w"] = (spec.out_channels * spec.upsample_k, g0) + k3
    shapes["head.b"] = (spec.out_channels * spec.upsample_k,)
    return shapes


class Network:
    """Topology of one network; parameters live in a separate ParamStore."""

    def __init__(self, spec: NetworkSpec):
        spec.validate()
        self.spec = spec
        self._conv = nd.conv3d if spec.spatial_dims == 3 else nd.conv2d
        self._pad = spec.kernel // 2

    @property
    def has_upsampler(self) -> bool:
        return self.spec.kind in (Kind.MSR, Kind.BASELINE3D)

    def _c(self, params: ParamStore, name: str, x: Tensor, pad: int | None = None) -> Tensor:
        return self._conv(x, params[f"{name}.w"], params[f"{name}.b"], padding=self._pad if pad is None else pad)

    def check_input(self, shape: Sequence[int]) -> None:
        want = 2 + self.spec.spatial_dims
        if len(shape) != want:
            raise ShapeMismatch(f"{self.spec.kind.value} expects {want}-dim batched input, got {tuple(shape)}")
        if shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"{self.spec.kind.value} expects {self.spec.in_channels} channels, got {shape[1]}")

    def skip(self, x: Tensor) -> Tensor:
        spec = self.spec
        k = spec.k
        if spec.kind is Kind.REFINE:
            return x
        if spec.kind is Kind.FUSION:
            return nd.linear_map_axis(x, np.array([[0.5, 0.5]]), axis=1)
        if spec.kind is Kind.BASELINE2D:
            w = np.array([[(k - j) / k, j / k] for j in range(1, k)])
            return nd.linear_map_axis(x, w, axis=1)
        # Msr / Baseline3d: centre channel, linearly upsampled along the sparse axis
        if spec.in_channels > 1:
            pick = np.zeros((1, spec.in_channels))
            pick[0, spec.in_channels // 2] = 1.0
            x = nd.linear_map_axis(x, pick, axis=1)
        return nd.linear_map_axis(x, lerp_matrix(x.shape[-1], k), axis=-1)

    def __call__(self, params: ParamStore, x) -> Tensor:
        x = nd.as_tensor(x)
        self.check_input(x.shape)
        spec = self.spec
        f_shallow = self._c(params, "sfe1", x)
        f = self._c(params, "sfe2", f_shallow)
        block_outs = []
        for i in range(spec.num_rdbs):
            feats = [f]
            for j in range(spec.rdb.c):
                inp = feats[0] if j == 0 else nd.concat_channels(feats)
                feats.append(nd.relu(self._c(params, f"rdb{i}.conv{j}", inp)))
            local = self._c(params, f"rdb{i}.lff", nd.concat_channels(feats), pad=0)
            f = nd.add(local, f)
            block_outs.append(f)
        fused = block_outs[0] if len(block_outs) == 1 else nd.concat_channels(block_outs)
        g = self._c(params, "gff1", fused, pad=0)
        g = self._c(params, "gff2", g)
        g = nd.add(g, f_shallow)
        head = self._c(params, "head", g)
        if self.has_upsampler:
            head = nd.subpixel_upsample_axis(head, spec.upsample_k, axis=-1)
        return nd.add(self.skip(x), head)

    def infer(self, params: ParamStore, x: np.ndarray) -> np.ndarray:
        """Forward pass on a plain batched array without recording a graph."""
        dtype = next(iter(params.params.values())).dtype
        frozen = ParamStore.__new__(ParamStore)
        frozen.params = {k: Tensor(t.data, dtype=t.dtype) for k, t in params.items()}
        return self(frozen, Tensor(np.asarray(x, dtype=dtype))).data

    def output_shape(self, in_shape: Sequence[int]) -> tuple[int, ...]:
        shape = list(in_shape)
        shape[1] = self.spec.out_channels
        if self.has_upsampler:
            shape[-1] *= self.spec.upsample_k
        return tuple(shape)


def closed_form_param_count(spec: NetworkSpec) -> int:
    kv = spec.kernel**spec.spatial_dims
    g0, g, c, d = spec.rdb.g0, spec.rdb.g, spec.rdb.c, spec.num_rdbs
    sfe = g0 * spec.in_channels * kv + g0 + g0 * g0 * kv + g0
    rdb = sum(g * (g0 + j * g) * kv + g for j in range(c)) + g0 * (g0 + c * g) + g0
    gff = g0 * d * g0 + g0 + g0 * g0 * kv + g0
    nout = spec.out_channels * spec.upsample_k
    return sfe + d * rdb + gff + nout * g0 * kv + nout


def build(spec: NetworkSpec, seed: int, dtype=np.float32, zero_head: bool = True) -> tuple[Network, ParamStore]:
    """Network topology and freshly initialised parameters."""
    spec.validate()
    params = nd.init_params(param_shapes(spec), seed, dtype=dtype, zero=HEAD if zero_head else ())
    return Network(spec), params


def _batched(arr: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(arr)
    if arr.ndim == ndim - 1:
        return arr[None], True
    return arr, False


def _slab_array(slab) -> np.ndarray:
    if isinstance(slab, Slab):
        return slab.stack()
    return np.asarray(slab)


def msr_forward(net: Network, params: ParamStore, slab) -> SliceRef | np.ndarray:
    """Super-resolve one slab ``(s, A, B/k)`` to a slice ``(A, B)``.

    A batched ``(N, s, A, B/k)`` array returns ``(N, A, B)``.
    """
    if net.spec.kind is not Kind.MSR:
        raise ShapeMismatch("msr_forward needs an Msr network")
    x, single = _batched(_slab_array(slab), 4)
    out = net.infer(params, x)[:, 0]
    if single:
        if isinstance(slab, Slab):
            return SliceRef(slab.axis, slab.center_index, out[0])
        return out[0]
    return out


def fusion_forward(net: Network, params: ParamStore, sag_slice, cor_slice):
    if net.spec.kind is not Kind.FUSION:
        raise ShapeMismatch("fusion_forward needs a Fusion network")
    a = sag_slice.data if isinstance(sag_slice, SliceRef) else np.asarray(sag_slice)
    b = cor_slice.data if isinstance(cor_slice, SliceRef) else np.asarray(cor_slice)
    if a.shape != b.shape:
        raise ShapeMismatch(f"fusion inputs differ: {a.shape} vs {b.shape}")
    x = np.stack([a, b], axis=-3)
    x, single = _batched(x, 4)
    out = net.infer(params, x)[:, 0]
    if single:
        if isinstance(sag_slice, SliceRef):
            return SliceRef(sag_slice.axis, sag_slice.index, out[0])
        return out[0]
    return out


def refine_forward(net: Network, params: ParamStore, slab) -> np.ndarray:
    """``(k+1, X, Y)`` axial slab in, same-shape slab out (batched too)."""
    if net.spec.kind is not Kind.REFINE:
        raise ShapeMismatch("refine_forward needs a Refine network")
    x, single = _batched(_slab_array(slab), 4)
    out = net.infer(params, x)
    return out[0] if single else out


def baseline2d_forward(net: Network, params: ParamStore, slice_z, slice_z1) -> np.ndarray:
    """Two adjacent observed axial slices in, ``k-1`` in-between slices out."""
    if net.spec.kind is not Kind.BASELINE2D:
        raise ShapeMismatch("baseline2d_forward needs a Baseline2d network")
    a = slice_z.data if isinstance(slice_z, SliceRef) else np.asarray(slice_z)
    b = slice_z1.data if isinstance(slice_z1, SliceRef) else np.asarray(slice_z1)
    if a.shape != b.shape:
        raise ShapeMismatch(f"baseline2d inputs differ: {a.shape} vs {b.shape}")
    x, single = _batched(np.stack([a, b], axis=-3), 4)
    out = net.infer(params, x)
    return out[0] if single else out


def baseline3d_forward(net: Network, params: ParamStore, patch: np.ndarray) -> np.ndarray:
    """Anisotropic ``(X, Y, Zd)`` patch in, ``(X, Y, Zd*k)`` patch out."""
    if net.spec.kind is not Kind.BASELINE3D:
        raise ShapeMismatch("baseline3d_forward needs a Baseline3d network")
    p = np.asarray(patch)
    if p.ndim == 3:
        x = p[None, None]
    elif p.ndim == 5:
        x = p
    else:
        raise ShapeMismatch(f"patch must be (X, Y, Z) or (N, 1, X, Y, Z), got {p.shape}")
    if x.shape[-1] < 2:
        raise ShapeMismatch("baseline3d patch needs at least 2 axial samples")
    out = net.infer(params, x)
    return out[0, 0] if p.ndim == 3 else out


def describe(spec: NetworkSpec) -> str:
    n = closed_form_param_count(spec)
    return f"{spec.kind.value}: in={spec.in_channels} out={spec.out_channels} rdbs={spec.num_rdbs} params={n:,}"


__all__ = [
    "Kind",
    "RdbConfig",
    "PROFILES",
    "NetworkSpec",
    "Network",
    "build",
    "param_shapes",
    "closed_form_param_count",
    "msr_forward",
    "fusion_forward",
    "refine_forward",
    "baseline2d_forward",
    "baseline3d_forward",
]
