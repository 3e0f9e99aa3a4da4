"""Volume data model, axis conventions, slicing and the linear baseline.

Volumes are indexed ``data[x, y, z]`` with x sagittal, y coronal and z axial.
The linear storage order used by file I/O is x-fastest (Fortran order).
Sagittal slices are ``(y, z)`` planes, coronal ``(x, z)`` and axial ``(x, y)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BadSparsity,
    EvenSlabWidth,
    InconsistentDims,
    IndexOutOfRange,
    MissingIndex,
    NonDivisibleExtent,
    TooFewSlices,
)


class Axis(enum.IntEnum):
    SAGITTAL = 0
    CORONAL = 1
    AXIAL = 2

    @classmethod
    def parse(cls, value) -> "Axis":
        if isinstance(value, Axis):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            aliases = {"X": "SAGITTAL", "Y": "CORONAL", "Z": "AXIAL", "SAG": "SAGITTAL", "COR": "CORONAL"}
            return cls[aliases.get(key, key)]
        return cls(int(value))


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense scalar field with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise InconsistentDims(f"volume data must be a non-empty 3D array, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("volume intensities must be finite and lie in [0, 1]")
        arr = arr.view()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def clipped(cls, data: np.ndarray) -> "Volume":
        return cls(np.clip(np.asarray(data, dtype=np.float32), 0.0, 1.0))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.data.shape)

    @property
    def nx(self) -> int:
        return self.data.shape[0]

    @property
    def ny(self) -> int:
        return self.data.shape[1]

    @property
    def nz(self) -> int:
        return self.data.shape[2]

    def extent(self, axis) -> int:
        return self.data.shape[Axis.parse(axis)]

    def linear(self) -> np.ndarray:
        """Values in x-fastest storage order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_linear(cls, values: np.ndarray, dims: Sequence[int]) -> "Volume":
        return cls(np.asarray(values).reshape(tuple(dims), order="F"))

    def __eq__(self, other) -> bool:
        return isinstance(other, Volume) and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SliceRef:
    axis: Axis
    index: int
    data: np.ndarray


@dataclass(frozen=True, eq=False)
class Slab:
    axis: Axis
    center_index: int
    s: int
    slices: list[np.ndarray] = field(default_factory=list)
    indices: tuple[int, ...] = ()

    def stack(self) -> np.ndarray:
        """The slab as an ``(s, a, b)`` array, one channel per offset."""
        return np.stack(self.slices, axis=0)


def _check_k(k: int) -> None:
    if int(k) != k or k < 2:
        raise BadSparsity(f"sparsity factor must be an integer >= 2, got {k}")


def downsample_axial(vol: Volume, k: int, allow_tail: bool = False) -> Volume:
    """Keep every k-th axial plane: ``out(x, y, z) = vol(x, y, k*z)``.

    ``allow_tail`` also accepts extents not divisible by k (for instance the
    ``(n-1)*k + 1`` extent of a reconstruction) and keeps every plane with
    index ``k*z < nz``.
    """
    _check_k(k)
    if vol.nz % k and not allow_tail:
        raise NonDivisibleExtent(f"nz={vol.nz} not divisible by k={k}")
    return Volume(np.ascontiguousarray(vol.data[:, :, ::k]))


def extract_slice(vol: Volume, axis, index: int) -> SliceRef:
    axis = Axis.parse(axis)
    n = vol.extent(axis)
    if not 0 <= index < n:
        raise IndexOutOfRange(f"{axis.name.lower()} index {index} outside [0, {n})")
    plane = np.take(vol.data, index, axis=int(axis))
    return SliceRef(axis, int(index), plane)


def slab_indices(center: int, s: int, extent: int) -> list[int]:
    """Replicate-clamped indices for offsets ``-(s-1)/2 .. (s-1)/2``."""
    if s < 1 or s % 2 == 0:
        raise EvenSlabWidth(f"slab width must be odd and positive, got {s}")
    if not 0 <= center < extent:
        raise IndexOutOfRange(f"center {center} outside [0, {extent})")
    h = (s - 1) // 2
    return [min(max(center + l, 0), extent - 1) for l in range(-h, h + 1)]


def extract_slab(vol: Volume, axis, center_index: int, s: int) -> Slab:
    axis = Axis.parse(axis)
    idx = slab_indices(center_index, s, vol.extent(axis))
    planes = [np.take(vol.data, i, axis=int(axis)) for i in idx]
    return Slab(axis, int(center_index), s, planes, tuple(idx))


def assemble_from_slices(slices: Sequence[SliceRef], axis) -> Volume:
    axis = Axis.parse(axis)
    if not slices:
        raise MissingIndex("no slices to assemble")
    shape = slices[0].data.shape
    for sl in slices:
        if Axis.parse(sl.axis) != axis:
            raise InconsistentDims(f"slice along {sl.axis.name} in a {axis.name} assembly")
        if sl.data.shape != shape or sl.data.ndim != 2:
            raise InconsistentDims(f"slice dims {sl.data.shape} differ from {shape}")
    indices = sorted(sl.index for sl in slices)
    if indices != list(range(len(slices))):
        raise MissingIndex(f"slice indices must cover 0..{len(slices) - 1} exactly once")
    ordered = sorted(slices, key=lambda sl: sl.index)
    data = np.stack([sl.data for sl in ordered], axis=int(axis))
    return Volume(data)


def insert_slice(vol: Volume, sl: SliceRef) -> Volume:
    """Copy of ``vol`` with one plane replaced."""
    axis = Axis.parse(sl.axis)
    n = vol.extent(axis)
    if not 0 <= sl.index < n:
        raise IndexOutOfRange(f"index {sl.index} outside [0, {n})")
    data = vol.data.copy()
    idx = [slice(None)] * 3
    idx[int(axis)] = sl.index
    if data[tuple(idx)].shape != sl.data.shape:
        raise InconsistentDims(f"slice dims {sl.data.shape} do not fit volume {vol.dims}")
    data[tuple(idx)] = sl.data
    return Volume(data)


def upsampled_extent(nz_down: int, k: int) -> int:
    return (nz_down - 1) * k + 1


def lerp_matrix(n_in: int, k: int, n_out: int | None = None) -> np.ndarray:
    """Matrix mapping ``n_in`` samples to positions ``a*k + j`` by linear blending.

    Row ``a*k + j`` holds weight ``(k-j)/k`` on sample ``a`` and ``j/k`` on
    ``a+1``; past the last sample the last value is held. ``n_out`` defaults
    to ``n_in * k``.
    """
    n_out = n_in * k if n_out is None else n_out
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for row in range(n_out):
        a, j = divmod(row, k)
        a0 = min(a, n_in - 1)
        a1 = min(a + 1, n_in - 1)
        m[row, a0] += (k - j) / k
        m[row, a1] += j / k
    return m


def linear_interp_axial(vol_down: Volume, k: int) -> Volume:
    """Linear interpolation between observed axial planes.

    Output extent is ``(nz_down - 1) * k + 1``; observed planes are copied
    verbatim and the plane at offset ``j`` is ``((k-j) A + j B) / k``.
    """
    _check_k(k)
    nzd = vol_down.nz
    if nzd < 2:
        raise TooFewSlices(f"need at least 2 axial slices, got {nzd}")
    src = vol_down.data
    out = np.empty(src.shape[:2] + (upsampled_extent(nzd, k),), dtype=src.dtype)
    out[:, :, ::k] = src
    for j in range(1, k):
        a = src[:, :, :-1].astype(np.float64)
        b = src[:, :, 1:].astype(np.float64)
        out[:, :, j::k] = ((k - j) * a + j * b) / k
    return Volume(out)


def observed_mask(nz: int, k: int) -> np.ndarray:
    """Boolean per axial index: True where ``z % k == 0``."""
    return (np.arange(nz) % k) == 0


def crop_axial(vol: Volume, nz: int) -> Volume:
    if nz > vol.nz or nz < 1:
        raise InconsistentDims(f"cannot crop nz={vol.nz} to {nz}")
    return Volume(np.ascontiguousarray(vol.data[:, :, :nz]))
