"""Seeded analytic phantoms: nested deformed ellipsoidal shells with labels.

The continuous field lives on normalised coordinates ``u = 2 i / n - 1`` per
axis, so a grid of half the resolution samples exactly every other point of
the full grid. All geometric parameters are drawn before the noise, which
keeps the anatomy identical across noise levels for a given seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import InconsistentDims, InvalidSpec
from .volgeom import Volume

DEFAULT_BANDS = ((0.00, 0.10), (0.35, 0.55), (0.70, 0.90))


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    dims: tuple[int, int, int] = (64, 64, 64)
    shells: int = 3
    bands: tuple[tuple[float, float], ...] = DEFAULT_BANDS
    deformation: float = 0.15
    bias: float = 0.02
    noise_sigma: float = 0.02
    ventricles: int = 2
    nuclei: int = 4

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "bands", tuple((float(lo), float(hi)) for lo, hi in self.bands))
        self.validate()

    def validate(self) -> None:
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise InvalidSpec(f"dims must be three positive extents, got {self.dims}")
        if self.shells < 2 or len(self.bands) != self.shells:
            raise InvalidSpec(f"need one intensity band per shell ({self.shells}), got {len(self.bands)}")
        for lo, hi in self.bands:
            if not 0.0 <= lo <= hi <= 1.0:
                raise InvalidSpec(f"band [{lo}, {hi}] is not a sub-interval of [0, 1]")
        gaps = [b[0] - a[1] for a, b in zip(self.bands, self.bands[1:])]
        if min(gaps) < 0.05 - 1e-12:
            raise InvalidSpec(f"bands must be ordered with gaps >= 0.05, got gaps {gaps}")
        if self.noise_sigma < 0 or self.noise_sigma >= min(gaps) / 2:
            raise InvalidSpec(f"noise sigma {self.noise_sigma} must be below half the smallest gap {min(gaps)}")
        if self.deformation < 0 or self.deformation >= 0.5:
            raise InvalidSpec("deformation amplitude must lie in [0, 0.5)")
        if self.bias < 0 or self.ventricles < 0 or self.nuclei < 0:
            raise InvalidSpec("bias amplitude and blob counts must be non-negative")

    @property
    def centers(self) -> np.ndarray:
        return np.array([(lo + hi) / 2 for lo, hi in self.bands])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["bands"] = [list(b) for b in self.bands]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        d["dims"] = tuple(d["dims"])
        d["bands"] = tuple(tuple(b) for b in d["bands"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    labels: np.ndarray
    num_classes: int = 3

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise InconsistentDims(f"labels must be 3D, got shape {lab.shape}")
        lab = lab.astype(np.uint8, copy=False)
        if lab.size and lab.max() >= self.num_classes:
            raise InvalidSpec(f"labels must lie in [0, {self.num_classes})")
        lab = lab.view()
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(s) for s in self.labels.shape)

    def __eq__(self, other) -> bool:
        return isinstance(other, LabelVolume) and np.array_equal(self.labels, other.labels)

    __hash__ = None


@dataclass
class _Shell:
    scale: float
    freqs: np.ndarray
    dirs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray


@dataclass
class _Field:
    center: np.ndarray
    axes: np.ndarray
    rot: np.ndarray
    shells: list[_Shell]
    ventricles: list[tuple[np.ndarray, np.ndarray]]
    nuclei: list[tuple[np.ndarray, np.ndarray]]
    bias_freqs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias_dirs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    bias_phases: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias_amps: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _draw_field(spec: PhantomSpec, rng: np.random.Generator) -> _Field:
    center = rng.uniform(-0.05, 0.05, 3)
    axes = rng.uniform(0.78, 0.90, 3)
    ang = rng.uniform(-0.3, 0.3)
    rot = np.array([[math.cos(ang), -math.sin(ang), 0.0], [math.sin(ang), math.cos(ang), 0.0], [0.0, 0.0, 1.0]])
    shells = []
    scale = 1.0
    for i in range(spec.shells - 1):
        if i > 0:
            scale *= rng.uniform(0.55, 0.70)
        # deeper shells fold more and at higher spatial frequency
        n_terms, lo, hi = (6, 1.5, 4.0) if i == 0 else (10, 5.0, 12.0)
        shells.append(
            _Shell(
                scale=scale,
                freqs=rng.uniform(lo, hi, n_terms),
                dirs=_unit_vectors(rng, n_terms),
                phases=rng.uniform(0, 2 * math.pi, n_terms),
                amps=rng.uniform(0.5, 1.0, n_terms),
            )
        )
    vents = []
    for _ in range(spec.ventricles):
        c = rng.uniform(-0.18, 0.18, 3)
        r = rng.uniform(0.05, 0.12, 3)
        vents.append((c, r))
    # small grey blobs inside the innermost shell; some span only a few slices
    nuclei = []
    for _ in range(spec.nuclei):
        c = rng.uniform(-0.45, 0.45, 3) * scale
        r = rng.uniform(0.04, 0.10, 3)
        nuclei.append((c, r))
    return _Field(
        center=center,
        axes=axes,
        rot=rot,
        shells=shells,
        ventricles=vents,
        nuclei=nuclei,
        bias_freqs=rng.uniform(0.3, 0.8, 3),
        bias_dirs=_unit_vectors(rng, 3),
        bias_phases=rng.uniform(0, 2 * math.pi, 3),
        bias_amps=rng.uniform(0.5, 1.0, 3),
    )


def sample_grid(dims: Sequence[int]) -> np.ndarray:
    """Normalised sample coordinates ``(nx, ny, nz, 3)``."""
    axes = [2.0 * np.arange(n, dtype=np.float64) / n - 1.0 for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _labels_and_bias(spec: PhantomSpec, fld: _Field, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = (u - fld.center) @ fld.rot.T
    rho = np.sqrt(np.sum((p / fld.axes) ** 2, axis=-1))
    labels = np.zeros(u.shape[:-1], dtype=np.uint8)
    for i, sh in enumerate(fld.shells):
        wave = np.sin((u @ sh.dirs.T) * sh.freqs + sh.phases) @ sh.amps / np.sqrt(np.sum(sh.amps**2))
        amp = spec.deformation * (0.5 if i == 0 else 1.0)
        inside = rho < sh.scale * (1.0 + amp * wave)
        labels[inside] = i + 1
    inner = spec.shells - 1
    for c, r in fld.nuclei:
        inside = np.sum(((u - fld.center - c) / r) ** 2, axis=-1) < 1.0
        labels[inside & (labels == inner)] = max(inner - 1, 0)
    for c, r in fld.ventricles:
        inside = np.sum(((u - fld.center - c) / r) ** 2, axis=-1) < 1.0
        labels[inside & (labels > 0)] = 0
    bwave = np.cos(math.pi * (u @ fld.bias_dirs.T) * fld.bias_freqs + fld.bias_phases) @ fld.bias_amps
    bias = spec.bias * bwave / fld.bias_amps.sum()
    return labels, bias


def generate(spec: PhantomSpec) -> tuple[Volume, LabelVolume]:
    """Intensity volume and ground-truth labels, fully determined by ``spec``."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    fld = _draw_field(spec, rng)
    labels, bias = _labels_and_bias(spec, fld, sample_grid(spec.dims))
    noise = rng.standard_normal(spec.dims)
    centers = spec.centers.astype(np.float32)
    values = centers[labels]
    if spec.bias > 0 or spec.noise_sigma > 0:
        values = values.astype(np.float64) + bias + spec.noise_sigma * noise
        values = np.clip(values, 0.0, 1.0).astype(np.float32)
    return Volume(values), LabelVolume(labels, num_classes=spec.shells)


def segment_by_bands(vol: Volume, spec: PhantomSpec) -> LabelVolume:
    """Class of the band containing each value, else of the nearest band centre.

    Ties between centres go to the lower class index.
    """
    v = vol.data.astype(np.float64)
    centers = spec.centers
    dist = np.abs(v[..., None] - centers)
    labels = np.argmin(dist, axis=-1).astype(np.uint8)
    for cls, (lo, hi) in enumerate(spec.bands):
        labels[(v >= lo) & (v <= hi)] = cls
    return LabelVolume(labels, num_classes=spec.shells)


def phantom_specs(n: int, base_seed: int, dims: Sequence[int] = (64, 64, 64), **kwargs) -> list[PhantomSpec]:
    if n < 1:
        raise InvalidSpec("dataset size must be at least 1")
    return [PhantomSpec(seed=base_seed + i, dims=tuple(dims), **kwargs) for i in range(n)]


def make_dataset(n: int, base_seed: int, dims: Sequence[int] = (64, 64, 64), **kwargs):
    """``n`` phantoms with consecutive seeds ``base_seed .. base_seed + n - 1``."""
    return [generate(s) for s in phantom_specs(n, base_seed, dims, **kwargs)]


def split_seeds(base_seed: int, n_train: int, n_val: int, n_test: int) -> dict[str, range]:
    """Seed ranges for train/val/test laid out back to back from ``base_seed``.

    A full-size study might use 95/5/20; desk-scale runs use e.g. 16/2/6.
    """
    a = base_seed
    b = a + n_train
    c = b + n_val
    return {"train": range(a, b), "val": range(b, c), "test": range(c, c + n_test)}


def noiseless(spec: PhantomSpec) -> PhantomSpec:
    return replace(spec, bias=0.0, noise_sigma=0.0)
