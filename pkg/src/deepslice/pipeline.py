"""Stage-wise training and full-volume inference.

Training order is MSR -> fusion -> refinement, each stage with its upstream
networks frozen. Inference realises the map from an ``(nx, ny, nz_down)``
anisotropic volume to ``(nx, ny, (nz_down - 1) * k + 1)``: MSR along x and
y, fusion of the interpolated axial planes, refinement on ``k + 1`` slabs
anchored on observed planes, and a final copy of the observed planes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import ndiff as nd
from .errors import EmptyDataset, InvalidSpec, NonDivisibleExtent, SpecMismatch
from .nets import Kind, Network, NetworkSpec, build
from .ndiff import ParamStore
from .volgeom import Axis, Volume, downsample_axial, slab_indices, upsampled_extent

log = logging.getLogger(__name__)

_STAGE_IDS = {"msr": 1, "fusion": 2, "refine": 3, "baseline2d": 4, "baseline3d": 5}


@dataclass
class TrainConfig:
    k: int = 4
    s: int = 3
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    profile: str = "default"
    cache_upstream: bool = True
    patch: int = 24
    log_every: int = 0

    def validate(self) -> None:
        if self.k < 2:
            raise InvalidSpec(f"k must be >= 2, got {self.k}")
        if self.s < 1 or self.s % 2 == 0:
            raise InvalidSpec(f"s must be odd, got {self.s}")
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidSpec("steps and batch_size must be >= 1")
        if self.patch < 3:
            raise InvalidSpec("patch must be >= 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{key: v for key, v in d.items() if key in known})


@dataclass
class TrainSample:
    stage: str
    input: np.ndarray
    target: np.ndarray


@dataclass
class Checkpoint:
    spec: NetworkSpec
    params: ParamStore
    config: TrainConfig
    loss_trace: list[float] = field(default_factory=list)

    @property
    def net(self) -> Network:
        return Network(self.spec)

    @property
    def kind(self) -> Kind:
        return self.spec.kind


class PipelineCheckpoints(NamedTuple):
    msr: Checkpoint
    fusion: Checkpoint
    refine: Checkpoint


class EpochSampler:
    """Draws items without replacement, reshuffling at every epoch boundary."""

    def __init__(self, items: Sequence, rng: np.random.Generator):
        if not items:
            raise EmptyDataset("no training samples")
        self.items = list(items)
        self.rng = rng
        self._order: list[int] = []

    def take(self, n: int) -> list:
        out = []
        while len(out) < n:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.items)))
            out.append(self.items[self._order.pop()])
        return out


def _stage_rng(cfg: TrainConfig, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _STAGE_IDS[stage]])))


def _check_dataset(dataset: Sequence[Volume], k: int) -> None:
    if not dataset:
        raise EmptyDataset("training dataset is empty")
    for v in dataset:
        if v.nz % k:
            raise NonDivisibleExtent(f"volume nz={v.nz} not divisible by k={k}")


def _group(samples: Iterable[TrainSample]) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stack samples into batches of identical input shape."""
    groups: dict[tuple, list[TrainSample]] = {}
    for s in samples:
        groups.setdefault(s.input.shape, []).append(s)
    return [(np.stack([s.input for s in g]), np.stack([s.target for s in g])) for g in groups.values()]


def _batch_loss(net: Network, params: ParamStore, groups) -> nd.Tensor:
    total = sum(len(x) for x, _ in groups)
    loss = None
    for x, y in groups:
        term = nd.l1_loss(net(params, x.astype(np.float32)), y.astype(np.float32))
        if len(groups) > 1:
            term = nd.scale(term, len(x) / total)
        loss = term if loss is None else nd.add(loss, term)
    return loss


def fit(
    net: Network,
    params: ParamStore,
    cfg: TrainConfig,
    next_batch: Callable[[], list[TrainSample]],
    stage: str,
) -> list[float]:
    """Adam on the mean L1 loss; returns the per-step loss trace."""
    trace: list[float] = []
    for step in range(cfg.steps):
        groups = _group(next_batch())
        params.zero_grad()
        loss = _batch_loss(net, params, groups)
        loss.backward()
        nd.adam_step(params, params.grads(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        trace.append(float(loss.data))
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            log.info("%s step %d/%d loss %.6f", stage, step + 1, cfg.steps, trace[-1])
    params.zero_grad()
    return trace


# --- MSR ---------------------------------------------------------------


def _slab_stack(data: np.ndarray, axis: Axis, center: int, s: int) -> np.ndarray:
    idx = slab_indices(center, s, data.shape[axis])
    return np.moveaxis(np.take(data, idx, axis=int(axis)), int(axis), 0)


def msr_sample(gt: Volume, down: Volume, axis: Axis, index: int, s: int) -> TrainSample:
    x = _slab_stack(down.data, axis, index, s)
    y = np.take(gt.data, index, axis=int(axis))[None]
    return TrainSample("msr", x, y)


def train_msr(dataset: Sequence[Volume], cfg: TrainConfig) -> Checkpoint:
    cfg.validate()
    _check_dataset(dataset, cfg.k)
    downs = [downsample_axial(v, cfg.k) for v in dataset]
    spec = NetworkSpec.msr(cfg.k, cfg.s, cfg.profile)
    net, params = build(spec, cfg.seed)
    rng = _stage_rng(cfg, "msr")
    sag = EpochSampler([(i, j) for i, v in enumerate(dataset) for j in range(v.nx)], rng)
    cor = EpochSampler([(i, j) for i, v in enumerate(dataset) for j in range(v.ny)], rng)
    n_sag = max(1, cfg.batch_size // 2) if cfg.batch_size > 1 else 1
    n_cor = cfg.batch_size - n_sag

    def next_batch():
        batch = [msr_sample(dataset[i], downs[i], Axis.SAGITTAL, j, cfg.s) for i, j in sag.take(n_sag)]
        batch += [msr_sample(dataset[i], downs[i], Axis.CORONAL, j, cfg.s) for i, j in cor.take(n_cor)]
        return batch

    trace = fit(net, params, cfg, next_batch, "msr")
    return Checkpoint(spec, params, cfg, trace)


def _map_chunks(fn: Callable[[int, int], None], n: int, chunk: int, threads: int) -> None:
    bounds = [(a, min(a + chunk, n)) for a in range(0, n, chunk)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda b: fn(*b), bounds))
    else:
        for a, b in bounds:
            fn(a, b)


def _expect(ckpt: Checkpoint, kind: Kind, k: int | None = None) -> None:
    if ckpt.spec.kind is not kind:
        raise SpecMismatch(f"expected a {kind.value} checkpoint, got {ckpt.spec.kind.value}")
    if k is not None and kind is not Kind.FUSION and ckpt.spec.k != k:
        raise SpecMismatch(f"checkpoint built for k={ckpt.spec.k}, volume needs k={k}")
    if k is not None and kind is Kind.FUSION and ckpt.spec.k not in (0, k):
        raise SpecMismatch(f"fusion checkpoint built for k={ckpt.spec.k}, volume needs k={k}")


def msr_volume(ckpt: Checkpoint, vol_down: Volume, direction, threads: int = 1, chunk: int = 16) -> Volume:
    """Sagittally or coronally super-resolved volume at full axial resolution."""
    _expect(ckpt, Kind.MSR)
    axis = Axis.parse(direction)
    if axis is Axis.AXIAL:
        raise SpecMismatch("MSR runs along the sagittal or coronal axis only")
    k, s = ckpt.spec.k, ckpt.spec.in_channels
    net = ckpt.net
    data = vol_down.data
    nz_out = upsampled_extent(vol_down.nz, k)
    n = data.shape[axis]
    shape = list(data.shape)
    shape[2] = nz_out
    out = np.empty(shape, dtype=np.float32)

    def run(a: int, b: int) -> None:
        x = np.stack([_slab_stack(data, axis, i, s) for i in range(a, b)])
        pred = net.infer(ckpt.params, x)[:, 0, :, :nz_out]
        if axis is Axis.SAGITTAL:
            out[a:b] = pred
        else:
            out[:, a:b] = np.moveaxis(pred, 0, 1)

    _map_chunks(run, n, chunk, threads)
    return Volume.clipped(out)


def copy_observed(recon: np.ndarray, vol_down: Volume, k: int) -> np.ndarray:
    out = np.array(recon, dtype=np.float32, copy=True)
    out[:, :, ::k] = vol_down.data
    return out


# --- fusion ------------------------------------------------------------


def interpolated_indices(nz: int, k: int) -> list[int]:
    return [z for z in range(nz) if z % k]


def fuse_volume(
    ckpt: Checkpoint, sag: Volume, cor: Volume, vol_down: Volume, k: int, threads: int = 1, chunk: int = 16
) -> Volume:
    """Fuse every interpolated axial plane; observed planes come from ``vol_down``."""
    _expect(ckpt, Kind.FUSION, k)
    net = ckpt.net
    out = copy_observed(sag.data, vol_down, k)
    zs = interpolated_indices(sag.nz, k)

    def run(a: int, b: int) -> None:
        sel = zs[a:b]
        x = np.stack([np.stack([sag.data[:, :, z], cor.data[:, :, z]]) for z in sel])
        pred = net.infer(ckpt.params, x)[:, 0]
        out[:, :, sel] = np.moveaxis(pred, 0, -1)

    _map_chunks(run, len(zs), chunk, threads)
    return Volume.clipped(copy_observed(np.clip(out, 0.0, 1.0), vol_down, k))


class _Upstream:
    """Frozen-stage outputs for the training volumes, cached or recomputed."""

    def __init__(self, compute: Callable[[int], tuple], n: int, cache: bool):
        self.compute = compute
        self.cache = cache
        self._store: dict[int, tuple] = {}
        if cache:
            for i in range(n):
                self._store[i] = compute(i)

    def __getitem__(self, i: int) -> tuple:
        if i in self._store:
            return self._store[i]
        val = self.compute(i)
        # keep only the most recent volume when not caching
        self._store = {i: val}
        return val


def train_fusion(dataset: Sequence[Volume], msr_ckpt: Checkpoint, cfg: TrainConfig) -> Checkpoint:
    cfg.validate()
    _check_dataset(dataset, cfg.k)
    _expect(msr_ckpt, Kind.MSR, cfg.k)
    k = cfg.k

    def compute(i: int):
        down = downsample_axial(dataset[i], k)
        return (
            down,
            msr_volume(msr_ckpt, down, Axis.SAGITTAL),
            msr_volume(msr_ckpt, down, Axis.CORONAL),
        )

    up = _Upstream(compute, len(dataset), cfg.cache_upstream)
    spec = NetworkSpec.fusion(cfg.profile, k=k)
    net, params = build(spec, cfg.seed)
    rng = _stage_rng(cfg, "fusion")
    nz_out = upsampled_extent(dataset[0].nz // k, k)
    sampler = EpochSampler([(i, z) for i in range(len(dataset)) for z in interpolated_indices(nz_out, k)], rng)

    def next_batch():
        batch = []
        for i, z in sampler.take(cfg.batch_size):
            _, sag, cor = up[i]
            x = np.stack([sag.data[:, :, z], cor.data[:, :, z]])
            batch.append(TrainSample("fusion", x, dataset[i].data[:, :, z][None]))
        return batch

    trace = fit(net, params, cfg, next_batch, "fusion")
    return Checkpoint(spec, params, cfg, trace)


# --- refinement --------------------------------------------------------


def refine_volume(ckpt: Checkpoint, fused: Volume, vol_down: Volume, k: int, threads: int = 1, chunk: int = 8) -> Volume:
    """Refine ``k+1`` slabs tiled at stride k; only interior planes are written."""
    _expect(ckpt, Kind.REFINE, k)
    net = ckpt.net
    src = fused.data
    out = np.array(src, dtype=np.float32, copy=True)
    n_slabs = vol_down.nz - 1

    def run(a: int, b: int) -> None:
        x = np.stack([np.moveaxis(src[:, :, m * k : m * k + k + 1], -1, 0) for m in range(a, b)])
        pred = net.infer(ckpt.params, x)
        for m, p in zip(range(a, b), pred):
            out[:, :, m * k + 1 : m * k + k] = np.moveaxis(p[1:k], 0, -1)

    _map_chunks(run, n_slabs, chunk, threads)
    return Volume.clipped(copy_observed(np.clip(out, 0.0, 1.0), vol_down, k))


def train_refine(
    dataset: Sequence[Volume], msr_ckpt: Checkpoint, fusion_ckpt: Checkpoint, cfg: TrainConfig
) -> Checkpoint:
    cfg.validate()
    _check_dataset(dataset, cfg.k)
    _expect(msr_ckpt, Kind.MSR, cfg.k)
    _expect(fusion_ckpt, Kind.FUSION, cfg.k)
    k = cfg.k

    def compute(i: int):
        down = downsample_axial(dataset[i], k)
        sag = msr_volume(msr_ckpt, down, Axis.SAGITTAL)
        cor = msr_volume(msr_ckpt, down, Axis.CORONAL)
        return (down, fuse_volume(fusion_ckpt, sag, cor, down, k))

    up = _Upstream(compute, len(dataset), cfg.cache_upstream)
    spec = NetworkSpec.refine(k, cfg.profile)
    net, params = build(spec, cfg.seed)
    rng = _stage_rng(cfg, "refine")
    n_slabs = dataset[0].nz // k - 1
    sampler = EpochSampler([(i, m) for i in range(len(dataset)) for m in range(n_slabs)], rng)

    def next_batch():
        batch = []
        for i, m in sampler.take(cfg.batch_size):
            _, fused = up[i]
            x = np.moveaxis(fused.data[:, :, m * k : m * k + k + 1], -1, 0)
            y = np.moveaxis(dataset[i].data[:, :, m * k : m * k + k + 1], -1, 0)
            batch.append(TrainSample("refine", x, y))
        return batch

    trace = fit(net, params, cfg, next_batch, "refine")
    return Checkpoint(spec, params, cfg, trace)


# --- full pipeline -----------------------------------------------------


def _consistent_k(ckpts: PipelineCheckpoints, k: int) -> None:
    _expect(ckpts.msr, Kind.MSR, k)
    _expect(ckpts.fusion, Kind.FUSION, k)
    _expect(ckpts.refine, Kind.REFINE, k)


def run_pipeline_stages(ckpts, vol_down: Volume, k: int, threads: int = 1) -> dict[str, Volume]:
    """Every intermediate reconstruction, each with observed planes restored."""
    ckpts = PipelineCheckpoints(*ckpts)
    _consistent_k(ckpts, k)
    if vol_down.nz < 2:
        raise NonDivisibleExtent("need at least two observed axial planes")
    sag = msr_volume(ckpts.msr, vol_down, Axis.SAGITTAL, threads)
    cor = msr_volume(ckpts.msr, vol_down, Axis.CORONAL, threads)
    fused = fuse_volume(ckpts.fusion, sag, cor, vol_down, k, threads)
    refined = refine_volume(ckpts.refine, fused, vol_down, k, threads)
    return {
        "msr_sag": Volume(copy_observed(sag.data, vol_down, k)),
        "msr_cor": Volume(copy_observed(cor.data, vol_down, k)),
        "fused": fused,
        "refined": refined,
    }


def run_full_pipeline(ckpts, vol_down: Volume, k: int, threads: int = 1) -> Volume:
    return run_pipeline_stages(ckpts, vol_down, k, threads)["refined"]


# --- 2D baseline -------------------------------------------------------


def train_baseline2d(dataset: Sequence[Volume], cfg: TrainConfig) -> Checkpoint:
    cfg.validate()
    _check_dataset(dataset, cfg.k)
    k = cfg.k
    downs = [downsample_axial(v, k) for v in dataset]
    spec = NetworkSpec.baseline2d(k, cfg.profile)
    net, params = build(spec, cfg.seed)
    rng = _stage_rng(cfg, "baseline2d")
    sampler = EpochSampler([(i, m) for i, d in enumerate(downs) for m in range(d.nz - 1)], rng)

    def next_batch():
        batch = []
        for i, m in sampler.take(cfg.batch_size):
            x = np.moveaxis(downs[i].data[:, :, m : m + 2], -1, 0)
            y = np.moveaxis(dataset[i].data[:, :, m * k + 1 : m * k + k], -1, 0)
            batch.append(TrainSample("baseline2d", x, y))
        return batch

    trace = fit(net, params, cfg, next_batch, "baseline2d")
    return Checkpoint(spec, params, cfg, trace)


def run_baseline2d(ckpt: Checkpoint, vol_down: Volume, k: int, threads: int = 1, chunk: int = 8) -> Volume:
    _expect(ckpt, Kind.BASELINE2D, k)
    net = ckpt.net
    src = vol_down.data
    out = np.empty(src.shape[:2] + (upsampled_extent(vol_down.nz, k),), dtype=np.float32)

    def run(a: int, b: int) -> None:
        x = np.stack([np.moveaxis(src[:, :, m : m + 2], -1, 0) for m in range(a, b)])
        pred = net.infer(ckpt.params, x)
        for m, p in zip(range(a, b), pred):
            out[:, :, m * k + 1 : m * k + k] = np.moveaxis(p, 0, -1)

    _map_chunks(run, vol_down.nz - 1, chunk, threads)
    return Volume.clipped(copy_observed(np.clip(out, 0.0, 1.0), vol_down, k))


# --- 3D baseline -------------------------------------------------------


def tile_starts(n: int, patch: int, overlap: int) -> list[int]:
    if n <= patch:
        return [0]
    stride = max(1, patch - overlap)
    starts = list(range(0, n - patch + 1, stride))
    if starts[-1] != n - patch:
        starts.append(n - patch)
    return starts


def stitch_patches(
    fn: Callable[[np.ndarray], np.ndarray], arr: np.ndarray, patch: int, overlap: int, out_z: int
) -> np.ndarray:
    """Apply ``fn`` to overlapping x/y tiles (full z) and average the overlaps uniformly."""
    nx, ny, _ = arr.shape
    acc = np.zeros((nx, ny, out_z), dtype=np.float64)
    weight = np.zeros((nx, ny, 1), dtype=np.float64)
    px, py = min(patch, nx), min(patch, ny)
    for x0 in tile_starts(nx, px, overlap):
        for y0 in tile_starts(ny, py, overlap):
            pred = fn(arr[x0 : x0 + px, y0 : y0 + py, :])
            acc[x0 : x0 + px, y0 : y0 + py] += pred[:, :, :out_z]
            weight[x0 : x0 + px, y0 : y0 + py] += 1.0
    return (acc / weight).astype(np.float32)


def _patch_starts(n: int, patch: int) -> list[int]:
    return list(range(0, n - patch + 1, max(1, patch // 4))) if n > patch else [0]


def train_baseline3d(dataset: Sequence[Volume], cfg: TrainConfig) -> Checkpoint:
    cfg.validate()
    _check_dataset(dataset, cfg.k)
    k = cfg.k
    downs = [downsample_axial(v, k) for v in dataset]
    spec = NetworkSpec.baseline3d(k, cfg.profile)
    net, params = build(spec, cfg.seed)
    rng = _stage_rng(cfg, "baseline3d")
    items = []
    for i, v in enumerate(dataset):
        p = (min(cfg.patch, v.nx), min(cfg.patch, v.ny))
        items += [(i, x0, y0, p) for x0 in _patch_starts(v.nx, p[0]) for y0 in _patch_starts(v.ny, p[1])]
    sampler = EpochSampler(items, rng)

    def next_batch():
        batch = []
        for i, x0, y0, (px, py) in sampler.take(cfg.batch_size):
            x = downs[i].data[x0 : x0 + px, y0 : y0 + py, :][None]
            y = dataset[i].data[x0 : x0 + px, y0 : y0 + py, :][None]
            batch.append(TrainSample("baseline3d", x, y))
        return batch

    trace = fit(net, params, cfg, next_batch, "baseline3d")
    return Checkpoint(spec, params, cfg, trace)


def run_baseline3d(
    ckpt: Checkpoint, vol_down: Volume, k: int, patch: int | None = None, overlap: int | None = None
) -> Volume:
    _expect(ckpt, Kind.BASELINE3D, k)
    net = ckpt.net
    patch = patch or ckpt.config.patch
    overlap = patch // 3 if overlap is None else overlap
    nz_out = upsampled_extent(vol_down.nz, k)

    def fn(p: np.ndarray) -> np.ndarray:
        return net.infer(ckpt.params, p[None, None])[0, 0]

    out = stitch_patches(fn, vol_down.data, patch, overlap, nz_out)
    return Volume.clipped(copy_observed(np.clip(out, 0.0, 1.0), vol_down, k))


def run_linear(vol_down: Volume, k: int) -> Volume:
    from .volgeom import linear_interp_axial

    return linear_interp_axial(vol_down, k)


def run_method(method: str, vol_down: Volume, k: int, ckpts: Sequence[Checkpoint] = (), threads: int = 1) -> Volume:
    """Dispatch by method name: ``linear``, ``pipeline``, ``baseline2d`` or ``baseline3d``."""
    if method == "linear":
        return run_linear(vol_down, k)
    if method == "pipeline":
        if len(ckpts) != 3:
            raise SpecMismatch("pipeline needs msr, fusion and refine checkpoints")
        by_kind = {c.spec.kind: c for c in ckpts}
        try:
            ordered = PipelineCheckpoints(by_kind[Kind.MSR], by_kind[Kind.FUSION], by_kind[Kind.REFINE])
        except KeyError as e:
            raise SpecMismatch(f"missing {e.args[0].value} checkpoint") from None
        return run_full_pipeline(ordered, vol_down, k, threads)
    if method in ("baseline2d", "baseline3d"):
        if len(ckpts) != 1:
            raise SpecMismatch(f"{method} needs exactly one checkpoint")
        if method == "baseline2d":
            return run_baseline2d(ckpts[0], vol_down, k, threads)
        return run_baseline3d(ckpts[0], vol_down, k)
    raise SpecMismatch(f"unknown method {method!r}")
