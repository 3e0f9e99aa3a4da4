"""PSNR, SSIM, DICE, percentile Hausdorff distance and per-method reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import cKDTree

from .errors import ShapeMismatch, TooSmall
from .phantom import LabelVolume, PhantomSpec, segment_by_bands
from .volgeom import SliceRef, Volume

CLASS_NAMES = {1: "gm", 2: "wm"}


def _plane(a) -> np.ndarray:
    if isinstance(a, SliceRef):
        a = a.data
    return np.asarray(a, dtype=np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _plane(a), _plane(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` in dB; ``math.inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = g.size
    rows = np.tensordot(sliding_window_view(img, n, axis=0), g, axes=([-1], [0]))
    return np.tensordot(sliding_window_view(rows, n, axis=1), g, axes=([-1], [0]))


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean SSIM over all fully contained Gaussian windows (no padding)."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < window:
        raise TooSmall(f"image {a.shape} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    s_aa = _filter_valid(a * a, g) - mu_a * mu_a
    s_bb = _filter_valid(b * b, g) - mu_b * mu_b
    s_ab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def dice(a, b) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"masks differ in shape: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside (the border counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def nearest_rank(values: np.ndarray, p: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(p / 100.0 * v.size))
    return float(v[rank - 1])


def hd_percentile(a, b, p: float = 90) -> float | None:
    """Symmetric percentile Hausdorff distance between mask boundaries, in pixels.

    Each direction takes the nearest-rank ``p``-th percentile of boundary
    nearest-neighbour distances and the larger of the two is returned. Two
    empty boundaries give 0.0; exactly one empty boundary gives ``None``.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"masks differ in shape: {a.shape} vs {b.shape}")
    pa = np.argwhere(boundary(a))
    pb = np.argwhere(boundary(b))
    if len(pa) == 0 and len(pb) == 0:
        return 0.0
    if len(pa) == 0 or len(pb) == 0:
        return None
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return max(nearest_rank(d_ab, p), nearest_rank(d_ba, p))


@dataclass
class SliceMetrics:
    z: int
    psnr_db: float
    ssim: float
    dice: dict[int, float] = field(default_factory=dict)
    hd90: dict[int, float | None] = field(default_factory=dict)


@dataclass
class MetricsReport:
    method: str
    k: int
    slices: list[int]
    per_slice: list[SliceMetrics]
    aggregate: dict[str, float | None]
    counts: dict[str, int]
    metadata: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        return {
            "method": self.method,
            "k": self.k,
            "slices": list(self.slices),
            "per_slice": [
                {
                    "z": s.z,
                    "psnr_db": enc(s.psnr_db),
                    "ssim": s.ssim,
                    "dice": {str(c): v for c, v in s.dice.items()},
                    "hd90": {str(c): enc(v) for c, v in s.hd90.items()},
                }
                for s in self.per_slice
            ],
            "aggregate": {key: enc(v) for key, v in self.aggregate.items()},
            "counts": dict(self.counts),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def dec(v):
            return math.inf if v == "inf" else v

        per = [
            SliceMetrics(
                z=s["z"],
                psnr_db=dec(s["psnr_db"]),
                ssim=s["ssim"],
                dice={int(c): v for c, v in s["dice"].items()},
                hd90={int(c): dec(v) for c, v in s["hd90"].items()},
            )
            for s in d["per_slice"]
        ]
        return cls(
            method=d["method"],
            k=d["k"],
            slices=list(d["slices"]),
            per_slice=per,
            aggregate={key: dec(v) for key, v in d["aggregate"].items()},
            counts=dict(d["counts"]),
            metadata=dict(d.get("metadata", {})),
        )


def select_slices(gt_labels: LabelVolume, k: int, min_foreground: float = 0.10) -> list[int]:
    """Interpolated axial indices (``z % k != 0``) with enough non-background tissue."""
    lab = gt_labels.labels
    fg = (lab > 0).mean(axis=(0, 1))
    return [z for z in range(lab.shape[2]) if z % k != 0 and fg[z] >= min_foreground]


def _mean(values: Sequence[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate_method(
    recon: Volume,
    gt: Volume,
    gt_labels: LabelVolume,
    spec: PhantomSpec,
    k: int,
    method: str = "",
    min_foreground: float = 0.10,
) -> MetricsReport:
    if recon.dims != gt.dims or gt.dims != gt_labels.dims:
        raise ShapeMismatch(f"dims differ: recon {recon.dims}, gt {gt.dims}, labels {gt_labels.dims}")
    classes = list(range(1, spec.shells))
    seg = segment_by_bands(recon, spec).labels
    zs = select_slices(gt_labels, k, min_foreground)
    rows: list[SliceMetrics] = []
    for z in zs:
        a = gt.data[:, :, z]
        b = recon.data[:, :, z]
        row = SliceMetrics(z=z, psnr_db=psnr(a, b), ssim=ssim(a, b))
        for c in classes:
            ma = gt_labels.labels[:, :, z] == c
            mb = seg[:, :, z] == c
            row.dice[c] = dice(ma, mb)
            row.hd90[c] = hd_percentile(ma, mb, 90)
        rows.append(row)

    finite_psnr = [r.psnr_db for r in rows if math.isfinite(r.psnr_db)]
    agg: dict[str, float | None] = {
        "psnr": _mean(finite_psnr),
        "ssim": _mean([r.ssim for r in rows]),
    }
    counts = {"slices": len(rows), "psnr_infinite": len(rows) - len(finite_psnr)}
    for c in classes:
        name = CLASS_NAMES.get(c, f"class{c}")
        agg[f"dice_{name}"] = _mean([r.dice[c] for r in rows])
        hds = [r.hd90[c] for r in rows if r.hd90[c] is not None]
        agg[f"hd90_{name}"] = _mean(hds)
        counts[f"hd90_{name}_undefined"] = len(rows) - len(hds)
    meta = {
        "slice_selection": f"interpolated axial slices (z mod {k} != 0) with foreground fraction >= {min_foreground}",
        "segmentation": "nearest intensity band of the generating phantom spec",
    }
    return MetricsReport(method, k, zs, rows, agg, counts, meta)


def merge_reports(reports: Sequence[MetricsReport], method: str | None = None) -> MetricsReport:
    """Pool several per-volume reports of one method into one (means over all slices)."""
    if not reports:
        raise ValueError("nothing to merge")
    k = reports[0].k
    rows = [r for rep in reports for r in rep.per_slice]
    classes = sorted({c for r in rows for c in r.dice}) if rows else []
    finite = [r.psnr_db for r in rows if math.isfinite(r.psnr_db)]
    agg: dict[str, float | None] = {"psnr": _mean(finite), "ssim": _mean([r.ssim for r in rows])}
    counts = {"slices": len(rows), "psnr_infinite": len(rows) - len(finite), "volumes": len(reports)}
    for c in classes:
        name = CLASS_NAMES.get(c, f"class{c}")
        agg[f"dice_{name}"] = _mean([r.dice[c] for r in rows])
        hds = [r.hd90[c] for r in rows if r.hd90[c] is not None]
        agg[f"hd90_{name}"] = _mean(hds)
        counts[f"hd90_{name}_undefined"] = len(rows) - len(hds)
    slices = [z for rep in reports for z in rep.slices]
    return MetricsReport(method or reports[0].method, k, slices, rows, agg, counts, dict(reports[0].metadata))


def comparison_table(reports: Sequence[MetricsReport]) -> str:
    """Plain-text table with one row per method."""
    keys = sorted({key for r in reports for key in r.aggregate}, key=lambda s: (s not in ("psnr", "ssim"), s))
    header = ["method", "k"] + keys
    lines = [" | ".join(header)]
    for r in reports:
        cells = [r.method, str(r.k)]
        for key in keys:
            v = r.aggregate.get(key)
            cells.append("-" if v is None else f"{v:.4f}")
        lines.append(" | ".join(cells))
    return "\n".join(lines)
