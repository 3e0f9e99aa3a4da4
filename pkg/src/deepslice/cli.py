"""Command-line driver: ``deepslice <subcommand> ...``.

Usage errors exit with status 2. Runtime failures exit with status 1 and
print one JSON line ``{"error": <class>, "message": <text>}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import formats, metrics, phantom, pipeline
from .errors import DeepSliceError, InvalidSpec, ShapeMismatch, SpecMismatch
from .volgeom import crop_axial, downsample_axial

STAGES = ("msr", "fusion", "refine", "baseline2d", "baseline3d")
METHODS = ("pipeline", "linear", "baseline2d", "baseline3d")


def _dims(text: str) -> tuple[int, int, int]:
    parts = [p for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        parts = parts * 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected N or NX,NY,NZ, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-integer dims {text!r}") from None


def phantom_paths(out_dir: Path, seed: int) -> dict[str, Path]:
    stem = f"phantom_{seed:05d}"
    return {
        "volume": out_dir / f"{stem}.avol",
        "labels": out_dir / f"{stem}.labels.avol",
        "spec": out_dir / f"{stem}.spec.json",
    }


def load_training_dir(data_dir: Path):
    paths = sorted(p for p in Path(data_dir).glob("*.avol") if not p.name.endswith(".labels.avol"))
    return [formats.read_intensity(p) for p in paths]


def cmd_gen_phantom(a) -> int:
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if a.noise is not None:
        extra["noise_sigma"] = a.noise
    if a.bias is not None:
        extra["bias"] = a.bias
    for spec in phantom.phantom_specs(a.count, a.seed, a.dims, **extra):
        vol, lab = phantom.generate(spec)
        p = phantom_paths(out, spec.seed)
        formats.write_volume(vol, p["volume"])
        formats.write_volume(lab, p["labels"])
        formats.write_json(spec.to_dict(), p["spec"])
    return 0


def cmd_downsample(a) -> int:
    vol = formats.read_intensity(a.input)
    formats.write_volume(downsample_axial(vol, a.k), a.out)
    return 0


def _load_ckpt(path, kind: str):
    if path is None:
        raise SpecMismatch(f"stage needs a --{kind}-ckpt")
    return formats.read_checkpoint(path)


def cmd_train(a) -> int:
    data = load_training_dir(a.data_dir)
    cfg = pipeline.TrainConfig(
        k=a.k,
        s=a.s,
        steps=a.steps,
        batch_size=a.batch_size,
        seed=a.seed,
        profile=a.profile,
        patch=a.patch,
        lr=a.lr,
        log_every=a.log_every,
    )
    if a.stage == "msr":
        ckpt = pipeline.train_msr(data, cfg)
    elif a.stage == "fusion":
        ckpt = pipeline.train_fusion(data, _load_ckpt(a.msr_ckpt, "msr"), cfg)
    elif a.stage == "refine":
        ckpt = pipeline.train_refine(
            data, _load_ckpt(a.msr_ckpt, "msr"), _load_ckpt(a.fusion_ckpt, "fusion"), cfg
        )
    elif a.stage == "baseline2d":
        ckpt = pipeline.train_baseline2d(data, cfg)
    else:
        ckpt = pipeline.train_baseline3d(data, cfg)
    formats.write_checkpoint(ckpt, a.out_ckpt)
    trace = a.trace_out or str(a.out_ckpt) + ".trace.json"
    formats.write_loss_trace(ckpt, trace)
    return 0


def cmd_infer(a) -> int:
    vol_down = formats.read_intensity(a.input)
    ckpts = [formats.read_checkpoint(p) for p in a.ckpt or ()]
    k = a.k
    if k is None:
        if not ckpts:
            raise InvalidSpec("--k is required for the linear method")
        k = ckpts[0].spec.k or ckpts[-1].spec.k
    out = pipeline.run_method(a.method, vol_down, k, ckpts, threads=a.threads)
    formats.write_volume(out, a.out)
    return 0


def cmd_eval(a) -> int:
    recon = formats.read_intensity(a.recon)
    gt = formats.read_intensity(a.gt)
    labels = formats.read_labels(a.labels)
    spec = phantom.PhantomSpec.from_dict(formats.read_json(a.spec))
    if recon.nz > gt.nz or recon.dims[:2] != gt.dims[:2]:
        raise ShapeMismatch(f"reconstruction {recon.dims} does not fit ground truth {gt.dims}")
    # the reconstruction ends on the last observed plane; score the shared extent
    gt = crop_axial(gt, recon.nz)
    labels = phantom.LabelVolume(labels.labels[:, :, : recon.nz], num_classes=labels.num_classes)
    method = a.method or Path(a.recon).stem
    report = metrics.evaluate_method(recon, gt, labels, spec, a.k, method=method)
    formats.write_json(report.to_dict(), a.report_out)
    return 0


def cmd_export_png(a) -> int:
    vol = formats.read_intensity(a.input)
    formats.export_png(vol, a.axis, a.index, a.out)
    return 0


def cmd_report(a) -> int:
    reports = [metrics.MetricsReport.from_dict(formats.read_json(p)) for p in a.reports]
    by_method: dict[str, list] = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)
    merged = [metrics.merge_reports(rs) for rs in by_method.values()]
    table = metrics.comparison_table(merged)
    if a.out:
        Path(a.out).write_text(table + "\n", encoding="utf-8")
    if a.json_out:
        formats.write_json({"methods": [m.to_dict() for m in merged]}, a.json_out)
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepslice", description="Slice interpolation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-phantom", help="write seeded phantoms with labels and specs")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dims", type=_dims, default=(64, 64, 64))
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--noise", type=float)
    g.add_argument("--bias", type=float)
    g.set_defaults(fn=cmd_gen_phantom)

    d = sub.add_parser("downsample", help="keep every k-th axial plane")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_downsample)

    t = sub.add_parser("train", help="train one stage or baseline")
    t.add_argument("--stage", choices=STAGES, required=True)
    t.add_argument("--data-dir", required=True)
    t.add_argument("--k", type=int, default=4)
    t.add_argument("--s", type=int, default=3)
    t.add_argument("--profile", choices=("default", "tiny"), default="default")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--patch", type=int, default=24)
    t.add_argument("--msr-ckpt")
    t.add_argument("--fusion-ckpt")
    t.add_argument("--out-ckpt", required=True)
    t.add_argument("--trace-out")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="reconstruct a full volume")
    i.add_argument("--method", choices=METHODS, required=True)
    i.add_argument("--ckpt", action="append", help="repeat for msr, fusion and refine")
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--k", type=int)
    i.add_argument("--threads", type=int, default=1)
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="score a reconstruction against ground truth")
    e.add_argument("--recon", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--spec", required=True)
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--method")
    e.add_argument("--report-out", required=True)
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("export-png", help="write one slice as an 8-bit PNG")
    x.add_argument("--in", dest="input", required=True)
    x.add_argument("--axis", choices=("sagittal", "coronal", "axial", "x", "y", "z"), required=True)
    x.add_argument("--index", type=int, required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export_png)

    r = sub.add_parser("report", help="merge JSON reports into a comparison table")
    r.add_argument("reports", nargs="+")
    r.add_argument("--out")
    r.add_argument("--json-out")
    r.set_defaults(fn=cmd_report)
    return p


def error_line(exc: BaseException) -> str:
    return json.dumps({"error": type(exc).__name__, "message": str(exc)}, sort_keys=True)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except (DeepSliceError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
