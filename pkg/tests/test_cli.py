import json

import numpy as np

from deepslice import formats as F
from deepslice.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def cli_workflow(root, steps=2):
    """Phantoms -> three stages -> pipeline inference -> report; returns produced files."""
    ph = root / "ph"
    assert run("gen-phantom", "--seed", 7, "--count", 2, "--dims", "16", "--out-dir", ph) == 0
    gt = ph / "phantom_00007.avol"
    assert run("downsample", "--in", gt, "--k", 4, "--out", root / "down.avol") == 0
    common = ["--data-dir", ph, "--k", 4, "--profile", "tiny", "--steps", steps, "--batch-size", 2]
    assert run("train", "--stage", "msr", *common, "--out-ckpt", root / "msr.ackp") == 0
    assert run("train", "--stage", "fusion", *common, "--msr-ckpt", root / "msr.ackp", "--out-ckpt", root / "fus.ackp") == 0
    assert (
        run(
            "train", "--stage", "refine", *common,
            "--msr-ckpt", root / "msr.ackp", "--fusion-ckpt", root / "fus.ackp", "--out-ckpt", root / "ref.ackp",
        )
        == 0
    )
    ck = ["--ckpt", root / "msr.ackp", "--ckpt", root / "fus.ackp", "--ckpt", root / "ref.ackp"]
    assert run("infer", "--method", "pipeline", *ck, "--in", root / "down.avol", "--out", root / "rec.avol", "--threads", 2) == 0
    assert (
        run(
            "eval", "--recon", root / "rec.avol", "--gt", gt, "--labels", ph / "phantom_00007.labels.avol",
            "--spec", ph / "phantom_00007.spec.json", "--k", 4, "--method", "pipeline", "--report-out", root / "rep.json",
        )
        == 0
    )
    return sorted(p for p in root.rglob("*") if p.is_file())


def test_linear_smoke(tmp_path):
    assert run("gen-phantom", "--seed", 3, "--dims", "24,24,16", "--out-dir", tmp_path) == 0
    gt = tmp_path / "phantom_00003.avol"
    assert run("downsample", "--in", gt, "--k", 4, "--out", tmp_path / "d.avol") == 0
    assert run("infer", "--method", "linear", "--k", 4, "--in", tmp_path / "d.avol", "--out", tmp_path / "l.avol") == 0
    rc = run(
        "eval", "--recon", tmp_path / "l.avol", "--gt", gt, "--labels", tmp_path / "phantom_00003.labels.avol",
        "--spec", tmp_path / "phantom_00003.spec.json", "--k", 4, "--report-out", tmp_path / "r.json",
    )
    assert rc == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["method"] == "l" and rep["k"] == 4
    assert set(rep["aggregate"]) == {"psnr", "ssim", "dice_gm", "dice_wm", "hd90_gm", "hd90_wm"}
    assert all(z % 4 for z in rep["slices"])
    assert F.read_intensity(tmp_path / "l.avol").dims == (24, 24, 13)


def test_report_table(tmp_path, capsys):
    test_linear_smoke(tmp_path)
    assert run("report", tmp_path / "r.json", tmp_path / "r.json", "--out", tmp_path / "t.txt", "--json-out", tmp_path / "m.json") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("method | k | psnr")
    assert (tmp_path / "t.txt").read_text().strip() == out.strip()
    assert json.loads((tmp_path / "m.json").read_text())["methods"][0]["counts"]["volumes"] == 2


def test_gen_phantom_reproducible(tmp_path):
    for d in ("a", "b"):
        assert run("gen-phantom", "--count", 2, "--seed", 7, "--dims", "16", "--out-dir", tmp_path / d) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(names) == 6
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_usage_errors_exit_2(capsys):
    assert run("bogus") == 2
    assert run("downsample", "--k", 4) == 2
    assert run("train", "--stage", "nope", "--data-dir", ".", "--out-ckpt", "x") == 2


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert run("downsample", "--in", tmp_path / "missing.avol", "--k", 4, "--out", tmp_path / "o.avol") == 1
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(line)["error"] == "FileNotFoundError"
    (tmp_path / "bad.avol").write_bytes(b"XXXX" + bytes(17))
    assert run("downsample", "--in", tmp_path / "bad.avol", "--k", 4, "--out", tmp_path / "o.avol") == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "BadMagic"
    assert run("infer", "--method", "linear", "--in", tmp_path / "bad.avol", "--out", tmp_path / "o.avol") == 1


def test_missing_upstream_checkpoint(tmp_path, capsys):
    run("gen-phantom", "--dims", "16", "--out-dir", tmp_path)
    rc = run("train", "--stage", "fusion", "--data-dir", tmp_path, "--steps", 1, "--out-ckpt", tmp_path / "f.ackp")
    assert rc == 1
    assert json.loads(capsys.readouterr().err.strip())["error"] == "SpecMismatch"


def test_export_png(tmp_path):
    run("gen-phantom", "--dims", "16", "--out-dir", tmp_path)
    assert run("export-png", "--in", tmp_path / "phantom_00000.avol", "--axis", "z", "--index", 3, "--out", tmp_path / "p.png") == 0
    px = F.read_png(tmp_path / "p.png")
    vol = F.read_intensity(tmp_path / "phantom_00000.avol")
    np.testing.assert_array_equal(px, F.quantize(vol.data[:, :, 3]))


def test_baseline_cli(tmp_path):
    run("gen-phantom", "--dims", "16", "--count", 2, "--out-dir", tmp_path / "ph")
    run("downsample", "--in", tmp_path / "ph" / "phantom_00000.avol", "--k", 4, "--out", tmp_path / "d.avol")
    for stage in ("baseline2d", "baseline3d"):
        ck = tmp_path / f"{stage}.ackp"
        args = ["--data-dir", tmp_path / "ph", "--profile", "tiny", "--steps", 1, "--batch-size", 2, "--patch", 8]
        assert run("train", "--stage", stage, *args, "--out-ckpt", ck) == 0
        assert (tmp_path / f"{stage}.ackp.trace.json").exists()
        out = tmp_path / f"{stage}.avol"
        assert run("infer", "--method", stage, "--ckpt", ck, "--in", tmp_path / "d.avol", "--out", out) == 0
        assert F.read_intensity(out).dims == (16, 16, 13)


def test_end_to_end_cli_bit_identical(tmp_path):
    a = cli_workflow(tmp_path / "a")
    b = cli_workflow(tmp_path / "b")
    assert [p.relative_to(tmp_path / "a") for p in a] == [p.relative_to(tmp_path / "b") for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
