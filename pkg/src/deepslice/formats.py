"""Binary volume and checkpoint containers, PNG export and JSON helpers.

AVOL layout (all little-endian)::

    b"AVOL" | u32 version=1 | u32 nx | u32 ny | u32 nz | u8 dtype | payload

dtype 1 is f32 intensities, dtype 2 is u8 label maps. The payload is
``nx*ny*nz`` values in x-fastest order.

ACKP layout::

    b"ACKP" | u32 version=1 | u32 manifest_len | manifest (UTF-8 JSON) | payload

The manifest carries the network spec, the training config, the tensor
names and shapes in payload order, and the loss trace. Tensors are
concatenated f32 little-endian arrays in C order.
"""

from __future__ import annotations

import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, IndexOutOfRange, IoError, NonFiniteValue, TruncatedFile, UnsupportedVersion
from .ndiff import ParamStore
from .nets import NetworkSpec, param_shapes
from .phantom import LabelVolume
from .volgeom import Axis, Volume, extract_slice

AVOL_MAGIC = b"AVOL"
ACKP_MAGIC = b"ACKP"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U8 = 2
_AVOL_HEADER = struct.Struct("<4sIIIIB")
_ACKP_HEADER = struct.Struct("<4sII")


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(obj, path) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


# --- volumes -----------------------------------------------------------


def encode_volume(vol: Volume | LabelVolume) -> bytes:
    if isinstance(vol, LabelVolume):
        arr, code = vol.labels, DTYPE_U8
        payload = arr.astype("u1").tobytes(order="F")
    else:
        arr, code = vol.data, DTYPE_F32
        if not np.isfinite(arr).all():
            raise NonFiniteValue("volume contains non-finite values")
        payload = arr.astype("<f4").tobytes(order="F")
    nx, ny, nz = arr.shape
    return _AVOL_HEADER.pack(AVOL_MAGIC, VERSION, nx, ny, nz, code) + payload


def decode_volume(blob: bytes, num_classes: int = 3) -> Volume | LabelVolume:
    if len(blob) < 4 or blob[:4] != AVOL_MAGIC:
        raise BadMagic(f"not an AVOL file (magic {blob[:4]!r})")
    if len(blob) < _AVOL_HEADER.size:
        raise TruncatedFile("AVOL header truncated")
    _, version, nx, ny, nz, code = _AVOL_HEADER.unpack_from(blob)
    if version != VERSION:
        raise UnsupportedVersion(f"AVOL version {version} not supported")
    if code not in (DTYPE_F32, DTYPE_U8):
        raise UnsupportedVersion(f"AVOL dtype code {code} not supported")
    itemsize = 4 if code == DTYPE_F32 else 1
    n = nx * ny * nz
    body = blob[_AVOL_HEADER.size :]
    if len(body) < n * itemsize:
        raise TruncatedFile(f"payload has {len(body)} bytes, header needs {n * itemsize}")
    if len(body) > n * itemsize:
        raise TruncatedFile(f"payload has {len(body) - n * itemsize} trailing bytes")
    if code == DTYPE_U8:
        lab = np.frombuffer(body, dtype="u1").reshape((nx, ny, nz), order="F")
        return LabelVolume(lab.copy(), num_classes=max(num_classes, int(lab.max(initial=0)) + 1))
    arr = np.frombuffer(body, dtype="<f4").reshape((nx, ny, nz), order="F").astype(np.float32)
    if not np.isfinite(arr).all():
        raise NonFiniteValue("volume payload contains non-finite values")
    return Volume(arr)


def write_volume(vol: Volume | LabelVolume, path) -> None:
    _write_bytes(path, encode_volume(vol))


def read_volume(path) -> Volume | LabelVolume:
    return decode_volume(Path(path).read_bytes())


def read_intensity(path) -> Volume:
    v = read_volume(path)
    if not isinstance(v, Volume):
        raise UnsupportedVersion(f"{path} holds labels, expected intensities")
    return v


def read_labels(path) -> LabelVolume:
    v = read_volume(path)
    if not isinstance(v, LabelVolume):
        raise UnsupportedVersion(f"{path} holds intensities, expected labels")
    return v


# --- checkpoints -------------------------------------------------------


def trace_summary(trace) -> dict:
    if not trace:
        return {"steps": 0}
    return {"steps": len(trace), "first": trace[0], "last": trace[-1], "min": min(trace)}


def encode_checkpoint(ckpt) -> bytes:
    params = ckpt.params
    names = params.names()
    tensors = [{"name": n, "shape": list(params[n].shape)} for n in names]
    manifest = {
        "spec": ckpt.spec.to_dict(),
        "config": ckpt.config.to_dict(),
        "tensors": tensors,
        "loss_trace": {"summary": trace_summary(ckpt.loss_trace), "values": list(ckpt.loss_trace)},
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(params[n].data, dtype="<f4").tobytes() for n in names)
    return _ACKP_HEADER.pack(ACKP_MAGIC, VERSION, len(text)) + text + payload


def decode_checkpoint(blob: bytes):
    from .pipeline import Checkpoint, TrainConfig

    if len(blob) < 4 or blob[:4] != ACKP_MAGIC:
        raise BadMagic(f"not an ACKP file (magic {blob[:4]!r})")
    if len(blob) < _ACKP_HEADER.size:
        raise TruncatedFile("ACKP header truncated")
    _, version, mlen = _ACKP_HEADER.unpack_from(blob)
    if version != VERSION:
        raise UnsupportedVersion(f"ACKP version {version} not supported")
    start = _ACKP_HEADER.size
    if len(blob) < start + mlen:
        raise TruncatedFile("ACKP manifest truncated")
    manifest = json.loads(blob[start : start + mlen].decode("utf-8"))
    spec = NetworkSpec.from_dict(manifest["spec"])
    expected = param_shapes(spec)
    params = ParamStore()
    off = start + mlen
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        if expected.get(t["name"]) != shape:
            raise UnsupportedVersion(f"tensor {t['name']} shape {shape} does not fit the stored spec")
        n = math.prod(shape) * 4
        if len(blob) < off + n:
            raise TruncatedFile(f"payload for {t['name']} truncated")
        arr = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=off).reshape(shape).astype(np.float32)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"tensor {t['name']} contains non-finite values")
        params.add(t["name"], arr)
        off += n
    if off != len(blob):
        raise TruncatedFile(f"{len(blob) - off} trailing bytes after the last tensor")
    if set(params.names()) != set(expected):
        raise TruncatedFile("checkpoint is missing tensors")
    cfg = TrainConfig.from_dict(manifest["config"])
    return Checkpoint(spec, params, cfg, list(manifest["loss_trace"]["values"]))


def write_checkpoint(ckpt, path) -> None:
    _write_bytes(path, encode_checkpoint(ckpt))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def write_loss_trace(ckpt, path) -> None:
    write_json(
        {"stage": ckpt.spec.kind.value, "summary": trace_summary(ckpt.loss_trace), "values": list(ckpt.loss_trace)},
        path,
    )


# --- PNG ---------------------------------------------------------------


def quantize(plane: np.ndarray) -> np.ndarray:
    """``floor(255 * clamp(v, 0, 1) + 0.5)`` so halves round up."""
    v = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def export_png(vol: Volume, axis, index: int, path) -> np.ndarray:
    """Write one slice as 8-bit grayscale; the slice's first axis becomes image rows."""
    from PIL import Image

    axis = Axis.parse(axis)
    if not 0 <= index < vol.extent(axis):
        raise IndexOutOfRange(f"{axis.name.lower()} index {index} outside [0, {vol.extent(axis)})")
    pixels = quantize(extract_slice(vol, axis, index).data)
    try:
        Image.fromarray(pixels, mode="L").save(Path(path), format="PNG")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
    return pixels


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(Path(path)) as im:
        return np.asarray(im.convert("L"))
