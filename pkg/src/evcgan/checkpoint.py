"""EVCK binary tensor files.

Layout (little-endian): ``b"EVCK"``, u32 version, then until EOF one record
per tensor: u32 name length, UTF-8 name, u32 rank, u32 extents, f32 data.
Adam moments are stored as ``<prefix><param>/m`` and ``<prefix><param>/v``
and the step counter as the rank-0 tensor ``<prefix>step``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"EVCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_tensors(tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_tensors(blob: bytes) -> dict:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an EVCK file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported EVCK version {version}")
    pos = 8
    out = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).reshape(shape)
            pos += 4 * count
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated EVCK record near byte {pos}") from exc
    return out


def save_tensors(path, tensors: dict) -> None:
    Path(path).write_bytes(encode_tensors(tensors))


def load_tensors(path) -> dict:
    return decode_tensors(Path(path).read_bytes())


def adam_to_tensors(state: AdamState, prefix: str = "") -> dict:
    out = {}
    for name in state.m:
        out[f"{prefix}{name}/m"] = state.m[name]
        out[f"{prefix}{name}/v"] = state.v[name]
    out[f"{prefix}step"] = np.float32(state.step)
    return out


def adam_from_tensors(tensors: dict, names, prefix: str = "") -> AdamState:
    m = {n: tensors[f"{prefix}{n}/m"] for n in names if f"{prefix}{n}/m" in tensors}
    v = {n: tensors[f"{prefix}{n}/v"] for n in names if f"{prefix}{n}/v" in tensors}
    return AdamState(step=int(tensors[f"{prefix}step"]), m=m, v=v)
