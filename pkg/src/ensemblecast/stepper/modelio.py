"""OMP1 model files.

Layout (little-endian)::

    "OMP1" | 32-byte NUL-padded stepper kind | u32 n_tensors
    per tensor: 32-byte NUL-padded name | u32 rank | u32 dims[rank] | f32 payload

Architecture metadata travels as tensors named ``meta.*``.
"""

import struct

import numpy as np

from ..errors import BadMagic, EnsembleCastError, TruncatedFile
from .graph import GraphStepper
from .models import LinearStencil, Persistence

MAGIC = b"OMP1"
NAME_BYTES = 32


def _name(text):
    raw = text.encode("ascii")
    if len(raw) > NAME_BYTES:
        raise EnsembleCastError(f"name {text!r} longer than {NAME_BYTES} bytes")
    return raw.ljust(NAME_BYTES, b"\0")


def save_model(model, path):
    tensors = dict(model.params)
    for key, value in model.meta.items():
        tensors[f"meta.{key}"] = np.atleast_1d(np.asarray(value, dtype=np.float64))
    parts = [MAGIC, _name(model.kind), struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        parts.append(_name(name))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, got {buf[:4]!r}")
    try:
        pos = 4
        kind = buf[pos : pos + NAME_BYTES].rstrip(b"\0").decode("ascii")
        pos += NAME_BYTES
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            name = buf[pos : pos + NAME_BYTES].rstrip(b"\0").decode("ascii")
            pos += NAME_BYTES
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise TruncatedFile(f"{path}: tensor {name!r} truncated")
            tensors[name] = np.frombuffer(buf, "<f4", size, pos).reshape(dims).astype(np.float64)
            pos += 4 * size
    except struct.error as exc:
        raise TruncatedFile(f"{path}: {exc}") from None
    meta = {k[5:]: v for k, v in tensors.items() if k.startswith("meta.")}
    params = {k: v for k, v in tensors.items() if not k.startswith("meta.")}
    if kind == "persistence":
        return Persistence()
    if kind == "linear":
        return LinearStencil(params)
    if kind == "graph":
        return GraphStepper(
            params,
            int(meta["width"][0]),
            int(meta["n_layers"][0]),
            tuple(int(r) for r in meta["level_res"]),
        )
    raise EnsembleCastError(f"{path}: unknown stepper kind {kind!r}")
