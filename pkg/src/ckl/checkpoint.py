"""Binary checkpoint format.

Layout, all little-endian:

    magic            4 bytes  b"CKL1"
    n_config         u32
    n_config times:  u32 key length, key bytes, u32 value length, value bytes
    n_params         u32
    n_params times:  u32 name length, name bytes, u32 ndim, ndim * u64 dims,
                     prod(dims) * f64 values

Loading parses the whole file before constructing anything, so a truncated
file raises without leaving partial state behind.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import CKLModel, ModelConfig
from .tensor import Tensor

MAGIC = b"CKL1"


class CheckpointError(ValueError):
    """Bad magic, truncated data, or an incompatible configuration."""


def save(path, config: ModelConfig, params: dict[str, Tensor]) -> None:
    chunks = [MAGIC]
    cfg = config.to_dict()
    chunks.append(struct.pack("<I", len(cfg)))
    for key, value in cfg.items():
        kb, vb = key.encode(), value.encode()
        chunks.append(struct.pack("<I", len(kb)) + kb)
        chunks.append(struct.pack("<I", len(vb)) + vb)
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.items():
        nb = name.encode()
        arr = np.ascontiguousarray(tensor.data, dtype="<f8")
        chunks.append(struct.pack("<I", len(nb)) + nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint file is truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64s(self, n: int) -> tuple:
        return struct.unpack(f"<{n}Q", self.take(8 * n)) if n else ()


def load(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    cfg = {}
    for _ in range(r.u32()):
        key = r.take(r.u32()).decode()
        cfg[key] = r.take(r.u32()).decode()
    try:
        config = ModelConfig.from_dict(cfg)
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"{path}: bad config header: {err}") from err
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        shape = r.u64s(r.u32())
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        params[name] = arr.astype(np.float64)
    if r.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return config, params


def restore_model(path, expected: ModelConfig | None = None, force: bool = False) -> CKLModel:
    """Rebuild a model from a checkpoint, verifying config compatibility."""
    config, arrays = load(path)
    if expected is not None and not force:
        mismatched = {
            name: (getattr(expected, name), getattr(config, name))
            for name in config.__dataclass_fields__
            if getattr(expected, name) != getattr(config, name)
        }
        if mismatched:
            detail = ", ".join(f"{k}: want {w} got {g}" for k, (w, g) in mismatched.items())
            raise CheckpointError(f"config mismatch ({detail})")
    model = CKLModel(config, seed=0)
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("awl.")}
    if set(model_arrays) != set(model.params):
        raise CheckpointError("checkpoint parameter names do not match the model")
    for name, arr in model_arrays.items():
        if model.params[name].data.shape != arr.shape:
            raise CheckpointError(f"parameter {name} has shape {arr.shape}")
        model.params[name].data[...] = arr
    return model
