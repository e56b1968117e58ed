"""Named parameter collections and their binary checkpoint format.

Checkpoint layout: the magic bytes ``ICTUS01`` followed by one record per
parameter in store order. Each record is ``<u32 name length><utf-8 name>
<u32 rank><u32 dim>*rank`` then the array values as little-endian float64 in
row-major order. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Var, leaf

__all__ = ["ParameterStore", "CheckpointError", "save_checkpoint", "load_checkpoint", "MAGIC"]

MAGIC = b"ICTUS01"


class CheckpointError(ValueError):
    """Malformed checkpoint file; message carries the failing byte offset."""


class ParameterStore:
    """Insertion-ordered mapping of parameter name to differentiable leaf."""

    def __init__(self):
        self._params: dict[str, Var] = {}

    def add(self, name: str, data) -> Var:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        v = leaf(np.asarray(data, dtype=np.float64), name=name)
        self._params[name] = v
        return v

    def __getitem__(self, name: str) -> Var:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def variables(self) -> list[Var]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, v in self._params.items():
            arr = np.asarray(arrays[k], dtype=np.float64)
            if arr.shape != v.data.shape:
                raise ValueError(f"shape mismatch for '{k}': {arr.shape} vs {v.data.shape}")
            v.data = arr.copy()


def save_checkpoint(store, path) -> None:
    """Write a ParameterStore (or name->array dict) to ``path``."""
    items = store.items() if isinstance(store, ParameterStore) else store.items()
    chunks = [MAGIC]
    for name, value in items:
        arr = value.data if isinstance(value, Var) else np.asarray(value, dtype=np.float64)
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name->array dict."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic at offset 0: expected {MAGIC!r}")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: needed {n} bytes for {what} at offset {pos}")
        chunk = raw[pos : pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, "shape"))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count, f"data of '{name}'"), dtype="<f8")
        out[name] = data.reshape(shape).astype(np.float64)
    return out
