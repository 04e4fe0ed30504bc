"""
Name-addressed parameter and buffer registry, plus the checkpoint codec.

Checkpoint layout (all integers little-endian)::

    magic      8 bytes  b"DUALCKPT"
    version    u32
    count      u32
    count x record:
        name_len  u32, name  utf-8 bytes
        trainable u8
        ndim      u32, dims  ndim x u64
        payload   prod(dims) x float64 (little-endian, row-major)
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, RegistrationError
from .tensor import Tensor

MAGIC = b"DUALCKPT"
FORMAT_VERSION = 1

Record = Tuple[str, bool, np.ndarray]


def encode_records(records: Sequence[Record]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(records))]
    for name, trainable, arr in records:
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BI", int(bool(trainable)), arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def decode_records(blob: bytes) -> List[Record]:
    view = memoryview(blob)
    if bytes(view[:8]) != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic bytes")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    version, count = take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out = []
    for _ in range(count):
        (nlen,) = take("<I")
        if pos + nlen > len(view):
            raise CheckpointError(f"truncated checkpoint at byte {pos}")
        name = bytes(view[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        trainable, ndim = take("<BI")
        shape = take(f"<{ndim}Q")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(view):
            raise CheckpointError(f"truncated payload for {name!r} at byte {pos}")
        arr = np.frombuffer(view[pos:pos + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
        out.append((name, bool(trainable), arr))
    if pos != len(view):
        raise CheckpointError(f"{len(view) - pos} trailing bytes after last record")
    return out


class ParamStore:
    """Ordered parameters (value + grad) and non-trainable buffers of one model."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._order: List[str] = []

    def register(self, name: str, value, trainable: bool = True) -> None:
        if name in self.params or name in self.buffers:
            raise RegistrationError(f"name {name!r} is already registered")
        arr = np.array(value, dtype=np.float64)
        if trainable:
            self.params[name] = Tensor(arr, requires_grad=True)
        else:
            self.buffers[name] = arr
        self._order.append(name)

    def __contains__(self, name) -> bool:
        return name in self.params or name in self.buffers

    def __len__(self) -> int:
        return len(self._order)

    def names(self) -> List[str]:
        return list(self._order)

    def is_trainable(self, name: str) -> bool:
        if name in self.params:
            return True
        if name in self.buffers:
            return False
        raise KeyError(name)

    def value(self, name: str) -> np.ndarray:
        """The live array behind ``name`` (parameter data or buffer)."""
        if name in self.params:
            return self.params[name].data
        return self.buffers[name]

    def param(self, name: str) -> Tensor:
        return self.params[name]

    def items(self) -> Iterator[Tuple[str, np.ndarray, bool]]:
        for name in self._order:
            yield name, self.value(name), name in self.params

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: arr.shape for name, arr, _ in self.items()}

    def num_elements(self, trainable_only: bool = False) -> int:
        return sum(arr.size for _, arr, t in self.items() if t or not trainable_only)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad.fill(0.0)

    def snapshot(self) -> bytes:
        return encode_records([(n, t, a) for n, a, t in self.items()])

    def restore(self, blob: bytes) -> None:
        records = decode_records(blob)
        incoming = {name: (trainable, arr) for name, trainable, arr in records}
        offenders = []
        for name, arr, trainable in self.items():
            if name not in incoming:
                offenders.append(f"{name}: missing from checkpoint")
                continue
            t, a = incoming[name]
            if a.shape != arr.shape:
                offenders.append(f"{name}: shape {a.shape} != {arr.shape}")
            elif t != trainable:
                offenders.append(f"{name}: trainable flag {t} != {trainable}")
        offenders += [f"{n}: not in store" for n in incoming if n not in self]
        if offenders:
            raise CheckpointError(
                "checkpoint incompatible with store: " + "; ".join(offenders), offenders
            )
        for name, arr, _ in self.items():
            arr[...] = incoming[name][1]

    def save(self, path) -> None:
        Path(path).write_bytes(self.snapshot())

    def load(self, path) -> None:
        self.restore(Path(path).read_bytes())

    def clone(self) -> "ParamStore":
        other = ParamStore()
        for name, arr, trainable in self.items():
            other.register(name, arr.copy(), trainable)
        return other

    def checksum(self, names=None) -> str:
        h = hashlib.sha256()
        for name, arr, _ in self.items():
            if names is None or name in names:
                h.update(name.encode())
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()
