"""Trainable parameter storage, initialisation and checkpoint files.

Checkpoint layout (all integers little-endian ``u32`` unless noted)::

    b"OADP" | version | 32-byte sha256 spec fingerprint | count
    count x ( name_len | name (utf-8) | ndim | dims... | itemsize (u8: 4 or 8)
              | raw little-endian IEEE values, row-major )
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..errors import ValidationError
from .network import TemporalModel
from .spec import ModelSpec

CHECKPOINT_MAGIC = b"OADP"
CHECKPOINT_VERSION = 1


def is_bias(name: str) -> bool:
    return name.rsplit(".", 1)[-1].startswith("b")


class ParamStore:
    """Named trainable tensors plus one momentum buffer per tensor."""

    def __init__(self, tensors=None, fingerprint=None):
        self.tensors = {}
        self.momentum = {}
        self.fingerprint = fingerprint
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name, value):
        if name in self.tensors:
            raise ValidationError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, ad.DiffTensor) else ad.DiffTensor(value)
        t.requires_grad = True
        self.tensors[name] = t
        self.momentum[name] = np.zeros_like(t.values)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def shapes(self):
        return {n: t.shape for n, t in self.tensors.items()}

    def num_values(self) -> int:
        return int(sum(t.values.size for t in self.tensors.values()))

    def snapshot(self):
        """Detached copies of the current values."""
        return {n: t.values.copy() for n, t in self.tensors.items()}

    def copy(self):
        out = ParamStore(self.snapshot(), fingerprint=self.fingerprint)
        for n, buf in self.momentum.items():
            out.momentum[n] = buf.copy()
        return out

    def astype(self, dtype):
        out = ParamStore({n: ad.DiffTensor(t.values, dtype=dtype) for n, t in self.tensors.items()},
                         fingerprint=self.fingerprint)
        return out

    def equals(self, other) -> bool:
        """Bit-exact comparison of names, shapes, dtypes and values."""
        if self.names() != other.names():
            return False
        for n, t in self.tensors.items():
            o = other[n].values
            if t.values.dtype != o.dtype or t.values.shape != o.shape:
                return False
            if t.values.tobytes() != o.tobytes():
                return False
        return True

    # --- checkpoint file ----------------------------------------------------

    def to_bytes(self) -> bytes:
        fp = bytes.fromhex(self.fingerprint) if self.fingerprint else bytes(32)
        parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), fp, struct.pack("<I", len(self.tensors))]
        for name, t in self.tensors.items():
            raw = name.encode("utf-8")
            values = t.values
            parts.append(struct.pack("<I", len(raw)))
            parts.append(raw)
            parts.append(struct.pack("<I", values.ndim))
            parts.append(struct.pack(f"<{values.ndim}I", *values.shape))
            parts.append(struct.pack("<B", values.dtype.itemsize))
            parts.append(values.astype(values.dtype.newbyteorder("<"), copy=False).tobytes(order="C"))
        return b"".join(parts)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamStore":
        view = memoryview(data)
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(view):
                raise ValidationError("checkpoint truncated")
            chunk = view[pos : pos + n]
            pos += n
            return chunk

        if bytes(take(4)) != CHECKPOINT_MAGIC:
            raise ValidationError("not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", take(4))
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"unsupported checkpoint version {version}")
        fp = bytes(take(32))
        fingerprint = None if fp == bytes(32) else fp.hex()
        (count,) = struct.unpack("<I", take(4))
        store = cls(fingerprint=fingerprint)
        for _ in range(count):
            (nlen,) = struct.unpack("<I", take(4))
            name = bytes(take(nlen)).decode("utf-8")
            (ndim,) = struct.unpack("<I", take(4))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
            (itemsize,) = struct.unpack("<B", take(1))
            if itemsize not in (4, 8):
                raise ValidationError(f"parameter {name!r}: unsupported item size {itemsize}")
            dtype = np.dtype(f"<f{itemsize}")
            count_values = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(take(count_values * itemsize), dtype=dtype).reshape(shape)
            native = dtype.newbyteorder("=")
            store.add(name, ad.DiffTensor(values.astype(native), dtype=native))
        if pos != len(view):
            raise ValidationError("trailing bytes after checkpoint payload")
        return store

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())


def init_params(spec: ModelSpec, seed: int) -> ParamStore:
    """Glorot-uniform weights, zero biases, in the current precision.

    Draws are made in float64 in name order and then cast, so a seed yields
    the same parameters regardless of how the store is later used.
    """
    rng = np.random.default_rng(seed)
    dtype = ad.get_dtype()
    store = ParamStore(fingerprint=spec.fingerprint())
    for name, shape in TemporalModel(spec).param_shapes().items():
        if is_bias(name):
            values = np.zeros(shape)
        else:
            fan_in, fan_out = shape[0], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values = rng.uniform(-limit, limit, size=shape)
        store.add(name, ad.DiffTensor(values, dtype=dtype))
    return store
