"""Binary checkpoint format (all integers little-endian).

::

    "MSAA"  u32 version
    config: u32 n_blocks, u32 channels, u32 scale, u32 figff_expansion,
            u8 flags (bit0 leb, bit1 gfm, bit2 mfa, bit3 fg)
    u32 count, then per tensor:
        u16 name_len, name (utf-8), u8 rank, rank x u32 dims, float32 data
    optional Adam section:
        "ADAM", u64 step, u32 count, then per tensor:
        u16 name_len, name, u8 rank, rank x u32 dims, float32 m, float32 v
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, param_shapes
from .optim import Param, ParamStore

MAGIC = b"MSAA"
ADAM_MAGIC = b"ADAM"
VERSION = 1
_FLAGS = ("use_leb", "use_gfm", "use_mfa", "use_fg")


def _pack_config(cfg: ModelConfig) -> bytes:
    flags = sum(1 << i for i, f in enumerate(_FLAGS) if getattr(cfg, f))
    return struct.pack("<IIIIB", cfg.n_blocks, cfg.channels, cfg.scale, cfg.figff_expansion, flags)


def _write_header(buf, name: str, shape) -> None:
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape)))
    buf.write(struct.pack(f"<{len(shape)}I", *shape))


def _f32(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def dumps(cfg: ModelConfig, store: ParamStore, with_adam: bool = True) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION) + _pack_config(cfg))
    buf.write(struct.pack("<I", len(store)))
    for name, p in store.entries.items():
        _write_header(buf, name, p.value.shape)
        buf.write(_f32(p.value))
    if with_adam:
        buf.write(ADAM_MAGIC + struct.pack("<QI", store.step, len(store)))
        for name, p in store.entries.items():
            _write_header(buf, name, p.value.shape)
            buf.write(_f32(p.m) + _f32(p.v))
    return buf.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob, self.pos = blob, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def header(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode()
        (rank,) = self.unpack("<B")
        return name, self.unpack(f"<{rank}I")

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)

    @property
    def done(self) -> bool:
        return self.pos == len(self.blob)


def loads(blob: bytes, expected: ModelConfig | None = None) -> tuple[ModelConfig, ParamStore]:
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("not an MSAA checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    n_blocks, channels, scale, expansion, flags = r.unpack("<IIIIB")
    cfg = ModelConfig(n_blocks=n_blocks, channels=channels, scale=scale, figff_expansion=expansion,
                      **{f: bool(flags >> i & 1) for i, f in enumerate(_FLAGS)})
    if expected is not None and cfg != expected:
        raise CheckpointError(f"checkpoint config {cfg} does not match expected {expected}")

    layout = param_shapes(cfg)
    (count,) = r.unpack("<I")
    if count != len(layout):
        raise CheckpointError(f"checkpoint has {count} tensors, config expects {len(layout)}")
    store = ParamStore()
    for want_name, want_shape in layout:
        name, shape = r.header()
        if (name, tuple(shape)) != (want_name, want_shape):
            raise CheckpointError(f"tensor {name}{list(shape)} where {want_name}{list(want_shape)} expected")
        store.add(name, r.floats(shape))

    if not r.done:
        if r.take(4) != ADAM_MAGIC:
            raise CheckpointError("trailing bytes after tensors are not an Adam section")
        step, count = r.unpack("<QI")
        if count != len(store):
            raise CheckpointError("Adam section tensor count mismatch")
        store.step = step
        for want_name, want_shape in layout:
            name, shape = r.header()
            if (name, tuple(shape)) != (want_name, want_shape):
                raise CheckpointError(f"Adam state for {name} out of order or misshapen")
            p = store.entries[name]
            store.entries[name] = Param(p.value, p.grad, r.floats(shape), r.floats(shape))
        if not r.done:
            raise CheckpointError("trailing bytes after Adam section")
    return cfg, store


def save_checkpoint(path, cfg: ModelConfig, store: ParamStore, with_adam: bool = True) -> None:
    Path(path).write_bytes(dumps(cfg, store, with_adam))


def load_checkpoint(path, expected: ModelConfig | None = None) -> tuple[ModelConfig, ParamStore]:
    return loads(Path(path).read_bytes(), expected)
