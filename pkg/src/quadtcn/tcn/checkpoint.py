"""Binary checkpoint container.

Little-endian layout::

    b"E2ETCN01"                     magic
    u32 version
    str kind                        "e2e-tcn", "motor-hybrid", ...
    u32 n_networks
    per network:
        str name
        str NetworkConfig text
        u32 count, tensor*          parameters in declaration order
        u32 count, tensor*          BN running statistics
        u32 has_optimizer
            [u64 step, f64 lr, f64 beta1, f64 beta2, f64 eps, tensor* m, tensor* v]
    str metadata                    flat ``key = value`` text
    u32 count, (str name, tensor64)*  auxiliary arrays (normalization statistics)
    u32 crc32 of every preceding byte

``str`` is a u32 byte length followed by UTF-8. ``tensor`` is u32 rank, u32
dims, then float32 payload; ``tensor64`` is the same with a float64 payload.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ConfigError
from .config import NetworkConfig
from .network import TCN, init_params
from .optim import OptimizerState

MAGIC = b"E2ETCN01"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    networks: dict  # name -> TCN
    metadata: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)


class _Writer:
    def __init__(self):
        self.buf = io.BytesIO()

    def u32(self, v):
        self.buf.write(struct.pack("<I", v))

    def u64(self, v):
        self.buf.write(struct.pack("<Q", v))

    def f64(self, v):
        self.buf.write(struct.pack("<d", v))

    def str(self, s):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf.write(b)

    def tensor(self, a, dtype="<f4"):
        a = np.asarray(a)
        self.u32(a.ndim)
        for d in a.shape:
            self.u32(d)
        self.buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self):
        return struct.unpack("<d", self.take(8))[0]

    def str(self):
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("checkpoint string is not valid UTF-8") from None

    def tensor(self, dtype="<f4"):
        rank = self.u32()
        if rank > 8:
            raise CheckpointError(f"implausible tensor rank {rank}")
        shape = tuple(self.u32() for _ in range(rank))
        size = int(np.prod(shape, dtype=np.int64))
        item = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(size * item), dtype=dtype).reshape(shape).copy()


def _metadata_text(meta: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in meta.items())


def _parse_metadata(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def dumps(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.buf.write(MAGIC)
    w.u32(VERSION)
    w.str(ckpt.kind)
    w.u32(len(ckpt.networks))
    for name, model in ckpt.networks.items():
        w.str(name)
        w.str(model.config.to_text())
        w.u32(len(model.params))
        for p in model.params.values():
            w.tensor(p)
        w.u32(len(model.buffers))
        for b in model.buffers.values():
            w.tensor(b)
        opt = getattr(model, "opt_state", None)
        w.u32(0 if opt is None else 1)
        if opt is not None:
            w.u64(opt.step)
            for v in (opt.lr, opt.beta1, opt.beta2, opt.eps):
                w.f64(v)
            for key in model.params:
                w.tensor(opt.m[key])
            for key in model.params:
                w.tensor(opt.v[key])
    w.str(_metadata_text(ckpt.metadata))
    w.u32(len(ckpt.aux))
    for key, arr in ckpt.aux.items():
        w.str(key)
        w.tensor(arr, "<f8")
    body = w.buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes, expected_kind: str | None = None) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated file)")
    kind = r.str()
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"checkpoint holds a {kind!r} model, expected {expected_kind!r}")
    networks = {}
    for _ in range(r.u32()):
        name = r.str()
        try:
            config = NetworkConfig.from_text(r.str())
        except ConfigError as exc:
            raise CheckpointError(f"bad network config in checkpoint: {exc}") from None
        template, template_buf = init_params(config)
        params = _read_tensors(r, template, config.dtype, "parameter")
        buffers = _read_tensors(r, template_buf, config.dtype, "buffer")
        model = TCN(config, params, buffers)
        if r.u32():
            step = r.u64()
            lr, b1, b2, eps = (r.f64() for _ in range(4))
            m = _read_n(r, template, config.dtype)
            v = _read_n(r, template, config.dtype)
            model.opt_state = OptimizerState(lr, b1, b2, eps, step, m, v)
        networks[name] = model
    metadata = _parse_metadata(r.str())
    aux = {}
    for _ in range(r.u32()):
        key = r.str()
        aux[key] = r.tensor("<f8")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(kind, networks, metadata, aux)


def _read_n(r, template, dtype):
    out = {}
    for key, ref in template.items():
        t = r.tensor()
        if t.shape != ref.shape:
            raise CheckpointError(f"tensor {key} has shape {t.shape}, config implies {ref.shape}")
        out[key] = t.astype(dtype)
    return out


def _read_tensors(r, template, dtype, what):
    n = r.u32()
    if n != len(template):
        raise CheckpointError(f"checkpoint has {n} {what} tensors, config implies {len(template)}")
    return _read_n(r, template, dtype)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(dumps(ckpt))


def load_checkpoint(path, expected_kind: str | None = None) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data, expected_kind)
