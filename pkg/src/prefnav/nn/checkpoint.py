"""Binary checkpoint format.

Layout (little-endian)::

    "PTRN" | u8 version
    u32 n_networks
      per network:
        u16 name_len | name (UTF-8)
        u8 ndim | u32 dims[ndim]                  input shape
        u16 n_layers | layer table                 see _LAYER_CODES
        u64 n_params | f32 params[n_params]
    u32 dim | f64 mean[dim] | f64 scale[dim]       feature normalization
    u32 n_rank | i32 ranking[n_rank]               most preferred first
    u32 meta_len | UTF-8 JSON metadata
    u32 CRC32 of everything after the version byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import ChecksumError, CheckpointError, MagicError, VersionError
from .layers import Conv2D, Dense, MaxPool, ReLU, Softplus
from .network import Network, NetworkSpec

MAGIC = b"PTRN"
VERSION = 1

_LAYER_CODES = {Conv2D: 1, Dense: 2, ReLU: 3, Softplus: 4, MaxPool: 5}


@dataclass
class Checkpoint:
    networks: dict[str, Network] = field(default_factory=dict)
    norm_mean: np.ndarray | None = None
    norm_scale: np.ndarray | None = None
    ranking: list[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _pack_layer(spec) -> bytes:
    code = _LAYER_CODES[type(spec)]
    if isinstance(spec, Conv2D):
        return struct.pack("<B4I", code, spec.out_channels, spec.kernel, spec.stride, spec.padding)
    if isinstance(spec, Dense):
        return struct.pack("<BI", code, spec.out_dim)
    if isinstance(spec, MaxPool):
        return struct.pack("<BI", code, spec.size)
    return struct.pack("<B", code)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def raw(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def layer(self):
        (code,) = self.take("<B")
        if code == 1:
            return Conv2D(*self.take("<4I"))
        if code == 2:
            return Dense(*self.take("<I"))
        if code == 3:
            return ReLU()
        if code == 4:
            return Softplus()
        if code == 5:
            return MaxPool(*self.take("<I"))
        raise CheckpointError(f"unknown layer code {code}")


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    out = bytearray()
    out += struct.pack("<I", len(ckpt.networks))
    for name, net in ckpt.networks.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded)) + encoded
        shape = tuple(net.spec.input_shape)
        out += struct.pack(f"<B{len(shape)}I", len(shape), *shape)
        out += struct.pack("<H", len(net.spec.layers))
        for spec in net.spec.layers:
            out += _pack_layer(spec)
        flat = net.get_flat().astype("<f4")
        out += struct.pack("<Q", flat.size) + flat.tobytes()
    if ckpt.norm_mean is None:
        out += struct.pack("<I", 0)
    else:
        mean = np.asarray(ckpt.norm_mean, dtype="<f8")
        scale = np.asarray(ckpt.norm_scale, dtype="<f8")
        out += struct.pack("<I", mean.size) + mean.tobytes() + scale.tobytes()
    out += struct.pack(f"<I{len(ckpt.ranking)}i", len(ckpt.ranking), *ckpt.ranking)
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta)) + meta
    payload = bytes(out)
    return MAGIC + struct.pack("<B", VERSION) + payload + struct.pack("<I", zlib.crc32(payload))


def load_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 4 or data[:4] != MAGIC:
        raise MagicError("not a checkpoint (bad magic)")
    if len(data) < 9:
        raise CheckpointError("checkpoint truncated")
    if data[4] != VERSION:
        raise VersionError(f"unsupported checkpoint version {data[4]} (expected {VERSION})")
    payload, (crc,) = data[5:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError("checkpoint checksum mismatch")

    r = _Reader(payload)
    ckpt = Checkpoint()
    (n_nets,) = r.take("<I")
    for _ in range(n_nets):
        (name_len,) = r.take("<H")
        name = r.raw(name_len).decode("utf-8")
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        (n_layers,) = r.take("<H")
        layers = tuple(r.layer() for _ in range(n_layers))
        net = Network(NetworkSpec(tuple(shape), layers), seed=None, name=name)
        (n_params,) = r.take("<Q")
        if n_params != net.n_parameters():
            raise CheckpointError(f"{name}: {n_params} parameters stored, architecture has {net.n_parameters()}")
        flat = np.frombuffer(r.raw(4 * n_params), dtype="<f4").astype(np.float32)
        net.set_flat(flat)
        ckpt.networks[name] = net
    (dim,) = r.take("<I")
    if dim:
        ckpt.norm_mean = np.frombuffer(r.raw(8 * dim), dtype="<f8").astype(np.float64)
        ckpt.norm_scale = np.frombuffer(r.raw(8 * dim), dtype="<f8").astype(np.float64)
    (n_rank,) = r.take("<I")
    ckpt.ranking = list(r.take(f"<{n_rank}i"))
    (meta_len,) = r.take("<I")
    ckpt.metadata = json.loads(r.raw(meta_len).decode("utf-8"))
    if r.pos != len(payload):
        raise CheckpointError("trailing bytes in checkpoint")
    return ckpt
