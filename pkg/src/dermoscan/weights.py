"""Binary weight file format ("DDWF").

Byte layout (all integers little-endian; this description is normative and
sufficient to write an independent reader):

    offset  size  field
    0       4     magic, ASCII "DDWF"
    4       2     format version, u16 (currently 1)
    6       4     config blob length L, u32
    10      L     config blob, UTF-8 "key=value" lines (network config)
    ...     4     tensor count T, u32
    then per tensor, T times:
            2     name length N, u16
            N     name, UTF-8
            1     rank R, u8
            4*R   dims, u32 each
            4*P   payload, P = product(dims) IEEE-754 float32 LE
    last    4     CRC32 (zlib polynomial) of ALL preceding bytes, u32

Weights are stored in float32; the in-memory training precision is float64,
so a save/load round trip quantizes to float32 (documented, lossy), while
load -> save reproduces the file byte-identically.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .network import DermoNet, NetworkConfig

MAGIC = b"DDWF"
VERSION = 1


class WeightFormatError(ValueError):
    """Corrupt, truncated, or inconsistent weight file."""


def save_weights(net: DermoNet, path) -> None:
    tensors = net.named_tensors()
    blob = net.config.to_config_lines().encode("utf-8")
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<I", len(blob)), blob,
             struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    body = b"".join(parts)
    payload = body + struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(payload)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise WeightFormatError(f"{self.path}: truncated "
                                    f"(needed {n} bytes at offset {self.pos})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_weight_file(path):
    """Parse a weight file into (config, {name: float64 array}).

    Verifies magic, version, CRC, and dims-vs-payload consistency.
    """
    buf = Path(path).read_bytes()
    if len(buf) < 10:
        raise WeightFormatError(f"{path}: file too short")
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(buf[:-4]) != stored_crc:
        raise WeightFormatError(f"{path}: CRC mismatch (corrupt or truncated)")
    r = _Reader(buf[:-4], path)
    if r.take(4) != MAGIC:
        raise WeightFormatError(f"{path}: bad magic (not a DDWF file)")
    version = r.u16()
    if version != VERSION:
        raise WeightFormatError(f"{path}: unsupported format version {version}")
    blob = r.take(r.u32()).decode("utf-8")
    config = NetworkConfig.from_config_lines(blob)
    count = r.u32()
    tensors = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        n_values = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = r.take(4 * n_values)
        arr = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        tensors[name] = arr.reshape(dims)
    if r.pos != len(r.buf):
        raise WeightFormatError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return config, tensors


def load_weights(path) -> DermoNet:
    """Reconstruct the network described by the file; strict name/shape match."""
    config, tensors = read_weight_file(path)
    net = DermoNet(config)
    expected = net.named_tensors()
    if net.param_count == 0:
        raise WeightFormatError(f"{path}: config describes a zero-parameter net")
    missing = sorted(set(expected) - set(tensors))
    extra = sorted(set(tensors) - set(expected))
    if missing or extra:
        raise WeightFormatError(f"{path}: tensor set mismatch "
                                f"(missing {missing[:3]}, extra {extra[:3]})")
    for name, t in expected.items():
        arr = tensors[name]
        if arr.shape != t.data.shape:
            raise WeightFormatError(f"{path}: {name} has shape {arr.shape}, "
                                    f"expected {t.data.shape}")
        t.data[...] = arr
    return net


def file_crc(path) -> str:
    """Hex CRC of the whole file; used as the served model version."""
    return f"{zlib.crc32(Path(path).read_bytes()):08x}"
