"""Binary checkpoint format for trained pathways.

Little-endian layout::

    b"MDCA"  u32 version(=1)  u32 pathway_count
    per pathway:  u32 name_len, name (UTF-8), u32 layer_count
      per layer:  u32 num_features, kernel_h, kernel_w, in_channels, stride
                  f32 weights[num_features * kernel_h * kernel_w * in_channels]
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .network import NetworkConfig, Pathway
from .tensor import DictionaryLayer

MAGIC = b"MDCA"
VERSION = 1
# refuse to allocate layers beyond this many weights
MAX_WEIGHTS = 1 << 28
MAX_NAME = 1 << 16


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class DimensionOverflowError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def encode(pathways) -> bytes:
    if isinstance(pathways, NetworkConfig):
        pathways = pathways.pathways
    elif isinstance(pathways, Pathway):
        pathways = [pathways]
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(pathways))
    for pw in pathways:
        name = pw.name.encode("utf-8")
        out += struct.pack("<I", len(name)) + name
        out += struct.pack("<I", len(pw.layers))
        for d in pw.layers:
            out += struct.pack("<5I", d.num_features, d.kernel_h, d.kernel_w, d.in_channels, d.stride)
            out += np.ascontiguousarray(d.weights, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(out) & 0xFFFFFFFF)
    return bytes(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf: bytes) -> list[Pathway]:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError("not an MDCA checkpoint (bad magic bytes)")
    rd = _Reader(buf)
    rd.take(4, "magic")
    version = rd.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {VERSION}")
    body_end = len(buf) - 4
    pathways = []
    for _ in range(rd.u32("pathway count")):
        name_len = rd.u32("name length")
        if name_len > MAX_NAME:
            raise DimensionOverflowError(f"pathway name length {name_len} exceeds {MAX_NAME}")
        name = rd.take(name_len, "pathway name").decode("utf-8")
        layers = []
        for _ in range(rd.u32("layer count")):
            dims = struct.unpack("<5I", rd.take(20, "layer header"))
            if min(dims) == 0:
                raise DimensionOverflowError(f"zero dimension in layer header {dims}")
            n = int(np.prod(dims[:4], dtype=np.uint64))
            if n > MAX_WEIGHTS:
                raise DimensionOverflowError(f"layer of {n} weights exceeds the {MAX_WEIGHTS} limit")
            w = np.frombuffer(rd.take(4 * n, "weights"), dtype="<f4").reshape(dims[:4])
            layers.append(DictionaryLayer(w.astype(np.float32), dims[4]))
        pathways.append(Pathway(name, layers))
    crc = rd.u32("checksum")
    if rd.pos != len(buf):
        raise CheckpointError(f"{len(buf) - rd.pos} unexpected trailing bytes")
    if crc != zlib.crc32(buf[:body_end]) & 0xFFFFFFFF:
        raise ChecksumError("checkpoint CRC32 mismatch")
    return pathways


def save_checkpoint(path, pathways) -> None:
    Path(path).write_bytes(encode(pathways))


def load_checkpoint(path) -> list[Pathway]:
    return decode(Path(path).read_bytes())
