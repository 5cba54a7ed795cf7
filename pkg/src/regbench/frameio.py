"""The "RBF1" per-timestep binary frame container.

Layout (all integers little-endian):

    magic        4 bytes  b"RBF1"
    version      u16      currently 1
    dtype code   u8       1 = float32, 2 = float64
    reserved     u8       0
    timestamp    i64      seconds since the Unix epoch, UTC
    V, H, W      u32 x 3
    channels     V records: u16 name_len, name utf-8, i16 level (-1 =
                 surface), u16 units_len, units utf-8
    lat          H float64
    lon          W float64
    payload      V*H*W values at the stored dtype, channel-major row-major
    checksum     u32      CRC-32 of the payload bytes

Decoding validates magic, version, shape bounds, and the checksum, and
reproduces values (at the stored dtype) and the timestamp exactly.
"""

from __future__ import annotations

import datetime as dt
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptFile, FormatError
from .grid import Channel, FieldFrame, GridGeometry, VariableCatalog

MAGIC = b"RBF1"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_NAMES = {"float32": 1, "float64": 2}
MAX_PAYLOAD_BYTES = 1 << 30

_HEADER = struct.Struct("<4sHBBqIII")


def epoch_seconds(timestamp: dt.datetime) -> int:
    return int(timestamp.timestamp())


def from_epoch_seconds(seconds: int) -> dt.datetime:
    return dt.datetime.fromtimestamp(seconds, tz=dt.timezone.utc)


def encode_frame(frame: FieldFrame, dtype: str = "float64") -> bytes:
    """Serialize a frame to RBF1 bytes at the requested storage dtype."""
    if dtype not in DTYPE_NAMES:
        raise FormatError(f"unsupported dtype {dtype!r}")
    code = DTYPE_NAMES[dtype]
    v, h, w = frame.shape
    payload = np.ascontiguousarray(frame.values, dtype=DTYPE_CODES[code]).tobytes()
    if len(payload) > MAX_PAYLOAD_BYTES:
        raise FormatError(f"payload of {len(payload)} bytes exceeds container limit")
    parts = [
        _HEADER.pack(MAGIC, VERSION, code, 0, epoch_seconds(frame.timestamp), v, h, w)
    ]
    for ch in frame.catalog.channels:
        name = ch.name.encode("utf-8")
        units = ch.units.encode("utf-8")
        level = -1 if ch.level is None else ch.level
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<h", level))
        parts.append(struct.pack("<H", len(units)))
        parts.append(units)
    parts.append(np.ascontiguousarray(frame.geometry.lat, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(frame.geometry.lon, dtype="<f8").tobytes())
    parts.append(payload)
    parts.append(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("frame file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def decode_frame(data: bytes, resolution_deg: float | None = None) -> FieldFrame:
    """Parse RBF1 bytes back into a frame (values widened to float64)."""
    r = _Reader(data)
    magic, version, code, _, ts, v, h, w = r.unpack("<4sHBBqIII")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = DTYPE_CODES[code]
    if v < 1 or h < 1 or w < 1 or v * h * w * dtype.itemsize > MAX_PAYLOAD_BYTES:
        raise FormatError(f"shape ({v}, {h}, {w}) out of container bounds")
    channels = []
    for _ in range(v):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (level,) = r.unpack("<h")
        (units_len,) = r.unpack("<H")
        units = r.take(units_len).decode("utf-8")
        channels.append(Channel(name, None if level < 0 else level, units))
    lat = np.frombuffer(r.take(8 * h), dtype="<f8")
    lon = np.frombuffer(r.take(8 * w), dtype="<f8")
    payload = r.take(v * h * w * dtype.itemsize)
    (stored_crc,) = r.unpack("<I")
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CorruptFile("payload checksum mismatch")
    values = np.frombuffer(payload, dtype=dtype).reshape(v, h, w).astype(np.float64)
    if resolution_deg is None:
        resolution_deg = float(abs(lat[1] - lat[0])) if h > 1 else 1.0
    geometry = GridGeometry(lat, lon, resolution_deg)
    return FieldFrame(from_epoch_seconds(ts), values, VariableCatalog(tuple(channels)), geometry)


def write_frame(frame: FieldFrame, path, dtype: str = "float64") -> None:
    Path(path).write_bytes(encode_frame(frame, dtype=dtype))


def read_frame(path, resolution_deg: float | None = None) -> FieldFrame:
    return decode_frame(Path(path).read_bytes(), resolution_deg=resolution_deg)
