"""Binary video dump format.

Layout: 8 ASCII magic bytes "OURO0001", a uint32 little-endian header
length, that many bytes of JSON ({dtype, shape, config_hash, seed}), then
raw little-endian float32 frames in [frame, channel, row, col] order.
Everything is fixed-endian so equal runs produce equal bytes on any host.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DumpFormatError

MAGIC = b"OURO0001"
DTYPE = "f32le"


@dataclass(frozen=True)
class VideoDump:
    path: Path
    header: dict
    frames: np.ndarray  # float32 [n, c, h, w]

    @property
    def shape(self):
        return tuple(self.header["shape"])


def write_dump(path, frames, config_hash: str, seed: int) -> VideoDump:
    """Serialize frames [n,c,h,w] to `path`; returns the parsed handle."""
    frames = np.ascontiguousarray(np.asarray(frames), dtype="<f4")
    if frames.ndim != 4:
        raise DumpFormatError(f"frames must be [n,c,h,w], got {frames.shape}")
    header = {
        "dtype": DTYPE,
        "shape": list(frames.shape),
        "config_hash": config_hash,
        "seed": int(seed),
    }
    blob = json.dumps(header, sort_keys=True).encode("ascii")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(frames.tobytes())
    return VideoDump(path=path, header=header, frames=frames)


def read_dump(path) -> VideoDump:
    """Parse a dump file, validating magic, header, and payload length."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise DumpFormatError(f"{path}: bad magic bytes, not a video dump")
    if len(raw) < 12:
        raise DumpFormatError(f"{path}: truncated header length field")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise DumpFormatError(f"{path}: truncated JSON header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DumpFormatError(f"{path}: unreadable header ({e})") from e
    for key in ("dtype", "shape", "config_hash", "seed"):
        if key not in header:
            raise DumpFormatError(f"{path}: header missing '{key}'")
    if header["dtype"] != DTYPE:
        raise DumpFormatError(f"{path}: unsupported dtype {header['dtype']!r}")
    shape = tuple(int(s) for s in header["shape"])
    if len(shape) != 4:
        raise DumpFormatError(f"{path}: shape {shape} is not [n,c,h,w]")
    payload = raw[12 + hlen:]
    want = int(np.prod(shape)) * 4
    if len(payload) != want:
        raise DumpFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {want}"
        )
    frames = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return VideoDump(path=path, header=header, frames=frames)


def frame_stats(dump: VideoDump):
    """Per-frame (min, max, mean, std) rows for inspection output."""
    rows = []
    for k, frame in enumerate(dump.frames):
        f64 = frame.astype(np.float64)
        rows.append((k, float(f64.min()), float(f64.max()),
                     float(f64.mean()), float(f64.std())))
    return rows
