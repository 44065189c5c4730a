"""Little-endian binary containers for waveforms, samples and checkpoints.

Layouts::

    AEWF  magic, u32 version=1, f64 sample_rate, u64 count, count x f32
    AESM  magic, u32 version=1, u32 H, u32 W, f32 label_x, f32 label_y,
          4*H*W x f32 (channel-major, row-major)
    AESL  magic, u32 version=1, u32 tensor_count, then per tensor
          u16 name_len, utf-8 name, u8 rank, rank x u64 dims, f64 data
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

WAVEFORM_MAGIC = b"AEWF"
SAMPLE_MAGIC = b"AESM"
CHECKPOINT_MAGIC = b"AESL"
VERSION = 1


def _check_header(buf: bytes, magic: bytes, path) -> int:
    if len(buf) < 8 or buf[:4] != magic:
        raise FormatError(f"{path}: bad magic, expected {magic.decode()}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return 8


def write_waveform(path: str | Path, waveform) -> None:
    samples = np.asarray(waveform.samples, dtype="<f4")
    head = struct.pack("<4sIdQ", WAVEFORM_MAGIC, VERSION, float(waveform.sample_rate), samples.size)
    Path(path).write_bytes(head + samples.tobytes())


def read_waveform(path: str | Path):
    from .sim import Waveform

    buf = Path(path).read_bytes()
    off = _check_header(buf, WAVEFORM_MAGIC, path)
    if len(buf) < off + 16:
        raise FormatError(f"{path}: truncated header")
    rate, count = struct.unpack_from("<dQ", buf, off)
    off += 16
    if len(buf) != off + 4 * count:
        raise FormatError(f"{path}: expected {count} samples")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
    return Waveform(rate, data.astype(np.float64))


def write_sample(path: str | Path, channels: np.ndarray, label: tuple[float, float]) -> None:
    channels = np.asarray(channels)
    if channels.ndim != 3 or channels.shape[0] != 4:
        raise FormatError("sample channels must have shape (4, H, W)")
    _, h, w = channels.shape
    head = struct.pack("<4sIIIff", SAMPLE_MAGIC, VERSION, h, w, label[0], label[1])
    Path(path).write_bytes(head + np.ascontiguousarray(channels, dtype="<f4").tobytes())


def read_sample(path: str | Path) -> tuple[np.ndarray, tuple[float, float]]:
    buf = Path(path).read_bytes()
    off = _check_header(buf, SAMPLE_MAGIC, path)
    if len(buf) < off + 16:
        raise FormatError(f"{path}: truncated header")
    h, w, lx, ly = struct.unpack_from("<IIff", buf, off)
    off += 16
    n = 4 * h * w
    if len(buf) != off + 4 * n:
        raise FormatError(f"{path}: expected {n} channel values")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(4, h, w)
    return data.astype(np.float64), (float(lx), float(ly))


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    parts = [struct.pack("<4sII", CHECKPOINT_MAGIC, VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    off = _check_header(buf, CHECKPOINT_MAGIC, path)
    try:
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}Q", buf, off)
            off += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if off + 8 * size > len(buf):
                raise FormatError(f"{path}: truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims).copy()
            off += 8 * size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes after last tensor")
    return out
