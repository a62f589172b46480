"""Self-describing binary tensor files (checkpoints and dataset images).

Layout, all integers little-endian::

    magic   b"FLGR"
    version uint32
    header  uint32 length + UTF-8 text (free-form, e.g. a config dump)
    count   uint32
    count x record:
        name  uint32 length + UTF-8
        ndim  uint32
        dims  ndim x uint64
        data  prod(dims) x float64 (row-major)
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"FLGR"
VERSION = 1


class FormatError(ValueError):
    pass


def _str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(tensors: Mapping[str, np.ndarray], header: str = "") -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _str(header), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        parts.append(_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated tensor file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def loads(buf: bytes) -> tuple[str, dict[str, np.ndarray]]:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise FormatError("bad magic")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    header = r.text()
    out: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.text()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last record")
    return header, out


def save(path, tensors: Mapping[str, np.ndarray], header: str = "") -> None:
    Path(path).write_bytes(dumps(tensors, header))


def load(path) -> tuple[str, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 image from floats in [0, 1], shape (H, W, 3)."""
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    h, w, _ = img.shape
    data = np.round(img * 255).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data)


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise FormatError("only binary P6 images are supported")
    w, h, maxval = (int(f) for f in fields[1:])
    pix = np.frombuffer(raw[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8)
    return pix.reshape(h, w, 3).astype(np.float64) / maxval
