"""Versioned binary container shared by dataset, statistics and checkpoint files.

Layout (all integers little-endian)::

    magic      8 bytes  b"LMRKBIN\\0"
    version    u32
    kind       u16 length + utf-8   ("dataset", "stats", "checkpoint")
    n_blocks   u32
    block*     name (u16 length + utf-8), type u8, payload

    type 0 array:  dtype u8 (0 float64, 1 int64), ndim u8, shape u64*ndim, raw data
    type 1 text:   u64 length + utf-8

Arrays are written in C order from their native little-endian buffers, so a
round trip reproduces every float bit for bit.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"LMRKBIN\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_CODES = {np.dtype("<f8"): 0, np.dtype("<i8"): 1}


class LoadError(Exception):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class VersionMismatchError(LoadError):
    pass


def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def encode(kind: str, blocks: dict[str, object]) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _name(kind), struct.pack("<I", len(blocks))]
    for name, value in blocks.items():
        parts.append(_name(name))
        if isinstance(value, str):
            b = value.encode("utf-8")
            parts.append(struct.pack("<BQ", 1, len(b)))
            parts.append(b)
            continue
        arr = np.asarray(value)
        if arr.dtype.kind in "iub":
            arr = arr.astype("<i8")
        elif arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        else:
            raise TypeError(f"block {name!r}: unsupported dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<BBB", 0, _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise LoadError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def name(self, what: str) -> str:
        (n,) = self.unpack("<H", what)
        return self.take(n, what).decode("utf-8")


def decode(buf: bytes, expect_kind: str | None = None) -> tuple[str, dict[str, object]]:
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise LoadError("bad magic bytes: not a landmark container", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, this build reads {VERSION}", 8)
    kind = r.name("kind")
    if expect_kind is not None and kind != expect_kind:
        raise LoadError(f"expected a {expect_kind!r} container, found {kind!r}", 12)
    (n_blocks,) = r.unpack("<I", "block count")
    blocks: dict[str, object] = {}
    for _ in range(n_blocks):
        start = r.pos
        name = r.name("block name")
        (btype,) = r.unpack("<B", f"type of block {name!r}")
        if btype == 1:
            (n,) = r.unpack("<Q", f"length of block {name!r}")
            blocks[name] = r.take(n, f"block {name!r}").decode("utf-8")
        elif btype == 0:
            code, ndim = r.unpack("<BB", f"header of block {name!r}")
            if code not in _DTYPES:
                raise LoadError(f"block {name!r}: unknown dtype code {code}", start)
            shape = r.unpack(f"<{ndim}Q", f"shape of block {name!r}")
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            raw = r.take(nbytes, f"data of block {name!r}")
            blocks[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
        else:
            raise LoadError(f"block {name!r}: unknown block type {btype}", start)
    if r.pos != len(buf):
        raise LoadError("trailing bytes after last block", r.pos)
    return kind, blocks


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save(path: str | Path, kind: str, blocks: dict[str, object]) -> None:
    atomic_write_bytes(path, encode(kind, blocks))


def load(path: str | Path, expect_kind: str | None = None) -> tuple[str, dict[str, object]]:
    return decode(Path(path).read_bytes(), expect_kind)
