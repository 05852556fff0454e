"""Netpbm PGM (P2/P5) and RAWF64 image files.

RAWF64 is a little-endian float64 dump in row-major order next to a JSON
sidecar ``<name>.json`` holding ``{"shape": [...], "dtype": "f64le"}``.
PGM pixel values are scaled to ``[0, 1]`` by ``maxval`` on read and
clipped and rounded on write.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["ImageFormatError", "read_image", "write_image", "read_pgm", "write_pgm",
           "read_rawf64", "write_rawf64"]


class ImageFormatError(ValueError):
    """Malformed or truncated image file; `offset` is the byte position."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        self.offset = offset
        self.path = path
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")


def _format_of(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        return fmt.lower()
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return "pgm"
    if suffix in (".raw", ".f64", ".rawf64"):
        return "rawf64"
    raise ValueError(f"cannot infer image format from {path.name!r}")


def read_image(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = _format_of(path, fmt)
    return read_pgm(path) if fmt == "pgm" else read_rawf64(path)


def write_image(path, img, fmt: str | None = None, **kw) -> None:
    path = Path(path)
    fmt = _format_of(path, fmt)
    if fmt == "pgm":
        write_pgm(path, img, **kw)
    else:
        write_rawf64(path, img)


def _tokens(data: bytes, count: int, path):
    """Read `count` whitespace-separated header tokens, skipping comments."""
    out = []
    pos = 0
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ImageFormatError("truncated header", pos, path)
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tok = data[start:pos]
        try:
            out.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"expected an integer, got {tok!r}", start, path) from None
    return out, pos


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 PGM file (8- or 16-bit) as floats in ``[0, 1]``."""
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"bad magic number {magic!r}, expected b'P2' or b'P5'", 0, path)
    (width, height, maxval), pos = _tokens(data[2:], 3, path)
    pos += 2
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad dimensions {width}x{height}", 2, path)
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"maxval {maxval} outside 1..65535", pos, path)
    count = width * height
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise ImageFormatError(
                f"truncated raster: need {need} bytes, have {len(data) - pos}", len(data), path
            )
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        vals, _ = _tokens(data[pos:], count, path) if count else ([], 0)
        raw = np.array(vals)
    if raw.max(initial=0) > maxval:
        raise ImageFormatError(f"sample exceeds maxval {maxval}", pos, path)
    return raw.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, img, maxval: int = 255, binary: bool = True) -> None:
    """Write a 2-D image in ``[0, 1]`` as PGM (P5 by default)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM holds 2-D images, got shape {img.shape}")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must lie in 1..65535")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64)
    h, w = img.shape
    header = f"{'P5' if binary else 'P2'}\n{w} {h}\n{maxval}\n".encode("ascii")
    if binary:
        body = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in q).encode("ascii") + b"\n"
    Path(path).write_bytes(header + body)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def write_rawf64(path, img) -> None:
    img = np.asarray(img, dtype=np.float64)
    path = Path(path)
    path.write_bytes(img.astype("<f8").tobytes(order="C"))
    _sidecar(path).write_text(json.dumps({"shape": list(img.shape), "dtype": "f64le"}))


def read_rawf64(path) -> np.ndarray:
    path = Path(path)
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(n) for n in meta["shape"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ImageFormatError(f"unreadable sidecar {side.name}: {exc}", None, path) from None
    if meta.get("dtype") != "f64le":
        raise ImageFormatError(f"unsupported dtype {meta.get('dtype')!r}", None, path)
    data = path.read_bytes()
    need = 8 * int(np.prod(shape))
    if len(data) != need:
        raise ImageFormatError(f"expected {need} bytes, found {len(data)}", min(len(data), need), path)
    return np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
