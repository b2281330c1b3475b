"""Matrix files: dimensioned CSV and PGM (P2/P5, 8/16-bit)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = [
    "read_csv",
    "read_matrix",
    "read_pgm",
    "write_csv",
    "write_json",
    "write_mask_pgm",
    "write_pgm",
    "write_preview_pgm",
]


def write_csv(path, grid):
    """First line ``rows,cols``; then one line per row at 17 significant digits."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("expected a 2-D grid")
    lines = [f"{grid.shape[0]},{grid.shape[1]}"]
    lines += [",".join(format(v, ".17g") for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path):
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError(f"{path}: empty file")
    try:
        rows, cols = (int(v) for v in text[0].split(","))
        values = [float(v) for line in text[1:] for v in line.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed matrix CSV ({exc})") from None
    if len(values) != rows * cols:
        raise ValueError(f"{path}: header says {rows}x{cols} but found {len(values)} values")
    return np.array(values, dtype=float).reshape(rows, cols)


def _pgm_tokens(data, count):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos


def read_pgm(path, normalize=True):
    """Read a PGM image.

    With ``normalize`` pixel ``v`` becomes ``(v + 1) / (maxval + 1)``, which
    lies in ``(0, 1]`` and keeps the log link defined.
    """
    data = Path(path).read_bytes()
    (magic, width, height, maxval), pos = _pgm_tokens(data, 4)
    width, height, maxval = int(width), int(height), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid maxval {maxval}")
    if magic == "P5":
        dtype = ">u2" if maxval > 255 else "u1"
        raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos + 1)
    elif magic == "P2":
        raw = np.array(data[pos:].split()[: width * height], dtype=np.int64)
        if raw.size != width * height:
            raise ValueError(f"{path}: expected {width * height} pixels")
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    pixels = raw.reshape(height, width).astype(np.int64)
    if not normalize:
        return pixels
    return (pixels + 1.0) / (maxval + 1.0)


def write_pgm(path, pixels, maxval=None, binary=True):
    pixels = np.asarray(pixels, dtype=np.int64)
    maxval = int(pixels.max()) if maxval is None else int(maxval)
    maxval = max(maxval, 1)
    if pixels.min() < 0 or pixels.max() > maxval or maxval > 65535:
        raise ValueError("pixel values out of range for PGM")
    height, width = pixels.shape
    header = f"{'P5' if binary else 'P2'}\n{width} {height}\n{maxval}\n".encode("ascii")
    if binary:
        body = pixels.astype(">u2" if maxval > 255 else "u1").tobytes()
    else:
        body = ("\n".join(" ".join(str(v) for v in row) for row in pixels) + "\n").encode("ascii")
    Path(path).write_bytes(header + body)


def write_mask_pgm(path, bits):
    """Bilevel mask: background 0, detections 255."""
    bits = bits.bits if hasattr(bits, "bits") else np.asarray(bits, dtype=bool)
    write_pgm(path, np.where(bits, 255, 0), maxval=255)


def write_preview_pgm(path, grid):
    """8-bit linear preview scaled to the grid maximum."""
    grid = np.asarray(grid, dtype=float)
    top = grid.max() if grid.max() > 0 else 1.0
    write_pgm(path, np.round(255 * grid / top).astype(np.int64), maxval=255)


def read_matrix(path, normalize_pgm=True):
    """Dispatch on content: PGM magic bytes, otherwise dimensioned CSV."""
    path = Path(path)
    head = path.read_bytes()[:2]
    if head in (b"P2", b"P5"):
        return read_pgm(path, normalize=normalize_pgm)
    return read_csv(path)


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
