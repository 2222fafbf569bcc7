"""8-bit binary PGM (P5) and PPM (P6) files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def to_uint8(x) -> np.ndarray:
    """Map [0, 1] floats to 0..255 by rounding; values outside are clipped."""
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str | Path, img) -> None:
    """Write an (H, W) image; floats are taken as [0, 1], integers as 0..255."""
    a = np.asarray(img)
    if a.ndim != 2:
        raise ValueError(f"PGM needs an (H, W) image, got {a.shape}")
    data = a.astype(np.uint8) if a.dtype.kind in "iub" else to_uint8(a)
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]) + data.tobytes())


def write_ppm(path: str | Path, img) -> None:
    """Write a (3, H, W) or (H, W, 3) color image."""
    a = np.asarray(img)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[-1] != 3:
        a = np.moveaxis(a, 0, -1)
    if a.ndim != 3 or a.shape[-1] != 3:
        raise ValueError(f"PPM needs a color image, got {a.shape}")
    data = a.astype(np.uint8) if a.dtype.kind in "iub" else to_uint8(a)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (a.shape[1], a.shape[0]) + data.tobytes())


def _tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    out, pos = [], 0
    while len(out) < count:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        out.append(raw[start:pos])
    return out, pos + 1


def read_pnm(path: str | Path) -> np.ndarray:
    """Read P5/P6 as uint8: (H, W) for grayscale, (H, W, 3) for color."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        (magic, w, h, maxval), start = _tokens(raw, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed header") from exc
    if magic not in (b"P5", b"P6") or maxval != 255:
        raise DataError(f"{path}: only 8-bit P5/P6 are supported")
    chans = 3 if magic == b"P6" else 1
    n = w * h * chans
    body = np.frombuffer(raw, dtype=np.uint8, count=n, offset=start) if len(raw) >= start + n else None
    if body is None:
        raise DataError(f"{path}: truncated pixel data")
    return body.reshape((h, w, 3) if chans == 3 else (h, w)).copy()


def read_image(path: str | Path) -> np.ndarray:
    """Grayscale (H, W) or color (3, H, W) image scaled to [0, 1]."""
    a = read_pnm(path).astype(np.float64) / 255.0
    return np.moveaxis(a, -1, 0) if a.ndim == 3 else a
