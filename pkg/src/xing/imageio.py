"""Image file output: binary PPM (P6) as the verification format, plus a
minimal 8-bit RGB PNG (single zlib IDAT) for viewers that dislike PPM.

Images arrive as float arrays: RGB in [-1, 1] (the package's image
convention) or probability/heatmap grids in [0, 1] written as grayscale.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .tensor import ShapeError, Tensor

__all__ = ["to_bytes_rgb", "write_ppm", "read_ppm", "write_png",
           "gray_to_rgb", "heatmap_overview", "write_image"]


def _as_chw(img) -> np.ndarray:
    if isinstance(img, Tensor):
        img = img.data
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.broadcast_to(arr[None], (3,) + arr.shape)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"need [3,h,w] or [h,w] image data, got shape {arr.shape}")
    return arr


def to_bytes_rgb(img, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    """[3,h,w] floats in [lo,hi] -> [h,w,3] uint8, clipped then rounded."""
    arr = _as_chw(img)
    unit = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    return np.round(unit * 255.0).astype(np.uint8).transpose(1, 2, 0)


def gray_to_rgb(grid, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """[h,w] floats in [lo,hi] -> [3,h,w] floats in [-1,1] for writing."""
    arr = np.asarray(grid.data if isinstance(grid, Tensor) else grid, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"need an [h,w] grid, got shape {arr.shape}")
    unit = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    return np.broadcast_to(unit * 2.0 - 1.0, (3,) + arr.shape).copy()


def heatmap_overview(heatmaps) -> np.ndarray:
    """[18,h,w] joint heatmaps -> [3,h,w] max-projection image in [-1,1]."""
    arr = np.asarray(heatmaps.data if isinstance(heatmaps, Tensor) else heatmaps)
    if arr.ndim != 3:
        raise ShapeError(f"need [j,h,w] heatmaps, got shape {arr.shape}")
    return gray_to_rgb(arr.max(axis=0))


def write_ppm(path, img, lo: float = -1.0, hi: float = 1.0) -> None:
    pixels = to_bytes_rgb(img, lo, hi)
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a P6 file back to [3,h,w] floats in [-1,1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos] in b" \t\r\n":
            pos += 1
        if pos < len(raw) and raw[pos] == ord("#"):
            while pos < len(raw) and raw[pos] != ord("\n"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos] not in b" \t\r\n":
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # the single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported, got {maxval}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w * 3, offset=pos)
    arr = pixels.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64)
    return arr / 255.0 * 2.0 - 1.0


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    body = tag + payload
    return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))


def write_png(path, img, lo: float = -1.0, hi: float = 1.0) -> None:
    """Minimal 8-bit RGB PNG: IHDR + one zlib-compressed IDAT + IEND."""
    pixels = to_bytes_rgb(img, lo, hi)
    h, w, _ = pixels.shape
    # each scanline prefixed with filter type 0 (None)
    scanlines = np.concatenate([np.zeros((h, 1), dtype=np.uint8),
                                pixels.reshape(h, w * 3)], axis=1)
    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    with open(path, "wb") as fh:
        fh.write(b"\x89PNG\r\n\x1a\n")
        fh.write(_png_chunk(b"IHDR", ihdr))
        fh.write(_png_chunk(b"IDAT", zlib.compress(scanlines.tobytes(), 6)))
        fh.write(_png_chunk(b"IEND", b""))


def write_image(path, img, png: bool = False, lo: float = -1.0, hi: float = 1.0) -> None:
    """Write PPM always; with ``png`` also write a sibling .png file."""
    write_ppm(path, img, lo, hi)
    if png:
        write_png(Path(path).with_suffix(".png"), img, lo, hi)
