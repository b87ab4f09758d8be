"""Float raster container and file I/O (SKYR binary format, 8-bit PNG)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import MagicMismatch, ShapeMismatch, TruncatedFile, UnsupportedPng

_SKYR_MAGIC = b"SKYR1\n"


@dataclass
class RasterF32:
    """H x W x C float32 raster with an optional per-pixel validity mask.

    ``valid`` is None for fully-valid rasters; ``valid_mask()`` always
    returns a concrete H x W boolean array.
    """

    data: np.ndarray
    valid: np.ndarray | None = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim == 2:
            d = d[:, :, None]
        if d.ndim != 3:
            raise ShapeMismatch(f"raster data must be HxWxC, got shape {d.shape}")
        self.data = np.ascontiguousarray(d)
        if self.valid is not None:
            v = np.asarray(self.valid, dtype=bool)
            if v.shape != d.shape[:2]:
                raise ShapeMismatch(f"mask shape {v.shape} != raster {d.shape[:2]}")
            self.valid = v

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def valid_mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.data.shape[:2], dtype=bool)
        return self.valid

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c]

    def copy(self) -> "RasterF32":
        return RasterF32(self.data.copy(), None if self.valid is None else self.valid.copy())


def same_shape(a: RasterF32, b: RasterF32, channels: bool = True):
    if (a.height, a.width) != (b.height, b.width) or (channels and a.channels != b.channels):
        raise ShapeMismatch(
            f"raster shapes differ: {a.data.shape} vs {b.data.shape}"
        )


def save_raster(raster: RasterF32, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        _save_png(raster, path)
        return
    with open(path, "wb") as f:
        f.write(_SKYR_MAGIC)
        f.write(f"{raster.height} {raster.width} {raster.channels}\n".encode("ascii"))
        f.write(raster.data.astype("<f4").tobytes())
        if raster.valid is not None:
            f.write(b"MASK\n")
            f.write(raster.valid.astype(np.uint8).tobytes())


def load_raster(path: str | os.PathLike) -> RasterF32:
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        return _load_png(path)
    with open(path, "rb") as f:
        magic = f.read(len(_SKYR_MAGIC))
        if magic != _SKYR_MAGIC:
            raise MagicMismatch(f"{path}: not a SKYR file")
        header = b""
        while not header.endswith(b"\n"):
            ch = f.read(1)
            if not ch:
                raise TruncatedFile(f"{path}: truncated header")
            header += ch
        try:
            h, w, c = (int(t) for t in header.split())
        except ValueError as e:
            raise TruncatedFile(f"{path}: malformed header {header!r}") from e
        n = h * w * c
        buf = f.read(4 * n)
        if len(buf) != 4 * n:
            raise TruncatedFile(f"{path}: expected {4 * n} data bytes, got {len(buf)}")
        data = np.frombuffer(buf, dtype="<f4").reshape(h, w, c)
        valid = None
        tag = f.read(5)
        if tag == b"MASK\n":
            mbuf = f.read(h * w)
            if len(mbuf) != h * w:
                raise TruncatedFile(f"{path}: truncated mask")
            valid = np.frombuffer(mbuf, dtype=np.uint8).reshape(h, w).astype(bool)
        elif tag:
            raise TruncatedFile(f"{path}: trailing bytes after data")
    return RasterF32(data.copy(), valid)


def _load_png(path: str) -> RasterF32:
    img = Image.open(path)
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float32)[:, :, None]
    elif img.mode == "RGB":
        arr = np.asarray(img, dtype=np.float32)
    else:
        raise UnsupportedPng(f"{path}: unsupported PNG mode {img.mode!r} (need L or RGB)")
    return RasterF32(arr / 255.0)


def _save_png(raster: RasterF32, path: str) -> None:
    arr = np.clip(raster.data, 0.0, 1.0)
    q = np.round(arr * 255.0).astype(np.uint8)
    if raster.channels == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path)
    elif raster.channels == 3:
        Image.fromarray(q, mode="RGB").save(path)
    else:
        raise UnsupportedPng(f"cannot write {raster.channels}-channel raster as PNG")
