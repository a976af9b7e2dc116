"""Raster image values and lossless PNG / PPM (P6) file I/O."""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, "os.PathLike[str]"]

SUPPORTED_SUFFIXES = (".png", ".ppm")


class ImageError(Exception):
    """Base class for image I/O failures."""


class UnreadableImageError(ImageError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


class UnwritablePathError(ImageError):
    pass


class Color(NamedTuple):
    r: int
    g: int
    b: int

    @classmethod
    def of(cls, value) -> "Color":
        r, g, b = (int(v) for v in value)
        for v in (r, g, b):
            if not 0 <= v <= 255:
                raise ValueError(f"channel value {v} outside [0, 255]")
        return cls(r, g, b)


@dataclass(frozen=True, eq=False)
class RasterImage:
    """An RGB8 pixel grid stored as a read-only ``(height, width, 3)`` uint8 array.

    Equality compares dimensions and every pixel.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected (height, width, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise ValueError(f"pixel dtype must be integral, got {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise ValueError("pixel channel values must lie in [0, 255]")
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_rows(cls, width: int, height: int, pixels) -> "RasterImage":
        """Build from a flat row-major sequence of ``width * height`` RGB triples."""
        flat = np.asarray(pixels, dtype=np.int64)
        if flat.size != width * height * 3:
            raise ValueError(
                f"pixel array holds {flat.size // 3} triples, expected {width * height}"
            )
        return cls(flat.reshape(height, width, 3))

    @classmethod
    def filled(cls, width: int, height: int, color) -> "RasterImage":
        arr = np.empty((height, width, 3), dtype=np.uint8)
        arr[:] = Color.of(color)
        return cls(arr)

    def pixel(self, x: int, y: int) -> Color:
        return Color(*(int(v) for v in self.pixels[y, x]))

    def to_rows(self) -> list[tuple[int, int, int]]:
        return [tuple(int(c) for c in p) for p in self.pixels.reshape(-1, 3)]

    def copy_array(self) -> np.ndarray:
        """Writable copy of the pixel array, for building a derived image."""
        return np.array(self.pixels, copy=True)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"RasterImage(width={self.width}, height={self.height})"


# PPM P6 ------------------------------------------------------------------


def _ppm_header(data: bytes) -> tuple[int, int, int, int]:
    """Parse a P6 header; returns (width, height, maxval, offset of raster)."""
    fields: list[int] = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        # whitespace and comments between tokens
        while pos < n and (data[pos] in b" \t\r\n" or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < n and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos] in b"0123456789":
            pos += 1
        if start == pos:
            raise CorruptImageError("truncated or malformed PPM header")
        fields.append(int(data[start:pos]))
    if pos >= n or data[pos] not in b" \t\r\n":
        raise CorruptImageError("truncated or malformed PPM header")
    width, height, maxval = fields
    return width, height, maxval, pos + 1


def _decode_ppm(data: bytes) -> RasterImage:
    width, height, maxval, offset = _ppm_header(data)
    if width < 1 or height < 1:
        raise CorruptImageError(f"invalid PPM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"PPM maxval {maxval} not supported (only 255)")
    need = width * height * 3
    raster = data[offset:offset + need]
    if len(raster) < need:
        raise CorruptImageError(f"PPM raster truncated: {len(raster)} of {need} bytes")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return RasterImage(arr)


def _encode_ppm(image: RasterImage) -> bytes:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + image.pixels.tobytes()


# PNG ---------------------------------------------------------------------


def _composite_over_white(rgba: np.ndarray) -> np.ndarray:
    rgb = rgba[..., :3].astype(np.uint32)
    alpha = rgba[..., 3:4].astype(np.uint32)
    out = (rgb * alpha + 255 * (255 - alpha) + 127) // 255
    return out.astype(np.uint8)


def _decode_png(path: Path) -> RasterImage:
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I", "I;16", "I;16B", "F"):
                raise UnsupportedFormatError(f"PNG mode {im.mode} (16-bit) not supported")
            has_alpha = im.mode in ("RGBA", "LA", "PA") or (
                im.mode in ("P", "L", "RGB") and "transparency" in im.info
            )
            if has_alpha:
                arr = _composite_over_white(np.asarray(im.convert("RGBA")))
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, SyntaxError, ValueError, zlib.error) as exc:
        if isinstance(exc, ImageError):
            raise
        raise CorruptImageError(f"corrupt PNG stream in {path}: {exc}") from exc
    return RasterImage(arr)


# public API ----------------------------------------------------------------


def load_image(path: PathLike) -> RasterImage:
    """Decode a PNG or binary PPM file.

    Alpha, when present, is composited over opaque white. Raises
    :class:`UnreadableImageError`, :class:`UnsupportedFormatError` or
    :class:`CorruptImageError`.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise UnreadableImageError(f"cannot read {path}: {exc}") from exc
    if data[:2] == b"P6":
        return _decode_ppm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            return _decode_png(path)
        except UnidentifiedImageError as exc:
            raise CorruptImageError(f"corrupt PNG stream in {path}") from exc
    if data[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5", b"P7"):
        raise UnsupportedFormatError(f"{path}: only binary PPM (P6) is supported")
    if len(data) < 8 and b"\x89PNG\r\n\x1a\n".startswith(data) and data:
        raise CorruptImageError(f"{path}: truncated PNG signature")
    raise UnsupportedFormatError(f"{path}: not a PNG or P6 PPM file")


def save_image(image: RasterImage, path: PathLike) -> None:
    """Write ``image`` losslessly; the format follows the suffix (.png or .ppm)."""
    if not str(path):
        raise UnwritablePathError("empty output path")
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in SUPPORTED_SUFFIXES:
        raise UnsupportedFormatError(f"cannot write {path}: use .png or .ppm")
    try:
        if suffix == ".ppm":
            path.write_bytes(_encode_ppm(image))
        else:
            with open(path, "wb") as fh:
                Image.fromarray(np.ascontiguousarray(image.pixels)).save(
                    fh, format="PNG", optimize=False, compress_level=6
                )
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc
