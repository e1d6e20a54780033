"""Grayscale image container, PGM/PNG codecs, quantization, padding and resizing.

All pixel data is held as float64 in [0, 1]. PGM is handled natively (P5, maxval
255 or 65535); PNG goes through Pillow but is restricted to 8-bit grayscale.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np


class ImageFormatError(ValueError):
    """Raised for malformed, truncated or unsupported image data."""


@dataclass(frozen=True)
class Image:
    """2D grayscale raster with values in [0, 1], stored row-major as (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be a non-empty 2D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @classmethod
    def from_array(cls, arr, clip: bool = False) -> "Image":
        arr = np.asarray(arr, dtype=np.float64)
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        return cls(arr)


@dataclass(frozen=True)
class QuantizedImage:
    codes: np.ndarray  # uint8, (height, width)
    levels: int = 256

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def height(self) -> int:
        return self.codes.shape[0]


@dataclass(frozen=True)
class CropRecord:
    height: int
    width: int


def _quantize(px: np.ndarray, maxval: int) -> np.ndarray:
    # round-half-up
    codes = np.floor(px * maxval + 0.5)
    return np.clip(codes, 0, maxval)


def quantize8(img: Image) -> QuantizedImage:
    return QuantizedImage(_quantize(img.pixels, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# PGM

_WS = b" \t\n\r\v\f"


def _parse_pgm_header(data: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, offset of first sample byte)."""
    if data[:2] != b"P5":
        raise ImageFormatError("not a binary PGM (magic P5 expected)")
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        if pos >= n:
            raise ImageFormatError("truncated PGM header")
        c = data[pos:pos + 1]
        if c in _WS and c:
            pos += 1
        elif c == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise ImageFormatError("truncated PGM header (unterminated comment)")
            pos = end + 1
        else:
            m = re.compile(rb"\d+").match(data, pos)
            if m is None:
                raise ImageFormatError(f"malformed PGM header near byte {pos}")
            end = m.end()
            if end < n and data[end:end + 1] not in _WS and data[end:end + 1] != b"#":
                raise ImageFormatError(f"malformed PGM header near byte {end}")
            fields.append(int(m.group()))
            pos = end
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or data[pos:pos + 1] not in _WS:
        raise ImageFormatError("missing whitespace after PGM maxval")
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError("PGM dimensions must be positive")
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (255 or 65535 only)")
    return width, height, maxval, pos


def _load_pgm(data: bytes) -> Image:
    width, height, maxval, off = _parse_pgm_header(data)
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = width * height * dtype.itemsize
    if len(data) - off < need:
        raise ImageFormatError(
            f"truncated PGM raster: need {need} bytes, have {len(data) - off}")
    codes = np.frombuffer(data, dtype=dtype, count=width * height, offset=off)
    return Image(codes.reshape(height, width).astype(np.float64) / maxval)


def _save_pgm(img: Image, bitdepth: int) -> bytes:
    maxval = 255 if bitdepth == 8 else 65535
    dtype = np.dtype("u1") if bitdepth == 8 else np.dtype(">u2")
    codes = _quantize(img.pixels, maxval).astype(dtype)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + codes.tobytes()


# ---------------------------------------------------------------------------
# PNG

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _load_png(data: bytes) -> Image:
    from PIL import Image as PILImage

    if data[:8] != _PNG_SIG or len(data) < 33 or data[12:16] != b"IHDR":
        raise ImageFormatError("not a PNG stream")
    bit_depth, color_type = data[24], data[25]
    if color_type != 0 or bit_depth != 8:
        raise ImageFormatError(
            f"unsupported PNG (bit depth {bit_depth}, color type {color_type}); "
            "only 8-bit grayscale without alpha is accepted")
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            im.load()
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageFormatError(f"corrupt PNG: {exc}") from exc
    return Image(arr.astype(np.float64) / 255.0)


def _save_png(img: Image) -> bytes:
    from PIL import Image as PILImage

    codes = _quantize(img.pixels, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(codes, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def load_image(data: bytes, format: str) -> Image:
    if format == "pgm":
        return _load_pgm(data)
    if format == "png":
        return _load_png(data)
    raise ValueError(f"unknown image format {format!r}")


def save_image(img: Image, format: str = "pgm", bitdepth: int = 8) -> bytes:
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    if format == "pgm":
        return _save_pgm(img, bitdepth)
    if format == "png":
        if bitdepth != 8:
            raise ValueError("PNG output is 8-bit only")
        return _save_png(img)
    raise ValueError(f"unknown image format {format!r}")


def format_from_path(path) -> str:
    suffix = str(path).rsplit(".", 1)[-1].lower()
    if suffix in ("pgm", "png"):
        return suffix
    raise ValueError(f"cannot infer image format from {path!r} (.pgm or .png)")


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        return load_image(fh.read(), format_from_path(path))


def write_image(path, img: Image, bitdepth: int = 8) -> None:
    data = save_image(img, format_from_path(path), bitdepth)
    with open(path, "wb") as fh:
        fh.write(data)


# ---------------------------------------------------------------------------
# geometry

def reflect_indices(n: int, before: int, after: int) -> np.ndarray:
    """Source index for each position of a reflect-padded axis (edge not repeated)."""
    return np.pad(np.arange(n), (before, after), mode="reflect")


def pad_reflect_to_multiple(img: Image, m: int) -> tuple[Image, CropRecord]:
    if m < 1:
        raise ValueError("m must be >= 1")
    h, w = img.shape
    ph = (-h) % m
    pw = (-w) % m
    if (ph and h < 2) or (pw and w < 2):
        raise ValueError(f"cannot reflect-pad a {w}x{h} image to a multiple of {m}")
    # pads wider than the image keep bouncing between the two edges
    out = np.pad(img.pixels, ((0, ph), (0, pw)), mode="reflect")
    return Image(out), CropRecord(h, w)


def crop(img: Image, record: CropRecord) -> Image:
    return Image(img.pixels[:record.height, :record.width])


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) linear-interpolation operator with half-pixel-centre alignment."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat


def resize_bilinear(img: Image, w: int, h: int) -> Image:
    if w < 1 or h < 1:
        raise ValueError("target size must be positive")
    if (h, w) == img.shape:
        return img
    rows = bilinear_matrix(img.height, h)
    cols = bilinear_matrix(img.width, w)
    out = rows @ img.pixels @ cols.T
    # convex weights keep the range; clip only guards rounding
    return Image(np.clip(out, img.pixels.min(), img.pixels.max()))
