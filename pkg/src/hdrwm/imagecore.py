"""Raster containers, file I/O, BT.601 colour conversion and bicubic resampling.

Arrays are stored row-major as ``(height, width[, 3])`` and frozen after
construction, so images can be shared freely between threads.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import (
    ColorspaceError,
    DimensionError,
    FormatError,
    ImageIOError,
    InvalidImageError,
)

KINDS = ("hdr-rgbe", "pfm", "png", "pbm")
_EXT_KIND = {".hdr": "hdr-rgbe", ".rgbe": "hdr-rgbe", ".pic": "hdr-rgbe",
             ".pfm": "pfm", ".png": "png", ".pbm": "pbm"}


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    if arr.flags.writeable and arr.base is not None:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HdrImage:
    """Linear-light RGB radiance, float32, all samples finite and >= 0."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidImageError(f"HdrImage needs (h, w, 3) data, got {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise InvalidImageError(f"HdrImage must be at least 2x2, got {arr.shape[:2]}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidImageError("HdrImage samples must be finite and >= 0")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class SdrImage:
    """8-bit three-plane raster tagged ``RGB`` or ``YCbCr``."""

    data: np.ndarray
    colorspace: str = "RGB"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if self.colorspace not in ("RGB", "YCbCr"):
            raise ColorspaceError(f"unknown colorspace tag {self.colorspace!r}")
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidImageError(f"SdrImage needs (h, w, 3) data, got {arr.shape}")
        if arr.shape[0] < 2 or arr.shape[1] < 2:
            raise InvalidImageError(f"SdrImage must be at least 2x2, got {arr.shape[:2]}")
        if arr.dtype != np.uint8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise InvalidImageError(f"SdrImage needs integer samples, got {arr.dtype}")
            if arr.min() < 0 or arr.max() > 255:
                raise InvalidImageError("SdrImage samples must lie in [0, 255]")
        object.__setattr__(self, "data", _frozen(arr.astype(np.uint8, copy=True)))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BitImage:
    """Binary plane, one uint8 0/1 per pixel."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise InvalidImageError(f"BitImage needs 2-D data, got {arr.shape}")
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise InvalidImageError("BitImage elements must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(arr.astype(np.uint8, copy=True)))

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]


# --------------------------------------------------------------------------
# file I/O


def _kind_for(path, kind):
    if kind is None:
        kind = _EXT_KIND.get(os.path.splitext(str(path))[1].lower())
        if kind is None:
            raise FormatError(f"cannot infer image format from {path!r}")
    if kind not in KINDS:
        raise FormatError(f"unsupported format {kind!r}; expected one of {KINDS}")
    return kind


def _read_bytes(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise ImageIOError(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, payload):
    try:
        with open(path, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def _check_dims(width, height):
    if width <= 0 or height <= 0:
        raise FormatError(f"invalid image dimensions {width}x{height}")


def load_image(path, kind=None):
    """Read ``path`` as HdrImage (hdr-rgbe, pfm), SdrImage (png) or BitImage (pbm)."""
    kind = _kind_for(path, kind)
    raw = _read_bytes(path)
    if kind == "pfm":
        return HdrImage(_decode_pfm(raw))
    if kind == "hdr-rgbe":
        return HdrImage(_decode_rgbe(raw))
    if kind == "pbm":
        return BitImage(_decode_pbm(raw))
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            arr = np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise FormatError(f"{path}: not a readable PNG ({exc})") from exc
    _check_dims(arr.shape[1], arr.shape[0])
    return SdrImage(arr, "RGB")


def load_gray(path):
    """Read an 8-bit grayscale raster (PNG or PGM) as a 2-D uint8 array."""
    raw = _read_bytes(path)
    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            arr = np.asarray(im.convert("L"))
    except Exception as exc:
        raise FormatError(f"{path}: not a readable grayscale image ({exc})") from exc
    return arr.copy()


def save_image(image, path, kind=None):
    kind = _kind_for(path, kind)
    if kind in ("pfm", "hdr-rgbe"):
        if not isinstance(image, HdrImage):
            raise FormatError(f"{kind} stores HdrImage, got {type(image).__name__}")
        payload = _encode_pfm(image.data) if kind == "pfm" else _encode_rgbe(image.data)
    elif kind == "pbm":
        if not isinstance(image, BitImage):
            raise FormatError(f"pbm stores BitImage, got {type(image).__name__}")
        payload = encode_pbm(image.bits)
    else:
        if not isinstance(image, SdrImage) or image.colorspace != "RGB":
            raise FormatError("png stores RGB SdrImage only")
        buf = io.BytesIO()
        Image.fromarray(np.asarray(image.data), "RGB").save(buf, format="PNG")
        payload = buf.getvalue()
    _write_bytes(path, payload)


def _header_lines(raw, count):
    """Split the first ``count`` newline-terminated lines off ``raw``."""
    lines, pos = [], 0
    for _ in range(count):
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated header")
        lines.append(raw[pos:end].decode("ascii", errors="replace").strip())
        pos = end + 1
    return lines, pos


def _decode_pfm(raw):
    (ident, dims, scale), pos = _header_lines(raw, 3)
    if ident == "Pf":
        channels = 1
    elif ident == "PF":
        channels = 3
    else:
        raise FormatError(f"bad PFM identifier {ident!r}")
    try:
        width, height = (int(v) for v in dims.split())
        scale = float(scale)
    except ValueError as exc:
        raise FormatError(f"bad PFM header: {dims!r} / {scale!r}") from exc
    _check_dims(width, height)
    if scale == 0:
        raise FormatError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    body = raw[pos:pos + 4 * count]
    if len(body) != 4 * count:
        raise FormatError("PFM payload shorter than header dimensions")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width, channels)
    arr = arr[::-1].astype(np.float32)  # stored bottom row first
    if channels == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr


def _encode_pfm(data):
    h, w, _ = data.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()


def _decode_rgbe(raw):
    if not raw.startswith(b"#?"):
        raise FormatError("missing Radiance #? signature")
    pos = 0
    fmt = None
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated Radiance header")
        line = raw[pos:end].strip()
        pos = end + 1
        if not line:
            break
        if line.startswith(b"FORMAT="):
            fmt = line[7:].decode("ascii", errors="replace")
    if fmt not in (None, "32-bit_rle_rgbe"):
        raise FormatError(f"unsupported Radiance pixel format {fmt!r}")
    end = raw.find(b"\n", pos)
    if end < 0:
        raise FormatError("missing Radiance resolution line")
    parts = raw[pos:end].split()
    pos = end + 1
    if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
        raise FormatError(f"unsupported Radiance orientation {raw[pos:end]!r}")
    try:
        height, width = int(parts[1]), int(parts[3])
    except ValueError as exc:
        raise FormatError("bad Radiance resolution line") from exc
    _check_dims(width, height)

    body = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    pixels = np.empty((height, width, 4), dtype=np.uint8)
    p = 0
    for y in range(height):
        if p + 4 > body.size:
            raise FormatError("Radiance scanline data truncated")
        b0, b1, b2, b3 = body[p:p + 4]
        if 8 <= width < 32768 and b0 == 2 and b1 == 2 and not (b2 & 0x80):
            if (int(b2) << 8 | int(b3)) != width:
                raise FormatError("Radiance RLE scanline width mismatch")
            p += 4
            for c in range(4):
                x = 0
                while x < width:
                    if p >= body.size:
                        raise FormatError("Radiance RLE data truncated")
                    n = int(body[p])
                    p += 1
                    if n > 128:
                        n -= 128
                        if x + n > width or p >= body.size:
                            raise FormatError("Radiance RLE run overflows scanline")
                        pixels[y, x:x + n, c] = body[p]
                        p += 1
                    else:
                        if n == 0 or x + n > width or p + n > body.size:
                            raise FormatError("Radiance RLE literal overflows scanline")
                        pixels[y, x:x + n, c] = body[p:p + n]
                        p += n
                    x += n
        else:
            need = 4 * width
            if p + need > body.size:
                raise FormatError("Radiance flat scanline truncated")
            pixels[y] = body[p:p + need].reshape(width, 4)
            p += need
    return rgbe_to_float(pixels)


def rgbe_to_float(pixels):
    """Decode RGBE bytes: (mantissa + 0.5) / 256 * 2**(exponent - 128); exponent 0 is black."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    exp = pixels[..., 3].astype(np.int32)
    scale = np.ldexp(1.0 / 256.0, exp - 128)
    out = (pixels[..., :3].astype(np.float64) + 0.5) * scale[..., None]
    out[exp == 0] = 0.0
    return out.astype(np.float32)


def float_to_rgbe(data):
    data = np.asarray(data, dtype=np.float64)
    peak = data.max(axis=-1)
    _, exp = np.frexp(peak)
    exp = np.clip(exp, -127, 127)
    mant = np.floor(data * np.ldexp(256.0, -exp)[..., None])
    out = np.zeros(data.shape[:-1] + (4,), dtype=np.uint8)
    live = peak >= 1e-32
    out[..., :3] = np.where(live[..., None], np.clip(mant, 0, 255), 0).astype(np.uint8)
    out[..., 3] = np.where(live, exp + 128, 0).astype(np.uint8)
    return out


def _encode_rgbe(data):
    h, w, _ = data.shape
    header = (f"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n").encode("ascii")
    # flat scanlines: the peak channel mantissa is >= 128, so no row can be
    # mistaken for an RLE marker (2, 2, b<128)
    return header + float_to_rgbe(data).tobytes()


def _decode_pbm(raw):
    magic = raw[:2]
    if magic not in (b"P4", b"P1"):
        raise FormatError(f"bad PBM magic {magic!r}")
    tokens, pos = [], 2
    while len(tokens) < 2:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError("truncated PBM header")
        if raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    try:
        width, height = int(tokens[0]), int(tokens[1])
    except ValueError as exc:
        raise FormatError("bad PBM dimensions") from exc
    _check_dims(width, height)
    pos += 1  # single whitespace before raster
    if magic == b"P4":
        stride = (width + 7) // 8
        body = np.frombuffer(raw, dtype=np.uint8, count=stride * height, offset=pos) \
            if len(raw) - pos >= stride * height else None
        if body is None:
            raise FormatError("PBM raster truncated")
        bits = np.unpackbits(body.reshape(height, stride), axis=1)[:, :width]
        return bits
    digits = [c for c in raw[pos:].decode("ascii", errors="replace") if c in "01"]
    if len(digits) < width * height:
        raise FormatError("PBM raster truncated")
    return np.array(digits[:width * height], dtype=np.uint8).reshape(height, width)


def encode_pbm(bits):
    bits = np.asarray(bits, dtype=np.uint8)
    h, w = bits.shape
    return f"P4\n{w} {h}\n".encode("ascii") + np.packbits(bits, axis=1).tobytes()


def decode_pbm(payload):
    return BitImage(_decode_pbm(payload))


# --------------------------------------------------------------------------
# colour

# BT.601 full range
_YCC = np.array([[0.299, 0.587, 0.114],
                 [-0.168736, -0.331264, 0.5],
                 [0.5, -0.418688, -0.081312]])
_YCC_INV = np.array([[1.0, 0.0, 1.402],
                     [1.0, -0.344136, -0.714136],
                     [1.0, 1.772, 0.0]])


def _round_u8(x):
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def rgb_to_ycbcr_float(rgb):
    """Unrounded BT.601 full-range YCbCr of an (..., 3) RGB array."""
    ycc = np.asarray(rgb, dtype=np.float64) @ _YCC.T
    ycc[..., 1:] += 128.0
    return ycc


def ycbcr_to_rgb_float(ycc):
    ycc = np.array(ycc, dtype=np.float64)
    ycc[..., 1:] -= 128.0
    return ycc @ _YCC_INV.T


def rgb_to_ycbcr(image):
    if image.colorspace != "RGB":
        raise ColorspaceError(f"expected RGB image, got {image.colorspace}")
    return SdrImage(_round_u8(rgb_to_ycbcr_float(image.data)), "YCbCr")


def ycbcr_to_rgb(image):
    if image.colorspace != "YCbCr":
        raise ColorspaceError(f"expected YCbCr image, got {image.colorspace}")
    return SdrImage(_round_u8(ycbcr_to_rgb_float(image.data)), "RGB")


def luma(image):
    """8-bit luma plane (int32) of an SdrImage in either colorspace."""
    if image.colorspace == "YCbCr":
        return image.data[..., 0].astype(np.int32)
    return _round_u8(rgb_to_ycbcr_float(image.data)[..., 0]).astype(np.int32)


def _luma_of(rgb):
    return _round_u8(rgb_to_ycbcr_float(rgb)[..., 0]).astype(np.int64)


def rgb_with_luma(rgb, target):
    """uint8 RGB close to ``rgb`` whose 8-bit luma equals ``target`` exactly.

    Adding the same integer to R, G and B moves luma by exactly that integer
    and leaves chroma alone; pixels where that clips are repaired by a small
    search, with neutral grey as the last resort.
    """
    rgb = np.asarray(rgb, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64)
    if target.min(initial=0) < 0 or target.max(initial=0) > 255:
        raise InvalidImageError("target luma outside [0, 255]")
    shift = target - _luma_of(rgb)
    out = np.clip(rgb + shift[..., None], 0, 255)
    bad = np.nonzero(_luma_of(out) != target)
    if bad[0].size:
        cand = out[bad]
        want = target[bad]
        fixed = np.zeros(want.shape[0], dtype=bool)
        best = np.repeat(want[:, None], 3, axis=1)  # grey fallback
        steps = range(-3, 4)
        offsets = sorted(((a, b, c) for a in steps for b in steps for c in steps),
                         key=lambda o: (abs(o[0]) + abs(o[1]) + abs(o[2]), o))
        for off in offsets:
            trial = np.clip(cand + np.array(off), 0, 255)
            hit = ~fixed & (_luma_of(trial) == want)
            best[hit] = trial[hit]
            fixed |= hit
            if fixed.all():
                break
        out[bad] = best
    return out.astype(np.uint8)


# --------------------------------------------------------------------------
# resampling

CUBIC_A = -0.5  # Catmull-Rom


def cubic_kernel(x, a=CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _cubic_taps(n_in, n_out):
    """Source indices (n_out, 4) and weights for pixel-centre aligned resampling."""
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    weights = cubic_kernel(src[:, None] - idx)
    return np.clip(idx, 0, n_in - 1), weights


def _resample_axis(arr, n_out, axis):
    idx, wts = _cubic_taps(arr.shape[axis], n_out)
    out = None
    for k in range(4):
        taken = np.take(arr, idx[:, k], axis=axis)
        shape = [1] * arr.ndim
        shape[axis] = n_out
        term = taken * wts[:, k].reshape(shape)
        out = term if out is None else out + term
    return out


def resize_array(arr, new_width, new_height):
    """Separable Catmull-Rom resampling of a 2-D or (h, w, c) float array."""
    arr = np.asarray(arr, dtype=np.float64)
    out = arr
    if arr.shape[0] != new_height:
        out = _resample_axis(out, new_height, 0)
    if arr.shape[1] != new_width:
        out = _resample_axis(out, new_width, 1)
    return out


def resize_cubic(image, new_width, new_height):
    """Bicubic (Catmull-Rom, a=-0.5) resize; results clamped to the type's range."""
    if new_width < 2 or new_height < 2:
        raise DimensionError(f"target size {new_width}x{new_height} is below 2x2")
    if isinstance(image, SdrImage):
        if (image.width, image.height) == (new_width, new_height):
            return image
        out = resize_array(image.data, new_width, new_height)
        return SdrImage(_round_u8(out), image.colorspace)
    if isinstance(image, HdrImage):
        if (image.width, image.height) == (new_width, new_height):
            return image
        out = resize_array(image.data, new_width, new_height)
        return HdrImage(np.maximum(out, 0.0).astype(np.float32))
    raise TypeError(f"resize_cubic expects HdrImage or SdrImage, got {type(image).__name__}")


def resize_nearest(bits, new_width, new_height):
    """Nearest-neighbour resize of a 2-D array (used for binary masks)."""
    bits = np.asarray(bits)
    h, w = bits.shape
    rows = np.minimum(((np.arange(new_height) + 0.5) * h / new_height).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(new_width) + 0.5) * w / new_width).astype(np.int64), w - 1)
    return bits[rows[:, None], cols[None, :]]


__all__ = [
    "HdrImage", "SdrImage", "BitImage", "KINDS", "load_image", "load_gray", "save_image",
    "rgb_to_ycbcr", "ycbcr_to_rgb", "rgb_to_ycbcr_float", "ycbcr_to_rgb_float", "luma",
    "resize_cubic", "resize_array", "resize_nearest", "cubic_kernel", "rgbe_to_float",
    "float_to_rgbe", "encode_pbm", "decode_pbm", "rgb_with_luma",
]
