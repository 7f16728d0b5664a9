"""Saliency maps, binary masks, and foreground/background segmentation.

The builtin detector is a classical colour-contrast map; any external
map (from a trained salient-object model, say) can be fed in instead as an
8-bit grayscale image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionError, InvalidImageError
from .imagecore import BitImage, SdrImage, resize_nearest, rgb_to_ycbcr_float

DEFAULT_THRESHOLD = 0.5
BCE_EPS = 1e-7
SMOOTHING_SIGMA = 3.0
NORM_PERCENTILE = 99.0


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidImageError("SaliencyMap must be 2-D")
        if not np.all(np.isfinite(arr)) or arr.min(initial=0) < 0 or arr.max(initial=0) > 1:
            raise InvalidImageError("SaliencyMap values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    threshold_used: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2 or (arr.size and not np.all((arr == 0) | (arr == 1))):
            raise InvalidImageError("BinaryMask must be a 2-D 0/1 array")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def shape(self):
        return self.bits.shape

    @classmethod
    def full(cls, height, width, value=1):
        return cls(np.full((height, width), value, dtype=np.uint8), float("nan"))


@dataclass(frozen=True, eq=False)
class SegmentPair:
    foreground: object
    background: object
    mask: BinaryMask


def _minmax(arr):
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo <= 0:
        return np.zeros_like(arr, dtype=np.float64)
    return (arr - lo) / (hi - lo)


def contrast_saliency(image, sigma=SMOOTHING_SIGMA, percentile=NORM_PERCENTILE):
    """Colour distance of the blurred image from its mean colour (YCbCr).

    Normalized by a high percentile rather than the maximum so that a few
    tiny, extreme pixels (light sources) do not wash out everything else.
    Constant input gives an all-zero map.
    """
    if image.colorspace == "YCbCr":
        ycc = image.data.astype(np.float64)
    else:
        ycc = rgb_to_ycbcr_float(image.data)
    smooth = np.stack([ndimage.gaussian_filter(ycc[..., c], sigma, mode="reflect")
                       for c in range(3)], axis=-1)
    dist = np.sqrt(np.sum((smooth - ycc.reshape(-1, 3).mean(axis=0)) ** 2, axis=-1))
    scale = float(np.percentile(dist, percentile))
    if scale <= 1e-9:
        return SaliencyMap(np.zeros(dist.shape))
    return SaliencyMap(np.clip(dist / scale, 0.0, 1.0))


def detect_saliency(image, source="builtin-contrast", external=None):
    """Saliency map for an SdrImage.

    ``source`` is ``"builtin-contrast"`` or ``"external-map"``; for the latter
    ``external`` is a 2-D array (8-bit or float) of the host's dimensions,
    rescaled to [0, 1] by dividing by 255 (integer input) or min-max (float).
    """
    if source == "builtin-contrast":
        return contrast_saliency(image)
    if source != "external-map":
        raise ValueError(f"unknown saliency source {source!r}")
    arr = np.asarray(external)
    if arr.ndim != 2:
        raise DimensionError("external saliency map must be 2-D")
    if arr.shape != (image.height, image.width):
        raise DimensionError(f"external map is {arr.shape[1]}x{arr.shape[0]}, "
                             f"host is {image.width}x{image.height}")
    if np.issubdtype(arr.dtype, np.integer):
        return SaliencyMap(arr.astype(np.float64) / 255.0)
    return SaliencyMap(_minmax(arr.astype(np.float64)))


def threshold_mask(smap, t=DEFAULT_THRESHOLD):
    """bit = 1 where value >= t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return BinaryMask((smap.values >= t).astype(np.uint8), float(t))


def _check_dims(shape, mask):
    if tuple(shape[:2]) != mask.shape:
        raise DimensionError(f"mask {mask.shape} does not match image {tuple(shape[:2])}")


def segment_host(image, mask):
    """Split an SdrImage into mask-selected foreground and complementary background."""
    _check_dims(image.data.shape, mask)
    m = mask.bits.astype(bool)[..., None]
    fg = np.where(m, image.data, 0).astype(np.uint8)
    bg = np.where(m, 0, image.data).astype(np.uint8)
    return SegmentPair(SdrImage(fg, image.colorspace), SdrImage(bg, image.colorspace), mask)


def fit_mask(mask, height, width):
    """Nearest-neighbour resize of a mask (identity when already the right size)."""
    if mask.shape == (height, width):
        return mask
    return BinaryMask(resize_nearest(mask.bits, width, height), mask.threshold_used)


def partition_watermark(w, mask):
    """W_f = W AND mask, W_b = W AND NOT mask (mask resized to W's dimensions)."""
    mask = fit_mask(mask, w.height, w.width)
    fg = w.bits & mask.bits
    bg = w.bits & (1 - mask.bits)
    return SegmentPair(BitImage(fg), BitImage(bg), mask)


def block_majority(mask, factor=2):
    """Downsample a binary mask by ``factor``: 1 where at least half the block is set."""
    bits = np.asarray(mask.bits if isinstance(mask, BinaryMask) else mask, dtype=np.int32)
    h, w = bits.shape
    hh, ww = -(-h // factor), -(-w // factor)
    padded = np.pad(bits, ((0, hh * factor - h), (0, ww * factor - w)), mode="edge")
    votes = padded.reshape(hh, factor, ww, factor).sum(axis=(1, 3))
    thr = getattr(mask, "threshold_used", DEFAULT_THRESHOLD)
    return BinaryMask((2 * votes >= factor * factor).astype(np.uint8), thr)


def bce_loss(pred, truth):
    """Mean binary cross-entropy -[g log S + (1-g) log(1-S)], S clamped to [eps, 1-eps]."""
    s = pred.values if isinstance(pred, SaliencyMap) else np.asarray(pred, dtype=np.float64)
    g = truth.bits if isinstance(truth, BinaryMask) else np.asarray(truth)
    if s.shape != g.shape:
        raise DimensionError(f"prediction {s.shape} and truth {g.shape} differ")
    s = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    g = g.astype(np.float64)
    return float(np.mean(-(g * np.log(s) + (1.0 - g) * np.log1p(-s))))
