"""HDR <-> SDR conversion.

Two forward operators are provided:

* ``tonemap_exponent``: the shared-exponent formulas driven by ``tau``, kept
  verbatim (with their ``tau - 128`` exponent), including the overflow and
  saturation reporting that exponent calls for;
* ``tonemap_durand``: bilateral base/detail decomposition in log luminance,
  the default operator for the watermarking pipeline.

Both have inverses. The Durand inverse is pointwise once the base layer is
known, which makes ``forward(inverse(y)) == y`` exact for any 8-bit ``y``.
"""
from __future__ import annotations

import base64
import io
import math
import warnings
import zlib
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import (
    DegenerateInputError,
    InvalidImageError,
    MetadataError,
    ToneMapOverflowError,
)
from .imagecore import HdrImage, SdrImage

CHANNELS = {"R": 0, "G": 1, "B": 2}
GAMMA = 2.2


class ToneMapOverflowWarning(RuntimeWarning):
    """Literal shared-exponent operator saturated pixels outside the 8-bit range."""


# --------------------------------------------------------------------------
# literal shared-exponent operator


@dataclass(frozen=True)
class TauParam:
    tau: int

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 7:
            raise ValueError(f"tau must be an integer >= 7, got {self.tau}")


def compute_tau(image, channel):
    """ceil(log2(max(channel) + 128)) for channel in R, G, B."""
    peak = float(image.data[..., CHANNELS[channel]].max())
    return TauParam(int(math.ceil(math.log2(peak + 128.0))))


def compute_tau_global(image):
    """Largest per-channel tau; the single value carried by the watermark."""
    return TauParam(max(compute_tau(image, c).tau for c in CHANNELS))


def exponent_planes(image, tau):
    """Literal H' = floor(c*256 / 2**(tau-128)) and H'' = floor((H' + 0.5 + 2**(tau-128)) / 256).

    Computed in float64. Raises ToneMapOverflowError if an intermediate is
    not finite.
    """
    tau = tau.tau if isinstance(tau, TauParam) else int(tau)
    unit = math.ldexp(1.0, tau - 128)
    c = image.data.astype(np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        h1 = np.floor(c * 256.0 / unit)
        h2 = np.floor((h1 + 0.5 + unit) / 256.0)
    if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2))):
        raise ToneMapOverflowError(f"exponent tone map overflowed float64 at tau={tau}")
    return h1, h2


def tonemap_exponent(image, tau):
    """Literal shared-exponent operator: the SDR raster is H' clamped to [0, 255].

    Saturation (H' > 255) is reported through ToneMapOverflowWarning; with
    realistic tau nearly every non-zero sample saturates.
    """
    h1, _ = exponent_planes(image, tau)
    saturated = int(np.count_nonzero(h1 > 255))
    if saturated:
        warnings.warn(f"exponent tone map saturated {saturated} of {h1.size} samples",
                      ToneMapOverflowWarning, stacklevel=2)
    return SdrImage(np.clip(h1, 0, 255).astype(np.uint8), "RGB")


def _inverse_exponent(image, tau):
    unit = math.ldexp(1.0, tau.tau - 128)
    scale = 256.0 / unit
    out = (image.data.astype(np.float64) + 0.5) / scale
    return HdrImage(out.astype(np.float32))


# --------------------------------------------------------------------------
# Durand bilateral operator


@dataclass(frozen=True)
class DurandParams:
    """Bilateral TMO settings.

    ``spatial_sigma`` of None means 2% of the image diagonal. ``tap_stride``
    spaces the bilateral window taps (None: ``spatial_sigma // 4``).
    """

    spatial_sigma: Optional[float] = None
    range_sigma: float = 0.4
    target_contrast: float = math.log10(50.0)
    tap_stride: Optional[int] = None

    def __post_init__(self):
        for name in ("spatial_sigma", "range_sigma", "target_contrast"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be strictly positive, got {val}")
        if self.tap_stride is not None and self.tap_stride < 1:
            raise ValueError("tap_stride must be >= 1")

    def sigma_for(self, width, height):
        if self.spatial_sigma is not None:
            return float(self.spatial_sigma)
        return 0.02 * math.hypot(width, height)

    def to_dict(self):
        return {"spatial_sigma": self.spatial_sigma, "range_sigma": self.range_sigma,
                "target_contrast": self.target_contrast, "tap_stride": self.tap_stride}


@dataclass(frozen=True, eq=False)
class DurandMeta:
    """What the inverse needs: parameters, global stats, optionally the base layer.

    ``lum_norm`` is the luminance the input was divided by; ``base_min`` and
    ``base_max`` bound the bilateral base (log10 units). ``base`` is the
    per-pixel base layer, kept in memory only.
    """

    params: DurandParams
    lum_norm: float
    base_min: float
    base_max: float
    width: int
    height: int
    base: Optional[np.ndarray] = field(default=None, repr=False)

    def stats_only(self):
        return replace(self, base=None)

    def with_half_base(self):
        """Same metadata with the base rounded to float16, the precision it is stored at."""
        if self.base is None:
            return self
        return replace(self, base=self.base.astype(np.float16).astype(np.float64))

    def to_dict(self, include_base=False):
        d = {"operator": "durand", "params": self.params.to_dict(),
             "lum_norm": self.lum_norm, "base_min": self.base_min,
             "base_max": self.base_max, "width": self.width, "height": self.height}
        if include_base and self.base is not None:
            d["base_f16"] = encode_base(self.base)
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("operator") != "durand":
            raise MetadataError(f"not Durand metadata: operator={d.get('operator')!r}")
        try:
            meta = cls(DurandParams(**d["params"]), float(d["lum_norm"]), float(d["base_min"]),
                       float(d["base_max"]), int(d["width"]), int(d["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"malformed Durand metadata: {exc}") from exc
        if "base_f16" in d:
            base = decode_base(d["base_f16"])
            if base.shape != (meta.height, meta.width):
                raise MetadataError("stored base layer does not match the recorded size")
            meta = replace(meta, base=base)
        return meta


def encode_base(base):
    """float16 base layer as base64(zlib(.npy bytes)); deterministic."""
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(base, dtype="<f2"), allow_pickle=False)
    return base64.b64encode(zlib.compress(buf.getvalue(), 9)).decode("ascii")


def decode_base(text):
    try:
        raw = zlib.decompress(base64.b64decode(text))
        arr = np.load(io.BytesIO(raw), allow_pickle=False)
    except (ValueError, zlib.error, OSError) as exc:
        raise MetadataError(f"stored base layer is corrupt: {exc}") from exc
    if arr.ndim != 2 or arr.dtype != np.float16:
        raise MetadataError("stored base layer must be a 2-D float16 array")
    return arr.astype(np.float64)


def luminance(rgb):
    """Durand's luminance weighting (20R + 40G + B) / 61 on linear radiance."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return (20.0 * rgb[..., 0] + 40.0 * rgb[..., 1] + rgb[..., 2]) / 61.0


_LOG_FLOOR = 1e-8


def _log_lum(image, lum_norm):
    lum = luminance(image.data) / lum_norm
    return np.log10(np.maximum(lum, _LOG_FLOOR))


def durand_analyze(image, params=None, backend=None):
    """Run the bilateral decomposition and return the full DurandMeta (with base)."""
    params = params or DurandParams()
    lum_norm = float(luminance(image.data).max())
    if not lum_norm > 0:
        raise DegenerateInputError("image has no positive luminance")
    base = kernels.bilateral_filter(_log_lum(image, lum_norm),
                                    params.sigma_for(image.width, image.height),
                                    params.range_sigma, stride=params.tap_stride,
                                    backend=backend)
    return DurandMeta(params, lum_norm, float(base.min()), float(base.max()),
                      image.width, image.height, base)


def _gain(base, meta):
    """Per-pixel linear gain mapping normalized radiance to display radiance.

    Output log luminance is (base - base_max) * k + detail with detail =
    log L - base, so for chroma-preserving scaling the gain on each channel
    is 10 ** ((base - base_max) * k - base).
    """
    span = meta.base_max - meta.base_min
    k = 1.0 if span <= meta.params.target_contrast else meta.params.target_contrast / span
    return np.power(10.0, (base - meta.base_max) * k - base)


def durand_linear(image, params=None, meta=None, backend=None):
    """Display-referred linear RGB in [0, inf) before clipping and gamma."""
    if meta is None:
        meta = durand_analyze(image, params, backend=backend)
    elif meta.base is None:
        base = kernels.bilateral_filter(
            _log_lum(image, meta.lum_norm),
            meta.params.sigma_for(image.width, image.height),
            meta.params.range_sigma, stride=meta.params.tap_stride, backend=backend)
        meta = replace(meta, base=base)
    if meta.base.shape != (image.height, image.width):
        raise MetadataError("Durand base layer does not match image dimensions")
    rgb = image.data.astype(np.float64) / meta.lum_norm
    return rgb * _gain(meta.base, meta)[..., None], meta


def _encode_display(linear):
    v = np.power(np.clip(linear, 0.0, 1.0), 1.0 / GAMMA) * 255.0
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def tonemap_durand(image, params=None, meta=None, backend=None):
    """Durand-style bilateral tone mapping to 8-bit gamma-2.2 RGB.

    With ``meta`` the stored normalization and base range are reused (and
    the stored base layer too, when present), so a re-rendering of a
    modified HDR image lines up with the original one.
    """
    linear, _ = durand_linear(image, params, meta, backend=backend)
    return SdrImage(_encode_display(linear), "RGB")


def _inverse_durand(image, meta):
    if meta.base is None:
        raise MetadataError("Durand inverse needs the base layer (DurandMeta.base)")
    if meta.base.shape != (image.height, image.width):
        raise MetadataError("Durand base layer does not match image dimensions")
    linear = np.power(image.data.astype(np.float64) / 255.0, GAMMA)
    rgb = linear / _gain(meta.base, meta)[..., None] * meta.lum_norm
    out = rgb.astype(np.float32)
    if not np.all(np.isfinite(out)):
        raise InvalidImageError("Durand inverse left the float32 range")
    return HdrImage(out)


def inverse_tonemap(image, meta):
    """Invert either forward operator given the metadata it produced."""
    if image.colorspace != "RGB":
        raise MetadataError("inverse tone mapping expects an RGB image")
    if isinstance(meta, TauParam):
        return _inverse_exponent(image, meta)
    if isinstance(meta, DurandMeta):
        return _inverse_durand(image, meta)
    raise MetadataError(f"no inverse for metadata of type {type(meta).__name__}")
