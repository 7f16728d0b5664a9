"""Image quality (PSNR, SSIM) and watermark fidelity (NC, BER)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, DimensionError
from .imagecore import BitImage, SdrImage, luma

IDENTICAL = math.inf  # PSNR sentinel for zero MSE
DOMAINS = ("sdr-luma", "sdr-rgb")

SSIM_SIGMA = 1.5
SSIM_RADIUS = 5          # 11x11 window
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _planes(a, b, domain):
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}")
    if isinstance(a, SdrImage) and isinstance(b, SdrImage):
        if a.data.shape != b.data.shape:
            raise DimensionError(f"images differ in size: {a.data.shape} vs {b.data.shape}")
        if domain == "sdr-luma":
            return luma(a).astype(np.float64), luma(b).astype(np.float64)
        return a.data.astype(np.float64), b.data.astype(np.float64)
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"arrays differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b, domain="sdr-luma"):
    x, y = _planes(a, b, domain)
    return float(np.mean((x - y) ** 2))


def psnr(a, b, domain="sdr-luma", peak=255.0):
    """10 log10(peak^2 / MSE); IDENTICAL (inf) when the inputs match."""
    err = mse(a, b, domain)
    if err == 0:
        return IDENTICAL
    return 10.0 * math.log10(peak * peak / err)


def _ssim_map(x, y, data_range):
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def blur(v):
        return ndimage.gaussian_filter(v, SSIM_SIGMA, mode="reflect",
                                       truncate=SSIM_RADIUS / SSIM_SIGMA)

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))


def ssim(a, b, domain="sdr-luma", data_range=255.0):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5); borders excluded."""
    x, y = _planes(a, b, domain)
    if min(x.shape[:2]) < 2 * SSIM_RADIUS + 1:
        raise DimensionError("SSIM needs images of at least 11x11")
    if x.ndim == 3:
        return float(np.mean([ssim(x[..., c], y[..., c], data_range=data_range)
                              for c in range(x.shape[2])]))
    m = _ssim_map(x, y, data_range)
    r = SSIM_RADIUS
    return float(m[r:-r, r:-r].mean())


def _bits(w):
    return (w.bits if isinstance(w, BitImage) else np.asarray(w)).astype(np.float64)


def nc_raw(w, w_prime):
    """Pearson correlation of two bit images (signed)."""
    a, b = _bits(w), _bits(w_prime)
    if a.shape != b.shape:
        raise DimensionError(f"watermarks differ in shape: {a.shape} vs {b.shape}")
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(np.sum(da * da)) * float(np.sum(db * db)))
    if den == 0:
        raise DegenerateInputError("NC is undefined for a constant watermark")
    return float(np.sum(da * db)) / den


def nc(w, w_prime):
    """Pearson correlation clamped to [0, 1]."""
    return min(1.0, max(0.0, nc_raw(w, w_prime)))


def ber(w, w_prime):
    a, b = _bits(w), _bits(w_prime)
    if a.shape != b.shape:
        raise DimensionError(f"watermarks differ in shape: {a.shape} vs {b.shape}")
    return float(np.count_nonzero(a != b)) / a.size


@dataclass
class QualityReport:
    psnr_db: float
    ssim: float
    nc: Optional[float]
    nc_raw: Optional[float]
    ber: float
    domain: str = "sdr-luma"

    def to_dict(self):
        d = asdict(self)
        if self.psnr_db == IDENTICAL:
            d["psnr_db"] = "identical"
        return d


def _nc_or_none(w, w_prime):
    try:
        return nc(w, w_prime), nc_raw(w, w_prime)
    except DegenerateInputError:
        return None, None


def quality_report(host_sdr, marked_sdr, w, w_prime, domain="sdr-luma"):
    c, r = _nc_or_none(w, w_prime)
    return QualityReport(psnr(host_sdr, marked_sdr, domain), ssim(host_sdr, marked_sdr, domain),
                         c, r, ber(w, w_prime), domain)
