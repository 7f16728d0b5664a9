"""Kernel dispatch: compiled Cython core when built, NumPy fallback otherwise.

Set ``HDRWM_FORCE_FALLBACK=1`` to use the fallback even when the extension
is importable (the benchmark and the equivalence tests do this per call via
the ``backend`` argument instead).
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and os.environ.get("HDRWM_FORCE_FALLBACK") != "1":
    BACKEND = "cython"
else:
    BACKEND = "numpy"

_RANGE_CUTOFF = 6.0  # range kernel truncated at 6 sigma
_LUT_SIZE = 4096


def _impl(backend):
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built")
        return _compiled
    if backend == "numpy":
        return _fallback
    raise ValueError(f"unknown backend {backend!r}")


def range_lut(sigma_r):
    """Range kernel table; the two trailing zeros make clamped taps drop out."""
    step = _RANGE_CUTOFF * sigma_r / (_LUT_SIZE - 3)
    x = np.arange(_LUT_SIZE - 2) * step
    lut = np.exp(-(x * x) / (2.0 * sigma_r * sigma_r))
    return np.concatenate([lut, [0.0, 0.0]]), step


def tap_offsets(sigma_s, stride=None):
    """Window tap positions: every ``stride`` pixels out to about 2 sigma."""
    if stride is None:
        stride = max(1, int(sigma_s // 4))
    half = max(1, int(np.ceil(2.0 * sigma_s / stride)))
    return np.arange(-half, half + 1, dtype=np.int64) * stride


def bilateral_filter(plane, sigma_s, sigma_r, stride=None, backend=None):
    """Bilateral filter of a 2-D float plane with symmetric borders.

    Every output pixel is a brute-force weighted sum over a square window of
    taps spaced ``stride`` pixels apart (default ``sigma_s // 4``, at least
    1) reaching about ``2 * sigma_s``. Range weights come from a linearly
    interpolated Gaussian table cut at 6 ``sigma_r``.
    """
    plane = np.asarray(plane, dtype=np.float64)
    offsets = tap_offsets(sigma_s, stride)
    radius = int(offsets[-1])
    # symmetric padding needs the pad narrower than the plane
    while radius >= min(plane.shape) and offsets.size > 3:
        offsets = offsets[1:-1]
        radius = int(offsets[-1])
    padded = np.pad(plane, radius, mode="symmetric")
    ax = offsets.astype(np.float64)
    spatial = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma_s * sigma_s))
    lut, step = range_lut(sigma_r)
    return _impl(backend).bilateral_filter(
        np.ascontiguousarray(padded), np.ascontiguousarray(spatial),
        np.ascontiguousarray(offsets), lut, float(step), radius,
    )


def fisher_yates(targets, backend=None):
    """Permutation of ``range(len(targets))`` given per-step swap targets.

    ``targets[i]`` must lie in ``[0, i]``; entry 0 is ignored.
    """
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    perm = np.arange(targets.shape[0], dtype=np.int64)
    _impl(backend).apply_swaps(perm, targets)
    return perm
