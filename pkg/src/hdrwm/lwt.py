"""Single-level 2-D integer lifting wavelet transform (Haar and CDF(2,2) / LeGall 5/3).

Rows are transformed first (horizontal filtering), then columns, with
whole-sample symmetric extension at the borders. All rounding is floor
(arithmetic right shift), so ``lwt_inverse(lwt_forward(x)) == x`` exactly.

Band naming: the first letter is the horizontal filter, the second the
vertical one, so HL holds horizontal detail at vertical low-pass.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .errors import DimensionError

KERNELS = ("haar", "cdf22")
BANDS = ("ll", "hl", "lh", "hh")


@dataclass(frozen=True, eq=False)
class SubbandSet:
    ll: np.ndarray
    hl: np.ndarray
    lh: np.ndarray
    hh: np.ndarray
    kernel: str
    source_shape: Tuple[int, int]

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown or missing kernel tag {self.kernel!r}")
        shapes = {getattr(self, b).shape for b in BANDS}
        if len(shapes) != 1:
            raise DimensionError(f"sub-bands disagree in shape: {shapes}")
        for b in BANDS:
            object.__setattr__(self, b, np.asarray(getattr(self, b), dtype=np.int32))

    @property
    def band_shape(self):
        return self.ll.shape

    def band(self, name):
        return getattr(self, name.lower())

    def with_bands(self, **bands):
        return replace(self, **{k.lower(): v for k, v in bands.items()})

    def stack(self, names):
        """Selected bands as a (len(names), h, w) array (a copy)."""
        return np.stack([self.band(n) for n in names])


# 1-D lifting along the last axis; x has even length -----------------------


def _haar_fwd(x):
    even, odd = x[..., 0::2], x[..., 1::2]
    d = odd - even
    s = even + (d >> 1)
    return s, d


def _haar_inv(s, d):
    even = s - (d >> 1)
    odd = d + even
    return _interleave(even, odd)


def _next(a):
    """a[k+1] with symmetric extension a[n] = a[n-1] (x[N] mirrors to x[N-2])."""
    return np.concatenate([a[..., 1:], a[..., -1:]], axis=-1)


def _prev(a):
    """a[k-1] with symmetric extension a[-1] = a[0] (x[-1] mirrors to x[1])."""
    return np.concatenate([a[..., :1], a[..., :-1]], axis=-1)


def _cdf22_fwd(x):
    even, odd = x[..., 0::2], x[..., 1::2]
    d = odd - ((even + _next(even)) >> 1)
    s = even + ((_prev(d) + d + 2) >> 2)
    return s, d


def _cdf22_inv(s, d):
    even = s - ((_prev(d) + d + 2) >> 2)
    odd = d + ((even + _next(even)) >> 1)
    return _interleave(even, odd)


def _interleave(even, odd):
    out = np.empty(even.shape[:-1] + (2 * even.shape[-1],), dtype=even.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


_FWD = {"haar": _haar_fwd, "cdf22": _cdf22_fwd}
_INV = {"haar": _haar_inv, "cdf22": _cdf22_inv}


def lwt_forward(plane, kernel):
    """Forward transform of a 2-D integer plane.

    Odd dimensions are padded by symmetric reflection of the last interior
    row/column; ``source_shape`` records the original size.
    """
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    x = np.asarray(plane)
    if x.ndim != 2 or min(x.shape) < 2:
        raise DimensionError(f"plane must be 2-D and at least 2x2, got {x.shape}")
    if not np.issubdtype(x.dtype, np.integer):
        raise TypeError("lifting transform needs an integer plane")
    h, w = x.shape
    x = x.astype(np.int64)
    if h % 2 or w % 2:
        x = np.pad(x, ((0, h % 2), (0, w % 2)), mode="reflect")
    fwd = _FWD[kernel]
    lo, hi = fwd(x)                   # rows: horizontal low / high
    ll, lh = (a.T for a in fwd(lo.T))  # columns of the horizontal-low half
    hl, hh = (a.T for a in fwd(hi.T))
    return SubbandSet(ll, hl, lh, hh, kernel, (h, w))


def lwt_inverse(bands):
    if not isinstance(bands, SubbandSet) or bands.kernel not in KERNELS:
        raise ValueError("lwt_inverse needs a kernel-tagged SubbandSet")
    inv = _INV[bands.kernel]
    ll, hl, lh, hh = (bands.band(b).astype(np.int64) for b in BANDS)
    lo = inv(ll.T, lh.T).T
    hi = inv(hl.T, hh.T).T
    x = inv(lo, hi)
    h, w = bands.source_shape
    return x[:h, :w]
