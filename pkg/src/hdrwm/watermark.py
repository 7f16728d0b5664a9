"""Embedding and extraction: keyed permutation and sampling, QIM, tau sync.

Pipeline (embedding)::

    HDR --tone map--> SDR --resize 512--> saliency mask --> luma Y
      foreground bits -> CDF(2,2) sub-bands, background bits -> Haar sub-bands,
      tau -> Haar LL, all by QIM at keyed addresses
    Y' --luma-exact RGB--> SDR' --inverse tone map--> watermarked HDR

Each region is coded on a transform of the whole luma plane and only
coefficients inside that region's support (mask at sub-band resolution,
2x2 majority) are carriers. Because the two kernels overlap at region
borders, and clipping or re-rendering can nudge a coefficient, embedding
runs as a verify loop: it repeats until the rendered watermarked SDR image
decodes to exactly the payload.
"""
from __future__ import annotations

import base64
import json
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from . import tonemap as tm
from .errors import CapacityError, DimensionError, InvalidImageError, MetadataError
from .imagecore import (
    BitImage,
    HdrImage,
    SdrImage,
    decode_pbm,
    encode_pbm,
    luma,
    resize_array,
    resize_cubic,
    resize_nearest,
    rgb_with_luma,
)
from .keys import keyed_permutation
from .lwt import SubbandSet, lwt_forward, lwt_inverse
from .saliency import (
    BinaryMask,
    block_majority,
    detect_saliency,
    fit_mask,
    threshold_mask,
)

log = logging.getLogger(__name__)

WORK_SIZE = 512
SUBBANDS = ("HL", "LH", "HH")
QIM_VARIANTS = ("literal", "parity", "dither")
REGIONS = ("foreground", "background")
REGION_KERNEL = {"foreground": "cdf22", "background": "haar"}
TAU_KERNEL = "haar"
TAU_BITS = 8
SIDECAR_FORMAT = "hdrwm-sidecar"
SIDECAR_VERSION = 1

_PERM_TAG = {"foreground": "perm-f", "background": "perm-b"}
_SAMPLE_TAG = {"foreground": "sample-f", "background": "sample-b"}


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class EmbedParams:
    """Embedding knobs.

    ``alpha``/``beta`` scale the background/foreground quantization steps
    relative to ``delta_base`` (0.04 and 0.02 give exactly ``delta_base``).
    """

    delta_base: int = 8
    bitplane_n: int = 3
    alpha: float = 0.04
    beta: float = 0.02
    subband_choice: tuple = ("HL",)
    tau_redundancy: int = 16
    tau_delta: int = 24
    tau_tile: int = 2
    qim_variant: str = "dither"
    max_iterations: int = 8

    def __post_init__(self):
        choice = tuple(s.upper() for s in self.subband_choice)
        object.__setattr__(self, "subband_choice", choice)
        if int(self.delta_base) != self.delta_base or self.delta_base < 2:
            raise ValueError("delta_base must be an integer >= 2")
        if int(self.bitplane_n) != self.bitplane_n or not 0 <= self.bitplane_n < 31:
            raise ValueError("bitplane_n must be an integer in [0, 31)")
        for name in ("alpha", "beta"):
            val = getattr(self, name)
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if not choice or len(set(choice)) != len(choice) or not set(choice) <= set(SUBBANDS):
            raise ValueError(f"subband_choice must be a non-empty subset of {SUBBANDS}")
        if self.tau_redundancy < 3:
            raise ValueError("tau_redundancy must be >= 3")
        if self.tau_delta < 2:
            raise ValueError("tau_delta must be >= 2")
        if self.tau_tile < 1:
            raise ValueError("tau_tile must be >= 1")
        if self.qim_variant not in QIM_VARIANTS:
            raise ValueError(f"qim_variant must be one of {QIM_VARIANTS}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    @property
    def delta_f(self):
        return max(2, int(round(self.beta * self.delta_base / 0.02)))

    @property
    def delta_b(self):
        return max(2, int(round(self.alpha * self.delta_base / 0.04)))

    def delta_for(self, region):
        return self.delta_f if region == "foreground" else self.delta_b

    def to_dict(self):
        return {"delta_base": self.delta_base, "bitplane_n": self.bitplane_n,
                "alpha": self.alpha, "beta": self.beta,
                "subband_choice": list(self.subband_choice),
                "tau_redundancy": self.tau_redundancy, "tau_delta": self.tau_delta,
                "tau_tile": self.tau_tile,
                "qim_variant": self.qim_variant, "max_iterations": self.max_iterations}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "subband_choice" in d:
            d["subband_choice"] = tuple(d["subband_choice"])
        return cls(**d)


# --------------------------------------------------------------------------
# permutation and sampling


def permute_sequence(seq, key, tag, direction="forward"):
    seq = np.asarray(seq)
    perm = keyed_permutation(seq.shape[0], key, tag)
    if direction == "forward":
        return seq[perm]
    if direction == "inverse":
        out = np.empty_like(seq)
        out[perm] = seq
        return out
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def permute_bits(bits, key, direction="forward", tag="perm-f"):
    """Keyed Fisher-Yates permutation of the flattened bits of a BitImage."""
    flat = permute_sequence(bits.bits.ravel(), key, tag, direction)
    return BitImage(flat.reshape(bits.bits.shape))


@dataclass(frozen=True, eq=False)
class CarrierPlan:
    """Ordered carrier addresses; ``bands[i]`` indexes ``band_names``."""

    band_names: tuple
    bands: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    region: str

    def __len__(self):
        return int(self.rows.shape[0])

    def addresses(self):
        return [(self.band_names[b], int(r), int(c))
                for b, r, c in zip(self.bands, self.rows, self.cols)]


def band_mask_for(mask, band_shape):
    """The mask at sub-band resolution (2x2 majority from full resolution)."""
    if mask.shape == tuple(band_shape):
        return mask
    if (-(-mask.shape[0] // 2), -(-mask.shape[1] // 2)) == tuple(band_shape):
        return block_majority(mask, 2)
    raise DimensionError(f"mask {mask.shape} does not fit sub-bands {tuple(band_shape)}")


def region_support(band_mask, region):
    if region not in REGIONS:
        raise ValueError(f"region must be one of {REGIONS}")
    return band_mask.bits == (1 if region == "foreground" else 0)


def derive_carrier_plan(mask, region, bands, params, key, needed_bits):
    """Keyed shuffle of the region's eligible addresses; the first ``needed_bits`` are used."""
    shape = bands.band_shape if isinstance(bands, SubbandSet) else tuple(bands)
    support = np.flatnonzero(region_support(band_mask_for(mask, shape), region))
    names = params.subband_choice
    available = support.shape[0] * len(names)
    if needed_bits > available:
        raise CapacityError(needed_bits, available, region)
    chosen = keyed_permutation(available, key, _SAMPLE_TAG[region])[:needed_bits]
    band_idx, pos = np.divmod(chosen, max(support.shape[0], 1))
    rows, cols = np.divmod(support[pos], shape[1]) if support.size else (pos, pos)
    return CarrierPlan(names, band_idx.astype(np.int64), rows.astype(np.int64),
                       cols.astype(np.int64), region)


# --------------------------------------------------------------------------
# bit planes


def extract_bitplane(band, n):
    """Bit ``n`` of each coefficient magnitude."""
    if not 0 <= n < 31:
        raise ValueError("bit-plane index must lie in [0, 31)")
    mag = np.abs(np.asarray(band, dtype=np.int64))
    return BitImage(((mag >> n) & 1).astype(np.uint8))


def split_bitplanes(band, count=31):
    return [extract_bitplane(band, n) for n in range(count)]


def recombine(planes, sign):
    """Inverse of ``split_bitplanes``: magnitude from its planes, then the sign.

    ``sign`` is any array whose sign is applied (zero counts as positive).
    """
    mag = np.zeros(planes[0].bits.shape, dtype=np.int64)
    for n, plane in enumerate(planes):
        mag |= plane.bits.astype(np.int64) << n
    return np.where(np.asarray(sign) < 0, -mag, mag)


# --------------------------------------------------------------------------
# QIM


def _check_delta(delta):
    if int(delta) != delta or delta < 2:
        raise ValueError(f"quantization step must be an integer >= 2, got {delta}")


def qim_embed_array(phi, w, delta, variant="literal"):
    """Vectorized QIM on coefficient magnitudes with the sign restored.

    literal: q = floor(|phi| / delta); keep delta*q when q's parity equals
    w, else delta*q + 1.
    parity: move |phi| to the nearest multiple delta*k with k = w (mod 2).
    dither: move |phi| to the nearest delta*k + w*(delta // 2), so each bit
    keeps a lattice of spacing delta and the two lattices sit half a step apart.
    """
    _check_delta(delta)
    phi = np.asarray(phi, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    mag = np.abs(phi)
    q = mag // delta
    if variant == "literal":
        new = np.where(q % 2 == w, delta * q, delta * q + 1)
    elif variant == "parity":
        lo = np.where(q % 2 == w, q, q - 1)  # largest k <= q with k = w mod 2
        below = delta * lo
        above = delta * (lo + 2)
        # below may be negative (lo = -1 when w = 1, q = 0); never take it then
        take_above = (lo < 0) | (above - mag < mag - below)
        new = np.where(take_above, above, below)
    elif variant == "dither":
        off = w * (delta // 2)
        k = np.maximum((mag - off + delta // 2) // delta, 0)  # nearest, ties down
        new = delta * k + off
    else:
        raise ValueError(f"unknown QIM variant {variant!r}")
    return np.where(phi < 0, -new, new)


def qim_extract_array(phi_w, delta, variant="literal"):
    """Nearest-codeword decoding on magnitudes; ties go to the smaller codeword."""
    _check_delta(delta)
    mag = np.abs(np.asarray(phi_w, dtype=np.int64))
    q = mag // delta
    if variant == "parity":
        k = q + (mag - delta * q > delta * (q + 1) - mag)
        return (k % 2).astype(np.uint8)
    if variant == "dither":
        h = delta // 2
        r = mag - delta * q  # in [0, delta)
        # nearest of delta*q (0), delta*q + h (1), delta*(q+1) (0); ties to the smaller
        return ((np.abs(r - h) < r) & (np.abs(r - h) <= delta - r)).astype(np.uint8)
    if variant != "literal":
        raise ValueError(f"unknown QIM variant {variant!r}")
    best_d = np.full(mag.shape, np.iinfo(np.int64).max)
    best_bit = np.zeros(mag.shape, dtype=np.uint8)
    # candidates in increasing codeword order so that '<' keeps the smaller one on ties
    for dk in (-1, 0, 1):
        k = q + dk
        for off, bit in ((0, k % 2), (1, 1 - k % 2)):
            dist = np.where(k >= 0, np.abs(mag - (delta * k + off)), np.iinfo(np.int64).max)
            better = dist < best_d
            best_d = np.where(better, dist, best_d)
            best_bit = np.where(better, bit, best_bit).astype(np.uint8)
    return best_bit


def qim_embed_ranked(phi, w, delta, variant, rank):
    """QIM embedding with a per-coefficient fallback rank.

    Rank 0 is ``qim_embed_array``. Rank r > 0 picks the r-th nearest other
    codeword carrying the same bit (ties toward the smaller magnitude); the
    embedder uses it for carriers that clipping keeps from their first choice.
    """
    phi = np.asarray(phi, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    rank = np.asarray(rank, dtype=np.int64)
    out = qim_embed_array(phi, w, delta, variant)
    alt = rank > 0
    if not alt.any():
        return out
    p, ww, rr, std = phi[alt], w[alt], rank[alt], np.abs(out[alt])
    mag = np.abs(p)
    k = (mag // delta)[:, None] + np.arange(-4, 5)[None, :]
    if variant == "literal":
        cand = np.concatenate([delta * k, delta * k + 1], axis=1)
        label = np.concatenate([k % 2, 1 - k % 2], axis=1)
    elif variant == "dither":
        cand = np.concatenate([delta * k, delta * k + delta // 2], axis=1)
        label = np.concatenate([np.zeros_like(k), np.ones_like(k)], axis=1)
    else:
        cand, label = delta * k, k % 2
    ok = (cand >= 0) & (label == ww[:, None]) & (cand != std[:, None])
    dist = np.abs(cand - mag[:, None])
    order_key = np.where(ok, 2 * dist + (cand > mag[:, None]), np.iinfo(np.int64).max)
    order = np.argsort(order_key, axis=1, kind="stable")
    # near zero fewer alternatives exist; fall back to the farthest valid one
    idx = np.minimum(np.minimum(rr - 1, 3), ok.sum(axis=1) - 1)
    col = np.take_along_axis(order, np.maximum(idx, 0)[:, None], axis=1)
    pick = np.where(idx >= 0, np.take_along_axis(cand, col, axis=1)[:, 0], std)
    out = out.copy()
    out[alt] = np.where(p < 0, -pick, pick)
    return out


def qim_embed(phi, w, delta, variant="literal"):
    return int(qim_embed_array(np.array([phi]), np.array([w]), delta, variant)[0])


def qim_extract(phi_w, delta, variant="literal"):
    return int(qim_extract_array(np.array([phi_w]), delta, variant)[0])


# --------------------------------------------------------------------------
# tau in LL


def tau_bits(tau):
    tau = tau.tau if isinstance(tau, tm.TauParam) else int(tau)
    if not 0 <= tau < 2 ** TAU_BITS:
        raise ValueError(f"tau {tau} does not fit in {TAU_BITS} bits")
    return np.array([(tau >> (TAU_BITS - 1 - i)) & 1 for i in range(TAU_BITS)], dtype=np.uint8)


def tau_tiles(shape, key, redundancy, tile=1):
    """Keyed LL tiles for tau: a (8*redundancy, tile*tile) array of flat indices.

    Row ``i*r + j`` is vote j for tau bit i (MSB first). Tiles are aligned,
    non-overlapping ``tile`` x ``tile`` blocks of the LL plane.
    """
    if tile < 1:
        raise ValueError("tau tile must be >= 1")
    th, tw = int(shape[0]) // tile, int(shape[1]) // tile
    needed = TAU_BITS * redundancy
    if needed > th * tw:
        raise CapacityError(needed, th * tw, "LL")
    slots = keyed_permutation(th * tw, key, "tau")[:needed]
    sr, sc = np.divmod(slots, tw)
    dr, dc = np.divmod(np.arange(tile * tile), tile)
    rows = sr[:, None] * tile + dr[None, :]
    cols = sc[:, None] * tile + dc[None, :]
    return rows * int(shape[1]) + cols


def _tau_read(ll_flat, tiles, delta, variant):
    t2 = tiles.shape[1]
    return qim_extract_array(ll_flat[tiles].sum(axis=1), delta * t2, variant)


def _tau_write(ll_flat, tiles, bits, delta, variant, rank=None):
    """QIM on each tile's sum (step ``delta`` per coefficient), spread evenly over the tile."""
    t2 = tiles.shape[1]
    sums = ll_flat[tiles].sum(axis=1)
    if rank is None:
        rank = np.zeros(sums.shape[0], dtype=np.int64)
    diff = qim_embed_ranked(sums, bits, delta * t2, variant, rank) - sums
    q, r = np.divmod(diff, t2)
    add = q[:, None] + (np.arange(t2)[None, :] < r[:, None])
    out = ll_flat.copy()
    out[tiles] += add
    return out


def embed_tau(ll, tau, delta, key, redundancy, variant="literal", tile=1):
    """Write tau's 8 bits, each ``redundancy`` times, into keyed LL tiles."""
    ll = np.asarray(ll, dtype=np.int64)
    tiles = tau_tiles(ll.shape, key, redundancy, tile)
    bits = np.repeat(tau_bits(tau), redundancy)
    return _tau_write(ll.ravel(), tiles, bits, delta, variant).reshape(ll.shape)


@dataclass(frozen=True)
class TauReading:
    tau: Optional[int]
    ones: tuple      # votes for 1, per bit
    valid: tuple     # non-erased votes, per bit

    @property
    def ok(self):
        return self.tau is not None


def extract_tau(ll, delta, key, redundancy, variant="literal", erased=None, tile=1):
    """Majority vote per tau bit; erased tiles (all LL entries flagged) do not vote.

    ``tau`` is None when any bit has no valid vote or a tied vote.
    """
    ll = np.asarray(ll, dtype=np.int64)
    tiles = tau_tiles(ll.shape, key, redundancy, tile)
    votes = _tau_read(ll.ravel(), tiles, delta, variant).reshape(TAU_BITS, redundancy)
    valid = np.ones_like(votes, dtype=bool)
    if erased is not None:
        gone = np.asarray(erased).ravel()[tiles].all(axis=1)
        valid = ~gone.reshape(TAU_BITS, redundancy)
    ones = (votes.astype(bool) & valid).sum(axis=1)
    n = valid.sum(axis=1)
    decided = (n > 0) & (2 * ones != n)
    tau = None
    if decided.all():
        bits = (2 * ones > n).astype(int)
        tau = int(sum(b << (TAU_BITS - 1 - i) for i, b in enumerate(bits)))
    return TauReading(tau, tuple(int(v) for v in ones), tuple(int(v) for v in n))


# --------------------------------------------------------------------------
# sidecar metadata


@dataclass(frozen=True, eq=False)
class WatermarkMetadata:
    key_fingerprint: str
    params: EmbedParams
    tau: int
    tmo: dict
    host_width: int
    host_height: int
    watermark_width: int
    watermark_height: int
    mask: BinaryMask
    saliency: dict
    mode: str = "saliency"

    def to_dict(self):
        return {
            "format": SIDECAR_FORMAT, "version": SIDECAR_VERSION,
            "key_fingerprint": self.key_fingerprint, "params": self.params.to_dict(),
            "tau": self.tau, "tmo": self.tmo, "mode": self.mode,
            "host": {"width": self.host_width, "height": self.host_height},
            "watermark": {"width": self.watermark_width, "height": self.watermark_height},
            "work_size": WORK_SIZE, "saliency": self.saliency,
            "mask_pbm_base64": base64.b64encode(encode_pbm(self.mask.bits)).decode("ascii"),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != SIDECAR_FORMAT:
            raise MetadataError("not an hdrwm sidecar")
        if d.get("version") != SIDECAR_VERSION:
            raise MetadataError(f"unsupported sidecar version {d.get('version')}")
        try:
            mask_bits = decode_pbm(base64.b64decode(d["mask_pbm_base64"])).bits
            return cls(d["key_fingerprint"], EmbedParams.from_dict(d["params"]), int(d["tau"]),
                       dict(d["tmo"]), int(d["host"]["width"]), int(d["host"]["height"]),
                       int(d["watermark"]["width"]), int(d["watermark"]["height"]),
                       BinaryMask(mask_bits, float(d["saliency"].get("threshold", "nan"))),
                       dict(d["saliency"]), d.get("mode", "saliency"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MetadataError(f"malformed sidecar: {exc}") from exc

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise MetadataError(f"sidecar is not JSON: {exc}") from exc

    def tmo_meta(self):
        op = self.tmo.get("operator")
        if op == "durand":
            return tm.DurandMeta.from_dict(self.tmo)
        if op == "exponent":
            return tm.TauParam(int(self.tmo["tau"]))
        raise MetadataError(f"unknown tone-mapping operator {op!r}")


def render_sdr(hdr, tmo_meta, backend=None):
    """Tone map with the operator, statistics and base layer recorded at embedding time.

    Reusing the host's base layer (instead of filtering the watermarked image
    again) is what makes the rendering of the watermarked HDR image exact.
    """
    if isinstance(tmo_meta, tm.TauParam):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", tm.ToneMapOverflowWarning)
            return tm.tonemap_exponent(hdr, tmo_meta)
    return tm.tonemap_durand(hdr, meta=tmo_meta, backend=backend)


# --------------------------------------------------------------------------
# pipeline


def work_luma(image):
    """Luma of the image at working resolution (int64)."""
    work = resize_cubic(image, WORK_SIZE, WORK_SIZE)
    return luma(work).astype(np.int64)


@dataclass(frozen=True, eq=False)
class _Layout:
    """Everything key- and mask-derived that embedding and extraction share."""

    params: EmbedParams
    band_mask: BinaryMask
    wm_mask: np.ndarray          # partition mask at watermark resolution
    plans: dict                  # region -> CarrierPlan
    tau_tiles: np.ndarray        # (votes, tile*tile) flat LL indices


def _layout(mask, wm_shape, params, key):
    band_shape = (WORK_SIZE // 2, WORK_SIZE // 2)
    band_mask = band_mask_for(mask, band_shape)
    wm_mask = fit_mask(band_mask, wm_shape[1], wm_shape[0]).bits
    plans = {}
    for region, sel in (("foreground", 1), ("background", 0)):
        needed = int(np.count_nonzero(wm_mask == sel))
        plans[region] = derive_carrier_plan(band_mask, region, band_shape, params, key, needed)
    tiles = tau_tiles(band_shape, key, params.tau_redundancy, params.tau_tile)
    return _Layout(params, band_mask, wm_mask, plans, tiles)


def _payload(w, layout, key):
    """Permuted in-support bits of W_f = W & S and W_b = W & ~S."""
    out = {}
    for region, sel in (("foreground", 1), ("background", 0)):
        seg = w.bits[layout.wm_mask == sel]
        out[region] = permute_sequence(seg, key, _PERM_TAG[region], "forward")
    return out


def _write_plan(bands, plan, bits, delta, variant, rank):
    if len(plan) == 0:
        return bands
    new = {}
    for b, name in enumerate(plan.band_names):
        sel = plan.bands == b
        if not sel.any():
            continue
        coeffs = bands.band(name).astype(np.int64)
        r, c = plan.rows[sel], plan.cols[sel]
        mags = np.abs(coeffs)
        mags[r, c] = np.abs(qim_embed_ranked(coeffs[r, c], bits[sel], delta, variant, rank[sel]))
        # reassemble from bit planes, the sign of the original coefficient kept
        new[name] = recombine(split_bitplanes(mags), coeffs)
    return bands.with_bands(**new)


def _read_plan(bands, plan, delta, variant):
    out = np.zeros(len(plan), dtype=np.uint8)
    for b, name in enumerate(plan.band_names):
        sel = plan.bands == b
        if sel.any():
            vals = bands.band(name)[plan.rows[sel], plan.cols[sel]]
            out[sel] = qim_extract_array(vals, delta, variant)
    return out


def _ll_tau_write(bands, tiles, bits, delta, variant, rank):
    ll = _tau_write(bands.ll.astype(np.int64).ravel(), tiles, bits, delta, variant, rank)
    return bands.with_bands(ll=ll.reshape(bands.ll.shape))


def _decode_plane(y, layout, erased=None):
    """Per-carrier decoded bits of a working-resolution luma plane."""
    p = layout.params
    v = p.qim_variant
    out = {}
    fg = layout.plans["foreground"]
    if len(fg):
        out["foreground"] = _read_plan(lwt_forward(y, REGION_KERNEL["foreground"]), fg, p.delta_f, v)
    else:
        out["foreground"] = np.zeros(0, dtype=np.uint8)
    hb = lwt_forward(y, TAU_KERNEL)
    bg = layout.plans["background"]
    if len(bg):
        bgb = hb if REGION_KERNEL["background"] == TAU_KERNEL else lwt_forward(y, REGION_KERNEL["background"])
        out["background"] = _read_plan(bgb, bg, p.delta_b, v)
    else:
        out["background"] = np.zeros(0, dtype=np.uint8)
    out["tau"] = _tau_read(hb.ll.astype(np.int64).ravel(), layout.tau_tiles, p.tau_delta, v)
    out["ll"] = hb.ll
    return out


def _mismatches(decoded, payload, tau_payload):
    return (int(np.count_nonzero(decoded["foreground"] != payload["foreground"]))
            + int(np.count_nonzero(decoded["background"] != payload["background"]))
            + int(np.count_nonzero(decoded["tau"] != tau_payload)))


_MAX_RANK = 4


def _embed_plane(y, layout, payload, tau_payload, ranks, rounds=6):
    """QIM-code every carrier of a luma plane, repeating until the plane decodes.

    ``ranks`` (region -> int array, updated in place) escalates carriers that
    keep failing, usually because clipping at 0 or 255 blocks their codeword.
    """
    p = layout.params
    v = p.qim_variant
    cur = np.asarray(y, dtype=np.int64)
    for rnd in range(rounds):
        fg = layout.plans["foreground"]
        if len(fg):
            bands = lwt_forward(cur, REGION_KERNEL["foreground"])
            bands = _write_plan(bands, fg, payload["foreground"], p.delta_f, v, ranks["foreground"])
            cur = np.clip(lwt_inverse(bands), 0, 255)
        bands = lwt_forward(cur, REGION_KERNEL["background"])
        bands = _write_plan(bands, layout.plans["background"], payload["background"], p.delta_b,
                            v, ranks["background"])
        bands = _ll_tau_write(bands, layout.tau_tiles, tau_payload, p.tau_delta, v, ranks["tau"])
        cur = np.clip(lwt_inverse(bands), 0, 255)
        decoded = _decode_plane(cur, layout)
        # early failures are mostly crosstalk between the two kernels; only
        # carriers that survive a couple of passes get a different codeword
        if rnd < 2:
            if _mismatches(decoded, payload, tau_payload) == 0:
                break
        elif _escalate(cur, decoded, payload, tau_payload, ranks, layout) == 0:
            break
    return cur


def _clipped_near(y, layout):
    """Per-carrier flags: does the carrier's pixel support touch 0 or 255?"""
    clipped = (y <= 0) | (y >= 255)
    near = ndimage.maximum_filter(clipped, size=7, mode="nearest")[::2, ::2]
    out = {}
    for name in REGIONS:
        plan = layout.plans[name]
        out[name] = near[plan.rows, plan.cols] if len(plan) else np.zeros(0, dtype=bool)
    out["tau"] = near.ravel()[layout.tau_tiles].any(axis=1)
    return out


def _escalate(y, decoded, payload, tau_payload, ranks, layout):
    """Count failing carriers; bump the fallback rank of those next to clipped pixels."""
    near = _clipped_near(y, layout)
    bad_total = 0
    for name, want in (("foreground", payload["foreground"]),
                       ("background", payload["background"]), ("tau", tau_payload)):
        bad = decoded[name] != want
        bump = bad & near[name]
        ranks[name][bump] = np.minimum(ranks[name][bump] + 1, _MAX_RANK)
        bad_total += int(np.count_nonzero(bad))
    return bad_total


def _with_luma(sdr, y_work_old, y_work_new):
    """SDR image whose working-resolution luma moves from old to new."""
    rgb = sdr.data
    if (sdr.width, sdr.height) == (WORK_SIZE, WORK_SIZE):
        target = y_work_new
    else:
        delta = resize_array((y_work_new - y_work_old).astype(np.float64), sdr.width, sdr.height)
        target = np.clip(np.floor(luma(sdr) + delta + 0.5), 0, 255).astype(np.int64)
    return SdrImage(rgb_with_luma(rgb, target), "RGB")


@dataclass(frozen=True, eq=False)
class EmbedResult:
    hdr: HdrImage
    metadata: WatermarkMetadata
    sdr: SdrImage            # rendering of ``hdr`` with the recorded operator
    host_sdr: SdrImage       # rendering of the unmarked host
    iterations: int
    residual_errors: int     # carriers still wrong in ``sdr`` (0 on success)

    def __iter__(self):
        yield self.hdr
        yield self.metadata


def _host_mask(work, saliency_source, external, threshold, uniform):
    if uniform:
        return BinaryMask.full(WORK_SIZE, WORK_SIZE)
    if saliency_source == "external-map":
        ext = np.asarray(external)
        if ext.ndim != 2:
            raise DimensionError("external saliency map must be 2-D")
        ext = resize_nearest(ext, WORK_SIZE, WORK_SIZE)
        smap = detect_saliency(work, "external-map", ext)
    else:
        smap = detect_saliency(work, saliency_source)
    return threshold_mask(smap, threshold)


def embed_watermark(host, w, key, params=None, saliency_source="builtin-contrast",
                    external_map=None, threshold=0.5, tmo="durand", durand_params=None,
                    uniform=False, backend=None):
    """Embed BitImage ``w`` into HdrImage ``host``.

    Returns an EmbedResult; unpacking it gives ``(watermarked_hdr, metadata)``.
    ``uniform=True`` forces an all-foreground mask (no saliency partition).
    """
    params = params or EmbedParams()
    if not isinstance(host, HdrImage):
        raise InvalidImageError("host must be an HdrImage")
    if not isinstance(w, BitImage):
        raise InvalidImageError("watermark must be a BitImage")
    tau = tm.compute_tau_global(host).tau

    if tmo == "durand":
        tmo_meta = tm.durand_analyze(host, durand_params, backend=backend).with_half_base()
        host_sdr = tm.tonemap_durand(host, meta=tmo_meta, backend=backend)
        tmo_dict = tmo_meta.to_dict(include_base=True)
    elif tmo == "exponent":
        tmo_meta = tm.TauParam(tau)
        host_sdr = render_sdr(host, tmo_meta)
        tmo_dict = {"operator": "exponent", "tau": tau}
    else:
        raise ValueError(f"unknown tone-mapping operator {tmo!r}")

    work = resize_cubic(host_sdr, WORK_SIZE, WORK_SIZE)
    mask = _host_mask(work, saliency_source, external_map, threshold, uniform)
    layout = _layout(mask, w.bits.shape, params, key)
    payload = _payload(w, layout, key)
    tau_payload = np.repeat(tau_bits(tau), params.tau_redundancy)

    meta = WatermarkMetadata(
        key.fingerprint(), params, tau, tmo_dict, host.width, host.height, w.width, w.height,
        mask, {"source": "uniform" if uniform else saliency_source, "threshold": float(threshold)},
        "uniform" if uniform else "saliency")

    current = host_sdr
    ranks = {"foreground": np.zeros(len(layout.plans["foreground"]), dtype=np.int64),
             "background": np.zeros(len(layout.plans["background"]), dtype=np.int64),
             "tau": np.zeros(tau_payload.shape[0], dtype=np.int64)}
    errors, it = -1, 0
    for it in range(1, params.max_iterations + 1):
        y_old = work_luma(current)
        y_new = _embed_plane(y_old, layout, payload, tau_payload, ranks)
        target = _with_luma(current, y_old, y_new)
        hdr = tm.inverse_tonemap(target, tmo_meta)
        rendered = render_sdr(hdr, tmo_meta, backend=backend)
        y_rendered = work_luma(rendered)
        errors = _escalate(y_rendered, _decode_plane(y_rendered, layout), payload, tau_payload,
                           ranks, layout)
        log.debug("embed iteration %d: %d carrier errors", it, errors)
        current = rendered
        if errors == 0:
            break
    if errors:
        log.warning("watermark embedded with %d carrier errors after %d iterations", errors, it)
    return EmbedResult(hdr, meta, current, host_sdr, it, errors)


@dataclass(frozen=True, eq=False)
class ExtractResult:
    watermark: BitImage
    foreground: BitImage
    background: BitImage
    tau: TauReading


def _erased_blocks(y):
    """LL-resolution flags for 2x2 pixel blocks that are entirely black."""
    h, w = y.shape
    blocks = y[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2)
    return (blocks == 0).all(axis=(1, 3))


def extract_details(image, key, metadata, verify_key=True):
    if not isinstance(image, SdrImage):
        raise InvalidImageError("extraction works on an SdrImage")
    if verify_key and key.fingerprint() != metadata.key_fingerprint:
        raise MetadataError("key fingerprint does not match the sidecar")
    y = work_luma(image)
    if y.shape != (WORK_SIZE, WORK_SIZE):
        raise DimensionError(f"working plane is {y.shape}, expected {WORK_SIZE}x{WORK_SIZE}")
    params = metadata.params
    layout = _layout(metadata.mask, (metadata.watermark_height, metadata.watermark_width),
                     params, key)
    decoded = _decode_plane(y, layout)
    planes = {}
    for region, sel in (("foreground", 1), ("background", 0)):
        bits = permute_sequence(decoded[region], key, _PERM_TAG[region], "inverse")
        img = np.zeros(layout.wm_mask.shape, dtype=np.uint8)
        img[layout.wm_mask == sel] = bits
        planes[region] = BitImage(img)
    tau = extract_tau(decoded["ll"], params.tau_delta, key, params.tau_redundancy,
                      params.qim_variant, erased=_erased_blocks(y), tile=params.tau_tile)
    combined = BitImage(planes["foreground"].bits | planes["background"].bits)
    return ExtractResult(combined, planes["foreground"], planes["background"], tau)


def extract_watermark(image, key, metadata, verify_key=True):
    """W' = W'_f OR W'_b from a (possibly attacked) SDR rendering."""
    return extract_details(image, key, metadata, verify_key).watermark


def recover_tau(image, key, metadata, verify_key=True):
    return extract_details(image, key, metadata, verify_key).tau
