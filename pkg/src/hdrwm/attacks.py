"""Seeded robustness attacks on SDR images.

Geometric attacks (shear, rotation) warp onto a canvas large enough to keep
every pixel, then warp back onto the original grid, so that extraction sees
a registered image that has been resampled twice.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError
from .imagecore import SdrImage

KINDS = ("mean-filter", "median-filter", "shear", "noise", "rotate", "crop", "jpeg",
         "salt-pepper")
STOCHASTIC = {"noise", "salt-pepper"}

DEFAULTS = {
    "mean-filter": {"size": 3},
    "median-filter": {"size": 3},
    "shear": {"factor": 0.5},
    "noise": {"variance": 0.01},
    "rotate": {"angle": 45.0},
    # 1-based inclusive window, as in the usual MATLAB notation [75:424, 68:424]
    "crop": {"rows": [75, 424], "cols": [68, 424]},
    "jpeg": {"quality": 70},
    "salt-pepper": {"density": 0.01},
}


@dataclass(frozen=True, eq=False)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        merged = {**DEFAULTS[self.kind], **self.params}
        object.__setattr__(self, "params", merged)
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        _validate(self.kind, merged)

    def __eq__(self, other):
        return isinstance(other, AttackSpec) and self.to_dict() == other.to_dict()

    def label(self):
        p = self.params
        if self.kind in ("mean-filter", "median-filter"):
            return f"{self.kind} {p['size']}x{p['size']}"
        if self.kind == "jpeg":
            return f"jpeg q={p['quality']}"
        if self.kind == "noise":
            return f"noise var={p['variance']}"
        if self.kind == "rotate":
            return f"rotate {p['angle']:g}deg"
        if self.kind == "shear":
            return f"shear {p['factor']:g}"
        if self.kind == "salt-pepper":
            return f"salt-pepper d={p['density']}"
        return "crop"

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"attack entry must be an object with a 'kind': {d!r}")
        params = dict(d.get("params", {}))
        params.update({k: v for k, v in d.items() if k not in ("kind", "params", "seed")})
        return cls(d["kind"], params, int(d.get("seed", 0)))


def _validate(kind, p):
    if kind in ("mean-filter", "median-filter"):
        size = p["size"]
        if int(size) != size or size < 3 or size % 2 == 0:
            raise ConfigError(f"{kind}: window size must be an odd integer >= 3, got {size}")
    elif kind == "jpeg":
        q = p["quality"]
        if int(q) != q or not 1 <= q <= 100:
            raise ConfigError(f"jpeg: quality must be an integer in [1, 100], got {q}")
    elif kind == "noise":
        if not p["variance"] >= 0:
            raise ConfigError("noise: variance must be >= 0")
    elif kind == "salt-pepper":
        if not 0 <= p["density"] <= 1:
            raise ConfigError("salt-pepper: density must lie in [0, 1]")
    elif kind == "crop":
        for name in ("rows", "cols"):
            lo, hi = p[name]
            if not 1 <= lo <= hi:
                raise ConfigError(f"crop: bad {name} window {p[name]}")
    elif kind in ("shear", "rotate"):
        key = "factor" if kind == "shear" else "angle"
        if not math.isfinite(p[key]):
            raise ConfigError(f"{kind}: {key} must be finite")


def default_suite(seed=0):
    """The seven standard attacks with default parameters."""
    return [AttackSpec(k, {}, seed) for k in
            ("mean-filter", "median-filter", "shear", "noise", "rotate", "crop", "jpeg")]


def jpeg_sweep(qualities=range(30, 100, 10)):
    return [AttackSpec("jpeg", {"quality": q}) for q in qualities]


def load_suite(path):
    """Read ``{"attacks": [...]}`` (or a bare list) from a JSON file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read attack config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"attack config {path} is not valid JSON: {exc}") from exc
    entries = doc.get("attacks") if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise ConfigError("attack config must hold a list under 'attacks'")
    return [AttackSpec.from_dict(e) for e in entries]


# --------------------------------------------------------------------------


def _to_u8(x):
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def _per_channel(data, fn):
    return np.stack([fn(data[..., c]) for c in range(data.shape[2])], axis=-1)


def _warp_roundtrip(data, lin):
    """Forward linear map about the centre onto a loose canvas, then back, bilinear."""
    h, w = data.shape[:2]
    inv = np.linalg.inv(lin)
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    corners = np.array([[0, 0], [0, w - 1], [h - 1, 0], [h - 1, w - 1]], dtype=np.float64)
    moved = (corners - centre) @ lin.T
    lo, hi = moved.min(axis=0), moved.max(axis=0)
    ch, cw = (int(math.ceil(v)) + 1 for v in (hi - lo))
    canvas_centre = -lo
    # canvas pixel o samples the source at inv @ (o - canvas_centre) + centre
    off_fwd = centre - inv @ canvas_centre
    off_back = canvas_centre - lin @ centre
    src = data.astype(np.float64)

    def one(plane):
        canvas = ndimage.affine_transform(plane, inv, offset=off_fwd, output_shape=(ch, cw),
                                          order=1, mode="constant", cval=0.0)
        return ndimage.affine_transform(canvas, lin, offset=off_back, output_shape=(h, w),
                                        order=1, mode="constant", cval=0.0)

    return _to_u8(_per_channel(src, one))


def apply_attack(image, spec):
    if not isinstance(image, SdrImage):
        raise TypeError("attacks operate on SdrImage")
    data = image.data
    p = spec.params
    k = spec.kind
    if k == "mean-filter":
        out = _to_u8(_per_channel(data.astype(np.float64),
                                  lambda c: ndimage.uniform_filter(c, p["size"], mode="reflect")))
    elif k == "median-filter":
        out = _per_channel(data, lambda c: ndimage.median_filter(c, p["size"], mode="reflect"))
    elif k == "noise":
        rng = np.random.default_rng(spec.seed)
        noisy = data / 255.0 + rng.normal(0.0, math.sqrt(p["variance"]), data.shape)
        out = _to_u8(np.clip(noisy, 0.0, 1.0) * 255.0)
    elif k == "salt-pepper":
        rng = np.random.default_rng(spec.seed)
        u = rng.random(data.shape)
        out = data.copy()
        d = p["density"]
        out[u < d / 2] = 0
        out[(u >= d / 2) & (u < d)] = 255
    elif k == "crop":
        (r0, r1), (c0, c1) = p["rows"], p["cols"]
        out = np.zeros_like(data)
        out[r0 - 1:r1, c0 - 1:c1] = data[r0 - 1:r1, c0 - 1:c1]
    elif k == "jpeg":
        buf = io.BytesIO()
        Image.fromarray(_rgb(image)).save(buf, format="JPEG", quality=int(p["quality"]),
                                          subsampling="4:2:0", optimize=False)
        out = np.asarray(Image.open(io.BytesIO(buf.getvalue())).convert("RGB"))
        if image.colorspace == "YCbCr":
            from .imagecore import rgb_to_ycbcr
            return rgb_to_ycbcr(SdrImage(out, "RGB"))
    elif k == "shear":
        # x' = x + factor * y, written in (row, col) coordinates
        out = _warp_roundtrip(data, np.array([[1.0, 0.0], [p["factor"], 1.0]]))
    elif k == "rotate":
        a = math.radians(p["angle"])
        out = _warp_roundtrip(data, np.array([[math.cos(a), -math.sin(a)],
                                              [math.sin(a), math.cos(a)]]))
    else:  # pragma: no cover - guarded by AttackSpec
        raise ConfigError(f"unknown attack {k}")
    return SdrImage(out, image.colorspace)


def _rgb(image):
    if image.colorspace == "RGB":
        return image.data
    from .imagecore import ycbcr_to_rgb
    return ycbcr_to_rgb(image).data
