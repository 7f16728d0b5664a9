"""Seeded synthetic HDR scenes and a logo watermark for tests and benchmarks.

Each scene combines a sky/ground gradient, multiplicative 1/f texture (so the
detail sub-bands look like a photograph's rather than a cartoon's), a few
lit foreground objects, and one or more very bright emitters. The dynamic
range is 10^4 to 10^5.
"""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .imagecore import BitImage, HdrImage

SCENES = ("sunset", "window", "street", "studio", "forest", "lakeside", "lamps")


def pink_noise(shape, rng, exponent=1.0):
    """Zero-mean, unit-variance noise with a 1/f**exponent amplitude spectrum."""
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    spec = (rng.standard_normal(f.shape) + 1j * rng.standard_normal(f.shape)) / f ** exponent
    spec[0, 0] = 0.0
    out = np.fft.irfft2(spec, s=shape)
    return (out - out.mean()) / out.std()


def _blob(yy, xx, cy, cx, ry, rx, soft=2.0):
    """Soft-edged ellipse coverage in [0, 1]."""
    d = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return np.clip((1.0 - d) * min(ry, rx) / soft, 0.0, 1.0)


def make_scene(index=0, size=512):
    """Scene ``index`` (any int) as an HdrImage of ``size`` x ``size``."""
    rng = np.random.default_rng(1000 + index)
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    horizon = h * rng.uniform(0.35, 0.6)
    sky_top = rng.uniform(2.0, 8.0) * np.array([0.55, 0.7, 1.0])
    sky_low = rng.uniform(4.0, 15.0) * np.array([1.0, 0.8, 0.6])
    t = np.clip(yy / horizon, 0, 1)[..., None]
    sky = sky_top * (1 - t) + sky_low * t
    ground_col = rng.uniform(0.2, 1.2) * rng.uniform(0.5, 1.0, 3)
    ground = ground_col * (1.0 + 0.3 * ((yy - horizon) / h))[..., None]
    img = np.where((yy < horizon)[..., None], sky, ground)

    # photographic texture: lognormal multiplicative 1/f detail
    tex = pink_noise((h, w), rng, rng.uniform(0.8, 1.2))
    fine = pink_noise((h, w), rng, 0.5)
    img = img * np.exp(0.35 * tex + 0.08 * fine)[..., None]

    # salient objects, lit more strongly than their surroundings
    for _ in range(rng.integers(1, 4)):
        cy = rng.uniform(0.35, 0.7) * h
        cx = rng.uniform(0.25, 0.75) * w
        ry, rx = rng.uniform(0.1, 0.22, 2) * size
        cover = _blob(yy, xx, cy, cx, ry, rx)
        col = rng.dirichlet([0.6, 0.6, 0.6]) * 3.0 * rng.uniform(15.0, 60.0)
        shade = np.exp(0.25 * pink_noise((h, w), rng, 1.5))
        stripes = 1.0 + 0.3 * np.sin(2 * np.pi * (xx * rng.uniform(0.02, 0.08)
                                                    + yy * rng.uniform(-0.05, 0.05)))
        obj = col * (shade * stripes)[..., None]
        img = img * (1 - cover[..., None]) + obj * cover[..., None]

    # emitters: sun, lamps, specular highlights
    for _ in range(rng.integers(1, 3)):
        cy, cx = rng.uniform(0.05, 0.9) * h, rng.uniform(0.05, 0.95) * w
        r = rng.uniform(4, 18)
        peak = 10 ** rng.uniform(3.0, 4.5)
        glow = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * (3 * r) ** 2))
        core = _blob(yy, xx, cy, cx, r, r, soft=1.5)
        img = img + (peak * core + 0.004 * peak * glow)[..., None] * np.array([1.0, 0.95, 0.85])

    return HdrImage(np.maximum(img, 1e-4).astype(np.float32))


def scene_names(count):
    return [f"{SCENES[i % len(SCENES)]}-{i}" for i in range(count)]


def make_corpus(count=5, size=512):
    return [make_scene(i, size) for i in range(count)]


def logo_watermark(width=256, height=256):
    """A binary logo: ring, bars and text, roughly 35% ones."""
    img = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(img)
    s = min(width, height)
    draw.ellipse([s * 0.06, s * 0.06, s * 0.94, s * 0.94], outline=255, width=max(2, s // 14))
    draw.rectangle([s * 0.22, s * 0.25, s * 0.30, s * 0.62], fill=255)
    draw.rectangle([s * 0.70, s * 0.25, s * 0.78, s * 0.62], fill=255)
    draw.polygon([(s * 0.34, s * 0.25), (s * 0.66, s * 0.25), (s * 0.5, s * 0.55)], fill=255)
    small = Image.new("L", (40, 12), 0)
    ImageDraw.Draw(small).text((1, 0), "HDRWM", fill=255, font=ImageFont.load_default())
    text = small.resize((int(s * 0.6), int(s * 0.18)), Image.NEAREST)
    img.paste(text, (int(s * 0.2), int(s * 0.66)), text)
    bits = (np.asarray(img) > 127).astype(np.uint8)
    if (width, height) != (s, s):
        bits = np.asarray(Image.fromarray(bits * 255).resize((width, height), Image.NEAREST)) > 127
    return BitImage(bits.astype(np.uint8))


def random_watermark(width=256, height=256, seed=0):
    rng = np.random.default_rng(seed)
    return BitImage(rng.integers(0, 2, (height, width), dtype=np.uint8))
