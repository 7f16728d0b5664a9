import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from hdrwm.errors import DegenerateInputError, DimensionError
from hdrwm.imagecore import BitImage, SdrImage, luma
from hdrwm.metrics import IDENTICAL, ber, mse, nc, nc_raw, psnr, quality_report, ssim


def _gray(v):
    v = np.asarray(v, np.uint8)
    return SdrImage(np.repeat(v[..., None], 3, axis=2))


def _pearson_loops(a, b):
    a = [float(x) for x in np.ravel(a)]
    b = [float(x) for x in np.ravel(b)]
    ma, mb = sum(a) / len(a), sum(b) / len(b)
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(sum((x - ma) ** 2 for x in a) * sum((y - mb) ** 2 for y in b))
    return num / den


# ---------------------------------------------------------------- PSNR

def test_psnr_identical_sentinel(rng):
    a = SdrImage(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
    assert psnr(a, a) == IDENTICAL


def test_psnr_black_vs_white():
    assert psnr(_gray(np.zeros((8, 8))), _gray(np.full((8, 8), 255))) == 0.0


def test_psnr_single_pixel_512():
    a = np.full((512, 512), 100)
    b = a.copy()
    b[7, 9] += 16
    expected = 10 * math.log10(255 ** 2 * 1024)
    assert abs(psnr(_gray(a), _gray(b)) - expected) < 1e-9
    # 10 log10(255^2 * 1024) evaluates to 78.23 dB
    assert abs(expected - 78.2338) < 1e-4


def test_psnr_matches_direct_formula(rng):
    a = SdrImage(rng.integers(0, 256, (64, 48, 3), dtype=np.uint8))
    b = SdrImage(rng.integers(0, 256, (64, 48, 3), dtype=np.uint8))
    ya, yb = luma(a).astype(float), luma(b).astype(float)
    direct = 10 * math.log10(255 ** 2 / (((ya - yb) ** 2).sum() / ya.size))
    assert abs(psnr(a, b) - direct) < 1e-9
    rgb = 10 * math.log10(255 ** 2 / ((a.data.astype(float) - b.data) ** 2).mean())
    assert abs(psnr(a, b, "sdr-rgb") - rgb) < 1e-9


def test_domain_and_shape_checks():
    with pytest.raises(ValueError):
        mse(_gray(np.zeros((4, 4))), _gray(np.zeros((4, 4))), "hdr")
    with pytest.raises(DimensionError):
        psnr(_gray(np.zeros((4, 4))), _gray(np.zeros((4, 6))))


# ---------------------------------------------------------------- SSIM

def test_ssim_self_is_one(rng):
    a = SdrImage(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_offset_closed_form():
    ma, mb = 100.0, 130.0
    c1 = (0.01 * 255) ** 2
    expected = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1)
    got = ssim(_gray(np.full((32, 32), ma)), _gray(np.full((32, 32), mb)))
    assert got == pytest.approx(expected, abs=1e-9)


def test_ssim_matches_skimage(rng):
    x = rng.integers(0, 256, (64, 64)).astype(np.uint8)
    y = np.clip(x + rng.normal(0, 20, x.shape), 0, 255).astype(np.uint8)
    ref = structural_similarity(x.astype(float), y.astype(float), data_range=255,
                                gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    assert ssim(x, y) == pytest.approx(ref, abs=1e-9)


def test_ssim_inverted_image_low():
    yy, xx = np.mgrid[0:64, 0:64]
    a = (128 + 60 * np.sin(xx / 5.0) * np.cos(yy / 7.0)).astype(np.uint8)
    assert ssim(_gray(a), _gray(255 - a)) < 0.5


# ---------------------------------------------------------------- NC / BER

def test_nc_matches_brute_force_pearson(rng):
    for _ in range(5):
        a = rng.integers(0, 2, (64, 64))
        b = np.where(rng.random((64, 64)) < 0.2, 1 - a, a)
        assert abs(nc_raw(BitImage(a), BitImage(b)) - _pearson_loops(a, b)) < 1e-12


def test_nc_identity_and_complement(rng):
    w = BitImage(rng.integers(0, 2, (32, 32)))
    assert nc(w, w) == 1.0
    comp = BitImage(1 - w.bits)
    assert nc_raw(w, comp) == pytest.approx(-1.0, abs=1e-12)
    assert nc(w, comp) == 0.0


def test_nc_independent_pairs_near_zero(rng):
    vals = [nc_raw(rng.integers(0, 2, (256, 256)), rng.integers(0, 2, (256, 256))) for _ in range(100)]
    assert max(abs(v) for v in vals) <= 0.02


def test_nc_constant_is_degenerate():
    with pytest.raises(DegenerateInputError):
        nc(np.zeros((4, 4)), np.eye(4))


@given(arrays(np.uint8, (8, 8), elements=st.integers(0, 1)), arrays(np.uint8, (8, 8), elements=st.integers(0, 1)))
def test_nc_symmetric_and_bounded(a, b):
    try:
        r = nc_raw(a, b)
    except DegenerateInputError:
        return
    assert -1 - 1e-12 <= r <= 1 + 1e-12
    assert r == pytest.approx(nc_raw(b, a), abs=1e-12)
    assert 0 <= nc(a, b) <= 1


def test_ber_counts(rng):
    w = rng.integers(0, 2, (256, 256))
    assert ber(w, w) == 0.0
    assert ber(w, 1 - w) == 1.0
    v = w.copy()
    v[3, 4] ^= 1
    assert ber(w, v) == 1 / 65536
    assert abs(1 / 65536 - 1.526e-5) < 1e-8


def test_quality_report_serializes(rng):
    a = SdrImage(rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
    w = BitImage(rng.integers(0, 2, (8, 8)))
    rep = quality_report(a, a, w, w).to_dict()
    assert rep["psnr_db"] == "identical" and rep["nc"] == 1.0 and rep["ber"] == 0.0
    rep = quality_report(a, a, np.zeros((4, 4)), np.zeros((4, 4))).to_dict()
    assert rep["nc"] is None
