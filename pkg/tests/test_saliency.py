import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdrwm.errors import DimensionError, InvalidImageError
from hdrwm.imagecore import BitImage, SdrImage
from hdrwm.saliency import (
    BCE_EPS,
    BinaryMask,
    SaliencyMap,
    bce_loss,
    block_majority,
    detect_saliency,
    partition_watermark,
    segment_host,
    threshold_mask,
)


def test_constant_image_gives_zero_map():
    m = detect_saliency(SdrImage(np.full((32, 32, 3), 90, np.uint8)))
    assert not m.values.any()


def test_bright_square_is_most_salient():
    img = np.full((64, 64, 3), 20, np.uint8)
    img[20:30, 30:40] = 240
    m = detect_saliency(SdrImage(img)).values
    r, c = np.unravel_index(np.argmax(m), m.shape)
    assert 20 <= r < 30 and 30 <= c < 40
    assert m[20:30, 30:40].mean() > 5 * m[:10, :10].mean()


def test_external_map_endpoints():
    ext = np.zeros((8, 8), np.uint8)
    ext[2:4] = 255
    m = detect_saliency(SdrImage(np.zeros((8, 8, 3), np.uint8)), "external-map", ext)
    assert set(np.unique(m.values)) == {0.0, 1.0}


def test_external_map_shape_checked():
    with pytest.raises(DimensionError):
        detect_saliency(SdrImage(np.zeros((8, 8, 3), np.uint8)), "external-map", np.zeros((4, 4)))


def test_threshold_conventions():
    m = SaliencyMap(np.full((4, 4), 0.9))
    assert threshold_mask(m, 0.5).bits.all()
    edge = SaliencyMap(np.array([[0.5, 0.49], [0.51, 0.0]]))
    assert threshold_mask(edge, 0.5).bits.tolist() == [[1, 0], [1, 0]]
    assert threshold_mask(edge, 0.0).bits.all()
    assert not threshold_mask(edge, 0.52).bits.any()


def test_map_and_mask_validation():
    with pytest.raises(InvalidImageError):
        SaliencyMap(np.full((2, 2), 1.5))
    with pytest.raises(InvalidImageError):
        BinaryMask(np.full((2, 2), 3))


def test_segment_extremes(rng):
    img = SdrImage(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    full = segment_host(img, BinaryMask.full(8, 8, 1))
    assert np.array_equal(full.foreground.data, img.data) and not full.background.data.any()
    empty = segment_host(img, BinaryMask.full(8, 8, 0))
    assert np.array_equal(empty.background.data, img.data) and not empty.foreground.data.any()


def test_segment_checkerboard_on_ramp():
    ramp = np.repeat(np.arange(64, dtype=np.uint8).reshape(8, 8)[..., None] * 3, 3, axis=2)
    mask = BinaryMask((np.add.outer(np.arange(8), np.arange(8)) % 2).astype(np.uint8))
    seg = segment_host(SdrImage(ramp), mask)
    fg, bg = seg.foreground.data, seg.background.data
    assert np.array_equal(fg | bg, ramp)
    assert not (fg & bg).any()


def test_partition_trivial_cases(rng):
    ones = BitImage(np.ones((16, 16), np.uint8))
    seg = partition_watermark(ones, BinaryMask.full(16, 16))
    assert seg.foreground.bits.all() and not seg.background.bits.any()
    w = BitImage(rng.integers(0, 2, (16, 16)))
    seg = partition_watermark(w, BinaryMask(w.bits))
    assert np.array_equal(seg.foreground.bits, w.bits) and not seg.background.bits.any()


@given(arrays(np.uint8, (32, 32), elements=st.integers(0, 1)),
       arrays(np.uint8, (32, 32), elements=st.integers(0, 1)))
def test_partition_conserves_bits(w, mask):
    seg = partition_watermark(BitImage(w), BinaryMask(mask))
    assert seg.foreground.bits.sum() + seg.background.bits.sum() == w.sum()


def test_partition_resizes_mask():
    seg = partition_watermark(BitImage(np.ones((8, 8), np.uint8)), BinaryMask(np.eye(4, dtype=np.uint8)))
    assert seg.foreground.bits.sum() == 16


def test_block_majority():
    m = np.array([[1, 1, 0, 0], [0, 0, 0, 1], [1, 1, 1, 1], [1, 0, 0, 0]])
    assert block_majority(BinaryMask(m)).bits.tolist() == [[1, 0], [1, 1]]


def test_bce_closed_forms(rng):
    truth = BinaryMask(rng.integers(0, 2, (16, 16)))
    perfect = bce_loss(SaliencyMap(truth.bits.astype(float)), truth)
    assert perfect <= -math.log(1 - BCE_EPS) + 1e-12
    assert abs(perfect - (-math.log(1 - BCE_EPS))) < 1e-9
    half = bce_loss(SaliencyMap(np.full((16, 16), 0.5)), truth)
    assert abs(half - math.log(2)) < 1e-9
    worst = bce_loss(SaliencyMap(1.0 - truth.bits), truth)
    assert abs(worst - (-math.log(BCE_EPS))) < 1e-9
    assert abs(worst - 16.118) < 1e-3
