import numpy as np

from hdrwm.corpus import (
    logo_watermark,
    make_corpus,
    make_scene,
    random_watermark,
    scene_names,
)


def test_scenes_are_hdr_and_deterministic():
    a, b = make_scene(1), make_scene(1)
    assert np.array_equal(a.data, b.data)
    assert a.data.shape == (512, 512, 3) and a.data.min() >= 0
    assert a.data.max() / max(a.data[a.data > 0].min(), 1e-12) > 1e3  # wide dynamic range


def test_corpus_distinct():
    scenes = make_corpus(3, 64)
    assert not np.array_equal(scenes[0].data, scenes[1].data)
    assert scene_names(8)[7] == "sunset-7"


def test_watermarks():
    logo = logo_watermark()
    assert logo.bits.shape == (256, 256) and 0.1 < logo.bits.mean() < 0.6
    assert logo_watermark(128, 64).bits.shape == (64, 128)
    assert np.array_equal(random_watermark(seed=2).bits, random_watermark(seed=2).bits)
