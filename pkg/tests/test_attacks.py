import json

import numpy as np
import pytest

from hdrwm.attacks import (
    DEFAULTS,
    KINDS,
    AttackSpec,
    apply_attack,
    default_suite,
    jpeg_sweep,
    load_suite,
)
from hdrwm.errors import ConfigError
from hdrwm.imagecore import SdrImage, rgb_to_ycbcr


@pytest.fixture(scope="module")
def photo():
    rng = np.random.default_rng(3)
    yy, xx = np.mgrid[0:512, 0:512]
    base = 128 + 60 * np.sin(xx / 17.0) + 40 * np.cos(yy / 23.0)
    data = np.clip(base[..., None] + rng.normal(0, 8, (512, 512, 3)), 1, 255)
    return SdrImage(data.astype(np.uint8))


def test_crop_keeps_window(photo):
    out = apply_attack(photo, AttackSpec("crop"))
    nonzero_px = np.count_nonzero(out.data.any(axis=2))
    assert nonzero_px == (424 - 75 + 1) * (424 - 68 + 1) == 124950
    assert np.array_equal(out.data[74:424, 67:424], photo.data[74:424, 67:424])


@pytest.mark.parametrize("kind", ["mean-filter", "median-filter"])
def test_filters_fix_constants(kind):
    img = SdrImage(np.full((32, 32, 3), 99, np.uint8))
    assert np.array_equal(apply_attack(img, AttackSpec(kind)).data, img.data)


@pytest.mark.parametrize("kind", ["noise", "salt-pepper"])
def test_seeded_determinism(photo, kind):
    a = apply_attack(photo, AttackSpec(kind, {}, 7)).data
    b = apply_attack(photo, AttackSpec(kind, {}, 7)).data
    c = apply_attack(photo, AttackSpec(kind, {}, 8)).data
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_noise_variance(photo):
    flat = SdrImage(np.full((256, 256, 3), 128, np.uint8))
    out = apply_attack(flat, AttackSpec("noise", {"variance": 0.001})).data / 255.0
    assert out.var() == pytest.approx(0.001, rel=0.05)


def test_mean_filter_is_box_average():
    img = np.zeros((9, 9, 3), np.uint8)
    img[4, 4] = 90
    out = apply_attack(SdrImage(img), AttackSpec("mean-filter")).data
    assert out[3:6, 3:6, 0].tolist() == [[10] * 3] * 3 and out[0, 0, 0] == 0


def test_jpeg_quality_orders_error(photo):
    errs = [np.abs(apply_attack(photo, s).data.astype(int) - photo.data).mean() for s in jpeg_sweep((30, 90))]
    assert errs[0] > errs[1] > 0


def test_jpeg_keeps_colorspace(photo):
    ycc = rgb_to_ycbcr(photo)
    assert apply_attack(ycc, AttackSpec("jpeg")).colorspace == "YCbCr"


@pytest.mark.parametrize("kind", ["shear", "rotate"])
def test_geometric_roundtrip_is_registered(photo, kind):
    out = apply_attack(photo, AttackSpec(kind)).data.astype(int)
    centre = slice(200, 312)
    # two bilinear resamplings blur but do not move content
    assert np.abs(out[centre, centre] - photo.data[centre, centre]).mean() < 12


def test_zero_angle_rotation_is_identity(photo):
    assert np.array_equal(apply_attack(photo, AttackSpec("rotate", {"angle": 0.0})).data, photo.data)


@pytest.mark.parametrize("kind,params", [("mean-filter", {"size": 4}), ("median-filter", {"size": 1}),
                                         ("jpeg", {"quality": 0}), ("jpeg", {"quality": 101}),
                                         ("noise", {"variance": -1}), ("crop", {"rows": [5, 2]}),
                                         ("shear", {"factor": float("inf")}), ("jpeg", {"level": 3})])
def test_bad_parameters(kind, params):
    with pytest.raises(ConfigError):
        AttackSpec(kind, params)


def test_unknown_kind():
    with pytest.raises(ConfigError):
        AttackSpec("blur")


def test_attack_spec_roundtrip_and_labels():
    for spec in default_suite(3) + [AttackSpec("salt-pepper", {"density": 0.05}, 2)]:
        again = AttackSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert again == spec and again.label()
    assert [s.kind for s in default_suite()] == [k for k in KINDS if k != "salt-pepper"]
    assert set(DEFAULTS) == set(KINDS)


def test_load_suite(tmp_path):
    p = tmp_path / "suite.json"
    p.write_text(json.dumps({"attacks": [{"kind": "jpeg", "quality": 50},
                                         {"kind": "noise", "params": {"variance": 0.02}, "seed": 4}]}))
    suite = load_suite(p)
    assert suite[0].params["quality"] == 50 and suite[1].seed == 4
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_suite(p)
    with pytest.raises(ConfigError):
        load_suite(tmp_path / "none.json")
