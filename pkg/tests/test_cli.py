import hashlib
import json

import numpy as np
import pytest

from hdrwm.cli import main
from hdrwm.corpus import make_scene, random_watermark
from hdrwm.imagecore import load_image, save_image
from hdrwm.keys import SecretKey

KEY = SecretKey.from_int(1).hex()


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    save_image(make_scene(0), d / "host.pfm")
    save_image(random_watermark(256, 256, seed=3), d / "w.pbm")
    assert main(["embed", str(d / "host.pfm"), str(d / "w.pbm"), "-o", str(d / "m.pfm"),
                 "--key", KEY, "--sdr", str(d / "m.png"), "--report", str(d / "embed.json")]) == 0
    return d


def test_embed_outputs(work):
    rep = json.loads((work / "embed.json").read_text())
    assert rep["command"] == "embed" and rep["residual_errors"] == 0
    assert rep["quality"]["ber"] == 0.0
    assert (work / "m.json").exists()


@pytest.mark.parametrize("source", ["m.pfm", "m.png"])
def test_extract_roundtrip(work, source):
    out = work / f"x-{source}.pbm"
    assert main(["extract", str(work / source), "--sidecar", str(work / "m.json"), "-o", str(out),
                 "--key", KEY, "--reference", str(work / "w.pbm"),
                 "--report", str(work / "x.json")]) == 0
    rep = json.loads((work / "x.json").read_text())
    assert rep["ber"] == 0.0 and rep["tau"]["recovered"] == rep["tau"]["expected"]
    assert np.array_equal(load_image(out).bits, load_image(work / "w.pbm").bits)


def test_embed_is_deterministic(work, tmp_path):
    assert main(["embed", str(work / "host.pfm"), str(work / "w.pbm"), "-o", str(tmp_path / "m.pfm"),
                 "--key", KEY]) == 0
    assert _sha(tmp_path / "m.pfm") == _sha(work / "m.pfm")
    assert _sha(tmp_path / "m.json") == _sha(work / "m.json")


def test_key_from_env_and_file(work, tmp_path, monkeypatch):
    monkeypatch.setenv("HDRWM_KEY", KEY)
    assert main(["extract", str(work / "m.png"), "--sidecar", str(work / "m.json"),
                 "-o", str(tmp_path / "a.pbm")]) == 0
    monkeypatch.delenv("HDRWM_KEY")
    (tmp_path / "k").write_text(KEY + "\n")
    assert main(["extract", str(work / "m.png"), "--sidecar", str(work / "m.json"),
                 "-o", str(tmp_path / "b.pbm"), "--key-file", str(tmp_path / "k")]) == 0
    assert _sha(tmp_path / "a.pbm") == _sha(tmp_path / "b.pbm")


def test_attack_and_evaluate(work, tmp_path, capsys):
    out = tmp_path / "a.png"
    assert main(["attack", str(work / "m.pfm"), "--sidecar", str(work / "m.json"),
                 "--kind", "jpeg", "--param", "quality=50", "-o", str(out)]) == 0
    assert main(["attack", str(work / "m.png"), "--kind", "crop", "-o", str(tmp_path / "dir")]) == 0
    assert len(list((tmp_path / "dir").iterdir())) == 1
    capsys.readouterr()
    assert main(["evaluate", str(work / "m.png"), str(out)]) == 0
    q = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert 25 < q["psnr_db"] < 60 and q["nc"] is None
    assert main(["evaluate", str(work / "m.png"), str(work / "m.png")]) == 0
    assert json.loads(capsys.readouterr().out.strip())["psnr_db"] == "identical"


def test_keygen(tmp_path, capsys):
    assert main(["keygen"]) == 0
    assert len(capsys.readouterr().out.strip()) == 64
    assert main(["keygen", "-o", str(tmp_path / "k")]) == 0
    assert len((tmp_path / "k").read_text().strip()) == 64


@pytest.mark.slow
def test_benchmark_single_image(tmp_path, capsys):
    assert main(["corpus", str(tmp_path / "c"), "--count", "1"]) == 0
    args = ["benchmark", str(tmp_path / "c"), "--key", KEY, "--attacks", str(tmp_path / "s.json"),
            "--report"]
    (tmp_path / "s.json").write_text(json.dumps({"attacks": [{"kind": "crop"}]}))
    assert main(args + [str(tmp_path / "r1.json")]) == 0
    assert main(args + [str(tmp_path / "r2.json"), "--workers", "2"]) == 0
    assert _sha(tmp_path / "r1.json") == _sha(tmp_path / "r2.json")
    rep = json.loads((tmp_path / "r1.json").read_text())
    rows = {r["attack"]: r for r in rep["summary"]["by_attack"]}
    assert rows["none"]["nc_w1"] == pytest.approx(1.0) and rows["none"]["nc_w2"] == pytest.approx(1.0)
    assert "NC_W1" in capsys.readouterr().out


def _run(tmp_path, *argv):
    try:
        return main([*map(str, argv)])
    except SystemExit as exc:  # argparse usage errors
        return exc.code


def test_exit_codes(work, tmp_path, monkeypatch):
    monkeypatch.delenv("HDRWM_KEY", raising=False)
    big = tmp_path / "big.pbm"
    save_image(random_watermark(400, 400), big)
    host, sidecar = work / "host.pfm", work / "m.json"
    assert _run(tmp_path, "embed", host, big, "-o", tmp_path / "o.pfm", "--key", KEY) == 2
    assert _run(tmp_path, "embed", tmp_path / "nope.pfm", work / "w.pbm", "-o", tmp_path / "o.pfm",
                "--key", KEY) == 3
    (tmp_path / "bad.pfm").write_bytes(b"junk")
    assert _run(tmp_path, "embed", tmp_path / "bad.pfm", work / "w.pbm", "-o", tmp_path / "o.pfm",
                "--key", KEY) == 4
    assert _run(tmp_path, "embed", host, work / "w.pbm", "-o", tmp_path / "o.pfm", "--key", KEY,
                "--delta", "1") == 5
    assert _run(tmp_path, "embed", host, work / "w.pbm", "-o", tmp_path / "o.pfm") == 5
    assert _run(tmp_path, "extract", work / "m.png", "--sidecar", sidecar, "-o", tmp_path / "x.pbm",
                "--key", SecretKey.from_int(9).hex()) == 4
    assert _run(tmp_path, "extract", work / "m.png", "-o", tmp_path / "x.pbm") == 5
    assert _run(tmp_path, "attack", work / "m.pfm", "--kind", "jpeg", "-o", tmp_path / "a.png") == 5
    assert _run(tmp_path, "attack", work / "m.png", "--kind", "blur", "-o", tmp_path / "a.png") == 5
    assert _run(tmp_path, "benchmark", tmp_path / "empty", "--key", KEY) == 5
    assert _run(tmp_path, "frobnicate") == 5
