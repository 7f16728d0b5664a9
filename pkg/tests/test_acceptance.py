"""Acceptance gate: ten criteria, each printing one PASS/FAIL line.

Run with ``pytest -m acceptance -s`` to see the lines inline; a summary block
is also written at the end of every pytest run that includes this module.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from hdrwm.attacks import default_suite
from hdrwm.cli import main
from hdrwm.corpus import random_watermark
from hdrwm.evaluation import run_benchmark
from hdrwm.imagecore import BitImage, SdrImage, save_image
from hdrwm.lwt import KERNELS, lwt_forward, lwt_inverse
from hdrwm.metrics import nc_raw, psnr
from hdrwm.saliency import BCE_EPS, BinaryMask, SaliencyMap, bce_loss
from hdrwm.watermark import (
    QIM_VARIANTS,
    embed_watermark,
    extract_watermark,
    qim_embed_array,
    qim_extract_array,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

GRID_ALPHAS = (0.04, 0.08, 0.16)
GRID_BETAS = (0.02, 0.04, 0.08)


def verdict(request, capsys, n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n:2d} {title}: {detail}"
    request.config.acceptance_lines[n] = line
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="module")
def bench(corpus, logo, key):
    return run_benchmark(corpus, logo, key, default_suite(0))


def _cells(bench, mode, prefix):
    return [a["nc"] for c in bench["cells"] if c["mode"] == mode
            for a in c["attacks"] if a["attack"].startswith(prefix)]


def test_01_clean_channel(request, capsys, corpus, logo, key):
    worst_nc, worst_ber, worst_t = 1.0, 0.0, 0.0
    for _, host in corpus:
        t0 = time.perf_counter()
        res = embed_watermark(host, logo, key)
        out = extract_watermark(res.sdr, key, res.metadata)
        worst_t = max(worst_t, time.perf_counter() - t0)
        worst_nc = min(worst_nc, nc_raw(logo, out))
        worst_ber = max(worst_ber, float(np.mean(out.bits != logo.bits)))
    ok = len(corpus) >= 5 and worst_nc >= 0.999 and worst_ber == 0 and worst_t <= 5.0
    verdict(request, capsys, 1, "clean channel", ok,
            f"min NC {worst_nc:.6f}, max BER {worst_ber:g}, max {worst_t:.2f} s/image")


def test_02_qim_sweep(request, capsys):
    phi = np.arange(0, 1001)
    t0 = time.perf_counter()
    recovered = distortion_ok = total = 0
    for variant in QIM_VARIANTS:
        for delta in (2, 4, 8, 16):
            for w in (0, 1):
                marked = qim_embed_array(phi, np.full_like(phi, w), delta, variant)
                recovered += int(np.sum(qim_extract_array(marked, delta, variant) == w))
                distortion_ok += int(np.sum(np.abs(marked - phi) < 2 * delta))
                total += phi.size
    dt = time.perf_counter() - t0
    ok = recovered == total and distortion_ok == total and dt < 1.0
    verdict(request, capsys, 2, "QIM sweep", ok,
            f"{recovered}/{total} recovered, {distortion_ok}/{total} within 2*delta, {dt:.3f} s")


def test_03_lwt_reconstruction(request, capsys):
    rng = np.random.default_rng(3)
    exact = 0
    t0 = time.perf_counter()
    for kernel in KERNELS:
        for _ in range(100):
            x = rng.integers(-(2 ** 20), 2 ** 20, (512, 512))
            exact += np.array_equal(lwt_inverse(lwt_forward(x, kernel)), x)
    dt = time.perf_counter() - t0
    ok = exact == 100 * len(KERNELS) and dt < 10.0
    verdict(request, capsys, 3, "LWT reconstruction", ok,
            f"{exact}/{100 * len(KERNELS)} bit-identical, {dt:.2f} s")


def test_04_quality(request, capsys, bench):
    cells = [c for c in bench["cells"] if c["mode"] == "saliency"]
    p = min(c["psnr_db"] for c in cells)
    s = min(c["ssim"] for c in cells)
    verdict(request, capsys, 4, "marked-image quality", p >= 45.0 and s >= 0.98,
            f"min PSNR {p:.2f} dB, min SSIM {s:.4f} over {len(cells)} images")


def test_05_robustness_floor(request, capsys, bench):
    floors = (("noise", 0.90), ("mean-filter", 0.90), ("jpeg", 0.85))
    parts, ok = [], True
    for prefix, floor in floors:
        vals = _cells(bench, "saliency", prefix)
        worst = min(v if v is not None else -1.0 for v in vals)
        ok &= worst >= floor
        parts.append(f"{prefix} min NC {worst:.4f} (need {floor})")
    verdict(request, capsys, 5, "robustness floor", ok, "; ".join(parts))


def test_06_saliency_advantage(request, capsys, bench):
    s = bench["summary"]
    w1, w2 = s["mean_nc_w1"], s["mean_nc_w2"]
    verdict(request, capsys, 6, "saliency advantage", w1 >= w2,
            f"mean NC saliency {w1:.4f} vs uniform {w2:.4f} over {len(bench['config']['images'])} "
            f"images and {len(bench['config']['attacks'])} attacks")


def test_07_strength_trend(request, capsys, corpus, logo, key):
    rep = run_benchmark(corpus[:3], logo, key, default_suite(0), GRID_ALPHAS, GRID_BETAS,
                        uniform_baseline=False)
    g = {(r["alpha"], r["beta"]): r for r in rep["summary"]["grid"]}
    bad = []
    for i in range(3):
        for j in range(2):
            for a, b in (((GRID_ALPHAS[j], GRID_BETAS[i]), (GRID_ALPHAS[j + 1], GRID_BETAS[i])),
                         ((GRID_ALPHAS[i], GRID_BETAS[j]), (GRID_ALPHAS[i], GRID_BETAS[j + 1]))):
                if g[b]["psnr_db"] > g[a]["psnr_db"]:
                    bad.append(f"PSNR rises {a}->{b}")
                if g[b]["attacked_nc"] < g[a]["attacked_nc"]:
                    bad.append(f"NC falls {a}->{b}")
    lo, hi = g[(GRID_ALPHAS[0], GRID_BETAS[0])], g[(GRID_ALPHAS[-1], GRID_BETAS[-1])]
    detail = (f"PSNR {lo['psnr_db']:.2f} -> {hi['psnr_db']:.2f} dB, attacked NC "
              f"{lo['attacked_nc']:.4f} -> {hi['attacked_nc']:.4f}")
    verdict(request, capsys, 7, "strength trend", not bad, detail + ("; " + ", ".join(bad) if bad else ""))


def _pearson_loop(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    da = math.sqrt(sum((x - ma) ** 2 for x in a))
    db = math.sqrt(sum((y - mb) ** 2 for y in b))
    return num / (da * db)


def test_08_metric_oracles(request, capsys):
    rng = np.random.default_rng(8)
    nc_err = 0.0
    for _ in range(20):
        w = rng.integers(0, 2, (32, 32))
        wp = np.where(rng.random((32, 32)) < 0.2, 1 - w, w)
        ref = _pearson_loop(w.ravel().tolist(), wp.ravel().tolist())
        nc_err = max(nc_err, abs(nc_raw(BitImage(w), BitImage(wp)) - ref))
    psnr_err = 0.0
    for _ in range(20):
        a = rng.integers(0, 256, (64, 64), dtype=np.uint8)
        b = np.clip(a.astype(int) + rng.integers(-9, 10, a.shape), 0, 255).astype(np.uint8)
        m = sum((int(x) - int(y)) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
        ref = 10 * math.log10(255 ** 2 / m)
        got = psnr(SdrImage(np.repeat(a[..., None], 3, 2)), SdrImage(np.repeat(b[..., None], 3, 2)))
        psnr_err = max(psnr_err, abs(got - ref))
    truth = BinaryMask(rng.integers(0, 2, (16, 16)))
    bce_err = max(abs(bce_loss(SaliencyMap(truth.bits.astype(float)), truth) + math.log(1 - BCE_EPS)),
                  abs(bce_loss(SaliencyMap(np.full((16, 16), 0.5)), truth) - math.log(2)),
                  abs(bce_loss(SaliencyMap(1.0 - truth.bits), truth) + math.log(BCE_EPS)))
    ok = nc_err <= 1e-12 and psnr_err <= 1e-9 and bce_err <= 1e-9
    verdict(request, capsys, 8, "metric oracles", ok,
            f"NC err {nc_err:.1e}, PSNR err {psnr_err:.1e} dB, BCE err {bce_err:.1e}")


def _digest(paths):
    h = hashlib.sha256()
    for p in paths:
        h.update(p.read_bytes())
    return h.hexdigest()


def test_09_determinism(request, capsys, tmp_path, key):
    k = key.hex()
    corpus_dirs = []
    for run in ("a", "b"):
        assert main(["corpus", str(tmp_path / run / "corpus"), "--count", "1"]) == 0
        corpus_dirs.append(tmp_path / run / "corpus")
    save_image(random_watermark(seed=9), tmp_path / "w.pbm")
    (tmp_path / "suite.json").write_text('{"attacks": [{"kind": "noise", "seed": 4}, {"kind": "crop"}]}')

    def run(d):
        c = d / "corpus"
        host = next(c.glob("*.pfm"))
        argvs = [
            ["embed", host, tmp_path / "w.pbm", "-o", d / "m.pfm", "--sdr", d / "m.png",
             "--report", d / "embed.json", "--key", k],
            ["extract", d / "m.pfm", "--sidecar", d / "m.json", "-o", d / "x.pbm",
             "--reference", tmp_path / "w.pbm", "--report", d / "extract.json", "--key", k],
            ["attack", d / "m.png", "--attacks", tmp_path / "suite.json", "-o", d / "att",
             "--report", d / "attack.json"],
            ["evaluate", d / "m.pfm", d / "m.png", "--sidecar", d / "m.json",
             "--report", d / "evaluate.json"],
            ["benchmark", c, "--attacks", tmp_path / "suite.json", "--report", d / "bench.json",
             "--table", d / "bench.txt", "--key", k],
            ["sweep", c, "--qualities", "50", "70", "20", "--report", d / "sweep.json",
             "--no-uniform", "--key", k],
        ]
        codes = [main([str(a) for a in argv]) for argv in argvs]
        files = sorted(p for p in d.rglob("*") if p.is_file())
        return codes, [p.relative_to(d) for p in files], _digest(files)

    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    capsys.readouterr()
    ok = a[0] == b[0] == [0] * 6 and a[1] == b[1] and a[2] == b[2]
    verdict(request, capsys, 9, "determinism", ok,
            f"{len(a[1])} artifacts from 7 commands, digest {a[2][:16]} vs {b[2][:16]}")


def test_10_tau_sync(request, capsys, bench):
    cells = [a["tau_ok"] for c in bench["cells"] for a in c["attacks"]]
    rate = sum(cells) / len(cells)
    verdict(request, capsys, 10, "tau synchronization", rate >= 0.95,
            f"{sum(cells)}/{len(cells)} image x attack cells decode tau exactly ({rate:.1%})")
