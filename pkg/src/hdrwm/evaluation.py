"""Benchmark protocol: embed, attack, extract, score; for a corpus and a parameter grid.

Reports are plain dicts built only from inputs and results (no timestamps,
no host names), so identical configurations give byte-identical JSON.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from .attacks import apply_attack
from .errors import ConfigError, DegenerateInputError
from .imagecore import load_image
from .metrics import IDENTICAL, ber, nc, nc_raw, psnr, ssim
from .watermark import EmbedParams, embed_watermark, extract_details

REPORT_SCHEMA = "hdrwm-report/1"
HDR_SUFFIXES = (".hdr", ".rgbe", ".pic", ".pfm")


def list_corpus(directory):
    if not os.path.isdir(directory):
        raise ConfigError(f"corpus directory {directory} does not exist")
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(HDR_SUFFIXES))
    if not names:
        raise ConfigError(f"corpus directory {directory} holds no HDR images")
    return [os.path.join(directory, n) for n in names]


def _num(x):
    """JSON-safe float: inf becomes the 'identical' sentinel, rounding avoided."""
    if x is None:
        return None
    if x == IDENTICAL:
        return "identical"
    return float(x)


def _safe_nc(w, w2):
    try:
        return nc(w, w2), nc_raw(w, w2)
    except DegenerateInputError:
        return None, None


def run_cell(name, host, watermark, key, params, attacks, uniform=False, embed_kwargs=None):
    """One image x parameter setting x mode; returns a JSON-ready dict."""
    res = embed_watermark(host, watermark, key, params, uniform=uniform, **(embed_kwargs or {}))
    clean = extract_details(res.sdr, key, res.metadata)
    c_nc, c_raw = _safe_nc(watermark, clean.watermark)
    cell = {
        "image": name, "mode": "uniform" if uniform else "saliency",
        "alpha": params.alpha, "beta": params.beta,
        "psnr_db": _num(psnr(res.host_sdr, res.sdr)), "ssim": ssim(res.host_sdr, res.sdr),
        "embed_iterations": res.iterations, "residual_errors": res.residual_errors,
        "foreground_fraction": float(res.metadata.mask.bits.mean()),
        "clean": {"nc": c_nc, "nc_raw": c_raw, "ber": ber(watermark, clean.watermark),
                  "tau_ok": clean.tau.tau == res.metadata.tau},
        "attacks": [],
    }
    for spec in attacks:
        attacked = apply_attack(res.sdr, spec)
        out = extract_details(attacked, key, res.metadata)
        a_nc, a_raw = _safe_nc(watermark, out.watermark)
        cell["attacks"].append({
            "attack": spec.label(), "spec": spec.to_dict(), "nc": a_nc, "nc_raw": a_raw,
            "ber": ber(watermark, out.watermark), "tau_ok": out.tau.tau == res.metadata.tau,
            "attack_psnr_db": _num(psnr(res.sdr, attacked)),
        })
    return cell


def _run_cell_job(args):
    return run_cell(*args)


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def summarize(cells, attacks):
    """Per-attack mean NC for each mode, per-(alpha, beta) mean PSNR and attacked NC."""
    labels = [a.label() for a in attacks]
    by_attack = [{"attack": "none",
                  "nc_w1": _mean([c["clean"]["nc"] for c in cells if c["mode"] == "saliency"]),
                  "nc_w2": _mean([c["clean"]["nc"] for c in cells if c["mode"] == "uniform"]),
                  "tau_ok_rate": _mean([float(c["clean"]["tau_ok"]) for c in cells])}]
    for lab in labels:
        row = {"attack": lab}
        for mode, col in (("saliency", "nc_w1"), ("uniform", "nc_w2")):
            row[col] = _mean([a["nc"] for c in cells if c["mode"] == mode
                              for a in c["attacks"] if a["attack"] == lab])
        row["tau_ok_rate"] = _mean([float(a["tau_ok"]) for c in cells
                                    for a in c["attacks"] if a["attack"] == lab])
        by_attack.append(row)
    grid = {}
    for c in cells:
        if c["mode"] != "saliency":
            continue
        g = grid.setdefault((c["alpha"], c["beta"]), {"psnr": [], "ssim": [], "nc": []})
        if c["psnr_db"] != "identical":
            g["psnr"].append(c["psnr_db"])
        g["ssim"].append(c["ssim"])
        g["nc"].extend(a["nc"] for a in c["attacks"])
    grid_rows = [{"alpha": a, "beta": b, "psnr_db": _mean(v["psnr"]), "ssim": _mean(v["ssim"]),
                  "attacked_nc": _mean(v["nc"])} for (a, b), v in sorted(grid.items())]
    # the means cover attacked cells only; the clean row is reported separately
    w1 = _mean([r["nc_w1"] for r in by_attack[1:]])
    w2 = _mean([r["nc_w2"] for r in by_attack[1:]])
    return {"by_attack": by_attack, "grid": grid_rows, "mean_nc_w1": w1, "mean_nc_w2": w2}


def run_benchmark(images, watermark, key, attacks, alphas=(0.04,), betas=(0.02,),
                  base_params=None, uniform_baseline=True, workers=1, embed_kwargs=None):
    """``images`` is a list of (name, HdrImage); returns the report dict."""
    if not images:
        raise ConfigError("benchmark needs at least one image")
    base_params = base_params or EmbedParams()
    jobs = []
    for name, host in images:
        for a in alphas:
            for b in betas:
                params = replace(base_params, alpha=float(a), beta=float(b))
                jobs.append((name, host, watermark, key, params, attacks, False, embed_kwargs))
        if uniform_baseline:
            jobs.append((name, host, watermark, key, base_params, attacks, True, embed_kwargs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell_job, jobs))
    else:
        cells = [run_cell(*j) for j in jobs]
    cells.sort(key=lambda c: (c["image"], c["mode"], c["alpha"], c["beta"]))
    return {
        "schema": REPORT_SCHEMA,
        "tool": {"name": "hdrwm", "version": __version__},
        "command": "benchmark",
        "config": {"params": base_params.to_dict(), "alphas": [float(a) for a in alphas],
                   "betas": [float(b) for b in betas], "uniform_baseline": uniform_baseline,
                   "attacks": [s.to_dict() for s in attacks],
                   "images": [n for n, _ in images],
                   "watermark": {"width": watermark.width, "height": watermark.height},
                   "embed": {k: v for k, v in (embed_kwargs or {}).items()
                             if isinstance(v, (str, int, float, bool))}},
        "key_fingerprint": key.fingerprint(),
        "cells": cells,
        "summary": summarize(cells, attacks),
    }


def load_images(paths):
    return [(os.path.basename(p), load_image(p)) for p in paths]


def dumps(report):
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def _fmt(v, spec="{:.4f}"):
    return "-" if v is None else spec.format(v)


def format_table(report):
    """Aligned text tables: NC per attack (W1 saliency / W2 uniform) and the grid."""
    s = report["summary"]
    lines = [f"{'attack':<22}{'NC_W1':>10}{'NC_W2':>10}{'tau ok':>9}"]
    for r in s["by_attack"]:
        lines.append(f"{r['attack']:<22}{_fmt(r['nc_w1']):>10}{_fmt(r['nc_w2']):>10}"
                     f"{_fmt(r['tau_ok_rate'], '{:.2f}'):>9}")
    lines.append(f"{'mean':<22}{_fmt(s['mean_nc_w1']):>10}{_fmt(s['mean_nc_w2']):>10}")
    lines.append("")
    lines.append(f"{'alpha':>7}{'beta':>7}{'PSNR dB':>10}{'SSIM':>9}{'att. NC':>10}")
    for g in s["grid"]:
        lines.append(f"{g['alpha']:>7g}{g['beta']:>7g}{_fmt(g['psnr_db'], '{:.2f}'):>10}"
                     f"{_fmt(g['ssim']):>9}{_fmt(g['attacked_nc']):>10}")
    return "\n".join(lines) + "\n"
