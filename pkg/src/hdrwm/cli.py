"""``hdrwm`` command line: embed, extract, attack, evaluate, benchmark, sweep.

Exit codes: 0 ok, 1 other watermarking error, 2 capacity, 3 I/O, 4 format,
5 configuration (including bad arguments). The key comes from ``--key``,
``--key-file`` or the ``HDRWM_KEY`` environment variable, in that order.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .attacks import AttackSpec, apply_attack, default_suite, jpeg_sweep, load_suite
from .corpus import logo_watermark, make_scene, scene_names
from .errors import (
    CapacityError,
    ColorspaceError,
    ConfigError,
    DimensionError,
    FormatError,
    ImageIOError,
    InvalidImageError,
    MetadataError,
    WatermarkError,
)
from .evaluation import (
    REPORT_SCHEMA,
    dumps,
    format_table,
    list_corpus,
    load_images,
    run_benchmark,
)
from .imagecore import BitImage, HdrImage, SdrImage, load_gray, load_image, save_image
from .keys import SecretKey
from .metrics import IDENTICAL, psnr, quality_report, ssim
from .watermark import (
    EmbedParams,
    WatermarkMetadata,
    embed_watermark,
    extract_details,
    render_sdr,
)

EXIT_OK, EXIT_ERROR, EXIT_CAPACITY, EXIT_IO, EXIT_FORMAT, EXIT_CONFIG = 0, 1, 2, 3, 4, 5

log = logging.getLogger("hdrwm")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would collide with the capacity code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers


def _key(args):
    if args.key:
        return SecretKey.from_hex(args.key)
    if args.key_file:
        return SecretKey.from_file(args.key_file)
    return SecretKey.from_env()


def _params(args):
    base = EmbedParams()
    if getattr(args, "params", None):
        base = EmbedParams.from_dict(_read_json(args.params).get("params", {}))
    overrides = {}
    for flag, name in (("delta", "delta_base"), ("bitplane", "bitplane_n"), ("alpha", "alpha"),
                       ("beta", "beta"), ("qim", "qim_variant"),
                       ("max_iterations", "max_iterations")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "subbands", None):
        overrides["subband_choice"] = tuple(s.strip() for s in args.subbands.split(",") if s)
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


def _load_sidecar(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return WatermarkMetadata.from_json(fh.read())
    except OSError as exc:
        raise ImageIOError(f"cannot read sidecar {path}: {exc}") from exc


def _sidecar_path(out, explicit):
    return explicit or os.path.splitext(out)[0] + ".json"


def _as_sdr(image, meta=None):
    """SDR view of a loaded image; HDR inputs are rendered with the sidecar's operator."""
    if isinstance(image, SdrImage):
        return image
    if isinstance(image, HdrImage):
        if meta is None:
            raise ConfigError("rendering an HDR input needs --sidecar")
        return render_sdr(image, meta.tmo_meta())
    raise FormatError("expected an HDR or PNG image")


def _load_watermark(path):
    img = load_image(path)
    if isinstance(img, BitImage):
        return img
    if isinstance(img, SdrImage):
        return BitImage((load_gray(path) > 127).astype("uint8"))
    raise FormatError(f"{path}: watermark must be PBM or PNG")


def _saliency(args):
    spec = args.saliency
    if spec == "builtin":
        return "builtin-contrast", None
    if spec.startswith("map="):
        return "external-map", load_gray(spec[4:]) / 255.0
    raise ConfigError(f"--saliency must be 'builtin' or 'map=PATH', got {spec!r}")


def _attack_params(pairs):
    params = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            params[k] = json.loads(v)
        except json.JSONDecodeError:
            params[k] = v
    return params


def _suite(args):
    if getattr(args, "attacks", None):
        return load_suite(args.attacks)
    return default_suite(args.seed)


def _report(command, key=None, **fields):
    doc = {"schema": REPORT_SCHEMA, "tool": {"name": "hdrwm", "version": __version__},
           "command": command}
    if key is not None:
        doc["key_fingerprint"] = key.fingerprint()
    doc.update(fields)
    return doc


def _emit(args, report):
    text = dumps(report)
    if getattr(args, "report", None):
        _write_text(args.report, text)
    return text


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


# --------------------------------------------------------------------------
# commands


def cmd_embed(args):
    key = _key(args)
    params = _params(args)
    host = load_image(args.host)
    if not isinstance(host, HdrImage):
        raise FormatError(f"{args.host}: host must be an HDR image (.hdr or .pfm)")
    w = _load_watermark(args.watermark)
    source, external = _saliency(args)
    res = embed_watermark(host, w, key, params, saliency_source=source, external_map=external,
                          threshold=args.threshold, tmo=args.tmo, uniform=args.uniform)
    save_image(res.hdr, args.output)
    sidecar = _sidecar_path(args.output, args.sidecar)
    _write_text(sidecar, res.metadata.to_json())
    if args.sdr:
        save_image(res.sdr, args.sdr)
    q = quality_report(res.host_sdr, res.sdr, w, extract_details(res.sdr, key, res.metadata)
                       .watermark)
    rep = _report("embed", key, config={
        "host": os.path.basename(args.host), "watermark": os.path.basename(args.watermark),
        "params": params.to_dict(), "tmo": args.tmo, "saliency": args.saliency,
        "threshold": args.threshold, "uniform": args.uniform, "seed": args.seed},
        outputs={"hdr": os.path.basename(args.output), "sidecar": os.path.basename(sidecar)},
        tau=res.metadata.tau, iterations=res.iterations, residual_errors=res.residual_errors,
        quality=q.to_dict())
    _emit(args, rep)
    if res.residual_errors:
        print(f"warning: {res.residual_errors} carriers did not settle", file=sys.stderr)
    print(f"embedded {w.width}x{w.height} watermark: PSNR {q.psnr_db:.2f} dB, "
          f"SSIM {q.ssim:.4f}, tau {res.metadata.tau}")
    return EXIT_OK


def cmd_extract(args):
    key = _key(args)
    meta = _load_sidecar(args.sidecar)
    sdr = _as_sdr(load_image(args.image), meta)
    out = extract_details(sdr, key, meta, verify_key=not args.no_verify_key)
    save_image(out.watermark, args.output)
    fields = {"config": {"image": os.path.basename(args.image),
                         "sidecar": os.path.basename(args.sidecar)},
              "tau": {"recovered": out.tau.tau, "expected": meta.tau,
                      "ones": [int(v) for v in out.tau.ones],
                      "valid": [int(v) for v in out.tau.valid]}}
    if args.reference:
        ref = _load_watermark(args.reference)
        q = quality_report(sdr, sdr, ref, out.watermark)
        fields["nc"], fields["nc_raw"], fields["ber"] = q.nc, q.nc_raw, q.ber
        print(f"NC {q.nc if q.nc is not None else float('nan'):.4f}  BER {q.ber:.6f}")
    _emit(args, _report("extract", key, **fields))
    print(f"tau recovered {out.tau.tau} (expected {meta.tau})")
    return EXIT_OK


def cmd_attack(args):
    meta = _load_sidecar(args.sidecar) if args.sidecar else None
    sdr = _as_sdr(load_image(args.image), meta)
    if args.attacks:
        specs = load_suite(args.attacks)
    elif args.kind:
        specs = [AttackSpec(args.kind, _attack_params(args.param), args.seed)]
    else:
        raise ConfigError("give --kind or --attacks")
    if len(specs) == 1 and args.output.lower().endswith(".png"):
        outputs = [args.output]
    else:
        os.makedirs(args.output, exist_ok=True)
        outputs = [os.path.join(args.output, f"{i:02d}-{s.kind}.png") for i, s in enumerate(specs)]
    for spec, path in zip(specs, outputs):
        save_image(apply_attack(sdr, spec), path)
    _emit(args, _report("attack", attacks=[s.to_dict() for s in specs],
                        outputs=[os.path.basename(p) for p in outputs],
                        config={"image": os.path.basename(args.image)}))
    print(f"wrote {len(outputs)} attacked image(s)")
    return EXIT_OK


def cmd_evaluate(args):
    meta = _load_sidecar(args.sidecar) if args.sidecar else None
    host = _as_sdr(load_image(args.host), meta)
    marked = _as_sdr(load_image(args.marked), meta)
    w = _load_watermark(args.watermark) if args.watermark else None
    wp = _load_watermark(args.extracted) if args.extracted else None
    if (w is None) != (wp is None):
        raise ConfigError("--watermark and --extracted go together")
    if w is None:
        q = {"psnr_db": psnr(host, marked, args.domain), "ssim": ssim(host, marked, args.domain),
             "nc": None, "nc_raw": None, "ber": None, "domain": args.domain}
        if q["psnr_db"] == IDENTICAL:
            q["psnr_db"] = "identical"
    else:
        q = quality_report(host, marked, w, wp, domain=args.domain).to_dict()
    rep = _report("evaluate", config={"host": os.path.basename(args.host),
                                      "marked": os.path.basename(args.marked),
                                      "domain": args.domain}, quality=q)
    _emit(args, rep)
    print(json.dumps(q, sort_keys=True))
    return EXIT_OK


def _bench_common(args, attacks, alphas, betas, command):
    key = _key(args)
    params = _params(args)
    images = load_images(list_corpus(args.corpus))
    w = _load_watermark(args.watermark) if args.watermark else logo_watermark()
    rep = run_benchmark(images, w, key, attacks, alphas, betas, params,
                        uniform_baseline=not args.no_uniform, workers=args.workers,
                        embed_kwargs={"tmo": args.tmo})
    rep["command"] = command
    rep["config"]["seed"] = args.seed
    _emit(args, rep)
    table = format_table(rep)
    if args.table:
        _write_text(args.table, table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_benchmark(args):
    alphas = _floats(args.alphas) if args.alphas else [_params(args).alpha]
    betas = _floats(args.betas) if args.betas else [_params(args).beta]
    return _bench_common(args, _suite(args), alphas, betas, "benchmark")


def cmd_sweep(args):
    lo, hi, step = args.qualities
    attacks = jpeg_sweep(range(lo, hi + 1, step))
    p = _params(args)
    return _bench_common(args, attacks, [p.alpha], [p.beta], "sweep")


def cmd_corpus(args):
    os.makedirs(args.output, exist_ok=True)
    for i, name in enumerate(scene_names(args.count)):
        save_image(make_scene(i, args.size), os.path.join(args.output, f"{name}.pfm"))
    save_image(logo_watermark(args.size // 2, args.size // 2),
               os.path.join(args.output, "logo.pbm"))
    print(f"wrote {args.count} scenes and logo.pbm to {args.output}")
    return EXIT_OK


def cmd_keygen(args):
    key = SecretKey.generate()
    if args.output:
        _write_text(args.output, key.hex() + "\n")
        print(f"key fingerprint {key.fingerprint()}")
    else:
        print(key.hex())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_key(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--key", help="64 hex characters (else $HDRWM_KEY)")
    g.add_argument("--key-file", help="file holding the hex key")


def _add_params(p):
    p.add_argument("--params", help="JSON file with a 'params' object (flags override it)")
    p.add_argument("--delta", type=int, help="base quantization step (default 8)")
    p.add_argument("--bitplane", type=int, help="bit-plane index n (default 3)")
    p.add_argument("--alpha", type=float, help="background strength (default 0.04)")
    p.add_argument("--beta", type=float, help="foreground strength (default 0.02)")
    p.add_argument("--subbands", help="comma list from HL,LH,HH (default HL)")
    p.add_argument("--qim", choices=("dither", "parity", "literal"), help="QIM codebook")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--tmo", choices=("durand", "exponent"), default="durand")


def _add_report(p):
    p.add_argument("--report", help="write a JSON report here")


def build_parser():
    parser = _Parser(prog="hdrwm", description="Saliency-partitioned HDR watermarking.")
    parser.add_argument("--version", action="version", version=f"hdrwm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="embed a binary watermark into an HDR image")
    p.add_argument("host")
    p.add_argument("watermark", help="PBM (or black/white PNG)")
    p.add_argument("-o", "--output", required=True, help=".hdr or .pfm")
    p.add_argument("--sidecar", help="metadata path (default: output with .json)")
    p.add_argument("--sdr", help="also save the SDR rendering as PNG")
    p.add_argument("--saliency", default="builtin", help="builtin or map=PATH")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--uniform", action="store_true", help="skip the saliency partition")
    p.add_argument("--seed", type=int, default=0, help="recorded; embedding is key-driven")
    _add_key(p)
    _add_params(p)
    _add_report(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover the watermark from an HDR or SDR image")
    p.add_argument("image")
    p.add_argument("--sidecar", required=True)
    p.add_argument("-o", "--output", required=True, help="PBM")
    p.add_argument("--reference", help="original watermark, to report NC and BER")
    p.add_argument("--no-verify-key", action="store_true",
                   help="extract even if the key fingerprint differs")
    _add_key(p)
    _add_report(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply one attack or a suite to an image")
    p.add_argument("image")
    p.add_argument("-o", "--output", required=True, help="PNG (single attack) or directory")
    p.add_argument("--kind")
    p.add_argument("--param", action="append", help="key=value (JSON value), repeatable")
    p.add_argument("--attacks", help="JSON attack suite")
    p.add_argument("--sidecar", help="needed to render an HDR input")
    p.add_argument("--seed", type=int, default=0)
    _add_report(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="PSNR/SSIM between host and marked, NC/BER of watermarks")
    p.add_argument("host")
    p.add_argument("marked")
    p.add_argument("--sidecar", help="needed to render HDR inputs")
    p.add_argument("--watermark")
    p.add_argument("--extracted")
    p.add_argument("--domain", choices=("sdr-luma", "sdr-rgb"), default="sdr-luma")
    _add_report(p)
    p.set_defaults(func=cmd_evaluate)

    for name, fn, helptext in (("benchmark", cmd_benchmark, "attack suite over a corpus"),
                               ("sweep", cmd_sweep, "JPEG quality sweep over a corpus")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("corpus", help="directory of .hdr/.pfm images")
        p.add_argument("--watermark", help="default: built-in 256x256 logo")
        p.add_argument("--no-uniform", action="store_true", help="skip the W2 baseline")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0, help="seed of stochastic attacks")
        p.add_argument("--table", help="write the text table here")
        if name == "benchmark":
            p.add_argument("--attacks", help="JSON attack suite (default: 7 standard attacks)")
            p.add_argument("--alphas", help="comma list, e.g. 0.04,0.08,0.16")
            p.add_argument("--betas", help="comma list, e.g. 0.02,0.04,0.08")
        else:
            p.add_argument("--qualities", type=int, nargs=3, default=(30, 90, 10),
                           metavar=("LO", "HI", "STEP"))
        _add_key(p)
        _add_params(p)
        _add_report(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("corpus", help="write the synthetic HDR test corpus")
    p.add_argument("output")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--size", type=int, default=512)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("keygen", help="generate a random key")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_keygen)
    return parser


def exit_code_for(exc):
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (FormatError, MetadataError, InvalidImageError, DimensionError,
                        ColorspaceError)):
        return EXIT_FORMAT
    if isinstance(exc, (ImageIOError, OSError)):
        return EXIT_IO
    return EXIT_ERROR


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: {exc} (needed={exc.needed}, available={exc.available})", file=sys.stderr)
        return EXIT_CAPACITY
    except (WatermarkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
