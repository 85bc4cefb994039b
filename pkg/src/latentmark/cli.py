"""Command-line surface.

Subcommands: embed, detect, decode, attack, run-plan, grad-check,
serve-check, plus export-extractor and make-corpus utilities.  Images are
exchanged as 8-bit RGB PNG (lossless, so quantization semantics survive
the round trip); every output image gets a flat key=value sidecar.

Exit codes: 0 success/detected, 1 not-detected, 2 usage, 3 I/O,
4 numeric, 5 remote.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import attacks, embed, evalharness, features, gradsuite, wmcodec
from .augment import TransformSpec
from .errors import DimensionError, NumericError, ParameterError, RemoteError
from .optim import IterationPlan
from .percept import ConstraintSpec, psnr

EXIT_OK = 0
EXIT_NOT_DETECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_REMOTE = 5

# every config key with its documented default; unknown keys are rejected
CONFIG_DEFAULTS = {
    "extractor": "convnet",       # convnet | linear | remote
    "extractor_seed": 0,
    "latent_dim": 128,
    "endpoint": "",
    "pfa": 1e-4,
    "psnr_w": 42.0,
    "psnr_a": 35.0,
    "iterations": 100,
    "embed_lam": 1e5,
    "embed_eta": 0.2,
    "attack_lam": 1e4,
    "attack_eta": 1.0,
    "margin": -1.0,               # < 0: adaptive per image
    "atten": 0,                   # texture-masked constraint projection
    "eot": 1,                     # embedding only; attacks never use it
    "rot_min": -10.0,
    "rot_max": 10.0,
    "crop_min": 0.7,
    "crop_max": 1.0,
    "blur_min": 0.5,
    "blur_max": 2.0,
    "wiener_window": 5,
    "seed": 0,
}


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    pairs = []
    if path:
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                pairs.append(line)
    pairs.extend(overrides)
    for pair in pairs:
        if "=" not in pair:
            raise ParameterError(f"config entries are key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        k = k.strip()
        if k not in cfg:
            raise ParameterError(f"unknown config key: {k!r}")
        default = CONFIG_DEFAULTS[k]
        cfg[k] = type(default)(v.strip()) if not isinstance(default, str) else v.strip()
    return cfg


def _build_extractor(cfg: dict):
    kind = cfg["extractor"]
    if kind == "convnet":
        return features.make_convnet_extractor(cfg["extractor_seed"], cfg["latent_dim"])
    if kind == "linear":
        raise ParameterError("linear extractor needs image extents; use the API")
    if kind == "remote":
        if not cfg["endpoint"]:
            raise ParameterError("remote extractor needs endpoint=HOST:PORT")
        return features.make_remote_extractor(cfg["endpoint"], cfg["latent_dim"])
    raise ParameterError(f"unknown extractor kind: {kind!r}")


def _transform_specs(cfg: dict):
    if not cfg["eot"]:
        return ()
    return (
        TransformSpec("identity"),
        TransformSpec("rotation", cfg["rot_min"], cfg["rot_max"]),
        TransformSpec("crop", cfg["crop_min"], cfg["crop_max"]),
        TransformSpec("blur", cfg["blur_min"], cfg["blur_max"]),
    )


def read_image(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def write_image(path: str, arr: np.ndarray, sidecar: dict | None = None) -> None:
    Image.fromarray(np.clip(arr, 0, 255).astype(np.uint8)).save(path)
    if sidecar is not None:
        lines = "".join(f"{k}={v}\n" for k, v in sidecar.items())
        Path(str(path) + ".meta").write_text(lines)


def _bits_to_message(bits: str) -> wmcodec.Message:
    if not bits or any(c not in "01" for c in bits):
        raise ParameterError("bits must be a nonempty string over {0, 1}")
    return wmcodec.Message(tuple(1 if c == "1" else -1 for c in bits))


def _message_to_bits(m: wmcodec.Message) -> str:
    return "".join("1" if b == 1 else "0" for b in m.bits)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_embed(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    x0 = read_image(args.input)
    extractor = _build_extractor(cfg)
    key = wmcodec.SecretKey(args.key)
    ecfg = embed.EmbedConfig(
        plan=IterationPlan(iterations=cfg["iterations"],
                           constraints=ConstraintSpec(cfg["psnr_w"], mode="exact",
                                                      attenuation=bool(cfg["atten"])),
                           lam=cfg["embed_lam"], eta=cfg["embed_eta"]),
        margin=None if cfg["margin"] < 0 else cfg["margin"],
        transform_specs=_transform_specs(cfg))
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg["seed"], key.seed])))
    if args.bits:
        m = _bits_to_message(args.bits)
        xw = embed.embed_multibit(x0, key, m, extractor, ecfg, rng=rng)
        scheme, payload = "multi_bit", len(m)
    else:
        xw = embed.embed_zero_bit(x0, key, cfg["pfa"], extractor, ecfg, rng=rng)
        scheme, payload = "zero_bit", 0
    write_image(args.out, xw, {
        "scheme": scheme,
        "payload": payload,
        "achieved_psnr_w": f"{psnr(x0, xw):.4f}",
        "iterations": cfg["iterations"],
        "lam": cfg["embed_lam"],
        "eta": cfg["embed_eta"],
    })
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    x = read_image(args.input)
    extractor = _build_extractor(cfg)
    det = wmcodec.ConeDetector.from_key(
        wmcodec.SecretKey(args.key), extractor.latent_dim, cfg["pfa"])
    z = extractor.forward(x)
    detected = wmcodec.detect_zero_bit(z, det)
    cos_angle = float(abs(z @ det.carrier) / np.linalg.norm(z))
    print(json.dumps({"detected": detected, "pfa_target": det.target_pfa,
                      "cos_angle": cos_angle}))
    return EXIT_OK if detected else EXIT_NOT_DETECTED


def cmd_decode(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    x = read_image(args.input)
    extractor = _build_extractor(cfg)
    carriers = wmcodec.generate_carriers(
        wmcodec.SecretKey(args.key), args.payload, extractor.latent_dim)
    m_hat = wmcodec.decode_multibit(extractor.forward(x), carriers)
    print(_message_to_bits(m_hat))
    if args.expect_bits:
        expected = _bits_to_message(args.expect_bits)
        print(f"ber={wmcodec.bit_error_rate(expected, m_hat)}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    xw = read_image(args.input)
    extractor = _build_extractor(cfg)
    acfg = attacks.AttackConfig(plan=IterationPlan(
        iterations=cfg["iterations"],
        constraints=ConstraintSpec(cfg["psnr_a"], mode="cap",
                                   attenuation=bool(cfg["atten"])),
        lam=cfg["attack_lam"], eta=cfg["attack_eta"]))
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    if args.kind == "copy":
        if not args.target:
            raise ParameterError("copy attack needs --target IMAGE")
        xt = read_image(args.target)
        xa = attacks.copy_attack(xw, xt, extractor, acfg)
        ref = xt
    elif args.kind == "removal-untargeted":
        xa = attacks.removal_untargeted(xw, extractor, acfg)
        ref = xw
    else:  # removal-targeted
        strategy = attacks.TargetStrategy(args.strategy.replace("-", "_"),
                                          wiener_window=cfg["wiener_window"])
        if strategy.kind == "other_image":
            if not args.target:
                raise ParameterError("other-image strategy needs --target IMAGE")
            target = read_image(args.target)
        else:
            target = attacks.select_target(strategy, xw, [], extractor, rng)
        xa = attacks.removal_targeted(xw, target, extractor, acfg)
        ref = xw
    write_image(args.out, xa, {
        "attack": args.kind,
        "target_strategy": args.strategy if args.kind == "removal-targeted" else "",
        "target_psnr_a": cfg["psnr_a"],
        "achieved_psnr_a": f"{psnr(ref, xa):.4f}",
        "iterations": cfg["iterations"],
        "lam": cfg["attack_lam"],
        "eta": cfg["attack_eta"],
    })
    return EXIT_OK


def cmd_run_plan(args) -> int:
    plan = evalharness.load_plan(args.plan)
    import logging
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    rows, failures, _ = evalharness.run_plan(plan, args.out, progress=True)
    print(f"rows={len(rows)} failures={len(failures)} out={args.out}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    results = gradsuite.run_suite()
    worst = gradsuite.worst_error(results)
    for name, err in results:
        status = "ok" if err <= gradsuite.KERNEL_TOL else "FAIL"
        print(f"{name:32s} {err:.3e}  {status}")
    print(f"worst={worst:.3e}")
    return EXIT_OK if worst <= gradsuite.KERNEL_TOL else EXIT_NUMERIC


def cmd_serve_check(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    if not cfg["endpoint"]:
        raise ParameterError("serve-check needs --endpoint")
    if args.weights:
        twin = features.load_convnet_weights(args.weights)
    else:
        twin = features.make_convnet_extractor(cfg["extractor_seed"], cfg["latent_dim"])
    remote = features.make_remote_extractor(cfg["endpoint"], twin.latent_dim)
    try:
        deltas = features.serve_check(remote, twin, seed=cfg["seed"])
    finally:
        remote.close()
    print(json.dumps(deltas))
    ok = deltas["forward_delta"] <= 1e-4 and deltas["vjp_delta"] <= 1e-4
    if not ok:
        raise RemoteError(f"loopback deltas exceed 1e-4: {deltas}")
    return EXIT_OK


def cmd_export_extractor(args) -> int:
    cfg = load_config(args.config, args.set or [])
    _apply_flag_overrides(cfg, args)
    extractor = features.make_convnet_extractor(cfg["extractor_seed"], cfg["latent_dim"])
    features.export_convnet_weights(extractor, args.out)
    print(f"exported convnet(seed={cfg['extractor_seed']}, d={cfg['latent_dim']}) -> {args.out}")
    return EXIT_OK


def cmd_make_corpus(args) -> int:
    paths = evalharness.synth_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(paths)} images under {args.out}")
    return EXIT_OK


def cmd_show_config(args) -> int:
    cfg = load_config(args.config, args.set or [])
    for k in CONFIG_DEFAULTS:
        print(f"{k}={cfg[k]}")
    return EXIT_OK


def _apply_flag_overrides(cfg: dict, args) -> None:
    if getattr(args, "extractor", None):
        cfg["extractor"] = args.extractor
    if getattr(args, "endpoint", None):
        cfg["endpoint"] = args.endpoint
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="stream seed")
    p.add_argument("--extractor", choices=["linear", "convnet", "remote"])
    p.add_argument("--endpoint", help="remote extractor address")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latentmark", description=__doc__)
    ap.add_argument("--show-config", action="store_true",
                    help="print the resolved configuration and exit")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("embed", help="embed a zero-bit or multi-bit watermark")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--key", type=int, required=True)
    p.add_argument("--bits", help="payload bits (string over 0/1); omit for zero-bit")
    _common_flags(p)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("detect", help="zero-bit detection")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--key", type=int, required=True)
    _common_flags(p)
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("decode", help="multi-bit decoding")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--key", type=int, required=True)
    p.add_argument("--payload", type=int, required=True)
    p.add_argument("--expect-bits", help="ground truth bits; prints BER")
    _common_flags(p)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("attack", help="copy or removal attack (no key needed)")
    p.add_argument("--kind", required=True,
                   choices=["copy", "removal-untargeted", "removal-targeted"])
    p.add_argument("--in", dest="input", required=True, help="watermarked image")
    p.add_argument("--target", help="target image (copy / other-image strategy)")
    p.add_argument("--strategy", default="wiener-denoised",
                   choices=["other-image", "wiener-denoised", "random-carrier"])
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("run-plan", help="run a full experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run_plan)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("serve-check", help="loopback check against a feature server")
    p.add_argument("--weights", help="compare against exported weights instead of a seed")
    _common_flags(p)
    p.set_defaults(fn=cmd_serve_check)

    p = sub.add_parser("export-extractor", help="export convnet weights as JSON")
    p.add_argument("--out", required=True)
    _common_flags(p)
    p.set_defaults(fn=cmd_export_extractor)

    p = sub.add_parser("make-corpus", help="write a synthetic test corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_corpus)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.show_config:
        return cmd_show_config(argparse.Namespace(config=None, set=None))
    if not getattr(args, "fn", None):
        ap.print_usage()
        return EXIT_USAGE
    try:
        return args.fn(args)
    except (ParameterError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RemoteError as e:
        print(f"remote error: {e}", file=sys.stderr)
        return EXIT_REMOTE
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
