"""Experiment orchestration: embed with several keys, sweep attack budgets,
aggregate detection/decoding degradation into machine-readable reports.

Keys and messages live only here and in the codec; attack calls never see
them.  Every row is deterministic in the plan plus master seed: per-pair
random streams are derived from (master_seed, key_index, image_index), so
results do not depend on scheduling or worker count.

Multi-bit rows fill `detected` with "was the full message recovered"
(BER == 0); the primary multi-bit metric is the BER column.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import attacks, embed, features, wmcodec
from .errors import ParameterError
from .kernels import BACKEND as KERNEL_BACKEND
from .optim import IterationPlan
from .percept import ConstraintSpec, psnr, quantize

log = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "experiment_id", "key_seed", "image_id", "scheme", "attack",
    "target_strategy", "target_psnr_a", "achieved_psnr_a", "achieved_psnr_w",
    "detected", "ber", "pfa_target", "payload", "iterations", "lam", "eta",
    "walltime_ms",
]

FIGURE_FILES = {
    "fig2_copy_ber.csv": ("multi_bit", "copy", "ber"),
    "fig3_removal_unt_pm.csv": ("zero_bit", "removal_untargeted", "pm"),
    "fig4_removal_tgt_pm.csv": ("zero_bit", "removal_targeted", "pm"),
    "fig5_removal_tgt_ber.csv": ("multi_bit", "removal_targeted", "ber"),
}


@dataclass(frozen=True)
class SchemeJob:
    """One watermarking scheme instance and the attacks to run against it."""

    scheme: str  # "zero_bit" | "multi_bit"
    pfa: float = 1e-4
    payload: int = 0
    attacks: tuple = ()

    def __post_init__(self):
        if self.scheme not in ("zero_bit", "multi_bit"):
            raise ParameterError(f"unknown scheme: {self.scheme!r}")
        if self.scheme == "multi_bit" and self.payload < 1:
            raise ParameterError("multi_bit scheme needs a payload >= 1")
        for a in self.attacks:
            kind = a.split(":", 1)[0]
            if kind not in ("copy", "removal_untargeted", "removal_targeted"):
                raise ParameterError(f"unknown attack: {a!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    corpus: str = ""
    image_count: int = 16
    image_size: int = 128
    extractor_kind: str = "convnet"
    extractor_seed: int = 0
    latent_dim: int = 128
    endpoint: str = ""
    key_seeds: tuple = (101, 202, 303)
    psnr_w: float = 42.0
    psnr_a_targets: tuple = (30.0, 35.0, 40.0, 45.0)
    schemes: tuple = (
        SchemeJob("zero_bit", pfa=1e-4,
                  attacks=("copy", "removal_untargeted",
                           "removal_targeted:wiener_denoised")),
        SchemeJob("multi_bit", payload=10, attacks=("copy",)),
        SchemeJob("multi_bit", payload=30,
                  attacks=("removal_targeted:wiener_denoised",)),
    )
    embed_iterations: int = 100
    embed_lam: float = 1e5
    embed_eta: float = 0.2
    # transform averaging off by default: at desk scale the 30-bit payload
    # saturates the latent capacity and the stochastic transform draws push
    # the last margins below zero
    eot: bool = False
    margin: float = -1.0  # < 0: adaptive per image
    attack_iterations: int = 100
    attack_lam: float = 1e4
    attack_eta: float = 1.0
    attenuation: bool = False  # texture masking concentrates too hard at 128px
    wiener_window: int = 5     # desk-scale analog of the 25x25 full-scale filter
    master_seed: int = 0
    record_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.key_seeds or len(set(self.key_seeds)) != len(self.key_seeds):
            raise ParameterError("key_seeds must be nonempty and distinct")
        if not self.psnr_a_targets or not self.schemes:
            raise ParameterError("psnr_a_targets and schemes must be nonempty")

    def digest(self) -> str:
        doc = json.dumps(plan_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(doc).hexdigest()[:8]


def plan_to_dict(plan: ExperimentPlan) -> dict:
    d = asdict(plan)
    d["key_seeds"] = list(plan.key_seeds)
    d["psnr_a_targets"] = list(plan.psnr_a_targets)
    d["schemes"] = [dict(s, attacks=list(s["attacks"])) for s in d["schemes"]]
    return d


def plan_from_dict(doc: dict) -> ExperimentPlan:
    known = {f.name for f in fields(ExperimentPlan)}
    for k in doc:
        if k not in known:
            raise ParameterError(f"unknown plan key: {k!r}")
    doc = dict(doc)
    if "schemes" in doc:
        jobs = []
        sknown = {f.name for f in fields(SchemeJob)}
        for s in doc["schemes"]:
            for k in s:
                if k not in sknown:
                    raise ParameterError(f"unknown plan key: schemes.{k!r}")
            jobs.append(SchemeJob(**dict(s, attacks=tuple(s.get("attacks", ())))))
        doc["schemes"] = tuple(jobs)
    for k in ("key_seeds", "psnr_a_targets"):
        if k in doc:
            doc[k] = tuple(doc[k])
    return ExperimentPlan(**doc)


def load_plan(path: str) -> ExperimentPlan:
    with open(path) as f:
        return plan_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# corpus handling
# ---------------------------------------------------------------------------

def ingest_corpus(path: str, max_images: int, target_size: int):
    """Load up to max_images from a directory, lexicographic order,
    center-cropped square, resized, quantized to the 8-bit grid.

    Returns (names, images)."""
    root = Path(path)
    names, images = [], []
    for p in sorted(root.iterdir()):
        if len(images) >= max_images:
            break
        if not p.is_file():
            continue
        try:
            with Image.open(p) as im:
                im = im.convert("RGB")
                w, h = im.size
                side = min(w, h)
                left, top = (w - side) // 2, (h - side) // 2
                im = im.crop((left, top, left + side, top + side))
                im = im.resize((target_size, target_size), Image.BICUBIC)
                arr = np.asarray(im, dtype=np.float64)
        except Exception as e:  # undecodable file: skip with a warning
            log.warning("skipping %s: %s", p.name, e)
            continue
        names.append(p.stem)
        images.append(quantize(arr))
    if not images:
        raise ParameterError(f"no usable images under {path}")
    return names, images


def synth_corpus(out_dir: str, count: int, size: int, seed: int = 0) -> list[str]:
    """Write deterministic textured test images (smooth fields + band-limited
    noise + flat patches) as PNGs; returns the file paths."""
    from .ndgrad import Tape, gaussian_blur

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, i])))
        base = rng.uniform(40, 215, size=(8, 8, 3))
        img = np.kron(base, np.ones((size // 8, size // 8, 1)))
        img = gaussian_blur(Tape().leaf(img), size / 24.0).value
        noise = rng.standard_normal((size, size, 3)) * rng.uniform(6, 18)
        noise = gaussian_blur(Tape().leaf(noise), rng.uniform(0.6, 1.6)).value
        mask = np.zeros((size, size, 1))
        y0, x0 = rng.integers(0, size // 2, size=2)
        mask[y0:y0 + size // 2, x0:x0 + size // 2] = 1.0
        img = img + noise * (0.35 + 0.65 * mask)
        for _ in range(3):  # a few flat rectangles give the denoiser work
            ry, rx = rng.integers(0, size - size // 6, size=2)
            rh, rw = rng.integers(size // 12, size // 6, size=2)
            img[ry:ry + rh, rx:rx + rw] = rng.uniform(30, 225, size=3)
        arr = quantize(np.clip(img, 0, 255)).astype(np.uint8)
        p = out / f"synth{i:03d}.png"
        Image.fromarray(arr).save(p)
        paths.append(str(p))
    return paths


# ---------------------------------------------------------------------------
# plan execution
# ---------------------------------------------------------------------------

def _build_extractor(plan: ExperimentPlan):
    if plan.extractor_kind == "convnet":
        return features.make_convnet_extractor(plan.extractor_seed, plan.latent_dim)
    if plan.extractor_kind == "linear":
        return features.make_linear_extractor(
            plan.extractor_seed, plan.latent_dim, plan.image_size, plan.image_size)
    if plan.extractor_kind == "remote":
        return features.make_remote_extractor(plan.endpoint, plan.latent_dim)
    raise ParameterError(f"unknown extractor kind: {plan.extractor_kind!r}")


def _embed_config(plan: ExperimentPlan) -> embed.EmbedConfig:
    from .augment import default_specs

    return embed.EmbedConfig(
        plan=IterationPlan(
            iterations=plan.embed_iterations,
            constraints=ConstraintSpec(plan.psnr_w, mode="exact",
                                       attenuation=plan.attenuation),
            lam=plan.embed_lam, eta=plan.embed_eta),
        margin=None if plan.margin < 0 else plan.margin,
        transform_specs=tuple(default_specs()) if plan.eot else (),
    )


def _attack_config(plan: ExperimentPlan, target_psnr_a: float) -> attacks.AttackConfig:
    return attacks.AttackConfig(plan=IterationPlan(
        iterations=plan.attack_iterations,
        constraints=ConstraintSpec(target_psnr_a, mode="cap",
                                   attenuation=plan.attenuation),
        lam=plan.attack_lam, eta=plan.attack_eta))


def _pair_rng(plan: ExperimentPlan, ki: int, ii: int, branch: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([plan.master_seed, ki, ii, branch])))


def _run_pair(plan: ExperimentPlan, extractor, names, corpus, ki: int, ii: int):
    """All schemes, attacks and budgets for one (key, image) pair."""
    key = wmcodec.SecretKey(plan.key_seeds[ki])
    x0 = corpus[ii]
    ecfg = _embed_config(plan)
    rows, failures = [], []
    run_id = f"run-{plan.master_seed}-{plan.digest()}"
    for si, job in enumerate(plan.schemes):
        rng = _pair_rng(plan, ki, ii, si)
        if job.scheme == "zero_bit":
            det = wmcodec.ConeDetector.from_key(key, extractor.latent_dim, job.pfa)
            xw = embed.embed_zero_bit(x0, key, job.pfa, extractor, ecfg, rng=rng)
            ok = wmcodec.detect_zero_bit(extractor.forward(xw), det)
            message = carriers = None
        else:
            message = wmcodec.Message.random(rng, job.payload)
            carriers = wmcodec.generate_carriers(key, job.payload, extractor.latent_dim)
            det = None
            xw = embed.embed_multibit(x0, key, message, extractor, ecfg, rng=rng)
            ok = wmcodec.bit_error_rate(
                message, wmcodec.decode_multibit(extractor.forward(xw), carriers)) == 0.0
        achieved_w = psnr(x0, xw)
        if not ok:
            failures.append({"key_seed": key.seed, "image_id": names[ii],
                             "scheme": job.scheme, "payload": job.payload,
                             "achieved_psnr_w": achieved_w})
            continue
        for attack_name in job.attacks:
            kind, _, strat_name = attack_name.partition(":")
            strategy = strat_name or (
                "wiener_denoised" if kind == "removal_targeted" else "")
            target = None
            if kind == "copy":
                ref = corpus[(ii + 1) % len(corpus)]  # cyclic successor target
            else:
                ref = xw
                if kind == "removal_targeted":
                    target = attacks.select_target(
                        attacks.TargetStrategy(strategy, wiener_window=plan.wiener_window),
                        xw, corpus, extractor, rng)
            for budget in plan.psnr_a_targets:
                acfg = _attack_config(plan, budget)
                t0 = time.perf_counter()
                if kind == "copy":
                    xa = attacks.copy_attack(xw, ref, extractor, acfg)
                elif kind == "removal_untargeted":
                    xa = attacks.removal_untargeted(xw, extractor, acfg)
                else:
                    xa = attacks.removal_targeted(xw, target, extractor, acfg)
                ms = int((time.perf_counter() - t0) * 1000) if plan.record_timing else 0
                za = extractor.forward(xa)
                if job.scheme == "zero_bit":
                    detected = wmcodec.detect_zero_bit(za, det)
                    ber = ""
                else:
                    b = wmcodec.bit_error_rate(message, wmcodec.decode_multibit(za, carriers))
                    detected = b == 0.0
                    ber = f"{b:.6f}"
                rows.append({
                    "experiment_id": run_id,
                    "key_seed": key.seed,
                    "image_id": names[ii],
                    "scheme": job.scheme,
                    "attack": kind,
                    "target_strategy": strategy,
                    "target_psnr_a": f"{budget:.2f}",
                    "achieved_psnr_a": f"{psnr(ref, xa):.4f}",
                    "achieved_psnr_w": f"{achieved_w:.4f}",
                    "detected": "true" if detected else "false",
                    "ber": ber,
                    "pfa_target": f"{job.pfa:.3e}" if job.scheme == "zero_bit" else "",
                    "payload": job.payload if job.scheme == "multi_bit" else "",
                    "iterations": plan.attack_iterations,
                    "lam": plan.attack_lam,
                    "eta": plan.attack_eta,
                    "walltime_ms": ms,
                })
    return rows, failures


_WORKER_STATE: dict = {}


def _worker_init(plan_doc: dict, names, corpus):
    plan = plan_from_dict(plan_doc)
    _WORKER_STATE["plan"] = plan
    _WORKER_STATE["extractor"] = _build_extractor(plan)
    _WORKER_STATE["names"] = names
    _WORKER_STATE["corpus"] = corpus


def _worker_run(pair):
    s = _WORKER_STATE
    return _run_pair(s["plan"], s["extractor"], s["names"], s["corpus"], *pair)


def run_plan(plan: ExperimentPlan, out_dir: str, progress: bool = False):
    """Execute the full plan; write report.csv, figure CSVs and a manifest.

    Returns (rows, failures)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names, corpus = ingest_corpus(plan.corpus, plan.image_count, plan.image_size)
    pairs = [(ki, ii) for ki in range(len(plan.key_seeds)) for ii in range(len(corpus))]
    rows, failures = [], []
    if plan.workers > 1:
        with ProcessPoolExecutor(
                max_workers=plan.workers, initializer=_worker_init,
                initargs=(plan_to_dict(plan), names, corpus)) as pool:
            results = pool.map(_worker_run, pairs)
            for n, (r, f) in enumerate(results, 1):
                rows.extend(r)
                failures.extend(f)
                if progress:
                    log.info("pair %d/%d done (%d rows)", n, len(pairs), len(rows))
    else:
        extractor = _build_extractor(plan)
        for n, pair in enumerate(pairs, 1):
            r, f = _run_pair(plan, extractor, names, corpus, *pair)
            rows.extend(r)
            failures.extend(f)
            if progress:
                log.info("pair %d/%d done (%d rows)", n, len(pairs), len(rows))
    write_report(rows, out / "report.csv")
    curves = aggregate(rows, out)
    manifest = {
        "plan": plan_to_dict(plan),
        "rows": len(rows),
        "pre_attack_failures": failures,
        "kernel_backend": KERNEL_BACKEND,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return rows, failures, curves


def write_report(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def aggregate(rows: list[dict], out_dir=None) -> dict:
    """Metric-vs-budget curves grouped by (scheme, attack, strategy, series).

    Series keys: pfa for zero-bit, payload for multi-bit.  Rate curves carry
    a binomial standard deviation band; BER curves mean +- sd.  Returns
    {group: [(x, y, ylo, yhi, n), ...]} and optionally writes the standard
    figure CSVs.
    """
    if not rows:
        raise ParameterError("no rows to aggregate")
    buckets: dict = {}
    for r in rows:
        series = r["pfa_target"] if r["scheme"] == "zero_bit" else f"l={r['payload']}"
        gkey = (r["scheme"], r["attack"], r["target_strategy"], series)
        buckets.setdefault(gkey, {}).setdefault(float(r["target_psnr_a"]), []).append(r)
    curves: dict = {}
    for gkey, by_x in sorted(buckets.items()):
        pts = []
        for x in sorted(by_x):
            group = by_x[x]
            n = len(group)
            if gkey[0] == "zero_bit":
                det_rate = sum(r["detected"] == "true" for r in group) / n
                y = det_rate if gkey[1] == "copy" else 1.0 - det_rate
                sd = (y * (1.0 - y) / n) ** 0.5
            else:
                bers = np.array([float(r["ber"]) for r in group])
                y = float(bers.mean())
                sd = float(bers.std())
            pts.append((x, y, max(y - sd, 0.0), y + sd, n))
        curves[gkey] = pts
    if out_dir is not None:
        for fname, (scheme, attack, metric) in FIGURE_FILES.items():
            path = Path(out_dir) / fname
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["series", "x", "y", "ylo", "yhi", "n"])
                wrote = False
                for (s, a, strat, series), pts in curves.items():
                    if s != scheme or a != attack:
                        continue
                    label = f"{strat}:{series}" if strat else series
                    for x, y, ylo, yhi, n in pts:
                        w.writerow([label, f"{x:.2f}", f"{y:.6f}",
                                    f"{ylo:.6f}", f"{yhi:.6f}", n])
                        wrote = True
                if not wrote:
                    log.warning("no rows for %s; file has header only", fname)
    return curves
