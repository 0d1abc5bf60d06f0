"""Batch command-line front end.

Subcommands: ``synth`` (phantom generation), ``augment`` (seeded
augmentation of an image/label pair), ``fit-hist`` (reference histogram
fitting), ``match`` (intensity matching), ``evaluate`` (segmentation
metrics), and ``inspect`` (file headers).

Reproducibility contract: sample ``k`` of an ``augment`` run with seed
``s`` draws from ``numpy.random.SeedSequence(entropy=s, spawn_key=(k,))``,
so samples are independent of each other and of how work is scheduled
across threads; reruns are byte-identical.

Exit codes: 0 success, 1 usage error, 2 data/file error.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .histmatch import (
    SMConfig,
    apply_sm,
    average_histograms,
    compute_image_cdf,
    load_histogram,
    save_histogram,
)
from .metrics import evaluate_pair, report_to_dict
from .randconv import AugmentConfig, augment_sample
from .volume import (
    PhantomSpec,
    Volume,
    load_labels,
    load_volume,
    make_phantom,
    preclip_ct,
    preclip_mr,
    save_labels,
    save_volume,
)

USAGE_ERROR = 1
DATA_ERROR = 2


def default_config_dict() -> dict:
    """The shipped defaults; every numeric knob of the standard recipe."""
    return {
        "modality": "ct",
        "geometry": {
            "enable": True,
            "translation_vox": 20.0,
            "rotation_rad": 0.35,
            "scale_range": [0.8, 1.2],
            "elastic_vox": 15.0,
        },
        "jitter": {
            "enable": True,
            "shift": 0.2,
            "scale_ct": [0.8, 1.2],
            "scale_mr": [0.6, 1.4],
        },
        "src": {
            "enable": True,
            "alpha_mode": "uniform",
            "alpha": 1.0,
            "blend_sigma_vox": 1.0,
            "blend_kernel_size": 5,
        },
        "sm": {"n_bins": 2048, "range": None},
    }


@dataclass(frozen=True)
class PipelineConfig:
    """Aggregated augmentation + matching configuration."""

    modality: str
    augment: AugmentConfig
    sm: SMConfig


def pipeline_config_from_dict(doc: dict, modality: str | None = None) -> PipelineConfig:
    """Build a config from a (possibly partial) mapping over the defaults.

    Unknown keys are rejected so typos do not silently fall back to
    defaults. ``modality`` overrides the document's value.
    """
    merged = default_config_dict()
    for section, value in doc.items():
        if section == "modality":
            merged["modality"] = value
        elif section in merged and isinstance(merged[section], dict):
            for key, sub in value.items():
                if key not in merged[section]:
                    raise DataError(f"unknown config key {section}.{key}")
                merged[section][key] = sub
        else:
            raise DataError(f"unknown config section {section!r}")
    if modality is not None:
        merged["modality"] = modality

    geo, jit, src, sm = merged["geometry"], merged["jitter"], merged["src"], merged["sm"]
    aug = AugmentConfig(
        modality=merged["modality"],
        geometry_enabled=bool(geo["enable"]),
        translation_vox=float(geo["translation_vox"]),
        rotation_rad=float(geo["rotation_rad"]),
        scale_range=tuple(geo["scale_range"]),
        elastic_vox=float(geo["elastic_vox"]),
        jitter_enabled=bool(jit["enable"]),
        jitter_shift=float(jit["shift"]),
        jitter_scale_ct=tuple(jit["scale_ct"]),
        jitter_scale_mr=tuple(jit["scale_mr"]),
        src_enabled=bool(src["enable"]),
        src_alpha_mode=str(src["alpha_mode"]),
        src_alpha=float(src["alpha"]),
        blend_sigma_vox=float(src["blend_sigma_vox"]),
        blend_kernel_size=int(src["blend_kernel_size"]),
    )
    sm_config = SMConfig(
        modality=merged["modality"],
        n_bins=int(sm["n_bins"]),
        range=tuple(sm["range"]) if sm["range"] is not None else None,
    )
    return PipelineConfig(merged["modality"], aug, sm_config)


def load_pipeline_config(path: str | None, modality: str | None = None) -> PipelineConfig:
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"missing config file: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed config file {path}: {exc}") from exc
    return pipeline_config_from_dict(doc, modality)


def rng_for_sample(seed: int, index: int) -> np.random.Generator:
    """The documented per-sample stream split: spawn key = sample index."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def preclip_for_modality(vol: Volume, modality: str) -> Volume:
    return preclip_ct(vol) if modality == "ct" else preclip_mr(vol)


# ---------------------------------------------------------------------------
# Commands

def _cmd_synth(args) -> int:
    try:
        with open(args.spec) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing phantom spec: {args.spec}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed phantom spec {args.spec}: {exc}") from exc
    try:
        spec = PhantomSpec(
            seed=int(doc["seed"]),
            dims=tuple(int(n) for n in doc["dims"]),
            spacing=tuple(float(s) for s in doc.get("spacing_mm", (1.0, 1.0, 1.0))),
            n_labels=int(doc.get("n_labels", 2)),
            shape_mode=str(doc.get("shape_mode", "nested-ellipsoids")),
            intensity_table=tuple(
                (float(e["mean"]), float(e["noise_std"])) for e in doc["intensity_table"]
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad phantom spec {args.spec}: {exc}") from exc
    image, labels = make_phantom(spec)
    save_volume(image, f"{args.out}_image")
    save_labels(labels, f"{args.out}_labels")
    print(f"wrote {args.out}_image.svol.json and {args.out}_labels.svol.json")
    return 0


def _cmd_augment(args) -> int:
    if args.seed is None:
        raise UsageError("augment requires --seed")
    if not (0 <= args.seed < 2**64):
        raise UsageError("--seed must fit an unsigned 64-bit integer")
    if args.start < 0 or args.count < 0:
        raise UsageError("--start and --count must be non-negative")
    config = load_pipeline_config(args.config, args.modality)
    image = load_volume(args.image)
    labels = load_labels(args.labels)

    def run(index: int) -> str:
        rng = rng_for_sample(args.seed, index)
        out_img, out_lab = augment_sample(image, labels, rng, config.augment)
        prefix = f"{args.out}_{index:04d}"
        save_volume(out_img, f"{prefix}_image")
        save_labels(out_lab, f"{prefix}_labels")
        return prefix

    indices = range(args.start, args.start + args.count)
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            prefixes = list(pool.map(run, indices))
    else:
        prefixes = [run(i) for i in indices]
    for prefix in prefixes:
        print(f"wrote {prefix}_image.svol.json and {prefix}_labels.svol.json")
    return 0


def _cmd_fit_hist(args) -> int:
    config = load_pipeline_config(args.config, args.modality)
    try:
        with open(args.list) as fh:
            paths = [line.strip() for line in fh if line.strip()]
    except FileNotFoundError as exc:
        raise DataError(f"missing volume list: {args.list}") from exc
    if not paths:
        raise DataError(f"volume list {args.list} is empty")

    def cdf(path: str):
        vol = preclip_for_modality(load_volume(path), config.modality)
        return compute_image_cdf(vol, config.sm)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            hists = list(pool.map(cdf, paths))
    else:
        hists = [cdf(p) for p in paths]
    save_histogram(average_histograms(hists), args.out)
    print(f"wrote {args.out} ({len(paths)} volumes)")
    return 0


def _cmd_match(args) -> int:
    hist = load_histogram(args.hist)
    if hist.modality != args.modality:
        raise DataError(
            f"histogram modality {hist.modality!r} does not match --modality {args.modality!r}"
        )
    config = SMConfig(
        modality=hist.modality, n_bins=hist.n_bins, range=(hist.range_lo, hist.range_hi)
    )
    vol = preclip_for_modality(load_volume(args.volume), args.modality)
    save_volume(apply_sm(vol, hist, config), args.out)
    print(f"wrote {args.out}.svol.json")
    return 0


def _cmd_evaluate(args) -> int:
    pred = load_labels(args.pred)
    gt = load_labels(args.gt)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = evaluate_pair(pred, gt)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    with open(args.out, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    path = str(args.path)
    if path.endswith(".svol.json") or not path.endswith(".json"):
        header_path = path if path.endswith(".svol.json") else path + ".svol.json"
        try:
            with open(header_path) as fh:
                header = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"missing file: {header_path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed header {header_path}: {exc}") from exc
        print(json.dumps(header, indent=2))
        return 0
    hist = load_histogram(path)
    print(
        json.dumps(
            {
                "n_bins": hist.n_bins,
                "range": [hist.range_lo, hist.range_hi],
                "modality": hist.modality,
                "cumulative_last": float(hist.cumulative[-1]),
            },
            indent=2,
        )
    )
    return 0


# ---------------------------------------------------------------------------
# Parser plumbing

class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; the scripting contract wants 1.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="voxaug", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="base seed for stochastic commands")
        p.add_argument("--config", default=None, help="JSON pipeline config")
        p.add_argument("--modality", choices=("ct", "mr"), default="ct")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads where the command parallelizes")

    p = sub.add_parser("synth", help="generate a synthetic phantom pair")
    p.add_argument("spec", help="phantom spec JSON")
    p.add_argument("out", help="output prefix")
    common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("augment", help="emit augmented samples of an image/label pair")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="output prefix")
    p.add_argument("-n", "--count", type=int, default=1)
    p.add_argument("--start", type=int, default=0, help="index of the first sample")
    common(p)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("fit-hist", help="fit the reference histogram over listed volumes")
    p.add_argument("--list", required=True, help="text file, one SVOL path per line")
    p.add_argument("--out", required=True, help="output histogram JSON")
    common(p)
    p.set_defaults(func=_cmd_fit_hist)

    p = sub.add_parser("match", help="match a volume to a reference histogram")
    p.add_argument("--volume", required=True)
    p.add_argument("--hist", required=True)
    p.add_argument("--out", required=True, help="output SVOL prefix")
    common(p)
    p.set_defaults(func=_cmd_match)

    p = sub.add_parser("evaluate", help="segmentation metrics for a label pair")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("inspect", help="print an SVOL or histogram header")
    p.add_argument("path")
    common(p)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
