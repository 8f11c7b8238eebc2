"""Batch command-line front end.

Subcommands: separate, fod, dcp-loss, fd-loss, nmcc, features, eval, fit,
report. A JSON config file (``--config`` or the ``CCPL_CONFIG`` environment
variable) sets any defaults; individual flags override it. Inputs are 8-bit
RGB PNG files only.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report as report_mod
from .config import CcplConfig, load_config
from .cross_channel import (
    channel_correlation,
    cross_channel_consistency_loss,
    nmcc_loss,
    reduce_correlation,
)
from .features import FeatureSet, feature_distillation_loss, load_features, save_features, toy_extract
from .fit import AffineOdModel, fit_stain_transfer
from .fod import channel_fod
from .imageio import load_rgb_png, save_gray16_png, save_rgb_png
from .metrics import frechet_distance
from .perception import dual_perception_loss
from .separation import isolate_channel

logger = logging.getLogger("ccpl")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (falls back to $CCPL_CONFIG)")
    parser.add_argument("--workers", type=int, help="worker threads for batch commands")
    parser.add_argument("--seed", type=int, help="seed for sampling-based subroutines")


def _resolve_config(args) -> CcplConfig:
    path = args.config or os.environ.get("CCPL_CONFIG")
    cfg = load_config(path) if path else CcplConfig()
    overrides = {}
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _print_json(doc: dict) -> None:
    def clean(v):
        if isinstance(v, float) and math.isinf(v):
            return "inf"
        return v

    print(json.dumps({k: clean(v) for k, v in doc.items()}, indent=2, sort_keys=True))


def _cmd_separate(args) -> int:
    cfg = _resolve_config(args)
    img = load_rgb_png(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for ch in args.channels:
        out = isolate_channel(img, ch, cfg.stain_matrix, cfg.reference_intensity)
        save_rgb_png(out, out_dir / f"{stem}_{ch}.png")
    return 0


def _cmd_fod(args) -> int:
    cfg = _resolve_config(args)
    img = load_rgb_png(args.input)
    params = cfg.fod_h if args.channel == "H" else cfg.fod_d
    fod = channel_fod(img, params, cfg.stain_matrix, cfg.reference_intensity)

    peak = float(fod.max())
    scale = 65535.0 / peak if peak > 0 else 1.0
    encoded = np.clip(np.floor(fod * scale + 0.5), 0, 65535).astype(np.uint16)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_gray16_png(encoded, f"{prefix}.png")
    sidecar = {
        "channel": args.channel,
        "T": params.threshold,
        "alpha": params.exponent,
        "scale": scale,
    }
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_dcp_loss(args) -> int:
    cfg = _resolve_config(args)
    gen = load_rgb_png(args.gen)
    real = load_rgb_png(args.real)
    total, parts = dual_perception_loss(
        gen, real, cfg.dcp, cfg.fod_h, cfg.fod_d, cfg.stain_matrix, cfg.reference_intensity
    )
    _print_json({"L_H": parts["h"], "L_D": parts["d"], "L_dual": total})
    return 0


def _cmd_fd_loss(args) -> int:
    cfg = _resolve_config(args)
    f_gen = toy_extract(load_rgb_png(args.gen))
    f_real = toy_extract(load_rgb_png(args.real))
    total, parts = feature_distillation_loss(f_gen, f_real, cfg.fd)
    _print_json({"L_cos": parts["cosine"], "L_L2": parts["l2"], "L_fd": total})
    return 0


def _load_hd_features(path) -> tuple[np.ndarray, np.ndarray]:
    fs = load_features(path)
    ids = {name: i for i, name in enumerate(fs.ids)}
    if "H" not in ids or "D" not in ids:
        raise ValueError(f"{path}: feature set must carry identifiers 'H' and 'D'")
    return fs.features[ids["H"]].astype(np.float64), fs.features[ids["D"]].astype(np.float64)


def _cmd_nmcc(args) -> int:
    cfg = _resolve_config(args)
    if args.features_gen or args.features_real:
        if not (args.features_gen and args.features_real):
            raise SystemExit("nmcc: --features-gen and --features-real go together")
        r_gen = channel_correlation(*_load_hd_features(args.features_gen), cfg.nmcc)
        r_real = channel_correlation(*_load_hd_features(args.features_real), cfg.nmcc)
        loss = cross_channel_consistency_loss(r_gen, r_real, cfg.nmcc)
        corr = {"r_gen": r_gen, "r_real": r_real}
    else:
        if not (args.gen and args.real):
            raise SystemExit("nmcc: need --gen/--real images or both feature files")
        loss, corr = nmcc_loss(
            load_rgb_png(args.gen),
            load_rgb_png(args.real),
            toy_extract,
            cfg.stain_matrix,
            cfg.nmcc,
            cfg.reference_intensity,
        )
    _print_json(
        {
            "R_g": reduce_correlation(corr["r_gen"]),
            "R_r": reduce_correlation(corr["r_real"]),
            "L_cross": loss,
        }
    )
    return 0


def _cmd_features(args) -> int:
    _resolve_config(args)
    in_dir = Path(args.input_dir)
    names = sorted(p.name for p in in_dir.iterdir() if p.is_file() and p.suffix.lower() == ".png")
    if not names:
        raise SystemExit(f"features: no .png files in {in_dir}")
    rows = [toy_extract(load_rgb_png(in_dir / name)) for name in names]
    save_features(FeatureSet(np.asarray(rows, dtype=np.float32), tuple(names)), args.out)
    print(f"wrote {len(names)} feature vectors to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    manifest = report_mod.match_pairs(args.gen_dir, args.real_dir)
    extra = None
    if args.gen_features or args.real_features:
        if not (args.gen_features and args.real_features):
            raise SystemExit("eval: --gen-features and --real-features go together")
        extra = {
            "frechet": frechet_distance(
                load_features(args.gen_features), load_features(args.real_features)
            )
        }
    failed = report_mod.run_report(
        manifest,
        cfg,
        args.out_csv,
        args.out_json,
        columns=report_mod.METRIC_COLUMNS,
        pair_fn=report_mod.evaluate_metrics_pair,
        extra_aggregate=extra,
    )
    return 2 if failed else 0


def _cmd_report(args) -> int:
    cfg = _resolve_config(args)
    manifest = report_mod.match_pairs(args.gen_dir, args.real_dir)
    failed = report_mod.run_report(manifest, cfg, args.out_csv, args.out_json)
    return 2 if failed else 0


def _cmd_fit(args) -> int:
    cfg = _resolve_config(args)
    fit_overrides = {
        name: getattr(args, name)
        for name in (
            "pixel_weight",
            "dual_weight",
            "feature_weight",
            "cross_weight",
            "ssim_weight",
            "step_size",
            "max_iter",
            "fd_step",
            "shrink",
            "tol",
        )
        if getattr(args, name) is not None
    }
    if fit_overrides:
        cfg = replace(cfg, fit=replace(cfg.fit, **fit_overrides))

    pairs_dir = Path(args.pairs_dir)
    manifest = report_mod.match_pairs(pairs_dir / "source", pairs_dir / "target")
    pairs = [
        (load_rgb_png(src_path), load_rgb_png(tgt_path))
        for _, src_path, tgt_path in manifest.entries
    ]
    init = None
    if args.init_model:
        with open(args.init_model, "r", encoding="utf-8") as fh:
            init = AffineOdModel.from_dict(json.load(fh))

    model, trace = fit_stain_transfer(pairs, init, cfg)

    with open(args.out_model, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")
    if args.trace:
        trace.to_csv(args.trace)
    print(
        f"fit finished after {trace.iterations[-1]} accepted steps, "
        f"objective {trace.totals[-1]:.6g}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccpl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("separate", help="write single-stain reconstructions of an image")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--channels", default="HED", type=lambda s: [c for c in s.upper()],
                   help="subset of HED to emit (default all)")
    _add_common(p)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("fod", help="write a focal optical density map (16-bit PNG + sidecar)")
    p.add_argument("--input", required=True)
    p.add_argument("--channel", required=True, choices=["H", "D"])
    p.add_argument("--out-prefix", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_fod)

    p = sub.add_parser("dcp-loss", help="dual-channel perception loss of an image pair")
    p.add_argument("--gen", required=True)
    p.add_argument("--real", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_dcp_loss)

    p = sub.add_parser("fd-loss", help="feature distillation loss of an image pair")
    p.add_argument("--gen", required=True)
    p.add_argument("--real", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_fd_loss)

    p = sub.add_parser("nmcc", help="cross-channel consistency loss of an image pair")
    p.add_argument("--gen")
    p.add_argument("--real")
    p.add_argument("--features-gen", help="feature file with 'H'/'D' rows for the generated image")
    p.add_argument("--features-real", help="feature file with 'H'/'D' rows for the real image")
    _add_common(p)
    p.set_defaults(func=_cmd_nmcc)

    p = sub.add_parser("features", help="run the toy extractor over a directory of PNGs")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("eval", help="quality metrics over paired directories")
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--real-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    p.add_argument("--gen-features")
    p.add_argument("--real-features")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("fit", help="fit the affine OD stain-transfer model to paired patches")
    p.add_argument("--pairs-dir", required=True,
                   help="directory with source/ and target/ subdirectories, matched by filename")
    p.add_argument("--out-model", required=True)
    p.add_argument("--trace", help="CSV of accepted steps")
    p.add_argument("--init-model", help="JSON model to start from (default identity)")
    for name in ("pixel-weight", "dual-weight", "feature-weight", "cross-weight", "ssim-weight",
                 "step-size", "fd-step", "shrink", "tol"):
        p.add_argument(f"--{name}", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("report", help="full loss/metric report over paired directories")
    p.add_argument("--gen-dir", required=True)
    p.add_argument("--real-dir", required=True)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-json", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
