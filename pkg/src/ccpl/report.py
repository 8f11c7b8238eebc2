"""Batch pair evaluation: directory matching, loss/metric rows, report files.

Pairs are matched by identical filename across the generated and real
directories and processed in lexicographic order. Rows are always emitted in
manifest order whatever the worker count, so report files are byte-identical
across schedulings; each pair is handled by pure functions, which makes a
thread pool safe. A failing pair keeps its row (with the error message in
the ``error`` column) and flips the run's exit status.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import CcplConfig
from .cross_channel import nmcc_loss, reduce_correlation
from .exceptions import NoPairsFoundError
from .features import feature_distillation_loss, toy_extract
from .imageio import load_rgb_png
from .metrics import pcc, psnr, ssim
from .perception import dual_perception_loss

__all__ = [
    "PairManifest",
    "REPORT_COLUMNS",
    "METRIC_COLUMNS",
    "match_pairs",
    "evaluate_pair",
    "evaluate_metrics_pair",
    "run_report",
]

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("L_H", "L_D", "L_dual", "L_fd", "R_g", "R_r", "L_cross", "psnr", "ssim", "pcc")
METRIC_COLUMNS = ("psnr", "ssim", "pcc")


@dataclass(frozen=True)
class PairManifest:
    """Ordered (identifier, generated path, real path) triples."""

    entries: tuple[tuple[str, Path, Path], ...]

    def __len__(self) -> int:
        return len(self.entries)


def match_pairs(gen_dir, real_dir) -> PairManifest:
    """Match files by identical name across two directories.

    Unmatched files are logged as warnings and excluded; raises
    :class:`NoPairsFoundError` when nothing matches.
    """
    gen_dir, real_dir = Path(gen_dir), Path(real_dir)
    gen_files = {p.name for p in gen_dir.iterdir() if p.is_file()}
    real_files = {p.name for p in real_dir.iterdir() if p.is_file()}
    common = sorted(gen_files & real_files)
    for name in sorted(gen_files - real_files):
        logger.warning("no real counterpart for generated file %s", name)
    for name in sorted(real_files - gen_files):
        logger.warning("no generated counterpart for real file %s", name)
    if not common:
        raise NoPairsFoundError(f"no filenames shared between {gen_dir} and {real_dir}")
    return PairManifest(tuple((name, gen_dir / name, real_dir / name) for name in common))


def evaluate_pair(gen_path, real_path, config: CcplConfig) -> dict:
    """All loss and metric columns for one generated/real file pair."""
    gen = load_rgb_png(gen_path)
    real = load_rgb_png(real_path)
    m, i0 = config.stain_matrix, config.reference_intensity

    l_dual, dual_parts = dual_perception_loss(
        gen, real, config.dcp, config.fod_h, config.fod_d, m, i0
    )
    l_fd, _ = feature_distillation_loss(toy_extract(gen), toy_extract(real), config.fd)
    l_cross, corr = nmcc_loss(gen, real, toy_extract, m, config.nmcc, i0)

    return {
        "L_H": dual_parts["h"],
        "L_D": dual_parts["d"],
        "L_dual": l_dual,
        "L_fd": l_fd,
        "R_g": reduce_correlation(corr["r_gen"]),
        "R_r": reduce_correlation(corr["r_real"]),
        "L_cross": l_cross,
        "psnr": psnr(gen, real),
        "ssim": ssim(gen, real),
        "pcc": pcc(gen, real),
    }


def evaluate_metrics_pair(gen_path, real_path, config: CcplConfig) -> dict:
    """Just the quality metrics for one pair (the ``eval`` subcommand)."""
    gen = load_rgb_png(gen_path)
    real = load_rgb_png(real_path)
    return {"psnr": psnr(gen, real), "ssim": ssim(gen, real), "pcc": pcc(gen, real)}


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def run_report(
    manifest: PairManifest,
    config: CcplConfig,
    csv_path,
    json_path,
    columns=REPORT_COLUMNS,
    pair_fn=evaluate_pair,
    extra_aggregate: dict | None = None,
) -> int:
    """Evaluate every pair and write the CSV and aggregate JSON reports.

    Returns the number of failed pairs (0 means a fully clean run). The
    aggregate JSON carries per-column means over the successful pairs and
    echoes the resolved configuration.
    """

    def one(entry):
        identifier, gen_path, real_path = entry
        try:
            return identifier, pair_fn(gen_path, real_path, config), ""
        except Exception as exc:
            logger.warning("pair %s failed: %s", identifier, exc)
            return identifier, None, f"{type(exc).__name__}: {exc}"

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(one, manifest.entries))
    else:
        results = [one(entry) for entry in manifest.entries]

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["identifier", *columns, "error"])
        for identifier, values, error in results:
            row = [identifier]
            row += [_format_value(values[c]) if values else "" for c in columns]
            row.append(error)
            writer.writerow(row)

    succeeded = [values for _, values, _ in results if values is not None]
    means = {}
    for col in columns:
        if not succeeded:
            means[col] = None
            continue
        vals = [v[col] for v in succeeded]
        mean = math.inf if any(math.isinf(v) for v in vals) else sum(vals) / len(vals)
        means[col] = _json_value(mean)
    aggregate = {
        "n_pairs": len(manifest),
        "n_failed": sum(1 for _, values, _ in results if values is None),
        "means": means,
        "config": config.to_dict(),
    }
    if extra_aggregate:
        aggregate.update(extra_aggregate)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return aggregate["n_failed"]
