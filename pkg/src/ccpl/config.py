"""One place for every scalar hyperparameter, with JSON overrides.

Defaults follow the reference operating point where one exists (FOD
thresholds 0.15, exponents 1.8, H-channel weight 0.1, loss weights
dual/feature/cross = 1 and structural = 0.05); the remaining knobs are
explicit substitutions documented on their dataclasses. A JSON config file
overrides any subset of fields; CLI flags override the file.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .cross_channel import NmccConfig
from .features import FdConfig
from .fod import FodParams
from .perception import DcpConfig
from .separation import check_stain_matrix, default_stain_matrix, normalize_stain_matrix

__all__ = ["FitConfig", "CcplConfig", "load_config", "resolve_config"]


@dataclass(frozen=True)
class FitConfig:
    """Objective weights and optimizer settings for the stain-transfer fit.

    ``gp_weight`` belongs to a gradient-penalty term that only exists in
    adversarial training; it is carried for config completeness and unused.
    """

    pixel_weight: float = 1.0
    dual_weight: float = 1.0
    feature_weight: float = 1.0
    cross_weight: float = 1.0
    ssim_weight: float = 0.05
    gp_weight: float = 10.0

    step_size: float = 1e-4
    max_iter: int = 200
    fd_step: float = 1e-4
    shrink: float = 0.5
    tol: float = 1e-7

    def __post_init__(self):
        for name in ("pixel_weight", "dual_weight", "feature_weight", "cross_weight", "ssim_weight", "gp_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie strictly between 0 and 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass(frozen=True, eq=False)
class CcplConfig:
    """Resolved configuration for every module, CLI and report run."""

    stain_matrix: np.ndarray = field(default_factory=default_stain_matrix)
    reference_intensity: float = 255.0
    fod_h: FodParams = field(default_factory=lambda: FodParams(channel="H"))
    fod_d: FodParams = field(default_factory=lambda: FodParams(channel="D"))
    dcp: DcpConfig = field(default_factory=DcpConfig)
    fd: FdConfig = field(default_factory=FdConfig)
    nmcc: NmccConfig = field(default_factory=NmccConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    workers: int = 1
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "stain_matrix", check_stain_matrix(self.stain_matrix))
        if self.reference_intensity <= 0:
            raise ValueError("reference_intensity must be positive")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.fod_h.channel != "H" or self.fod_d.channel != "D":
            raise ValueError("fod_h/fod_d must carry channels 'H'/'D'")

    def to_dict(self) -> dict:
        """JSON-ready echo of the mathematical configuration.

        Execution settings (workers, seed) are deliberately left out so
        report files stay byte-identical across worker counts.
        """
        return {
            "stain_matrix": self.stain_matrix.tolist(),
            "reference_intensity": self.reference_intensity,
            "fod": {
                "h": {"threshold": self.fod_h.threshold, "exponent": self.fod_h.exponent},
                "d": {"threshold": self.fod_d.threshold, "exponent": self.fod_d.exponent},
            },
            "dcp": {
                "block_grid": list(self.dcp.block_grid),
                "n_bins": self.dcp.n_bins,
                "hist_range": list(self.dcp.hist_range),
                "h_weight": self.dcp.h_weight,
            },
            "fd": {"cosine_weight": self.fd.cosine_weight},
            "nmcc": {
                "l2_weight": self.nmcc.l2_weight,
                "consistency_l2_weight": self.nmcc.consistency_l2_weight,
                "vector_mode": self.nmcc.vector_mode,
            },
            "fit": {
                "pixel_weight": self.fit.pixel_weight,
                "dual_weight": self.fit.dual_weight,
                "feature_weight": self.fit.feature_weight,
                "cross_weight": self.fit.cross_weight,
                "ssim_weight": self.fit.ssim_weight,
                "gp_weight": self.fit.gp_weight,
                "step_size": self.fit.step_size,
                "max_iter": self.fit.max_iter,
                "fd_step": self.fit.fd_step,
                "shrink": self.fit.shrink,
                "tol": self.fit.tol,
            },
        }


def _update_dataclass(obj, overrides: dict, rename: dict | None = None):
    rename = rename or {}
    fields = {rename.get(k, k): v for k, v in overrides.items()}
    for key in fields:
        if not hasattr(obj, key):
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
    return replace(obj, **fields)


def resolve_config(doc: dict | None = None, base: CcplConfig | None = None) -> CcplConfig:
    """Apply a (possibly partial) config dict on top of ``base`` or defaults."""
    cfg = base or CcplConfig()
    if not doc:
        return cfg
    doc = copy.deepcopy(doc)
    known = {"stain_matrix", "reference_intensity", "fod", "dcp", "fd", "nmcc", "fit", "workers", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    kwargs = {}
    if "stain_matrix" in doc:
        kwargs["stain_matrix"] = normalize_stain_matrix(doc["stain_matrix"])
    if "reference_intensity" in doc:
        kwargs["reference_intensity"] = float(doc["reference_intensity"])
    if "fod" in doc:
        fod = doc["fod"]
        if "h" in fod:
            kwargs["fod_h"] = _update_dataclass(cfg.fod_h, fod["h"])
        if "d" in fod:
            kwargs["fod_d"] = _update_dataclass(cfg.fod_d, fod["d"])
    if "dcp" in doc:
        d = dict(doc["dcp"])
        if "block_grid" in d:
            d["block_grid"] = tuple(d["block_grid"])
        if "hist_range" in d:
            d["hist_range"] = tuple(d["hist_range"])
        kwargs["dcp"] = _update_dataclass(cfg.dcp, d)
    if "fd" in doc:
        kwargs["fd"] = _update_dataclass(cfg.fd, doc["fd"])
    if "nmcc" in doc:
        kwargs["nmcc"] = _update_dataclass(cfg.nmcc, doc["nmcc"])
    if "fit" in doc:
        kwargs["fit"] = _update_dataclass(cfg.fit, doc["fit"])
    if "workers" in doc:
        kwargs["workers"] = int(doc["workers"])
    if "seed" in doc:
        kwargs["seed"] = None if doc["seed"] is None else int(doc["seed"])
    return replace(cfg, **kwargs)


def load_config(path, base: CcplConfig | None = None) -> CcplConfig:
    """Load a JSON config file on top of ``base`` or defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: config root must be a JSON object")
    return resolve_config(doc, base)
