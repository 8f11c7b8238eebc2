"""Desk-scale stain-transfer fitting.

The transfer model is a 12-parameter affine map in optical-density space
(``od_out = A od_in + b``, clamped at zero). It is fitted to paired patches
by plain gradient descent on a composed objective:

    pixel_weight * MSE
  + dual_weight * dual-channel perception loss
  + feature_weight * feature distillation loss (toy extractor)
  + cross_weight * cross-channel consistency loss
  + ssim_weight * (1 - SSIM)

averaged over the pairs. Gradients are central finite differences over the
12 parameters; the focal-OD threshold makes the objective piecewise, so
numeric differences are both simpler and more robust than bookkeeping
per-term derivatives. A backtracking line search halves the step until the
objective stops increasing, which makes the accepted objective sequence
non-increasing by construction.

During objective evaluation the model output stays on the continuous
intensity path (no 8-bit rounding): rounding would destroy the finite
differences at the default probe step. Quantization only happens in
:func:`apply_model`, i.e. when an image is actually emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import CcplConfig
from .exceptions import DimensionMismatchError, EmptyPairsError, ImageTooSmallError
from .fod import LUMA_WEIGHTS
from .metrics import ssim_kernel, ssim_from_moments, windowed
from .perception import bin_edges, block_starts, weighted_bin_sums
from .separation import (
    OD_INTENSITY_FLOOR,
    od_to_intensity,
    od_to_rgb,
    rgb_to_od,
    stain_matrix_inverse,
)
from .validation import check_rgb_image

__all__ = [
    "N_MODEL_PARAMS",
    "TERM_NAMES",
    "AffineOdModel",
    "FitTrace",
    "apply_model",
    "apply_model_continuous",
    "ObjectiveEvaluator",
    "objective",
    "objective_gradient",
    "fit_stain_transfer",
    "AffineStainTransfer",
]

N_MODEL_PARAMS = 12
TERM_NAMES = ("pixel_mse", "dual", "feature", "cross", "ssim")

# line-search floor: give up after this many halvings of the step
_MAX_HALVINGS = 60


@dataclass(frozen=True, eq=False)
class AffineOdModel:
    """Affine map acting in OD space: ``od_out = matrix @ od_in + bias``."""

    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if m.shape != (3, 3) or b.shape != (3,):
            raise ValueError("model needs a 3x3 matrix and a 3-vector bias")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(b))):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", b)

    @classmethod
    def identity(cls) -> "AffineOdModel":
        return cls(np.eye(3), np.zeros(3))

    def to_params(self) -> np.ndarray:
        """Flatten to a 12-vector: matrix row-major, then bias."""
        return np.concatenate([self.matrix.ravel(), self.bias])

    @classmethod
    def from_params(cls, params) -> "AffineOdModel":
        p = np.asarray(params, dtype=np.float64).ravel()
        if p.size != N_MODEL_PARAMS:
            raise ValueError(f"expected {N_MODEL_PARAMS} parameters, got {p.size}")
        return cls(p[:9].reshape(3, 3), p[9:])

    def to_dict(self) -> dict:
        return {"A": self.matrix.tolist(), "b": self.bias.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "AffineOdModel":
        return cls(np.asarray(doc["A"]), np.asarray(doc["b"]))


@dataclass
class FitTrace:
    """Accepted optimization steps: iteration index, total, per-term values."""

    iterations: list[int] = field(default_factory=list)
    totals: list[float] = field(default_factory=list)
    terms: list[dict] = field(default_factory=list)

    def append(self, iteration: int, total: float, breakdown: dict) -> None:
        self.iterations.append(iteration)
        self.totals.append(total)
        self.terms.append(dict(breakdown))

    def __len__(self) -> int:
        return len(self.iterations)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "total", *TERM_NAMES])
            for it, total, terms in zip(self.iterations, self.totals, self.terms):
                writer.writerow([it, repr(total), *(repr(terms[t]) for t in TERM_NAMES)])


def _transform_od(od: np.ndarray, model: AffineOdModel) -> np.ndarray:
    return np.maximum(od @ model.matrix.T + model.bias, 0.0)


def apply_model(model: AffineOdModel, img, i0: float = 255.0) -> np.ndarray:
    """Apply the transfer model to an image, emitting quantized uint8 RGB."""
    od = rgb_to_od(check_rgb_image(img), i0)
    return od_to_rgb(_transform_od(od, model), i0)


def apply_model_continuous(model: AffineOdModel, img, i0: float = 255.0) -> np.ndarray:
    """Apply the transfer model on the continuous intensity path (float RGB)."""
    od = rgb_to_od(check_rgb_image(img), i0)
    return od_to_intensity(_transform_od(od, model), i0)


_LN10 = float(np.log(10.0))
_HD_ROWS = (("h", 0), ("d", 2))


class ObjectiveEvaluator:
    """Evaluates the composed objective for many models over fixed pairs.

    Everything that depends only on the images is computed once (source-side
    optical densities, target-side channel statistics, target features, the
    target correlation and the target SSIM moments), and pairs of equal
    shape are stacked so each evaluation runs batched. Evaluating a model
    then only costs the generated-side pipeline, which is what the
    finite-difference fitter probes hundreds of times.

    The whole pipeline runs on the continuous intensity path for both sides;
    up to float roundoff the result equals composing the public per-image
    functions on float targets (see the equivalence test in the test suite).
    """

    def __init__(self, pairs, config: CcplConfig | None = None):
        self.config = config or CcplConfig()
        pairs = list(pairs)
        if not pairs:
            raise EmptyPairsError("need at least one (source, target) pair")
        cfg = self.config
        self._i0 = cfg.reference_intensity
        self._matrix = cfg.stain_matrix
        self._inv = stain_matrix_inverse(self._matrix)
        self._od_cap = -np.log10(OD_INTENSITY_FLOOR / self._i0)
        self._luma = np.asarray(LUMA_WEIGHTS)
        self._kernel = ssim_kernel()
        self._edges = bin_edges(cfg.dcp)
        self._offset_cache: dict[int, np.ndarray] = {}
        self.n_pairs = len(pairs)

        by_shape: dict[tuple, list] = {}
        for src, tgt in pairs:
            src_a, tgt_a = check_rgb_image(src), check_rgb_image(tgt)
            if src_a.shape != tgt_a.shape:
                raise DimensionMismatchError(
                    f"pair shapes differ: {src_a.shape} vs {tgt_a.shape}"
                )
            if min(src_a.shape[:2]) < 11:
                raise ImageTooSmallError("objective needs images of at least 11x11 for SSIM")
            by_shape.setdefault(src_a.shape, []).append((src_a, tgt_a))

        self._groups = [self._prepare_group(items) for items in by_shape.values()]

    # -- precomputation ------------------------------------------------------

    def _prepare_group(self, items) -> dict:
        sources = np.stack([np.asarray(s, dtype=np.float64) for s, _ in items])
        targets = np.stack([np.asarray(t, dtype=np.float64) for _, t in items])
        h, w = sources.shape[1:3]
        rows, cols = self.config.dcp.block_grid
        rstarts, cstarts = block_starts(h, rows), block_starts(w, cols)
        rsizes = np.diff(np.append(rstarts, h))
        csizes = np.diff(np.append(cstarts, w))

        group = {
            "count": len(items),
            "src_od": -np.log10(np.maximum(sources, OD_INTENSITY_FLOOR) / self._i0),
            "target": targets,
            "rstarts": rstarts,
            "cstarts": cstarts,
            "block_counts": np.outer(rsizes, csizes).ravel(),
        }

        tgt_od = np.minimum(
            -np.log10(np.maximum(targets, OD_INTENSITY_FLOOR) / self._i0), self._od_cap
        )
        stats, isolated = self._channel_pipeline(tgt_od @ self._inv, group)
        group["real_stats"] = stats
        group["f_real"] = self._toy_batch(targets)
        group["r_real"] = self._correlations(isolated)

        luma_y = targets @ self._luma
        mu_y = windowed(luma_y, self._kernel)
        group["luma_y"] = luma_y
        group["mu_y"] = mu_y
        group["var_y"] = windowed(luma_y * luma_y, self._kernel) - mu_y * mu_y
        return group

    # -- batched pipeline pieces ----------------------------------------------

    def _channel_pipeline(self, conc, group) -> tuple[dict, dict]:
        """FOD statistics and isolated-channel images for H and D, batched."""
        cfg = self.config
        n_pixels = conc.shape[1] * conc.shape[2]
        stats, isolated = {}, {}
        for key, k in _HD_ROWS:
            od_ch = np.maximum(conc[..., k, None], 0.0) * self._matrix[k]
            od_ch *= -_LN10
            img = np.exp(od_ch, out=od_ch)
            img *= self._i0
            isolated[key] = img
            gray = np.maximum(img @ self._luma, OD_INTENSITY_FLOOR)
            gray /= self._i0
            gray_od = np.log10(gray, out=gray)
            np.negative(gray_od, out=gray_od)
            params = cfg.fod_h if key == "h" else cfg.fod_d
            powered = np.power(gray_od, params.exponent)
            fod = np.where(powered > params.threshold, powered, 0.0)

            bsums = np.add.reduceat(
                np.add.reduceat(fod, group["rstarts"], axis=1), group["cstarts"], axis=2
            )
            stats[key] = {
                "global": fod.mean(axis=(1, 2)),
                "blocks": bsums.reshape(fod.shape[0], -1) / group["block_counts"],
                "hist": weighted_bin_sums(fod.reshape(fod.shape[0], -1), self._edges) / n_pixels,
            }
        return stats, isolated

    def _toy_batch(self, imgs) -> np.ndarray:
        """Batched equivalent of :func:`ccpl.features.toy_extract`."""
        b, h, w, _ = imgs.shape
        n = h * w
        flat = imgs.reshape(b, n, 3)
        means = np.einsum("bnc->bc", flat) / n
        # one-pass variance; cancellation error is negligible at 8-bit scale
        sq = np.einsum("bnc,bnc->bc", flat, flat)
        stds = np.sqrt(np.maximum(sq / n - means * means, 0.0))

        # intensities are nonnegative, so int truncation equals floor
        idx = (flat * (1.0 / 32.0)).astype(np.intp)
        if self._i0 > 255.0:
            np.minimum(idx, 7, out=idx)
        idx += self._hist_offsets(b)
        hists = np.bincount(idx.ravel(), minlength=b * 24).reshape(b, 24) / n

        luma = imgs @ self._luma / 255.0
        redges = (np.arange(5) * h) // 4
        cedges = (np.arange(5) * w) // 4
        pooled = np.add.reduceat(np.add.reduceat(luma, redges[:-1], axis=1), cedges[:-1], axis=2)
        pooled /= np.outer(np.diff(redges), np.diff(cedges))
        return np.concatenate([means, stds, hists, pooled.reshape(b, 16)], axis=1)

    def _hist_offsets(self, b: int) -> np.ndarray:
        cached = self._offset_cache.get(b)
        if cached is None:
            cached = (np.arange(b)[:, None, None] * 3 + np.arange(3)[None, None, :]) * 8
            self._offset_cache[b] = cached
        return cached

    @staticmethod
    def _cos_rows(a, b) -> np.ndarray:
        denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        out = np.zeros(a.shape[0])
        ok = denom > 0
        out[ok] = np.clip(np.einsum("ij,ij->i", a, b)[ok] / denom[ok], -1.0, 1.0)
        return out

    def _pair_correlation(self, f_h, f_d) -> np.ndarray:
        """Per-pair cross-channel correlations, (B,) or (B, dim) in vector mode."""
        nmcc = self.config.nmcc
        cos_term = 1.0 - self._cos_rows(f_h, f_d)
        diff = f_h - f_d
        if nmcc.vector_mode:
            return nmcc.l2_weight * diff**2 + (1.0 - nmcc.l2_weight) * cos_term[:, None]
        return nmcc.l2_weight * np.einsum("ij,ij->i", diff, diff) + (1.0 - nmcc.l2_weight) * cos_term

    def _correlations(self, isolated) -> np.ndarray:
        return self._pair_correlation(self._toy_batch(isolated["h"]), self._toy_batch(isolated["d"]))

    def _cross_loss(self, r_gen, r_real) -> np.ndarray:
        nmcc = self.config.nmcc
        theta = nmcc.consistency_l2_weight
        if nmcc.vector_mode:
            diff = r_gen - r_real
            return theta * np.einsum("ij,ij->i", diff, diff) + (1.0 - theta) * (
                1.0 - self._cos_rows(r_gen, r_real)
            )
        cos = np.where(r_gen * r_real > 0, 1.0, -1.0)
        cos[(r_gen == 0) & (r_real == 0)] = 1.0
        cos[(r_gen == 0) ^ (r_real == 0)] = 0.0
        return theta * (r_gen - r_real) ** 2 + (1.0 - theta) * (1.0 - cos)

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, model: AffineOdModel) -> tuple[float, dict]:
        """Objective value and unweighted per-term breakdown (means over pairs)."""
        cfg = self.config
        sums = dict.fromkeys(TERM_NAMES, 0.0)
        for group in self._groups:
            od_gen = group["src_od"] @ model.matrix.T
            od_gen += model.bias
            np.maximum(od_gen, 0.0, out=od_gen)
            gen = od_gen * -_LN10
            gen = np.exp(gen, out=gen)
            gen *= self._i0

            diff = gen - group["target"]
            sums["pixel_mse"] += float(np.einsum("bijc,bijc->b", diff, diff).sum()) / diff[0].size

            np.minimum(od_gen, self._od_cap, out=od_gen)
            conc = od_gen @ self._inv
            stats, isolated = self._channel_pipeline(conc, group)
            dual = np.zeros(group["count"])
            for key, weight in (("h", cfg.dcp.h_weight), ("d", 1.0 - cfg.dcp.h_weight)):
                s_gen, s_real = stats[key], group["real_stats"][key]
                loss = (s_gen["global"] - s_real["global"]) ** 2
                loss += np.mean((s_gen["blocks"] - s_real["blocks"]) ** 2, axis=1)
                loss += np.mean((s_gen["hist"] - s_real["hist"]) ** 2, axis=1)
                dual += weight * loss
            sums["dual"] += float(dual.sum())

            f_gen = self._toy_batch(gen)
            fdiff = f_gen - group["f_real"]
            l_cos = 1.0 - self._cos_rows(f_gen, group["f_real"])
            l_l2 = np.einsum("ij,ij->i", fdiff, fdiff)
            beta = cfg.fd.cosine_weight
            sums["feature"] += float((beta * l_cos + (1.0 - beta) * l_l2).sum())

            r_gen = self._correlations(isolated)
            sums["cross"] += float(self._cross_loss(r_gen, group["r_real"]).sum())

            luma_x = gen @ self._luma
            stacked = windowed(
                np.stack([luma_x, luma_x * luma_x, luma_x * group["luma_y"]]), self._kernel
            )
            mu_x = stacked[0]
            var_x = stacked[1] - mu_x * mu_x
            cov = stacked[2] - mu_x * group["mu_y"]
            ssim_vals = ssim_from_moments(mu_x, group["mu_y"], var_x, group["var_y"], cov)
            sums["ssim"] += float((1.0 - ssim_vals).sum())

        breakdown = {name: sums[name] / self.n_pairs for name in TERM_NAMES}
        fit = cfg.fit
        weights = (fit.pixel_weight, fit.dual_weight, fit.feature_weight, fit.cross_weight, fit.ssim_weight)
        total = sum(w * breakdown[name] for w, name in zip(weights, TERM_NAMES))
        return total, breakdown

    def evaluate_params(self, params) -> tuple[float, dict]:
        return self.evaluate(AffineOdModel.from_params(params))

    def gradient(self, params, fd_step: float | None = None) -> np.ndarray:
        """Central-difference gradient of the objective over the 12 parameters."""
        h = fd_step if fd_step is not None else self.config.fit.fd_step
        p = np.asarray(params, dtype=np.float64).ravel()
        grad = np.empty(N_MODEL_PARAMS)
        for i in range(N_MODEL_PARAMS):
            probe = p.copy()
            probe[i] = p[i] + h
            j_plus = self.evaluate_params(probe)[0]
            probe[i] = p[i] - h
            j_minus = self.evaluate_params(probe)[0]
            grad[i] = (j_plus - j_minus) / (2.0 * h)
        return grad


def objective(model: AffineOdModel, pairs, config: CcplConfig | None = None) -> tuple[float, dict]:
    """Composed objective of a model over (source, target) pairs.

    The total equals the weighted sum of the returned breakdown terms.
    """
    return ObjectiveEvaluator(pairs, config).evaluate(model)


def objective_gradient(
    model: AffineOdModel, pairs, config: CcplConfig | None = None, fd_step: float | None = None
) -> np.ndarray:
    return ObjectiveEvaluator(pairs, config).gradient(model.to_params(), fd_step)


def fit_stain_transfer(
    pairs,
    init: AffineOdModel | None = None,
    config: CcplConfig | None = None,
) -> tuple[AffineOdModel, FitTrace]:
    """Fit the affine OD model by finite-difference gradient descent.

    Runs up to ``max_iter`` accepted steps of steepest descent, each found by
    a backtracking line search that halves the step size until the objective
    does not increase. Stops early when an accepted step improves the
    objective by less than ``tol``, or when no acceptable step remains. The
    trace records the initial point and every accepted step.
    """
    evaluator = ObjectiveEvaluator(pairs, config)
    fit_cfg = evaluator.config.fit
    params = (init or AffineOdModel.identity()).to_params()

    trace = FitTrace()
    current, breakdown = evaluator.evaluate_params(params)
    trace.append(0, current, breakdown)

    # Warm-started backtracking: each search starts at twice the last
    # accepted step, so the working step length tracks the local gradient
    # scale instead of re-descending from a fixed value every iteration.
    eta_start = fit_cfg.step_size
    for iteration in range(1, fit_cfg.max_iter + 1):
        grad = evaluator.gradient(params)
        if not np.any(grad):
            break

        eta = eta_start
        accepted = None
        for _ in range(_MAX_HALVINGS):
            candidate = params - eta * grad
            value, terms = evaluator.evaluate_params(candidate)
            if value <= current:
                accepted = (candidate, value, terms)
                break
            eta *= fit_cfg.shrink
        if accepted is None:
            break  # line-search floor hit: no non-increasing step exists

        eta_start = eta / fit_cfg.shrink
        params, value, terms = accepted
        improvement = current - value
        current = value
        trace.append(iteration, value, terms)
        if improvement < fit_cfg.tol:
            break

    return AffineOdModel.from_params(params), trace


class AffineStainTransfer(BaseEstimator):
    """Estimator facade over :func:`fit_stain_transfer`.

    ``fit(X, y)`` takes equal-length sequences of source and target RGB
    images; ``predict(X)`` applies the fitted model, emitting uint8 images.
    The loss-pipeline settings (stain matrix, FOD parameters, ...) come from
    ``config``; the objective weights and optimizer knobs are estimator
    parameters so they work with the usual param-search tooling.
    """

    def __init__(
        self,
        pixel_weight: float = 1.0,
        dual_weight: float = 1.0,
        feature_weight: float = 1.0,
        cross_weight: float = 1.0,
        ssim_weight: float = 0.05,
        step_size: float = 1e-4,
        max_iter: int = 200,
        fd_step: float = 1e-4,
        shrink: float = 0.5,
        tol: float = 1e-7,
        config: CcplConfig | None = None,
        init: AffineOdModel | None = None,
    ):
        self.pixel_weight = pixel_weight
        self.dual_weight = dual_weight
        self.feature_weight = feature_weight
        self.cross_weight = cross_weight
        self.ssim_weight = ssim_weight
        self.step_size = step_size
        self.max_iter = max_iter
        self.fd_step = fd_step
        self.shrink = shrink
        self.tol = tol
        self.config = config
        self.init = init

    def _resolved_config(self) -> CcplConfig:
        base = self.config or CcplConfig()
        fit_cfg = replace(
            base.fit,
            pixel_weight=self.pixel_weight,
            dual_weight=self.dual_weight,
            feature_weight=self.feature_weight,
            cross_weight=self.cross_weight,
            ssim_weight=self.ssim_weight,
            step_size=self.step_size,
            max_iter=self.max_iter,
            fd_step=self.fd_step,
            shrink=self.shrink,
            tol=self.tol,
        )
        return replace(base, fit=fit_cfg)

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"X and y must have the same length, got {len(X)} and {len(y)}")
        cfg = self._resolved_config()
        self.model_, self.trace_ = fit_stain_transfer(list(zip(X, y)), self.init, cfg)
        self.n_iter_ = self.trace_.iterations[-1] if len(self.trace_) else 0
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")
        i0 = (self.config or CcplConfig()).reference_intensity
        return [apply_model(self.model_, img, i0) for img in X]
