"""Batch correction of new, unlabelled samples against a frozen model.

Neither variant accepts outcome or batch labels for the new samples.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import ExpressionMatrix, align_features
from .sva import FrozenModel


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    cleaned: ExpressionMatrix
    new_surrogates: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)

    def report_lines(self) -> list[str]:
        """Flat ``key<TAB>value`` diagnostics."""
        d = self.diagnostics
        lines = [f"method\t{self.method}", f"p2\t{self.new_surrogates.shape[0]}",
                 f"n_samples\t{self.cleaned.n}", f"elapsed_ms\t{d['elapsed_ms']:.3f}"]
        for sid, norm in zip(self.cleaned.sample_ids, d["surrogate_norms"]):
            lines.append(f"surrogate_norm.{sid}\t{norm!r}")
        return lines


def _finish(model, aligned, G, method, t0) -> CorrectionResult:
    if model.num_sv == 0:
        cleaned = aligned
    else:
        cleaned = aligned.with_values(aligned.values - model.coeff_surrogate @ G)
    diag = {
        "elapsed_ms": (time.perf_counter() - t0) * 1e3,
        "surrogate_norms": np.linalg.norm(G, axis=0).tolist(),
    }
    return CorrectionResult(cleaned, G, method, diag)


def _augmented_surrogates(model: FrozenModel, wX_train: np.ndarray, x_new: np.ndarray) -> np.ndarray:
    """Surrogate values for one new sample from the augmented weighted SVD."""
    p2 = model.num_sv
    aug = np.column_stack([wX_train, model.weights * (x_new - model.row_means)])
    _, d, vt = np.linalg.svd(aug, full_matrices=False)
    if np.count_nonzero(d > 1e-10 * d[0]) < p2:
        raise ValueError(f"augmented matrix has rank below p2={p2}")
    g = vt[:p2]
    # singular vectors are sign-ambiguous; agree with the frozen training surrogates
    ref = model.training_surrogates
    signs = np.where(np.einsum("kj,kj->k", g[:, :-1], ref) < 0, -1.0, 1.0)
    return g[:, -1] * signs


def fsva_exact(model: FrozenModel, new_samples: ExpressionMatrix) -> CorrectionResult:
    """Correct each new sample by appending it to the training matrix.

    Every sample is processed on its own: the weighted SVD of the (n+1)-column
    augmented matrix is recomputed with the frozen weights, the leading p2
    right vectors are matched to the training surrogates by rank and sign, and
    the last column gives that sample's surrogate values.
    """
    t0 = time.perf_counter()
    aligned = align_features(model.feature_ids, new_samples)
    p2 = model.num_sv
    G = np.zeros((p2, aligned.n))
    if p2:
        wX = model.weights[:, None] * (model.training_expr - model.row_means[:, None])
        for j in range(aligned.n):
            G[:, j] = _augmented_surrogates(model, wX, aligned.values[:, j])
    return _finish(model, aligned, G, "exact", t0)


def fsva_fast(model: FrozenModel, new_samples: ExpressionMatrix) -> CorrectionResult:
    """Correct new samples with the frozen projection D^-1 U^T W.

    One matrix product folds all samples into the training right-singular
    space; the leading p2 rows are the surrogate estimates.
    """
    t0 = time.perf_counter()
    aligned = align_features(model.feature_ids, new_samples)
    p2 = model.num_sv
    if p2 == 0:
        G = np.zeros((0, aligned.n))
    else:
        U = model.projection_left[:, :p2]
        d = model.projection_singular[:p2]
        centered = aligned.values - model.row_means[:, None]
        G = (U.T @ (model.weights[:, None] * centered)) / d[:, None]
    return _finish(model, aligned, G, "fast", t0)


def compare_variants(model: FrozenModel, new_samples: ExpressionMatrix) -> dict:
    """Run both variants and report per-sample discrepancies and timings."""
    exact = fsva_exact(model, new_samples)
    fast = fsva_fast(model, new_samples)
    sv_gap = np.linalg.norm(exact.new_surrogates - fast.new_surrogates, axis=0)
    clean_gap = np.linalg.norm(exact.cleaned.values - fast.cleaned.values, axis=0)
    t_exact = exact.diagnostics["elapsed_ms"]
    t_fast = fast.diagnostics["elapsed_ms"]
    return {
        "m": model.m,
        "n_train": model.n,
        "n_new": new_samples.n,
        "p2": model.num_sv,
        "exact_ms": t_exact,
        "fast_ms": t_fast,
        "speedup": t_exact / t_fast if t_fast > 0 else float("inf"),
        "sample_ids": list(exact.cleaned.sample_ids),
        "surrogate_discrepancy": sv_gap.tolist(),
        "cleaned_discrepancy": clean_gap.tolist(),
        "median_surrogate_discrepancy": float(np.median(sv_gap)) if sv_gap.size else 0.0,
        "median_cleaned_discrepancy": float(np.median(clean_gap)) if clean_gap.size else 0.0,
    }
