"""Surrogate variable analysis on a labelled training set.

The fit alternates between per-feature empirical-Bayes weights and a weighted
SVD of the expression matrix, then regresses the surrogates out of the
training data. `freeze` packages what is needed to correct new samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import isotonic_regression

from .core import DesignMatrix, ExpressionMatrix, _readonly
from .store import load_container, save_container

log = logging.getLogger(__name__)

DROP_RTOL = 1e-10


class DegenerateWeightingError(ValueError):
    pass


class CollinearityError(ValueError):
    pass


def _values(x) -> np.ndarray:
    if isinstance(x, (ExpressionMatrix, DesignMatrix)):
        return x.values
    return np.asarray(x, dtype=float)


def _orthobasis(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x p) for the row space of the p x n matrix M."""
    q, r = np.linalg.qr(M.T)
    return q


def residualize(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Residuals of the row-wise least-squares fit of X on the rows of M."""
    if M.shape[0] == 0:
        return X.copy()
    q = _orthobasis(M)
    return X - (X @ q) @ q.T


def _rss(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    r = residualize(X, M)
    return np.einsum("ij,ij->i", r, r)


# ---------------------------------------------------------------------------
# number of surrogate variables
# ---------------------------------------------------------------------------

def _relative_spectrum(R: np.ndarray, k: int) -> np.ndarray:
    # squared singular values from the smaller Gram matrix
    gram = R.T @ R if R.shape[0] >= R.shape[1] else R @ R.T
    ev = np.clip(np.linalg.eigvalsh(gram)[::-1], 0.0, None)
    total = ev.sum()
    if total <= 0:
        return np.zeros(k)
    return ev[:k] / total


def estimate_num_sv(expr, design, n_perm: int = 20, alpha: float = 0.10, seed: int = 0) -> int:
    """Permutation (parallel-analysis) estimate of the number of surrogates.

    Entries of each row of the design residuals are permuted independently;
    the permuted matrix is residualized again so that observed and null
    spectra live on the same ``n - p1`` dimensional space. A component counts
    when its relative eigenvalue exceeds the order-statistic (1 - alpha)
    quantile of the null at the same rank; counting stops at the first miss.
    Replicate b draws from its own generator spawned from `seed`, so the result
    does not depend on evaluation order.
    """
    X = _values(expr)
    S = _values(design)
    n = X.shape[1]
    p1 = S.shape[0]
    if n <= p1:
        raise ValueError(
            f"insufficient samples for residualization: n={n} must exceed p1={p1}"
        )
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")

    k = min(X.shape[0], n - p1)
    R = residualize(X, S)
    observed = _relative_spectrum(R, k)
    null = np.empty((n_perm, k))
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(n_perm)):
        rng = np.random.default_rng(child)
        null[b] = _relative_spectrum(residualize(rng.permuted(R, axis=1), S), k)
    threshold = np.quantile(null, 1.0 - alpha, axis=0, method="higher")
    above = observed > threshold
    return int(np.argmin(above)) if not above.all() else int(k)


# ---------------------------------------------------------------------------
# empirical Bayes weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FeatureWeights:
    pi_gamma: np.ndarray
    pi_b: np.ndarray
    pi_w: np.ndarray

    def __post_init__(self):
        for name in ("pi_gamma", "pi_b", "pi_w"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))


def f_test_pvalues(X: np.ndarray, full: np.ndarray, reduced: np.ndarray) -> np.ndarray:
    """Row-wise nested-model F-test p-values (plain, unmoderated statistics)."""
    n = X.shape[1]
    df1 = full.shape[0] - reduced.shape[0]
    df2 = n - full.shape[0]
    if df1 < 1 or df2 < 1:
        raise ValueError(f"invalid F-test degrees of freedom ({df1}, {df2})")
    rss1 = _rss(X, full)
    rss0 = _rss(X, reduced)
    scale = np.einsum("ij,ij->i", X, X)
    tiny = 1e-24 * np.maximum(scale, np.finfo(float).tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        fstat = ((rss0 - rss1) / df1) / (rss1 / df2)
    p = stats.f.sf(np.clip(fstat, 0.0, None), df1, df2)
    # exact fits: the full model leaves no residual
    exact = rss1 <= tiny
    p[exact] = np.where(rss0[exact] > tiny[exact] * 1e6, 0.0, 1.0)
    return p


def posterior_nonnull(p: np.ndarray, lam: float = 0.5, n_bins: int = 64) -> np.ndarray:
    """Posterior probability that each test is non-null.

    The null share comes from the Storey estimator at `lam`; the marginal
    p-value density is a 64-bin histogram smoothed by a decreasing isotonic
    fit and read off by linear interpolation between bin centres (flat beyond
    the outer centres), so it is continuous in p. The posterior is
    ``1 - pi0 / f(p)`` clipped to [0, 1].
    """
    p = np.asarray(p, dtype=float)
    m = p.size
    pi0 = min(1.0, np.count_nonzero(p > lam) / (m * (1.0 - lam)))
    idx = np.clip((p * n_bins).astype(int), 0, n_bins - 1)
    density = np.bincount(idx, minlength=n_bins) * (n_bins / m)
    smooth = isotonic_regression(density, increasing=False).x
    centres = (np.arange(n_bins) + 0.5) / n_bins
    f = np.interp(p, centres, smooth)
    with np.errstate(divide="ignore"):
        post = np.where(f > 0, 1.0 - pi0 / f, 0.0)
    return np.clip(post, 0.0, 1.0)


def empirical_bayes_weights(expr, design, surrogates) -> FeatureWeights:
    X = _values(expr)
    S = _values(design)
    G = np.atleast_2d(np.asarray(surrogates, dtype=float))
    n = X.shape[1]
    p1, p2 = S.shape[0], G.shape[0]
    if p2 < 1:
        raise ValueError("empirical_bayes_weights needs at least one surrogate")
    if n <= p1 + p2:
        raise ValueError(f"need n > p1 + p2 samples, got n={n}, p1={p1}, p2={p2}")
    full = np.vstack([S, G])
    if np.linalg.matrix_rank(full) < p1 + p2:
        raise CollinearityError("collinear surrogates: design plus surrogates is rank deficient")

    intercept = S[:1] if getattr(design, "includes_intercept", True) else S[:0]
    p_gamma = f_test_pvalues(X, full, S)
    p_b = f_test_pvalues(X, full, np.vstack([intercept, G]))
    pi_gamma = posterior_nonnull(p_gamma)
    pi_b = posterior_nonnull(p_b)
    return FeatureWeights(pi_gamma, pi_b, (1.0 - pi_b) * pi_gamma)


# ---------------------------------------------------------------------------
# weighted SVD
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightedSvd:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for name in ("left_vectors", "singular_values", "right_vectors", "weights"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    @property
    def rank(self) -> int:
        return self.singular_values.size


def weighted_svd(expr, weights, rank: int | None = None) -> WeightedSvd:
    """Top-`rank` SVD of diag(weights) @ X.

    Signs are canonical: the largest-magnitude entry of every right vector is
    positive (ties go to the lowest index).
    """
    X = _values(expr)
    w = np.asarray(weights, dtype=float)
    if w.shape != (X.shape[0],):
        raise ValueError(f"weights must have length {X.shape[0]}, got {w.shape}")
    if np.any(w < 0) or np.any(w > 1) or not np.all(np.isfinite(w)):
        raise ValueError("weights must lie in [0, 1]")
    if not np.any(w > 0):
        raise DegenerateWeightingError("degenerate weighting: all weights are zero")
    full = min(X.shape)
    rank = full if rank is None else int(rank)
    if not 0 <= rank <= full:
        raise ValueError(f"rank must be in [0, {full}], got {rank}")

    u, d, vt = np.linalg.svd(w[:, None] * X, full_matrices=False)
    u, d, v = u[:, :rank], d[:rank], vt[:rank].T
    flip = np.sign(v[np.argmax(np.abs(v), axis=0), np.arange(rank)])
    flip[flip == 0] = 1.0
    return WeightedSvd(u * flip, d, v * flip, w)


# ---------------------------------------------------------------------------
# regression and cleaning
# ---------------------------------------------------------------------------

def fit_regression(expr, design, surrogates) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients of X on the stacked rows [S; G].

    Returns ``(coeff_outcome, coeff_surrogate)`` of shapes m x p1 and m x p2.
    """
    X = _values(expr)
    S = _values(design)
    G = np.asarray(surrogates, dtype=float).reshape(-1, X.shape[1])
    M = np.vstack([S, G])
    if np.linalg.matrix_rank(M) < M.shape[0]:
        raise CollinearityError(
            f"stacked design of {M.shape[0]} rows is rank deficient; cannot fit regression"
        )
    coef = np.linalg.lstsq(M.T, X.T, rcond=None)[0].T
    p1 = S.shape[0]
    return coef[:, :p1], coef[:, p1:]


@dataclass(frozen=True, eq=False)
class SvaFit:
    num_sv: int
    surrogates: np.ndarray
    coeff_outcome: np.ndarray
    coeff_surrogate: np.ndarray
    weights: FeatureWeights
    svd: WeightedSvd
    design: DesignMatrix
    row_means: np.ndarray
    n_iter: int = 0
    deltas: tuple = ()
    converged: bool = True

    def __post_init__(self):
        for name in ("surrogates", "coeff_outcome", "coeff_surrogate", "row_means"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))

    def noise_residual(self, expr) -> np.ndarray:
        X = _values(expr)
        return X - self.coeff_outcome @ self.design.values - self.coeff_surrogate @ self.surrogates


def sva_fit(
    expr,
    design: DesignMatrix,
    num_sv: int,
    max_iter: int = 5,
    tol: float = 1e-3,
    center: bool = False,
) -> SvaFit:
    """Iterate weights and weighted SVD, then fit X on [S; G].

    With ``center=True`` training row means are subtracted before weighting;
    the default decomposes the raw matrix.
    """
    X = _values(expr)
    S = _values(design)
    m, n = X.shape
    if num_sv < 0:
        raise ValueError("num_sv must be >= 0")
    if max_iter < 1 or tol <= 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    row_means = X.mean(axis=1) if center else np.zeros(m)

    if num_sv == 0:
        b, g = fit_regression(X, S, np.empty((0, n)))
        zeros = np.zeros(m)
        empty = WeightedSvd(np.empty((m, 0)), np.empty(0), np.empty((n, 0)), zeros)
        return SvaFit(0, np.empty((0, n)), b, g, FeatureWeights(zeros, zeros, zeros),
                      empty, design, row_means, 0, (), True)

    if n <= S.shape[0] + num_sv:
        raise ValueError(f"need n > p1 + num_sv, got n={n}, p1={S.shape[0]}, num_sv={num_sv}")
    Xc = X - row_means[:, None]
    _, _, vt = np.linalg.svd(residualize(X, S), full_matrices=False)
    G = vt[:num_sv]

    prev = None
    deltas = []
    converged = False
    for it in range(1, max_iter + 1):
        weights = empirical_bayes_weights(X, S, G)
        dec = weighted_svd(Xc, weights.pi_w)
        G = dec.right_vectors[:, :num_sv].T
        if prev is not None:
            deltas.append(float(np.max(np.abs(weights.pi_w - prev))))
            log.debug("sva iteration %d: max |delta pi_w| = %.3g", it, deltas[-1])
            if deltas[-1] < tol:
                converged = True
                break
        prev = weights.pi_w

    if np.count_nonzero(dec.singular_values[:num_sv] > DROP_RTOL * dec.singular_values[0]) < num_sv:
        raise DegenerateWeightingError(
            f"weighted matrix has fewer than {num_sv} non-negligible components"
        )
    b, g = fit_regression(X, S, G)
    return SvaFit(num_sv, G, b, g, weights, dec, design, row_means, it, tuple(deltas), converged)


def clean_training(expr: ExpressionMatrix, fit: SvaFit) -> ExpressionMatrix:
    """Training matrix with the surrogate term removed: X - Gamma G."""
    if fit.coeff_surrogate.shape[0] != expr.m or fit.surrogates.shape[1] != expr.n:
        raise ValueError("fit dimensions do not match the expression matrix")
    if fit.num_sv == 0:
        return expr
    return expr.with_values(expr.values - fit.coeff_surrogate @ fit.surrogates)


# ---------------------------------------------------------------------------
# frozen model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrozenModel:
    """Training-set quantities held fixed while correcting new samples."""

    feature_ids: tuple
    weights: np.ndarray
    coeff_surrogate: np.ndarray
    num_sv: int
    projection_left: np.ndarray
    projection_singular: np.ndarray
    training_expr: np.ndarray
    training_right_vectors: np.ndarray
    row_means: np.ndarray
    dropped_components: int = 0
    metadata: dict = field(default_factory=dict)

    _ARRAYS = ("weights", "coeff_surrogate", "projection_left", "projection_singular",
               "training_expr", "training_right_vectors", "row_means")

    def __post_init__(self):
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        for name in self._ARRAYS:
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        object.__setattr__(self, "metadata", dict(self.metadata))
        if np.any(self.projection_singular <= 0):
            raise ValueError("frozen singular values must be strictly positive")
        if self.num_sv > self.projection_singular.size:
            raise ValueError("num_sv exceeds the retained projection rank")

    @property
    def m(self) -> int:
        return self.training_expr.shape[0]

    @property
    def n(self) -> int:
        return self.training_expr.shape[1]

    @property
    def rank(self) -> int:
        return self.projection_singular.size

    @property
    def training_surrogates(self) -> np.ndarray:
        return self.training_right_vectors[:, : self.num_sv].T

    def projection(self) -> np.ndarray:
        """P = D^-1 U^T W, an r x m matrix."""
        return (self.projection_left.T / self.projection_singular[:, None]) * self.weights[None, :]

    def save(self, path) -> None:
        meta = {
            "dims": {"m": self.m, "n": self.n, "p2": self.num_sv, "r": self.rank,
                     "p1": self.metadata.get("p1")},
            "feature_ids": list(self.feature_ids),
            "num_sv": self.num_sv,
            "dropped_components": self.dropped_components,
            "metadata": self.metadata,
            "dtype": "float64",
        }
        save_container(path, "frozen_model", {k: getattr(self, k) for k in self._ARRAYS}, meta)

    @classmethod
    def load(cls, path) -> "FrozenModel":
        arrays, meta = load_container(path, "frozen_model")
        return cls(feature_ids=tuple(meta["feature_ids"]), num_sv=int(meta["num_sv"]),
                   dropped_components=int(meta["dropped_components"]),
                   metadata=meta["metadata"], **arrays)

    def equals(self, other: "FrozenModel") -> bool:
        return (
            self.feature_ids == other.feature_ids
            and self.num_sv == other.num_sv
            and self.dropped_components == other.dropped_components
            and self.metadata == other.metadata
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self._ARRAYS)
        )


def freeze(fit: SvaFit, expr: ExpressionMatrix, **metadata) -> FrozenModel:
    """Package the converged fit for correcting new samples.

    Components whose singular value is below 1e-10 of the largest are dropped
    (their inverse is undefined); the count is kept on the model.
    """
    d = fit.svd.singular_values
    keep = d > DROP_RTOL * d[0] if d.size else np.zeros(0, dtype=bool)
    dropped = int(d.size - keep.sum())
    if dropped:
        log.info("dropping %d near-zero singular components from the frozen projection", dropped)
    meta = {"p1": fit.design.p1, "n_iter": fit.n_iter, "deltas": list(fit.deltas),
            "converged": fit.converged, **metadata}
    return FrozenModel(
        feature_ids=expr.feature_ids,
        weights=fit.weights.pi_w,
        coeff_surrogate=fit.coeff_surrogate,
        num_sv=fit.num_sv,
        projection_left=fit.svd.left_vectors[:, keep],
        projection_singular=d[keep],
        training_expr=expr.values,
        training_right_vectors=fit.svd.right_vectors[:, keep],
        row_means=fit.row_means,
        dropped_components=dropped,
        metadata=meta,
    )
