"""Nearest shrunken centroids (PAM-style) classification.

Class centroids are soft-thresholded toward the overall centroid in units of
the pooled within-class standard deviation, and a sample is assigned to the
class minimizing the standardized squared distance minus twice the log prior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ExpressionMatrix, OutcomeLabels, align_features
from .store import load_container, save_container

DEFAULT_GRID = (0.0, 0.5, 1.0, 1.5, 2.0, 3.0)


@dataclass(frozen=True, eq=False)
class NscModel:
    class_centroids: np.ndarray   # m x K, shrunken
    overall_centroid: np.ndarray
    pooled_sd: np.ndarray         # s_i + s0
    shrinkage: float
    class_priors: np.ndarray
    class_set: tuple
    feature_ids: tuple
    s0: float = 0.0

    _ARRAYS = ("class_centroids", "overall_centroid", "pooled_sd", "class_priors")

    def __post_init__(self):
        for name in self._ARRAYS:
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "class_set", tuple(self.class_set))
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        if np.any(self.pooled_sd <= 0):
            raise ValueError("pooled standard deviations must be positive")

    @property
    def active_features(self) -> np.ndarray:
        """Mask of features whose centroid differs from the overall centroid in some class."""
        return np.any(self.class_centroids != self.overall_centroid[:, None], axis=1)

    def discriminants(self, X: np.ndarray) -> np.ndarray:
        """K x n discriminant scores; smaller is better."""
        scale = self.pooled_sd ** 2
        out = np.empty((len(self.class_set), X.shape[1]))
        for k in range(len(self.class_set)):
            diff = X - self.class_centroids[:, k:k + 1]
            out[k] = (diff * diff / scale[:, None]).sum(axis=0)
        with np.errstate(divide="ignore"):
            return out - 2.0 * np.log(self.class_priors)[:, None]

    def save(self, path) -> None:
        meta = {
            "class_set": [str(c) for c in self.class_set],
            "class_types": [type(c).__name__ for c in self.class_set],
            "feature_ids": list(self.feature_ids),
            "shrinkage": self.shrinkage,
            "s0": self.s0,
            "dims": {"m": len(self.feature_ids), "K": len(self.class_set)},
            "dtype": "float64",
        }
        save_container(path, "nsc_model", {k: getattr(self, k) for k in self._ARRAYS}, meta)

    @classmethod
    def load(cls, path) -> "NscModel":
        arrays, meta = load_container(path, "nsc_model")
        casts = {"int": int, "float": float, "str": str}
        classes = tuple(casts.get(t, str)(c) for c, t in zip(meta["class_set"], meta["class_types"]))
        return cls(shrinkage=float(meta["shrinkage"]), s0=float(meta["s0"]), class_set=classes,
                   feature_ids=tuple(meta["feature_ids"]), **arrays)

    def equals(self, other: "NscModel") -> bool:
        return (
            self.class_set == other.class_set
            and self.feature_ids == other.feature_ids
            and self.shrinkage == other.shrinkage
            and self.s0 == other.s0
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in self._ARRAYS)
        )


def nsc_train(
    expr: ExpressionMatrix,
    outcomes: OutcomeLabels,
    shrinkage: float = 0.0,
    s0: float | None = None,
    priors: str | np.ndarray = "empirical",
) -> NscModel:
    """Fit shrunken centroids.

    `s0` defaults to the median pooled within-class standard deviation; pass
    0 to disable the fudge term. `priors` is "empirical", "equal", or an
    explicit vector over ``outcomes.class_set``.
    """
    if shrinkage < 0:
        raise ValueError("shrinkage must be >= 0")
    X = expr.values
    codes = outcomes.codes
    n = X.shape[1]
    K = len(outcomes.class_set)
    counts = np.bincount(codes, minlength=K)
    if np.any(counts < 2):
        small = [outcomes.class_set[k] for k in np.flatnonzero(counts < 2)]
        raise ValueError(f"every class needs at least 2 samples; too few in {small}")

    means = np.column_stack([X[:, codes == k].mean(axis=1) for k in range(K)])
    overall = X.mean(axis=1)
    within = X - means[:, codes]
    sd = np.sqrt((within * within).sum(axis=1) / (n - K))
    if s0 is None:
        s0 = float(np.median(sd))
    scale = sd + s0
    if np.any(scale <= 0):
        raise ValueError("zero within-class variance for some features; use s0 > 0")

    mk = np.sqrt(1.0 / counts - 1.0 / n)
    d = (means - overall[:, None]) / (mk[None, :] * scale[:, None])
    d_shrunk = np.sign(d) * np.maximum(np.abs(d) - shrinkage, 0.0)
    if shrinkage == 0:
        centroids = means
    else:
        centroids = overall[:, None] + mk[None, :] * scale[:, None] * d_shrunk

    if isinstance(priors, str):
        if priors == "empirical":
            priors = counts / n
        elif priors == "equal":
            priors = np.full(K, 1.0 / K)
        else:
            raise ValueError(f"unknown priors {priors!r}")
    priors = np.asarray(priors, dtype=float)
    if priors.shape != (K,) or np.any(priors < 0) or abs(priors.sum() - 1) > 1e-12:
        raise ValueError("priors must be a probability vector over the classes")

    return NscModel(centroids, overall, scale, float(shrinkage), priors,
                    outcomes.class_set, expr.feature_ids, float(s0))


def nsc_predict(model: NscModel, samples: ExpressionMatrix) -> tuple[list, np.ndarray]:
    """Predicted labels and the K x n discriminant scores.

    Ties resolve to the earliest class in ``model.class_set``.
    """
    aligned = align_features(model.feature_ids, samples)
    scores = model.discriminants(aligned.values)
    # argmin returns the first minimum, which is the class_set-order tie-break
    best = np.argmin(scores, axis=0)
    return [model.class_set[k] for k in best], scores


def accuracy(predicted, truth) -> float:
    predicted = list(predicted)
    truth = list(truth)
    return sum(p == t for p, t in zip(predicted, truth)) / len(truth)


def stratified_folds(codes: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold index per sample; each class is spread evenly across folds."""
    assignment = np.empty(codes.size, dtype=int)
    for k in np.unique(codes):
        idx = np.flatnonzero(codes == k)
        if idx.size < folds:
            raise ValueError(f"class with {idx.size} samples is smaller than the fold count {folds}")
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(idx.size) % folds
    return assignment


def choose_shrinkage(
    expr: ExpressionMatrix,
    outcomes: OutcomeLabels,
    folds: int = 5,
    grid=DEFAULT_GRID,
    seed: int = 0,
    s0: float | None = None,
) -> float:
    """Largest shrinkage whose CV accuracy is within one standard error of the best."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    grid = sorted(float(g) for g in grid)
    if len(grid) == 1:
        return grid[0]
    codes = outcomes.codes
    assign = stratified_folds(codes, folds, np.random.default_rng(seed))
    acc = np.zeros((len(grid), folds))
    for f in range(folds):
        train = np.flatnonzero(assign != f)
        test = np.flatnonzero(assign == f)
        sub = outcomes.subset(train)
        for g, delta in enumerate(grid):
            model = nsc_train(expr.select_samples(train), sub, delta, s0=s0)
            pred, _ = nsc_predict(model, expr.select_samples(test))
            acc[g, f] = accuracy(pred, [outcomes.labels[j] for j in test])
    mean = acc.mean(axis=1)
    se = acc.std(axis=1, ddof=1) / np.sqrt(folds)
    best = int(np.argmax(mean))
    ok = [g for g in range(len(grid)) if mean[g] >= mean[best] - se[best]]
    return grid[max(ok)]
