"""Synthetic studies drawn from X = B S + Gamma G + U.

Each study has two equally sized batches and two equally sized outcome
groups. Batch and outcome are correlated at a chosen level in the database
and uncorrelated in the new samples.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import Dataset, ExpressionMatrix, OutcomeLabels


@dataclass(frozen=True)
class ScenarioSpec:
    """Generation parameters for one scenario.

    `sd_b`, `sd_gamma` and `sd_noise` hold the scale numbers as tabulated.
    `convention` says how to read them: "variance" takes each as the variance
    of the normal (so the standard deviation is its square root), "sd" takes
    it as the standard deviation.
    """

    sd_b: float = 1.0
    sd_gamma: float = 3.0
    sd_noise: float = 2.0
    frac_batch: float = 0.5
    frac_outcome: float = 0.5
    frac_both: float = 0.4
    m: int = 10000
    n_db: int = 100
    n_new: int = 100
    confounding_rho: float = 0.0
    seed: int = 0
    convention: str = "variance"
    name: str = "custom"

    def __post_init__(self):
        for f in ("frac_batch", "frac_outcome", "frac_both"):
            if not 0.0 <= getattr(self, f) <= 1.0:
                raise ValueError(f"{f} must lie in [0, 1]")
        if self.frac_both > min(self.frac_batch, self.frac_outcome):
            raise ValueError("frac_both cannot exceed frac_batch or frac_outcome")
        if not 0.0 <= self.confounding_rho <= 0.95:
            raise ValueError("confounding_rho must lie in [0, 0.95]")
        if self.n_db % 2 or self.n_new % 2 or self.n_db < 2 or self.n_new < 2:
            raise ValueError("n_db and n_new must be positive and even")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if min(self.sd_b, self.sd_gamma, self.sd_noise) < 0:
            raise ValueError("scale parameters must be non-negative")
        if self.convention not in ("variance", "sd"):
            raise ValueError("convention must be 'variance' or 'sd'")

    def std(self, value: float) -> float:
        return float(np.sqrt(value)) if self.convention == "variance" else float(value)

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)


_TABLE = {
    1: dict(sd_b=1.0, sd_gamma=3.0, sd_noise=2.0, frac_batch=0.5, frac_outcome=0.5, frac_both=0.4),
    2: dict(sd_b=1.0, sd_gamma=4.0, sd_noise=3.0, frac_batch=0.5, frac_outcome=0.5, frac_both=0.4),
    3: dict(sd_b=1.0, sd_gamma=4.0, sd_noise=3.0, frac_batch=0.8, frac_outcome=0.8, frac_both=0.5),
}


def builtin_scenarios(**overrides) -> tuple[ScenarioSpec, ScenarioSpec, ScenarioSpec]:
    """The three standard scenarios (10000 features, 100 + 100 samples)."""
    return tuple(
        ScenarioSpec(**{**_TABLE[k], "name": f"scenario{k}", **overrides}) for k in (1, 2, 3)
    )


def scenario(number: int, **overrides) -> ScenarioSpec:
    if number not in _TABLE:
        raise ValueError(f"unknown scenario {number}; choose 1, 2 or 3")
    return builtin_scenarios(**overrides)[number - 1]


def concordant_count(n: int, rho: float) -> int:
    return int(round(n / 4 * (1 + rho)))


def indicator_correlation(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def assign_confounded_labels(n: int, rho: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """0/1 batch and outcome indicators with balanced margins and correlation ~rho.

    The 2x2 table has both concordant cells equal to round(n/4 (1 + rho)) and
    the discordant cells take the remainder, so the indicator correlation is
    4 n11 / n - 1. Sample order is shuffled with `seed`.
    """
    if n % 2 or n < 2:
        raise ValueError(f"n must be a positive even integer, got {n}")
    if not 0.0 <= rho <= 0.95:
        raise ValueError(f"rho must lie in [0, 0.95], got {rho}")
    n11 = concordant_count(n, rho)
    n10 = n // 2 - n11
    if n10 < 0 or n11 < 0:
        raise ValueError(f"infeasible 2x2 layout for n={n}, rho={rho}")
    batch = np.repeat([1, 1, 0, 0], [n11, n10, n10, n11])
    outcome = np.repeat([1, 0, 1, 0], [n11, n10, n10, n11])
    order = np.random.default_rng(seed).permutation(n)
    return batch[order], outcome[order]


@dataclass(frozen=True, eq=False)
class SimulatedStudy:
    database: Dataset
    new_samples: Dataset
    truth: dict = field(default_factory=dict)
    spec: ScenarioSpec | None = None

    def manifest(self) -> dict:
        t = self.truth
        return {
            "spec": asdict(self.spec) if self.spec else None,
            "achieved_rho_database": t["achieved_rho_database"],
            "achieved_rho_new": t["achieved_rho_new"],
            "n_batch_affected": int(t["batch_mask"].sum()),
            "n_outcome_affected": int(t["outcome_mask"].sum()),
            "n_both_affected": int((t["batch_mask"] & t["outcome_mask"]).sum()),
            "batch_features": [int(i) for i in np.flatnonzero(t["batch_mask"])],
            "outcome_features": [int(i) for i in np.flatnonzero(t["outcome_mask"])],
        }


def _masks(spec: ScenarioSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    m = spec.m
    n_both = int(round(spec.frac_both * m))
    n_batch = int(round(spec.frac_batch * m)) - n_both
    n_out = int(round(spec.frac_outcome * m)) - n_both
    if n_batch < 0 or n_out < 0 or n_both + n_batch + n_out > m:
        raise ValueError(
            f"infeasible feature masks: {n_both} shared + {n_batch} batch-only + "
            f"{n_out} outcome-only exceeds m={m}"
        )
    order = rng.permutation(m)
    batch_mask = np.zeros(m, dtype=bool)
    outcome_mask = np.zeros(m, dtype=bool)
    both = order[:n_both]
    batch_mask[both] = outcome_mask[both] = True
    batch_mask[order[n_both:n_both + n_batch]] = True
    outcome_mask[order[n_both + n_batch:n_both + n_batch + n_out]] = True
    return batch_mask, outcome_mask


def simulate_study(spec: ScenarioSpec) -> SimulatedStudy:
    """Draw a database and a set of new samples sharing the same coefficients."""
    ss = np.random.SeedSequence(spec.seed)
    s_mask, s_coef, s_db, s_new, s_lab_db, s_lab_new = ss.spawn(6)
    batch_mask, outcome_mask = _masks(spec, np.random.default_rng(s_mask))
    rng = np.random.default_rng(s_coef)
    m = spec.m
    B = rng.normal(0.0, spec.std(spec.sd_b), m) * outcome_mask
    Gamma = rng.normal(0.0, spec.std(spec.sd_gamma), m) * batch_mask
    noise_sd = spec.std(spec.sd_noise)

    def draw(n, rho, lab_seed, noise_seed, prefix):
        batch, outcome = assign_confounded_labels(n, rho, lab_seed)
        U = np.random.default_rng(noise_seed).normal(0.0, noise_sd, (m, n))
        X = np.outer(B, outcome) + np.outer(Gamma, batch) + U
        expr = ExpressionMatrix.from_array(X, sample_prefix=prefix)
        labels = OutcomeLabels(tuple(int(v) for v in outcome), (0, 1))
        return Dataset(expr, labels, tuple(int(v) for v in batch)), batch, outcome

    db, b_db, y_db = draw(spec.n_db, spec.confounding_rho, s_lab_db, s_db, "db")
    new, b_new, y_new = draw(spec.n_new, 0.0, s_lab_new, s_new, "new")
    truth = {
        "B": B,
        "Gamma": Gamma,
        "G_database": b_db.astype(float)[None, :],
        "G_new": b_new.astype(float)[None, :],
        "batch_mask": batch_mask,
        "outcome_mask": outcome_mask,
        "achieved_rho_database": indicator_correlation(b_db, y_db),
        "achieved_rho_new": indicator_correlation(b_new, y_new),
    }
    return SimulatedStudy(db, new, truth, spec)
