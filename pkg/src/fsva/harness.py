"""Evaluation pipelines: the confounding sweep on simulated studies and the
random half-split protocol for labelled datasets.

Every replicate draws its randomness from a seed derived from the config
seed and the replicate index, so reports are identical for any thread count.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .classifier import DEFAULT_GRID, accuracy, choose_shrinkage, nsc_predict, nsc_train
from .core import Dataset, ExpressionMatrix, OutcomeLabels, encode_design
from .correct import fsva_exact, fsva_fast
from .simulate import ScenarioSpec, scenario, simulate_study
from .sva import clean_training, estimate_num_sv, freeze, sva_fit

log = logging.getLogger(__name__)

METHODS = ("none", "sva_db_only", "fsva_exact", "fsva_fast")


def desk_scenario(number: int = 1, **overrides) -> ScenarioSpec:
    """Reduced-size scenario: 1000 features, 100 database and 100 new samples."""
    return scenario(number, **{"m": 1000, "n_db": 100, "n_new": 100, **overrides})


def full_scenario(number: int = 1, **overrides) -> ScenarioSpec:
    return scenario(number, **{"m": 10000, "n_db": 100, "n_new": 100, **overrides})


@dataclass(frozen=True)
class ExperimentConfig:
    correction_methods: tuple = METHODS
    n_iterations: int = 25
    rho_grid: tuple = (0.0, 0.3, 0.6, 0.9)
    scenario: ScenarioSpec | None = None
    split_fraction: float = 0.5
    seed: int = 0
    n_perm: int = 20
    alpha: float = 0.10
    shrinkage: float | None = None      # None: cross-validated per replicate
    shrinkage_grid: tuple = DEFAULT_GRID
    folds: int = 5
    max_iter: int = 5
    center: bool = False
    n_boot: int = 2000
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "correction_methods", tuple(self.correction_methods))
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        unknown = set(self.correction_methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown correction methods {sorted(unknown)}")
        if not self.correction_methods:
            raise ValueError("at least one correction method is required")
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be >= 1")
        if any(not 0.0 <= r <= 0.95 for r in self.rho_grid):
            raise ValueError("rho_grid values must lie in [0, 0.95]")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")

    @classmethod
    def full_scale(cls, number: int = 1, **overrides) -> "ExperimentConfig":
        return cls(**{"scenario": full_scenario(number), "n_iterations": 100, **overrides})

    def describe(self) -> str:
        d = asdict(self)
        d.pop("threads")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# one replicate
# ---------------------------------------------------------------------------

def _train_classifier(expr, outcomes, cfg: ExperimentConfig, seed: int):
    delta = cfg.shrinkage
    if delta is None:
        delta = choose_shrinkage(expr, outcomes, cfg.folds, cfg.shrinkage_grid, seed=seed)
    return nsc_train(expr, outcomes, delta)


def correct_and_predict(database: Dataset, new_expr: ExpressionMatrix, cfg: ExperimentConfig, seed: int) -> dict:
    """Predicted labels for `new_expr` under every configured method.

    Only the database carries labels; the new samples enter as a bare
    expression matrix.
    """
    methods = cfg.correction_methods
    S = encode_design(database.outcomes)
    n, p1 = database.expr.n, S.p1
    p2 = estimate_num_sv(database.expr, S, cfg.n_perm, cfg.alpha, seed=seed)
    # the weight F-tests need residual degrees of freedom
    p2 = min(p2, n - p1 - 1)
    out = {"p2": p2}

    if "none" in methods:
        raw_clf = _train_classifier(database.expr, database.outcomes, cfg, seed)
        out["none"] = nsc_predict(raw_clf, new_expr)[0]
    if set(methods) - {"none"}:
        fit = sva_fit(database.expr, S, p2, max_iter=cfg.max_iter, center=cfg.center)
        model = freeze(fit, database.expr, seed=seed)
        clean_clf = _train_classifier(clean_training(database.expr, fit), database.outcomes, cfg, seed)
        if "sva_db_only" in methods:
            out["sva_db_only"] = nsc_predict(clean_clf, new_expr)[0]
        if "fsva_exact" in methods:
            out["fsva_exact"] = nsc_predict(clean_clf, fsva_exact(model, new_expr).cleaned)[0]
        if "fsva_fast" in methods:
            out["fsva_fast"] = nsc_predict(clean_clf, fsva_fast(model, new_expr).cleaned)[0]
    return out


def _score(database: Dataset, new: Dataset, cfg: ExperimentConfig, seed: int) -> dict:
    preds = correct_and_predict(database, new.expr, cfg, seed)
    acc = {m: accuracy(preds[m], new.outcomes.labels) for m in cfg.correction_methods}
    return {"p2": preds["p2"], "accuracy": acc}


def _replicate_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


def _run_tasks(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def bootstrap_ci(values, n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return (math.nan, math.nan)
    if values.size == 1 or np.all(values == values[0]):
        return (float(values[0]), float(values[0]))
    rng = np.random.default_rng(seed)
    means = values[rng.integers(0, values.size, (n_boot, values.size))].mean(axis=1)
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(lo), float(hi)


def paired_one_sided_pvalue(a, b) -> float:
    """p-value of the paired t-test for mean(a - b) > 0."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size < 2 or np.all(d == d[0]):
        return 0.0 if d.size and d[0] > 0 else 1.0
    return float(stats.ttest_rel(a, b, alternative="greater").pvalue)


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return "NA" if math.isnan(x) else f"{x:.6f}"
    return str(x)


@dataclass
class AccuracyReport:
    """Per-replicate accuracies plus bootstrap summaries.

    `records` holds one dict per (rho, iteration) with keys ``rho``,
    ``iteration``, ``seed``, ``p2``, ``accuracy`` (method -> value) and
    ``error`` (None on success).
    """

    config: ExperimentConfig
    records: list = field(default_factory=list)
    label: str = "sweep"

    @property
    def methods(self) -> tuple:
        return self.config.correction_methods

    def rhos(self) -> list:
        seen = []
        for r in self.records:
            if r["rho"] not in seen:
                seen.append(r["rho"])
        return seen

    def accuracies(self, method: str, rho=None) -> np.ndarray:
        return np.array([
            r["accuracy"][method] for r in self.records
            if r["error"] is None and r["rho"] == rho
        ])

    def failures(self, rho=None) -> int:
        return sum(1 for r in self.records if r["rho"] == rho and r["error"] is not None)

    def improvements(self, method: str, rho=None) -> np.ndarray:
        return self.accuracies(method, rho) - self.accuracies("none", rho)

    def summary(self) -> list[dict]:
        rows = []
        boot_seed = _replicate_seed(self.config.seed, 0xB007)
        for ri, rho in enumerate(self.rhos()):
            for mi, method in enumerate(self.methods):
                acc = self.accuracies(method, rho)
                lo, hi = bootstrap_ci(acc, self.config.n_boot, _replicate_seed(boot_seed, ri, mi))
                row = {
                    "method": method, "rho": rho,
                    "mean_accuracy": float(acc.mean()) if acc.size else math.nan,
                    "ci_low": lo, "ci_high": hi,
                    "n_iter": int(acc.size), "failures": self.failures(rho),
                    "improvement": math.nan, "improvement_ci_low": math.nan,
                    "improvement_ci_high": math.nan,
                }
                if "none" in self.methods:
                    imp = self.improvements(method, rho)
                    ilo, ihi = bootstrap_ci(imp, self.config.n_boot,
                                            _replicate_seed(boot_seed, ri, mi, 1))
                    row.update(improvement=float(imp.mean()) if imp.size else math.nan,
                               improvement_ci_low=ilo, improvement_ci_high=ihi)
                rows.append(row)
        return rows

    def ordinality(self, rho=None) -> float:
        """Share of replicates with fsva_exact >= sva_db_only >= none."""
        need = ("fsva_exact", "sva_db_only", "none")
        if not set(need) <= set(self.methods):
            return math.nan
        ok = [r["accuracy"]["fsva_exact"] >= r["accuracy"]["sva_db_only"] >= r["accuracy"]["none"]
              for r in self.records if r["rho"] == rho and r["error"] is None]
        return float(np.mean(ok)) if ok else math.nan

    SUMMARY_COLUMNS = ("method", "rho", "mean_accuracy", "ci_low", "ci_high", "n_iter",
                       "failures", "improvement", "improvement_ci_low", "improvement_ci_high")

    def _header(self) -> str:
        return f"# {self.label} seed={self.config.seed} config={self.config.describe()}\n"

    def summary_text(self, delimiter: str = "\t") -> str:
        lines = [self._header()]
        for rho in self.rhos():
            lines.append(f"# ordinality rho={_fmt(rho)}: {_fmt(self.ordinality(rho))}\n")
        lines.append(delimiter.join(self.SUMMARY_COLUMNS) + "\n")
        for row in self.summary():
            lines.append(delimiter.join(_fmt(row[c]) for c in self.SUMMARY_COLUMNS) + "\n")
        return "".join(lines)

    def iterations_text(self, delimiter: str = "\t") -> str:
        cols = ("rho", "iteration", "seed", "p2", "method", "accuracy", "error")
        lines = [self._header(), delimiter.join(cols) + "\n"]
        for r in self.records:
            for method in self.methods:
                acc = None if r["error"] is not None else r["accuracy"][method]
                err = "" if r["error"] is None else r["error"].replace(delimiter, " ")
                vals = (r["rho"], r["iteration"], r["seed"], r["p2"], method, acc, err)
                lines.append(delimiter.join(_fmt(v) for v in vals) + "\n")
        return "".join(lines)

    def write(self, out_dir, prefix: str = "report", delimiter: str = "\t") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ext = "tsv" if delimiter == "\t" else "csv"
        summary = out_dir / f"{prefix}.{ext}"
        long = out_dir / f"{prefix}_iterations.{ext}"
        summary.write_text(self.summary_text(delimiter), encoding="utf-8")
        long.write_text(self.iterations_text(delimiter), encoding="utf-8")
        return summary, long


def _guarded(fn, record: dict) -> dict:
    try:
        res = fn()
        record.update(p2=res["p2"], accuracy=res["accuracy"], error=None)
    except Exception as exc:  # per-replicate failures are reported, not fatal
        log.warning("replicate rho=%s iteration=%s failed: %s", record["rho"], record["iteration"], exc)
        record.update(p2=None, accuracy={}, error=f"{type(exc).__name__}: {exc}")
    return record


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def run_simulation_sweep(config: ExperimentConfig) -> AccuracyReport:
    """Simulate, correct, classify and score at every confounding level.

    Iteration i uses the same study seed at every rho, so replicates are
    paired across confounding levels.
    """
    spec = config.scenario if config.scenario is not None else desk_scenario(1)

    def task(key):
        rho, it = key
        seed = _replicate_seed(config.seed, it)
        record = {"rho": rho, "iteration": it, "seed": seed}

        def body():
            study = simulate_study(spec.with_(confounding_rho=rho, seed=seed))
            return _score(study.database, study.new_samples, config, seed)

        return _guarded(body, record)

    tasks = [(rho, it) for rho in config.rho_grid for it in range(config.n_iterations)]
    return AccuracyReport(config, _run_tasks(task, tasks, config.threads), label="sweep")


def stratified_split(outcomes: OutcomeLabels, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Random (database, new) index split preserving class proportions."""
    codes = outcomes.codes
    db, new = [], []
    for k, cls in enumerate(outcomes.class_set):
        idx = rng.permutation(np.flatnonzero(codes == k))
        n_db = int(round(fraction * idx.size))
        if n_db < 2 or idx.size - n_db < 1:
            raise ValueError(
                f"class {cls!r} with {idx.size} samples is too small to stratify at fraction {fraction}"
            )
        db.append(idx[:n_db])
        new.append(idx[n_db:])
    return np.sort(np.concatenate(db)), np.sort(np.concatenate(new))


def run_split_study(expr: ExpressionMatrix, outcomes: OutcomeLabels, config: ExperimentConfig) -> AccuracyReport:
    """Repeated random database/new-sample splits of one labelled dataset."""
    if len(outcomes) != expr.n:
        raise ValueError("outcome labels do not match the number of samples")
    # fail fast on classes too small to split
    stratified_split(outcomes, config.split_fraction, np.random.default_rng(0))

    def task(it):
        seed = _replicate_seed(config.seed, it)
        record = {"rho": None, "iteration": it, "seed": seed}

        def body():
            db_idx, new_idx = stratified_split(outcomes, config.split_fraction,
                                               np.random.default_rng(seed))
            database = Dataset(expr.select_samples(db_idx), outcomes.subset(db_idx))
            new = Dataset(expr.select_samples(new_idx), outcomes.subset(new_idx))
            return _score(database, new, config, seed)

        return _guarded(body, record)

    return AccuracyReport(config, _run_tasks(task, range(config.n_iterations), config.threads),
                          label="split-eval")
