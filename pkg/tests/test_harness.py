import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fsva import harness
from fsva.core import ExpressionMatrix, OutcomeLabels
from fsva.harness import (AccuracyReport, ExperimentConfig, bootstrap_ci, correct_and_predict,
                          paired_one_sided_pvalue, run_simulation_sweep, run_split_study,
                          stratified_split)
from fsva.simulate import scenario, simulate_study


def small(**kw):
    base = dict(scenario=scenario(1, m=200, n_db=40, n_new=40), n_iterations=2,
                rho_grid=(0.0, 0.6), n_boot=200, shrinkage=1.0)
    return ExperimentConfig(**{**base, **kw})


def test_minimal_run():
    cfg = small(n_iterations=1, rho_grid=(0.0,), correction_methods=("none",))
    report = run_simulation_sweep(cfg)
    rows = report.summary()
    assert len(rows) == 1
    row = rows[0]
    assert row["method"] == "none" and row["n_iter"] == 1 and row["failures"] == 0
    assert 0.0 <= row["mean_accuracy"] <= 1.0
    assert row["ci_low"] == row["mean_accuracy"] == row["ci_high"]
    text = report.summary_text()
    assert text.startswith("# sweep seed=0 config=")
    assert text.splitlines()[-2].split("\t") == list(AccuracyReport.SUMMARY_COLUMNS)


def test_sweep_is_deterministic_and_schedule_invariant():
    a = run_simulation_sweep(small(seed=4))
    b = run_simulation_sweep(small(seed=4))
    c = run_simulation_sweep(small(seed=4, threads=3))
    assert a.summary_text() == b.summary_text() == c.summary_text()
    assert a.iterations_text() == c.iterations_text()
    assert run_simulation_sweep(small(seed=5)).iterations_text() != a.iterations_text()


def test_sweep_shape_and_ranges():
    report = run_simulation_sweep(small())
    rows = report.summary()
    assert len(rows) == 2 * 4
    for r in rows:
        assert 0.0 <= r["ci_low"] <= r["mean_accuracy"] <= r["ci_high"] <= 1.0
    assert all(r["improvement"] == 0.0 for r in rows if r["method"] == "none")
    assert len(report.iterations_text().splitlines()) == 2 + 2 * 2 * 4


def test_replicate_failure_is_recorded(monkeypatch):
    calls = {"n": 0}
    real = harness.sva_fit

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise RuntimeError("boom")
        return real(*args, **kwargs)

    monkeypatch.setattr(harness, "sva_fit", flaky)
    report = run_simulation_sweep(small(rho_grid=(0.6,)))
    row = report.summary()[0]
    assert row["failures"] == 1 and row["n_iter"] == 1
    assert "RuntimeError: boom" in report.iterations_text()


def test_new_sample_labels_never_reach_correction():
    params = list(inspect.signature(correct_and_predict).parameters)
    assert params == ["database", "new_expr", "cfg", "seed"]
    study = simulate_study(scenario(1, m=200, n_db=40, n_new=10, confounding_rho=0.6, seed=1))
    # the new samples are passed as a bare matrix; no labels exist anywhere
    bare = ExpressionMatrix(study.new_samples.expr.values.copy(),
                            study.new_samples.expr.feature_ids, study.new_samples.expr.sample_ids)
    preds = correct_and_predict(study.database, bare, small(), seed=3)
    assert set(preds) == {"p2", "none", "sva_db_only", "fsva_exact", "fsva_fast"}
    assert all(len(preds[m]) == 10 for m in harness.METHODS)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_iterations=0)
    with pytest.raises(ValueError):
        ExperimentConfig(rho_grid=(0.97,))
    with pytest.raises(ValueError):
        ExperimentConfig(split_fraction=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(correction_methods=("combat",))


def test_full_scale_profile():
    cfg = ExperimentConfig.full_scale(2)
    assert cfg.n_iterations == 100 and cfg.scenario.m == 10000 and cfg.scenario.sd_gamma == 4


# --------------------------------------------------------------------------
# split study
# --------------------------------------------------------------------------

def _pooled(study):
    db, new = study.database, study.new_samples
    expr = db.expr.hstack(new.expr)
    return expr, OutcomeLabels(db.outcomes.labels + new.outcomes.labels, (0, 1))


def test_stratified_split_proportions():
    y = OutcomeLabels(tuple([0] * 10 + [1] * 20))
    db, new = stratified_split(y, 0.5, np.random.default_rng(0))
    assert len(db) == 15 and len(set(db) | set(new)) == 30
    assert sum(y.labels[i] == 0 for i in db) == 5
    with pytest.raises(ValueError, match="too small to stratify"):
        stratified_split(OutcomeLabels((0, 0, 1, 1, 1, 1, 1, 1)), 0.5, np.random.default_rng(0))


def test_split_study_deterministic():
    expr, y = _pooled(simulate_study(scenario(1, m=200, n_db=40, n_new=40, confounding_rho=0.3, seed=2)))
    cfg = small(correction_methods=("none", "fsva_exact"), n_iterations=3)
    a, b = run_split_study(expr, y, cfg), run_split_study(expr, y, cfg)
    assert a.summary_text() == b.summary_text()
    assert a.summary_text().startswith("# split-eval seed=0")
    assert [r["method"] for r in a.summary()] == ["none", "fsva_exact"]


def test_split_study_small_class_rejected():
    expr = ExpressionMatrix.from_array(np.random.default_rng(0).normal(size=(20, 8)))
    y = OutcomeLabels((0, 0, 0, 0, 0, 0, 1, 1))
    with pytest.raises(ValueError, match="too small"):
        run_split_study(expr, y, small())


@pytest.mark.slow
def test_split_study_null_benefit():
    study = simulate_study(scenario(1, m=500, n_db=100, n_new=100, sd_gamma=0.0,
                                   confounding_rho=0.6, seed=3))
    expr, y = _pooled(study)
    cfg = ExperimentConfig(correction_methods=("none", "fsva_exact"), n_iterations=15, seed=1)
    row = [r for r in run_split_study(expr, y, cfg).summary() if r["method"] == "fsva_exact"][0]
    assert row["improvement_ci_low"] <= 0.0 <= row["improvement_ci_high"]


@pytest.mark.slow
def test_split_study_consistent_with_sweep():
    spec = scenario(1, m=500, n_db=100, n_new=100)
    methods = ("none", "fsva_exact")
    sweep = run_simulation_sweep(ExperimentConfig(correction_methods=methods, n_iterations=10,
                                                  rho_grid=(0.0,), scenario=spec, seed=2))
    expr, y = _pooled(simulate_study(spec.with_(seed=77)))
    split = run_split_study(expr, y, ExperimentConfig(correction_methods=methods,
                                                      n_iterations=10, seed=2))
    a = [r for r in sweep.summary() if r["method"] == "fsva_exact"][0]
    b = [r for r in split.summary() if r["method"] == "fsva_exact"][0]
    assert a["improvement_ci_low"] <= b["improvement_ci_high"]
    assert b["improvement_ci_low"] <= a["improvement_ci_high"]


# --------------------------------------------------------------------------
# statistics helpers
# --------------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.integers(0, 1000))
def test_bootstrap_ci_contains_mean(values, seed):
    lo, hi = bootstrap_ci(values, 500, seed)
    mean = float(np.mean(values))
    assert lo <= mean + 1e-12 and mean - 1e-12 <= hi


def test_bootstrap_ci_narrows_with_more_iterations():
    widths = {10: [], 100: []}
    for rep in range(20):
        rng = np.random.default_rng(rep)
        for n in widths:
            lo, hi = bootstrap_ci(rng.uniform(size=n), 1000, rep)
            widths[n].append(hi - lo)
    assert np.mean(widths[100]) < np.mean(widths[10])


def test_paired_pvalue():
    assert paired_one_sided_pvalue([1, 1, 1], [0, 0, 0]) == 0.0
    assert paired_one_sided_pvalue([0, 0], [0, 0]) == 1.0
    assert paired_one_sided_pvalue([0.9, 0.8, 0.95, 0.85], [0.5, 0.6, 0.55, 0.5]) < 0.01
    assert paired_one_sided_pvalue([0.5, 0.6, 0.55, 0.5], [0.9, 0.8, 0.95, 0.85]) > 0.99
