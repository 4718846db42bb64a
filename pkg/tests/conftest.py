import numpy as np
import pytest

from fsva.core import encode_design
from fsva.simulate import scenario, simulate_study
from fsva.sva import clean_training, freeze, sva_fit


@pytest.fixture(scope="session")
def planted_study():
    """Scenario 1 signal levels, one batch factor orthogonal to the outcome."""
    return simulate_study(scenario(1, m=1000, n_db=100, n_new=100, confounding_rho=0.0, seed=11))


@pytest.fixture(scope="session")
def planted_fit(planted_study):
    db = planted_study.database
    fit = sva_fit(db.expr, encode_design(db.outcomes), num_sv=1)
    return fit


@pytest.fixture(scope="session")
def planted_model(planted_study, planted_fit):
    return freeze(planted_fit, planted_study.database.expr, seed=11)


@pytest.fixture(scope="session")
def planted_clean(planted_study, planted_fit):
    return clean_training(planted_study.database.expr, planted_fit)


def batch_separation(values, batch):
    """Euclidean distance between the two batch mean profiles."""
    batch = np.asarray(batch)
    return float(np.linalg.norm(values[:, batch == 1].mean(axis=1) - values[:, batch == 0].mean(axis=1)))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str):
        results[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        assert ok, results[number]

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
