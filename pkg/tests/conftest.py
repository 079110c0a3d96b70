
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from aeromix.dataset import Dataset
from aeromix.gridio import GridGeometry
from aeromix.synth import ProductDegradation, SceneConfig, generate_scene

settings.register_profile("aeromix", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("aeromix")

SMALL_GRID = {
    "n_estimators": [40],
    "max_depth": [3],
    "learning_rate": [0.1],
    "subsample": [1.0],
    "min_samples_leaf": [3],
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def geometry():
    return GridGeometry(4, 5, 500000.0, 3900000.0, 1000.0)


@pytest.fixture(scope="session")
def small_scene():
    config = SceneConfig(
        seed=7,
        nrows=30,
        ncols=30,
        n_days=15,
        n_stations=12,
        mask_correlation=0.2,
        products={
            "MDB": ProductDegradation(0.02, 0.05, 0.8, 0.9),
            "MDT": ProductDegradation(0.0, 0.04, 0.7, 0.8),
            "VDB": ProductDegradation(-0.03, 0.08, 0.75, 0.9),
            "VDT": ProductDegradation(0.01, 0.03, 0.7, 0.85),
        },
    )
    return generate_scene(config)


@pytest.fixture(scope="session")
def small_dataset(small_scene):
    from aeromix.dataset import Settings

    return Dataset(small_scene.grids, small_scene.stations, small_scene.met, Settings(min_pairs=10))




# --------------------------------------------------------------------------
# acceptance bookkeeping: one line per criterion in the terminal summary

ACCEPTANCE_RESULTS = {}


class Criterion:
    """Collects checks for one criterion; the time limit is part of passing."""

    def __init__(self, number, name, limit):
        self.number, self.name, self.limit = number, name, limit
        self.failures = []
        self.details = []

    def check(self, ok, message):
        if not ok:
            self.failures.append(message)
        return ok

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        import time

        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time

        elapsed = time.perf_counter() - self._start
        if exc is not None:
            self.failures.append(f"{exc_type.__name__}: {exc}")
        if elapsed >= self.limit:
            self.failures.append(f"took {elapsed:.1f}s, limit {self.limit:g}s")
        status = "FAIL" if self.failures else "PASS"
        detail = "; ".join(self.failures or self.details)
        ACCEPTANCE_RESULTS[self.number] = f"ACCEPTANCE {self.number} {status} {self.name} " \
                                          f"({elapsed:.1f}s / {self.limit:g}s){': ' + detail if detail else ''}"
        if exc is None:
            assert not self.failures, "; ".join(self.failures)
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
