from pathlib import Path

import numpy as np
import pytest

from ivmediate.dataset import Dataset, load_csv

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_CSV = DATA_DIR / "synthetic_trial.csv"
FIXTURE_MAP = {
    "outcome": "hamilton_4m",
    "assignment": "intervention",
    "mediator": "antidep_use",
    "x": ["past_use_score", "baseline_use_score"],
    "z": [],
}


def make_dataset(n=60, p=2, q=0, seed=0, binary_m=False, theta=(-1.0, 2.0)):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    z = rng.normal(size=(n, q))
    r = np.zeros(n)
    r[rng.permutation(n)[: n // 2]] = 1.0
    u = rng.normal(size=n)
    latent = 0.3 + 0.5 * r + x.sum(axis=1) * 0.4 + r * x[:, 0] * 2.5 + u + rng.normal(size=n)
    m = (latent > 0).astype(float) if binary_m else latent
    y = 1.0 + x @ np.linspace(0.5, 1.0, p) + theta[0] * r + theta[1] * m + u + rng.normal(size=n)
    if q:
        y = y + z @ np.full(q, 0.3)
    return Dataset(y=y, r=r, m=m, x=x, z=z)


@pytest.fixture
def trial():
    return load_csv(FIXTURE_CSV, FIXTURE_MAP)


@pytest.fixture
def small():
    return make_dataset()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
