import time

import numpy as np
import pytest

from uncertain_attr.data import WINE_UNCERTAIN, load_wine, make_uncertainty_spec
from uncertain_attr.predictor import TrainConfig, train_mlp, train_regularized_mlp

REG_LAMBDA = 1.0
TRAIN_SECONDS = {}
ACCEPTANCE = []


@pytest.fixture(scope="session")
def wine():
    return load_wine()


@pytest.fixture(scope="session")
def wine_spec(wine):
    return make_uncertainty_spec("high", WINE_UNCERTAIN, wine[0])


@pytest.fixture(scope="session")
def wine_nn(wine):
    t0 = time.perf_counter()
    model, _ = train_mlp(wine[0], TrainConfig())
    TRAIN_SECONDS["nn"] = time.perf_counter() - t0
    return model


@pytest.fixture(scope="session")
def wine_regnn(wine, wine_spec):
    t0 = time.perf_counter()
    model, _ = train_regularized_mlp(wine[0], wine_spec, TrainConfig(lam=REG_LAMBDA))
    TRAIN_SECONDS["regnn"] = time.perf_counter() - t0
    return model


def linear_model(w, b=0.0):
    """Plain callable f(X) = X w + b."""
    w = np.asarray(w, float)
    return lambda X: np.atleast_2d(np.asarray(X, float)) @ w + b


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {name}: {detail}")
