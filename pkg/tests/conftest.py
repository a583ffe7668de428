import json
from pathlib import Path

import numpy as np
import pytest

from lqmfg.model import LinearGaussianPolicy, MfgModel, scalar_reference_model

FROZEN = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


def random_spd(rng, n, shift=0.5):
    X = rng.normal(size=(n, n))
    return X @ X.T / n + shift * np.eye(n)


def random_model(rng, m, k, coupling=0.05, sigma=0.3):
    A = rng.normal(size=(m, m))
    A *= rng.uniform(0.3, 0.9) / max(abs(np.linalg.eigvals(A)))
    return MfgModel(A=A, B=rng.normal(size=(m, k)), A_bar=coupling * rng.normal(size=(m, m)),
                    d=rng.normal(size=m), Q=random_spd(rng, m), R=random_spd(rng, k),
                    Q_bar=0.1 * random_spd(rng, m, 0.0), Psi_omega=random_spd(rng, m, 0.2),
                    sigma=sigma)


def random_stable_gain(model, rng, scale=0.3, rho_max=0.95):
    K = scale * rng.normal(size=(model.k, model.m))
    while max(abs(np.linalg.eigvals(model.A - model.B @ K))) >= rho_max:
        K *= 0.5
    return K


def random_policy(model, rng):
    return LinearGaussianPolicy(random_stable_gain(model, rng), rng.normal(size=model.k))


def frozen_model(entry):
    return MfgModel(**entry["params"])


@pytest.fixture
def scalar():
    return scalar_reference_model()


@pytest.fixture
def zero_policy(scalar):
    return LinearGaussianPolicy.zeros(scalar)


@pytest.fixture
def frozen():
    return FROZEN


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
