import time

import numpy as np
import pytest
import torch

from gcmetrics.data import PhantomConfig, generate_cohort
from gcmetrics.encoder import ContrastiveTrainConfig, train_encoder
from gcmetrics.referees import RefereeTrainConfig, train_referee
from gcmetrics.core import ATTRIBUTES, SIDES

torch.set_num_threads(1)

NOISE = 0.02
REFEREE_CONFIG = RefereeTrainConfig(epochs=100, batch_size=32, learning_rate=3e-3, seed=0, capacity="tiny")
ENCODER_CONFIG = ContrastiveTrainConfig(epochs=20, batch_size=64, temperature=0.5, seed=0)

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail):
    _ACCEPTANCE.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")


@pytest.fixture(scope="session")
def phantom_config():
    return PhantomConfig(noise_level=NOISE, seed=101)


@pytest.fixture(scope="session")
def train_cohort(phantom_config):
    return generate_cohort(200, phantom_config)


@pytest.fixture(scope="session")
def val_cohort():
    return generate_cohort(100, PhantomConfig(noise_level=NOISE, seed=102))


@pytest.fixture(scope="session")
def encoder_cohort():
    return generate_cohort(500, PhantomConfig(noise_level=NOISE, seed=103))


@pytest.fixture(scope="session")
def test_cohort():
    return generate_cohort(200, PhantomConfig(noise_level=NOISE, seed=104))


@pytest.fixture(scope="session")
def trained_referees(train_cohort):
    """All six tiny referees, plus the wall time it took to train them."""
    start = time.perf_counter()
    models = {(a, s): train_referee(train_cohort, a, s, REFEREE_CONFIG) for a in ATTRIBUTES for s in SIDES}
    return models, time.perf_counter() - start


@pytest.fixture(scope="session")
def referees(trained_referees):
    return trained_referees[0]


@pytest.fixture(scope="session")
def encoder(encoder_cohort):
    return train_encoder(encoder_cohort, ENCODER_CONFIG)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
