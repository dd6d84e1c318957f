import numpy as np
import pytest

from counterfact_diag.data import RecordBase, default_spec, synth_generate
from counterfact_diag.propensity import PropensityHyper, train_propensity

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def small_data():
    spec = default_spec(n=12, m=3, records_per_disease=40, observation_rate=0.4)
    return synth_generate(spec, seed=3)


@pytest.fixture(scope="session")
def small_base(small_data):
    train, test, vocabs = small_data
    return RecordBase(train + test, vocabs.n, vocabs.m)


@pytest.fixture(scope="session")
def small_model(small_data, small_base):
    _, _, vocabs = small_data
    hyper = PropensityHyper(iterations=400, batch_size=32, lr_decay_every=200, hidden=16, seed=1)
    return train_propensity(small_base, vocabs.n, vocabs.m, hyper)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
