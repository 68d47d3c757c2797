import numpy as np
import pytest

from duin.bench import prepare_dataset
from duin.config import TrainConfig
from duin.synthetic import SyntheticSpec, generate

SMALL_SPEC = dict(n_users=80, n_items=300, n_attributes=12, sessions=400, seed=3)


def small_config(**kw) -> TrainConfig:
    base = dict(dim=8, n_heads=4, seq_len=8, l_max=4, batch_size=32, epochs=1,
                eiem_hidden=(16, 8), iumm_hidden=(16, 8), head_hidden=(16, 8), rel_hidden=8)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def small_events():
    return generate(SyntheticSpec(**SMALL_SPEC))


@pytest.fixture(scope="session")
def small_data(small_events):
    events, profiles, _ = small_events
    return prepare_dataset(events, profiles, small_config())


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# acceptance criteria record one line each; printed again in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
