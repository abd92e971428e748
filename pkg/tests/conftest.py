import numpy as np
import pytest

from cmdp_lab import envs
from cmdp_lab.model import SoftmaxPolicy

ENV_NAMES = [spec.name for spec in envs.catalog()]


@pytest.fixture(scope="session")
def zoo():
    return {name: envs.build(name) for name in ENV_NAMES}


def random_policy(model, rng, scale=1.0):
    theta = rng.normal(scale=scale, size=model.n_states * model.n_actions)
    return SoftmaxPolicy.for_model(model, theta)


def two_action_split():
    """2 states, 2 actions: action a always moves to state a."""
    from cmdp_lab.model import CmdpModel

    P = np.zeros((2, 2, 2))
    P[:, 0, 0] = 1.0
    P[:, 1, 1] = 1.0
    return CmdpModel(P, np.zeros((2, 2)), np.zeros((2, 2)), [0.5, 0.5])


# one verdict line per acceptance criterion, printed after the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in VERDICTS:
        terminalreporter.write_line(line)
