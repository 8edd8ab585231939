import warnings

import numpy as np
import pytest

from frcnet.config import load_config
from frcnet.frc import TransientWarning
from frcnet.network import init_network
from frcnet.trainer import fit_system


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    warnings.simplefilter("ignore", TransientWarning)
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def report(request, capsys):
    """``report(criterion, ok, detail)`` prints one PASS/FAIL line."""
    def emit(cid, ok, detail):
        line = f"[criterion {cid}] {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


@pytest.fixture(scope="session")
def ls1_config():
    return load_config(preset="ls1")


@pytest.fixture(scope="session")
def ls1_fit(ls1_config):
    """Default preset trained on the middle band; shared by several modules."""
    cfg = ls1_config
    net, records, fresh = fit_system(cfg.params(), cfg.curriculum_config(), cfg.model_spec(),
                                     cfg.training_config())
    return net, records, fresh


@pytest.fixture(scope="session")
def ls1_net(ls1_fit):
    return ls1_fit[0]


@pytest.fixture
def small_net():
    return init_network("V3", latent_dim=4, hidden_widths=(8,), seed=3, final_shrink=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
