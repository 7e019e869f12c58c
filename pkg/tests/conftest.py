import json
from pathlib import Path

import numpy as np
import pytest

from h22strip import graph, tree_codec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


@pytest.fixture(scope="session")
def sv():
    return graph.single_vertex()


@pytest.fixture(scope="session")
def k2():
    return graph.complete_k2()


@pytest.fixture(scope="session")
def k2_alph(k2):
    return tree_codec.alphabet(k2)


@pytest.fixture(scope="session")
def cycle4(k2):
    # K2 base on two levels: the 4-cycle
    return graph.build_strip(k2, 0, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one summary line per acceptance criterion for the terminal report."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
