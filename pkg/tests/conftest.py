import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from hybridnas.oracle import make_standard_profiles, synthetic_device  # noqa: E402
from hybridnas.space import (  # noqa: E402
    SearchSpace, build_default_space, init_uniform_distribution,
)


@pytest.fixture(scope="session")
def space():
    return build_default_space()


@pytest.fixture(scope="session")
def uniform(space):
    return init_uniform_distribution(space)


@pytest.fixture(scope="session")
def profiles():
    return make_standard_profiles()


@pytest.fixture(scope="session")
def gpu_device(space, profiles):
    return synthetic_device(space, profiles["gpu_like"])


@pytest.fixture(scope="session")
def space576():
    """One stage, depth 2, 24 block choices, one width, one stem activation."""
    return SearchSpace.from_dict({
        "stem_activations": ["gelu"],
        "stages": [{"width_choices": [32], "depths": [2]}],
    })


# one line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
