import sys

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("care", deadline=None, max_examples=60)
settings.load_profile("care")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, p, floor=0.5):
    a = rng.standard_normal((p, p))
    return a @ a.T / p + floor * np.eye(p)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
