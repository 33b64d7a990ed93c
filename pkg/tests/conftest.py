import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from skelpoison.skeleton import default_topology
from skelpoison.synth import TEMPLATE, synth_dataset

settings.register_profile(
    "default", deadline=None, max_examples=60, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def topo():
    return default_topology()


@pytest.fixture(scope="session")
def small_ds():
    return synth_dataset(30, 60, 3, seed=11)


@pytest.fixture
def standing():
    return TEMPLATE.copy()


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        status, title = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
