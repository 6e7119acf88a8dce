import numpy as np
import pytest

from anm.anm6 import ANM6Easy, build_anm6_network
from anm.network import network_from_dict, to_per_unit

# (criterion, passed, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section('acceptance criteria')
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f'{"PASS" if ok else "FAIL"}  {name}: {detail}')


def two_bus_dict(r=0.01, x=0.1, b=0., s_max=50., load_min=-100., gen=None):
    """Slack on bus 0 and a load (optionally a generator) on bus 1, in MW."""
    devices = [
        [0, 0, 0] + [None] * 12,
        [1, 1, -1, 0.2, 0, load_min] + [None] * 9,
    ]
    if gen is not None:
        devices.append([2, 1] + list(gen))
    return {
        'baseMVA': 100,
        'bus': [[0, 0, 132, 1.0, 1.0], [1, 1, 33, 1.1, 0.9]],
        'device': devices,
        'branch': [[0, 1, r, x, b, s_max, 1, 0]],
    }


@pytest.fixture
def anm6_spec():
    return build_anm6_network()


@pytest.fixture
def anm6_pu():
    return to_per_unit(build_anm6_network())


@pytest.fixture
def env():
    e = ANM6Easy()
    e.reset(seed=0)
    return e


@pytest.fixture
def two_bus():
    return to_per_unit(network_from_dict(two_bus_dict()))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
