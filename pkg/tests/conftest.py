import os

import pytest

from x64sim.state import MachineState, UndefPolicy
from x64sim.memory import init_system_level_mode, write_linear_bytes
from x64sim.loader import init_x86_state

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
DATA = os.path.join(os.path.dirname(__file__), "data")


@pytest.fixture
def user_state():
    return MachineState()


@pytest.fixture
def system_state():
    s = MachineState()
    init_system_level_mode(s, 0)
    s.marking_mode = True
    return s


def load_program(state, addr, code, halt_at_end=True, rip=None):
    """Write code bytes and initialize rip/halt for a straight run."""
    write_linear_bytes(state, addr, code)
    init_x86_state(state, None, rip if rip is not None else addr,
                   addr + len(code) if halt_at_end else None)
    return state


def fixture_path(name):
    return os.path.join(FIXTURES, name)
