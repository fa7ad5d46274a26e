import json
import os
import time

import pytest

from rsdividend.core import ControlConfig, EnvParams
from rsdividend.fd import PGrid, calibrate_splits

ORACLES = os.path.join(os.path.dirname(__file__), "oracles", "frozen.json")
LONG_RUN = os.environ.get("RSDIVIDEND_LONG_RUN") == "1"

_ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" | {detail}" if detail else "")
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracles():
    with open(ORACLES) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def env():
    return EnvParams()


@pytest.fixture(scope="session")
def control():
    return ControlConfig()


@pytest.fixture(scope="session")
def fd_default(env):
    """FD benchmark at the default parameters on the fine grid (non-strict)."""
    return calibrate_splits(env, 1.0, 1.0, grid=PGrid(10_000), strict=False)


@pytest.fixture(scope="session")
def ctd_desk_run(env, control):
    """CTD(0), true filtering and regularisation, 2000 iterations."""
    from rsdividend.trainer import TrainerConfig, train
    cfg = TrainerConfig(mode="ctd", n_iterations=2000)
    t0 = time.perf_counter()
    res = train(cfg, control, env, seed=2024)
    res.elapsed = time.perf_counter() - t0
    return res
