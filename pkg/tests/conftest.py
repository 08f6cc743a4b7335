import time

import numpy as np
import pytest

from fdls import forward, scenarios
from fdls.geometry import default_grid


@pytest.fixture(scope="session")
def wp():
    return scenarios.wave_params()


@pytest.fixture(scope="session")
def half_ex1(wp):
    """Example 1 at half resolution: config, grid, operator and (N+, N-)."""
    cfg = scenarios.example("1")
    grid = default_grid(cfg, wp, 32, 64)
    op = forward.LSOperator(cfg, wp, grid)
    Np, Nm = forward.assemble_near_field(cfg, wp, grid, op)
    return cfg, grid, op, Np, Nm


@pytest.fixture(scope="session")
def coarse_background(wp):
    cfg = scenarios.periodic_only()
    grid = default_grid(cfg, wp, 16, 32)
    op = forward.LSOperator(cfg, wp, grid)
    return cfg, grid, op


_FULL = {}
FULL_SECONDS = {}
_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def full_near_field(wp):
    """Exact near fields at the default resolution, computed once per example."""

    def get(name):
        if name not in _FULL:
            cfg = scenarios.example(name)
            t = time.perf_counter()
            _FULL[name] = forward.assemble_near_field(cfg, wp, default_grid(cfg, wp))
            FULL_SECONDS[name] = time.perf_counter() - t
        return _FULL[name]

    return get


@pytest.fixture(scope="session")
def record():
    """Store and print the verdict line of one acceptance criterion."""

    def rec(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return rec


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
