import os
import time

import numpy as np
import pytest

from thermocurriculum.manifold import LambdaGrid, build_metric_field
from thermocurriculum.mdp_core import GridWorldSpec, TabularMdp, build_gridworld


@pytest.fixture(scope="session")
def grid7():
    return build_gridworld(GridWorldSpec())


@pytest.fixture(scope="session")
def gridworld_field(grid7):
    """The full 41x41 friction field at alpha=0.2, T=2000 (tens of seconds per core)."""
    t0 = time.perf_counter()
    field = build_metric_field(grid7, LambdaGrid(), alpha=0.2, T=2000, threads=os.cpu_count() or 1)
    field.build_seconds = time.perf_counter() - t0
    return field


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def _report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def single_state(rewards):
    """One state, len(rewards) actions, feature = reward."""
    k = len(rewards)
    return TabularMdp(np.ones((1, k, 1)), np.asarray(rewards, dtype=float).reshape(1, k, 1))


def ring(n, n_actions=2):
    """Ring of n states; action 0 steps left, action 1 steps right."""
    P = np.zeros((n, n_actions, n))
    for s in range(n):
        P[s, 0, (s - 1) % n] = 1.0
        P[s, 1, (s + 1) % n] = 1.0
    return TabularMdp(P, np.zeros((n, n_actions, 1)))
