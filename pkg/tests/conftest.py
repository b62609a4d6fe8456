"""Shared, session-cached objects.  Building fields is the expensive part."""

from __future__ import annotations

import pytest

from calibra.calibration_builder import assemble_field, select_parameters
from calibra.counterexample import solve_w0
from calibra.fixtures import load_fixture


@pytest.fixture(scope="session")
def pure_jump():
    return load_fixture("pure_jump_line")[0]


@pytest.fixture(scope="session")
def circle():
    return load_fixture("circle_arc")[0]


@pytest.fixture(scope="session")
def pure_jump_field(pure_jump):
    return assemble_field(pure_jump, select_parameters(pure_jump, "dirichlet"))


@pytest.fixture(scope="session")
def circle_field(circle):
    return assemble_field(circle, select_parameters(circle, "dirichlet"))


@pytest.fixture(scope="session")
def w0():
    return solve_w0()


# -- acceptance reporting -------------------------------------------------------
# Each acceptance test records one line; the lines are printed together at the
# end of the run, so they survive output capturing.

_ACCEPTANCE = pytest.StashKey[list]()


class _Criterion:
    def __init__(self, lines: list, number: int, title: str):
        self.lines, self.number, self.title = lines, number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = self.detail
        if exc_type is not None:
            msg = " ".join(str(exc).split())[:160]
            detail = f"{detail}; {exc_type.__name__}: {msg}" if detail else f"{exc_type.__name__}: {msg}"
        line = f"[{status}] criterion {self.number}: {self.title}" + (f" ({detail})" if detail else "")
        self.lines.append((self.number, line))
        print(line)
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    return lambda number, title: _Criterion(lines, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
