"""Shared fixtures: generated benchmark data is expensive, so it is built once per session."""

import pytest

from delaysindy.experiments import DiscoveryProblem, preset, run_experiment

_PROBLEMS: dict = {}
_REPORTS: dict = {}


def get_problem(name: str) -> DiscoveryProblem:
    if name not in _PROBLEMS:
        _PROBLEMS[name] = DiscoveryProblem(preset(name))
    return _PROBLEMS[name]


def get_report(name: str):
    """``run_experiment`` on a preset (grid once, BO over ten seeds), cached."""
    if name not in _REPORTS:
        _REPORTS[name] = run_experiment(preset(name), get_problem(name))
    return _REPORTS[name]


@pytest.fixture(scope="session")
def problem():
    return get_problem


@pytest.fixture(scope="session")
def report():
    return get_report


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def record():
    """Log one acceptance line; the test itself still asserts the outcome."""
    def _record(criterion: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
