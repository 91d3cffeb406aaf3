from __future__ import annotations

import numpy as np
import pytest

from cilqg import builtin_scenario, solve


@pytest.fixture(scope="session")
def scenarios():
    return {name: builtin_scenario(name) for name in
            ("two_static_obstacles", "one_static_obstacle_curved", "dynamic_overtake")}


_PLANS: dict = {}


@pytest.fixture(scope="session")
def plan_for(scenarios):
    """Cached ``solve`` results keyed by (scenario name, mode)."""

    def get(name, mode="cilqg"):
        key = (name, mode)
        if key not in _PLANS:
            _PLANS[key] = solve(scenarios[name].with_settings(mode=mode))
        return _PLANS[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = pytest.StashKey[list]()


_SELECTED = pytest.StashKey[set]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []
    config.stash[_SELECTED] = set()


@pytest.hookimpl(trylast=True)
def pytest_collection_modifyitems(config, items):
    for item in items:
        if item.path.name == "test_acceptance.py" and item.name.startswith("test_"):
            config.stash[_SELECTED].add(int(item.name.split("_")[1]))


@pytest.fixture
def criterion(request):
    """``report(number, title, passed, detail)``: record one acceptance line, then assert it."""

    def report(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)
        assert passed, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = dict(config.stash.get(_ACCEPTANCE, []))
    selected = config.stash.get(_SELECTED, set())
    if not selected:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(selected):
        terminalreporter.write_line(lines.get(n, f"criterion {n:>2} FAIL  did not report (errored)"))
