import os
from pathlib import Path

import pytest

from feedervolt.model import parse_feeder

DATA = Path(__file__).resolve().parents[1] / "src" / "feedervolt" / "data"

Z3 = ("0.2153+0.6325j 0.0969+0.3117j 0.0982+0.2632j "
      "0.0969+0.3117j 0.2097+0.6511j 0.0954+0.2392j "
      "0.0982+0.2632j 0.0954+0.2392j 0.2121+0.6430j")
Z2 = "0.4960+0.7036j 0.1016+0.2827j 0.1016+0.2827j 0.4960+0.7036j"
Z1 = "0.8125+0.8261j"
ZIP = "0.24 0.36 0.40 0.24 0.36 0.40 0.8"

TWO_BUS = f"""\
bus S ABC 4.16
bus 2 ABC 4.16
line S 2 ABC 1.2 {Z3}
load 2 A 320 140 {ZIP}
load 2 B 250 90 {ZIP}
load 2 C 400 180 {ZIP}
pv 2 ABC 600 pv1
cap 2 ABC 150
dvc 2 600
"""

# single-phase two-bus example: 2.4018 kV LN, 0.5+j1.0 ohm, constant power 500 kW / 250 kVAR
ONE_PHASE_2BUS = """\
bus S A 4.16
bus 2 A 4.16
line S 2 A 1.0 0.5+1.0j
load 2 A 500 250 0 0 1 0 0 1 0.5
"""

# chain with a regulator: S - 2 =reg= 3 - 4 (4 carries phases A and C)
FOUR_BUS_REG = f"""\
bus S ABC 4.16
bus 2 ABC 4.16
bus 3 ABC 4.16
bus 4 AC 4.16
line S 2 ABC 1.5 {Z3}
reg 2 3 A 0.0125 1.0
reg 2 3 B 0.0125 1.0
reg 2 3 C 0.0125 1.0
line 3 4 AC 0.8 {Z2}
load 2 A 200 80 {ZIP}
load 2 B 260 110 {ZIP}
load 3 C 150 60 {ZIP}
load 4 A 180 70 {ZIP}
load 4 C 220 90 {ZIP}
pv 4 AC 300 pv1
dvc 2 600
"""

# branching: S - 2, 2 - 3 (ABC), 2 - 4 (C only)
FOUR_BUS_BRANCH = f"""\
bus S ABC 4.16
bus 2 ABC 4.16
bus 3 ABC 4.16
bus 4 C 4.16
line S 2 ABC 2.0 {Z3}
line 2 3 ABC 1.1 {Z3}
line 2 4 C 0.7 {Z1}
load 3 A 300 120 {ZIP}
load 3 B 280 100 {ZIP}
load 3 C 310 130 {ZIP}
load 4 C 160 60 0.5 0.5 0 0 0 1 0.7
cap 3 ABC 300
pv 3 ABC 450 pv1
dvc 3 900
"""

# 2-bus single-phase feeder with a DVC, for the dispatch oracle
DISPATCH_2BUS = f"""\
bus S A 4.16
bus 2 A 4.16
line S 2 A 1.0 {Z1}
load 2 A 300 100 {ZIP}
pv 2 A 300 pv1
dvc 2 200
"""


@pytest.fixture
def two_bus():
    return parse_feeder(TWO_BUS, name="two_bus")


@pytest.fixture
def four_bus_reg():
    return parse_feeder(FOUR_BUS_REG, name="four_bus_reg")


@pytest.fixture
def four_bus_branch():
    return parse_feeder(FOUR_BUS_BRANCH, name="four_bus_branch")


@pytest.fixture(scope="session")
def ieee123():
    from feedervolt.model import load_feeder

    return load_feeder(DATA / "ieee123.fdr")


@pytest.fixture(scope="session")
def mini13():
    from feedervolt.model import load_feeder

    return load_feeder(DATA / "mini13.fdr")


def pytest_configure(config):
    os.environ.setdefault("PYTHONHASHSEED", "0")


# criterion -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bundled_runs():
    """name -> ScenarioRuns, one cache per test session."""
    from runs import ScenarioRuns

    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = ScenarioRuns(name)
        return cache[name]

    return get
