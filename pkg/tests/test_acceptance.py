"""Acceptance run: one PASS/FAIL line per criterion in the terminal summary.

The heavy runs (IEEE 123 cloudy day, several full-day dispatch runs) are
computed once per session and shared between criteria and test modules.
"""

import filecmp
import time

import numpy as np
import pytest

from feedervolt.dispatch import DispatchConfig, score_run
from feedervolt.harness import emit_reports, load_scenario, run_scenario
from feedervolt.model import parse_feeder
from feedervolt.powerflow import OperatingPoint, current_mismatch, solve
from feedervolt.supervisory import fit_curve, shift_curve
from feedervolt.devices import VoltVarCurve, vvc_evaluate

from conftest import ACCEPTANCE, DATA, DISPATCH_2BUS, FOUR_BUS_BRANCH, FOUR_BUS_REG, TWO_BUS
from oracles import newton_oracle
from test_devices import vvc_violations
from test_dispatch import _check_against_grid

pytestmark = pytest.mark.slow

SWEEP = (0.0, 0.01, 0.05, 0.1, 0.5)
# measured, analysed in the decisions ledger; reported as FAIL and marked xfail
KNOWN_RED = {
    "7b": "the DVC damps PV-driven regulator hunting on this feeder, so Case 1 taps fewer times than Case 0",
    "9taps": "optimal Q swings across its range inside each cloudy window; the fitted curves gain in-band "
             "points but add taps on the 1 V band regulator",
}


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)


@pytest.fixture(scope="module")
def runs(bundled_runs):
    return bundled_runs("ieee123_cloudy")


def m(r, s):
    return score_run(r, s.dispatch)


# 1 -------------------------------------------------------------------------------

def test_criterion_01_newton_equivalence():
    cases = [
        (TWO_BUS, {}, {"A": 150.0, "B": -80.0}, {}, {"pv1": 0.6}),
        (FOUR_BUS_REG, {"2R.A": 3, "2R.B": -2, "2R.C": 5}, {"B": 200.0}, {}, {"pv1": 0.9}),
        (FOUR_BUS_BRANCH, {}, {"A": -300.0, "C": 250.0}, {"load": 0.8}, {"pv1": 0.3}),
    ]
    worst, slowest = 0.0, 0.0
    for text, taps, q, lm, pm in cases:
        model = parse_feeder(text)
        op = OperatingPoint(lm, pm, taps, q)
        t0 = time.perf_counter()
        snap = solve(model, op, tol=1e-12, max_iter=200)
        slowest = max(slowest, time.perf_counter() - t0)
        ref = newton_oracle(model, taps, q, lm, pm)
        worst = max(worst, max(abs(snap[k] - v) for k, v in ref.items()))
    ok = worst <= 1e-8 and slowest < 1.0
    record(1, ok, f"max |V - V_newton| = {worst:.2e} pu (<= 1e-8), slowest solve {slowest * 1e3:.1f} ms (< 1 s)")
    assert ok


# 2 -------------------------------------------------------------------------------

def test_criterion_02_residual_and_day_runtime(runs):
    op = OperatingPoint()
    res = current_mismatch(runs.model, op, solve(runs.model, op))
    runs.base()
    secs = runs.base_seconds
    ok = res < 1e-5 and secs < 60.0
    record(2, ok, f"IEEE 123 nominal mismatch {res:.2e} pu (< 1e-5), base day {secs:.1f} s (< 60 s)")
    assert ok


# 3 -------------------------------------------------------------------------------

def test_criterion_03_metrics_identity(runs):
    bad = []
    band = runs.s.dispatch.band
    runs.base_again()
    runs.placement()
    for w in SWEEP:
        runs.dispatch(w)
    runs.supervised("standard")
    runs.supervised("fitted")
    every = runs.computed()
    for name, r in every.items():
        rep = m(r, runs.s)
        vm = r.vmag
        lo = int((vm < band.v_lower).sum())
        up = int((vm > band.v_upper).sum())
        if (rep.v_out_lower + rep.v_in + rep.v_out_upper != rep.total_points
                or rep.total_points != vm.size or (rep.v_out_lower, rep.v_out_upper) != (lo, up)):
            bad.append(name)
    n = len(every)
    record(3, not bad, f"{n} runs, partition exact on all" if not bad else f"partition broken on {bad}")
    assert not bad


# 4 -------------------------------------------------------------------------------

def test_criterion_04_dispatch_dominance(runs):
    steps = viol = 0
    for r in runs.computed().values():
        if r.objective is None:
            continue
        steps += len(r.objective)
        viol += int(np.sum(r.objective[:, 0] > r.objective[:, 1]))
    ok = viol == 0 and steps >= 2880
    record(4, ok, f"{viol} violations over {steps} dispatched steps (need 0 over >= 2880)")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_criterion_05_grid_search_oracle():
    model = parse_feeder(DISPATCH_2BUS)
    rng = np.random.default_rng(2024)
    cfg = DispatchConfig(w_theta=0.0)
    n, fails = 50, 0
    for _ in range(n):
        op = OperatingPoint(load_default=float(rng.uniform(0.2, 1.6)), pv_default=float(rng.uniform(0, 1)),
                            source_pu=float(rng.uniform(0.96, 1.06)))
        try:
            _check_against_grid(model, op, {}, cfg)
        except AssertionError:
            fails += 1
    record(5, fails == 0, f"{n - fails}/{n} random points within 1 kVAR of the 1 kVAR grid optimum")
    assert fails == 0


# 6 -------------------------------------------------------------------------------

def test_criterion_06_vvc_law():
    v = vvc_violations(10_000, seed=6)
    record(6, v == 0, f"{v} violations over 10000 random curves")
    assert v == 0


# 7 -------------------------------------------------------------------------------

def test_criterion_07_case_directions(runs):
    s = runs.s
    ranking, rep, _ = runs.placement()
    base = m(runs.base(), s)
    win = rep.metrics[rep.winner]
    c0, c1, c3 = base, m(runs.dispatch(0.0), s), m(runs.dispatch(0.1), s)
    a = win.out_of_band_share < base.out_of_band_share
    b = c1.total_tap_changes >= c0.total_tap_changes
    gap = 100 * abs(c3.in_band_share - c1.in_band_share)
    c = c3.total_tap_changes <= c1.total_tap_changes and gap <= 2.0
    detail = (f"(a) {'ok' if a else 'no'}: winner {rep.winner} of {ranking.buses} out-of-band "
              f"{100 * base.out_of_band_share:.2f}% -> {100 * win.out_of_band_share:.2f}%; "
              f"(b) {'ok' if b else 'no'}: DVC at {runs.dispatch(0.0).dvc_bus}, taps Case 1 {c1.total_tap_changes} "
              f"vs Case 0 {c0.total_tap_changes}; "
              f"(c) {'ok' if c else 'no'}: taps Case 3 {c3.total_tap_changes} <= {c1.total_tap_changes}, "
              f"v_in gap {gap:.2f} pp")
    record(7, a and b and c, detail)
    assert a and c
    if not b:
        pytest.xfail(KNOWN_RED["7b"])


# 8 -------------------------------------------------------------------------------

def test_criterion_08_weight_sweep_trend(runs):
    taps = [m(runs.dispatch(w), runs.s).total_tap_changes for w in SWEEP]
    d = np.diff(taps)
    ok = bool(np.all(d <= 0)) and int(np.sum(d == 0)) <= 1
    record(8, ok, "taps over w_theta " + ", ".join(f"{w:g}: {t}" for w, t in zip(SWEEP, taps)))
    assert ok


# 9 -------------------------------------------------------------------------------

def test_criterion_09_supervisory_ordering(runs):
    s = runs.s
    std, fit = m(runs.supervised("standard"), s), m(runs.supervised("fitted"), s)
    od = m(runs.dispatch(s.dispatch.w_theta), s)
    order = fit.v_in >= std.v_in and od.v_in >= fit.v_in
    taps = fit.total_tap_changes <= std.total_tap_changes
    detail = (f"v_in standard {std.v_in}, fitted {fit.v_in}, dispatch {od.v_in} ({'ok' if order else 'no'}); "
              f"taps standard {std.total_tap_changes}, fitted {fit.total_tap_changes} ({'ok' if taps else 'no'})")
    record(9, order and taps, detail)
    assert order
    if not taps:
        pytest.xfail(KNOWN_RED["9taps"])


# 10 ------------------------------------------------------------------------------

def test_criterion_10_curve_fit_exactness():
    base = VoltVarCurve.standard(333.3)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        slope, center = -rng.uniform(1e3, 5e4), rng.uniform(0.97, 1.03)
        v = rng.uniform(center - 0.005, center + 0.005, 50)
        c = fit_curve(v, slope * (v - center), 1e6)
        worst = max(worst, abs(c.slope - slope) / abs(slope))
    grid = np.linspace(0.85, 1.15, 1000)
    noop = np.array_equal(vvc_evaluate(shift_curve(base, np.full(30, 1.0)), grid), vvc_evaluate(base, grid))
    ok = worst <= 1e-9 and noop
    record(10, ok, f"max relative slope error {worst:.1e} (<= 1e-9), centered shift no-op: {noop}")
    assert ok


# 11 ------------------------------------------------------------------------------

def test_criterion_11_reproducibility(runs, tmp_path):
    pairs = {"ieee123 base": (runs.base(), runs.base_again())}
    mini = load_scenario(DATA / "scenarios" / "mini13_cloudy.ini").replace(case="optimal_dispatch")
    pairs["mini13 dispatch"] = (run_scenario(mini), run_scenario(mini))
    differ = []
    for name, (a, b) in pairs.items():
        fa = emit_reports(a, tmp_path / name / "a", runs.s.dispatch)
        fb = emit_reports(b, tmp_path / name / "b", runs.s.dispatch)
        differ += [f"{name}:{k}" for k in fa if not filecmp.cmp(fa[k], fb[k], shallow=False)]
    record(11, not differ, "byte-identical CSVs for " + ", ".join(pairs) if not differ else f"differ: {differ}")
    assert not differ
