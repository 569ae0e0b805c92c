"""Command line entry point: ``feedervolt <command> ...``.

Exit status is 0 on success, 2 for invalid input and 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .dispatch import WEIGHT_SWEEP, score_run
from .errors import FeederVoltError, NumericalError, SimulationError, ValidationError
from .harness import (
    bundled_scenarios,
    emit_reports,
    load_scenario,
    metrics_rows,
    run_scenario,
    run_supervised,
)
from .model import load_feeder
from .placement import evaluate_placements, rank_candidates
from .powerflow import OperatingPoint, solve_with_controls
from .profiles import generate_synthetic_profiles, write_profiles_csv

log = logging.getLogger("feedervolt")


def _out_dir(args, scenario, suffix: str) -> Path:
    if args.out:
        return Path(args.out)
    if scenario.output is not None:
        return scenario.output / suffix
    return Path("out") / f"{scenario.name or 'run'}-{suffix}"


def _progress(enabled: bool):
    if not enabled:
        return None

    def cb(done, total):
        if done == total or done % 60 == 0:
            print(f"\r  step {done}/{total}", end="\n" if done == total else "", file=sys.stderr, flush=True)

    return cb


def _scenario(args):
    s = load_scenario(args.scenario)
    if getattr(args, "steps", None):
        s = s.replace(steps=args.steps)
    if getattr(args, "start", None) is not None:
        s = s.replace(start=args.start)
    return s


def cmd_run(args) -> int:
    s = _scenario(args)
    if args.case:
        s = s.replace(case=args.case)
    if args.w_theta is not None:
        s = s.with_weights(args.w_theta)
    if args.dvc_bus:
        s = s.replace(dvc_bus=args.dvc_bus)
    if s.case == "supervised":
        ref = run_scenario(s.replace(case="optimal_dispatch"), progress=_progress(args.progress))
        result, schedule = run_supervised(s, reference=ref)
    else:
        result, schedule = run_scenario(s, progress=_progress(args.progress)), None
    out = _out_dir(args, s, s.case)
    files = emit_reports(result, out, s.dispatch, schedule)
    _print_metrics(result, s)
    print(f"reports written to {out} ({', '.join(sorted(files))})")
    return 0


def _print_metrics(result, s, label=None):
    rows = metrics_rows(result, score_run(result, s.dispatch), label)
    w = csv.writer(sys.stdout, lineterminator="\n")
    for r in rows:
        w.writerow(r)


def cmd_place(args) -> int:
    s = _scenario(args)
    base = run_scenario(s.replace(case="base"), progress=_progress(args.progress))
    ranking = rank_candidates(base, args.zone, args.k)
    log.info("candidates in zone %s: %s", ranking.zone, ", ".join(
        f"{c.bus} ({c.score:.5f})" for c in ranking.candidates))
    report = evaluate_placements(None, ranking.candidates, s, base=base)
    out = _out_dir(args, s, "placement")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "placement.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in report.rows():
            w.writerow(r)
    w = csv.writer(sys.stdout, lineterminator="\n")
    for r in report.rows():
        w.writerow(r)
    print(f"winner: {report.winner}")
    return 0


def cmd_supervise(args) -> int:
    s = _scenario(args)
    ref = run_scenario(s.replace(case="optimal_dispatch"), progress=_progress(args.progress))
    result, schedule = run_supervised(s, args.mode, args.period, reference=ref)
    out = _out_dir(args, s, f"supervised-{args.mode or s.sup_mode}-{args.period or s.sup_period}")
    emit_reports(result, out, s.dispatch, schedule)
    for cid, ph, rec in schedule.records():
        print(f"{cid} {ph} {rec}")
    _print_metrics(result, s, f"supervised-{schedule.mode}")
    return 0


def cmd_sweep(args) -> int:
    s = _scenario(args).replace(case="optimal_dispatch")
    weights = [float(x) for x in args.weights.split(",")] if args.weights else list(WEIGHT_SWEEP[:5])
    out = _out_dir(args, s, "sweep")
    out.mkdir(parents=True, exist_ok=True)
    rows = None
    for w_theta in weights:
        ss = s.with_weights(w_theta)
        res = run_scenario(ss, progress=_progress(args.progress))
        r = metrics_rows(res, score_run(res, ss.dispatch), f"w_theta={w_theta:g}")
        rows = r if rows is None else rows + r[1:]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(rows)
    csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return 0


def cmd_gen_profiles(args) -> int:
    profiles = generate_synthetic_profiles(args.day, args.seed, n_pv=args.n_pv, days=args.days)
    out = Path(args.out or f"profiles_{args.day}_{args.seed}.csv")
    write_profiles_csv(profiles, out)
    print(f"wrote {out}")
    return 0


def cmd_solve(args) -> int:
    model = load_feeder(args.feeder)
    op = OperatingPoint(load_default=args.load, pv_default=args.pv)
    snap, taps = solve_with_controls(model, op)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["bus", "phase", "v_pu", "angle_deg"])
    import numpy as np

    for (bus, ph), v in zip(snap.labels, snap.v):
        w.writerow([bus, ph, f"{abs(v):.6f}", f"{np.degrees(np.angle(v)):.4f}"])
    log.info("settled taps: %s", taps)
    return 0


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feedervolt", description="Feeder voltage control studies with a DVC.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def scen(sp, positional=False):
        if positional:
            sp.add_argument("scenario", help="scenario .ini file or bundled scenario name")
        else:
            sp.add_argument("--scenario", required=True, help="scenario .ini file or bundled scenario name")
        sp.add_argument("--steps", type=int, help="override the horizon length")
        sp.add_argument("--start", type=int, help="override the first profile step")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--progress", action="store_true", help="show step progress")

    sp = sub.add_parser("run", help="run a scenario and write reports")
    scen(sp, positional=True)
    sp.add_argument("--case", choices=["base", "optimal_dispatch", "local_vvc", "supervised"])
    sp.add_argument("--w-theta", type=float, dest="w_theta")
    sp.add_argument("--dvc-bus", dest="dvc_bus")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("place", help="shortlist and evaluate DVC locations")
    scen(sp)
    sp.add_argument("--zone", type=int, help="voltage zone (default: the most variable one)")
    sp.add_argument("-k", type=int, default=3, help="shortlist size")
    sp.set_defaults(func=cmd_place)

    sp = sub.add_parser("supervise", help="local control with supervisory curve updates")
    scen(sp)
    sp.add_argument("--mode", choices=["standard", "shifted", "fitted"])
    sp.add_argument("--period", type=int, choices=[30, 60, 120, 240], help="update period, minutes")
    sp.set_defaults(func=cmd_supervise)

    sp = sub.add_parser("sweep", help="optimal dispatch over several tap weights")
    scen(sp)
    sp.add_argument("--weights", help="comma-separated w_theta values (default 0,0.01,0.05,0.1,0.5)")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gen-profiles", help="write synthetic load/PV profiles")
    sp.add_argument("--day", choices=["sunny", "cloudy"], required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--days", type=int, default=1)
    sp.add_argument("--n-pv", type=int, default=5, dest="n_pv")
    sp.add_argument("--out", help="output CSV path")
    sp.set_defaults(func=cmd_gen_profiles)

    sp = sub.add_parser("solve", help="single power flow with regulators settled")
    sp.add_argument("feeder")
    sp.add_argument("--load", type=float, default=1.0, help="load multiplier")
    sp.add_argument("--pv", type=float, default=0.0, help="PV multiplier")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("list", help="list bundled scenarios")
    sp.set_defaults(func=cmd_list)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, SimulationError):
        exc = exc.cause
    if isinstance(exc, ValidationError):
        return 2
    if isinstance(exc, NumericalError):
        return 3
    return 3


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FeederVoltError as exc:
        print(f"feedervolt: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
