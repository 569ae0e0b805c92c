"""Scenario files, the time-series loop, and CSV reports.

A scenario is an INI file::

    [scenario]
    version = 1
    name = mini13_cloudy
    feeder = ../mini13.fdr           ; relative to this file
    profiles = ../profiles_cloudy.csv
    case = optimal_dispatch          ; base | optimal_dispatch | local_vvc | supervised
    steps = 1440

Optional sections: ``[dvc]``, ``[dispatch]``, ``[vvc]``, ``[supervisory]``,
``[solver]`` and ``[scaling]``; see ``SCHEMA`` for keys and defaults.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .devices import DvcState, VoltVarCurve, settle_local_control
from .dispatch import DispatchConfig, MetricsReport, VoltageBand, optimal_dispatch, score_run
from .errors import FeederVoltError, ScenarioError, SimulationError
from .model import FeederModel, load_feeder
from .powerflow import OperatingPoint, network, solve_with_controls
from .profiles import TimeSeriesProfile, generate_synthetic_profiles, load_profiles
from .supervisory import (
    STANDARD_ID,
    CurveSchedule,
    build_schedule,
    extract_trajectory,
    segment,
)

log = logging.getLogger(__name__)

SCENARIO_VERSION = 1
CASES = ("base", "optimal_dispatch", "local_vvc", "supervised")

# section -> key -> (type, default)
SCHEMA = {
    "scenario": {
        "version": (int, None), "name": (str, ""), "feeder": (str, None), "profiles": (str, None),
        "case": (str, "base"), "start": (int, 0), "steps": (int, 1440), "resolution": (float, 60.0),
        "seed": (int, 0), "output": (str, ""),
    },
    "dvc": {"bus": (str, ""), "kvar": (float, 0.0)},
    "dispatch": {
        "w_mu": (float, 1.0), "w_theta": (float, 0.05), "v_lower": (float, 0.98),
        "v_upper": (float, 1.03), "q_step_tol": (float, 1.0), "max_sweeps": (int, 3),
    },
    "vvc": {
        "v1": (float, 0.92), "v2": (float, 0.98), "v3": (float, 1.02), "v4": (float, 1.08),
        "q_lim": (float, 0.0), "dq_tol": (float, 1.0), "max_rounds": (int, 10), "strict": (bool, False),
    },
    "supervisory": {
        "mode": (str, "fitted"), "period": (int, 120), "threshold": (float, 0.25),
        "min_points": (int, 10),
    },
    "solver": {"tol": (float, 1e-6), "max_iter": (int, 50), "control_max_rounds": (int, 20),
               "source_pu": (float, 1.0)},
    "scaling": {"load": (float, 1.0), "pv": (float, 1.0)},
}


@dataclass(frozen=True)
class Scenario:
    feeder: Path
    profiles: str  # CSV path, or "synthetic:<day type>" generated from ``seed``
    case: str = "base"
    name: str = ""
    start: int = 0
    steps: int = 1440
    resolution: float = 60.0
    seed: int = 0
    output: Path | None = None
    dvc_bus: str | None = None  # None: keep the feeder file's DVC record
    dvc_kvar: float | None = None
    dispatch: DispatchConfig = field(default_factory=DispatchConfig)
    vvc: Mapping[str, float] = field(default_factory=dict)
    sup_mode: str = "fitted"
    sup_period: int = 120
    sup_threshold: float = 0.25
    sup_min_points: int = 10
    tol: float = 1e-6
    max_iter: int = 50
    control_max_rounds: int = 20
    source_pu: float = 1.0
    load_scale: float = 1.0
    pv_scale: float = 1.0
    path: Path | None = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ScenarioError(f"unknown case {self.case!r}; expected one of {', '.join(CASES)}")
        if self.steps <= 0 or self.start < 0:
            raise ScenarioError("steps must be positive and start non-negative")
        if self.sup_period <= 0:
            raise ScenarioError("supervisory period must be positive")
        if self.sup_mode not in ("standard", "shifted", "fitted"):
            raise ScenarioError(f"unknown supervisory mode {self.sup_mode!r}")

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)

    def with_weights(self, w_theta: float, w_mu: float | None = None) -> "Scenario":
        d = dataclasses.replace(self.dispatch, w_theta=w_theta,
                                w_mu=self.dispatch.w_mu if w_mu is None else w_mu)
        return dataclasses.replace(self, dispatch=d)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("path")
        d.pop("output")
        d["feeder"] = str(self.feeder)
        d["vvc"] = dict(self.vvc)
        return d

    def config_hash(self) -> str:
        """Digest of the settings and the bytes of every referenced input file."""
        h = hashlib.sha256()
        d = self.as_dict()
        d["feeder"] = Path(d["feeder"]).name
        if not self.profiles.startswith("synthetic:"):
            d["profiles"] = Path(self.profiles).name
            h.update(Path(self.profiles).read_bytes())
        h.update(Path(self.feeder).read_bytes())
        h.update(json.dumps(d, sort_keys=True, default=str).encode())
        return h.hexdigest()[:16]

    def vvc_curve(self, model: FeederModel) -> VoltVarCurve:
        q_lim = self.vvc.get("q_lim") or model.dvc_phase_limit
        return VoltVarCurve.standard(q_lim, self.vvc.get("v1", 0.92), self.vvc.get("v2", 0.98),
                                     self.vvc.get("v3", 1.02), self.vvc.get("v4", 1.08))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def parse_scenario(text: str, base_dir: Path | None = None, source: str = "<scenario>") -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    vals: dict[str, dict] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ScenarioError(f"{source}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ScenarioError(f"{source}: unknown key {key!r} in [{sec}]")
            typ = SCHEMA[sec][key][0]
            try:
                vals.setdefault(sec, {})[key] = _parse_bool(raw) if typ is bool else typ(raw.strip())
            except ValueError:
                raise ScenarioError(f"{source}: bad value for {sec}.{key}: {raw!r}") from None

    def get(sec, key):
        v = vals.get(sec, {}).get(key, SCHEMA[sec][key][1])
        if v is None:
            raise ScenarioError(f"{source}: missing required key {sec}.{key}")
        return v

    version = get("scenario", "version")
    if version != SCENARIO_VERSION:
        raise ScenarioError(f"{source}: scenario version {version} not supported (expected {SCENARIO_VERSION})")
    base_dir = base_dir or Path.cwd()

    def resolve(p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else (base_dir / q).resolve()

    feeder = resolve(get("scenario", "feeder"))
    profiles = get("scenario", "profiles")
    if not profiles.startswith("synthetic:"):
        profiles = str(resolve(profiles))
        if not Path(profiles).exists():
            raise ScenarioError(f"{source}: profile file {profiles} does not exist")
    if not feeder.exists():
        raise ScenarioError(f"{source}: feeder file {feeder} does not exist")
    out = get("scenario", "output")
    band = VoltageBand(get("dispatch", "v_lower"), get("dispatch", "v_upper"))
    dcfg = DispatchConfig(get("dispatch", "w_mu"), get("dispatch", "w_theta"), band,
                          get("dispatch", "q_step_tol"), None, get("dispatch", "max_sweeps"))
    vvc = {k: float(v) for k, v in vals.get("vvc", {}).items()}
    case = get("scenario", "case")
    if case == "supervised" and "supervisory" not in vals:
        raise ScenarioError(f"{source}: case 'supervised' needs a [supervisory] section")
    return Scenario(
        feeder=feeder, profiles=profiles, case=case, name=get("scenario", "name"),
        start=get("scenario", "start"), steps=get("scenario", "steps"),
        resolution=get("scenario", "resolution"), seed=get("scenario", "seed"),
        output=resolve(out) if out else None,
        dvc_bus=get("dvc", "bus") or None, dvc_kvar=get("dvc", "kvar") or None,
        dispatch=dcfg, vvc=vvc,
        sup_mode=get("supervisory", "mode"), sup_period=get("supervisory", "period"),
        sup_threshold=get("supervisory", "threshold"), sup_min_points=get("supervisory", "min_points"),
        tol=get("solver", "tol"), max_iter=get("solver", "max_iter"),
        control_max_rounds=get("solver", "control_max_rounds"), source_pu=get("solver", "source_pu"),
        load_scale=get("scaling", "load"), pv_scale=get("scaling", "pv"), path=None,
    )


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.exists():
        bundled = bundled_path("scenarios", f"{p.stem}.ini")
        if bundled.exists() and p.parent == Path("."):
            p = bundled
        else:
            raise ScenarioError(f"scenario file {path} does not exist")
    s = parse_scenario(p.read_text(), p.parent.resolve(), str(p))
    return dataclasses.replace(s, path=p.resolve())


def bundled_path(*parts: str) -> Path:
    return Path(str(resources.files("feedervolt").joinpath("data", *parts)))


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in bundled_path("scenarios").glob("*.ini"))


# -- results -------------------------------------------------------------------

@dataclass(eq=False)
class ScenarioResult:
    name: str
    case: str
    seed: int
    config_hash: str
    start: int
    resolution: float
    monitored: tuple[tuple[str, str], ...]
    vmag: np.ndarray  # steps x monitored
    reg_ids: tuple[str, ...]
    taps: np.ndarray  # steps x regulators, settled
    load_kw: np.ndarray
    pv_kw: np.ndarray
    bus_zone: Mapping[str, int]
    bus_phases: Mapping[str, str]
    dvc_bus: str | None = None
    dvc_phases: str = ""
    dvc_q: np.ndarray | None = None  # steps x phases, kVAR
    dvc_v: np.ndarray | None = None  # steps x phases, pu
    curve_ids: tuple[str, ...] | None = None
    curves: Mapping[str, Mapping[str, VoltVarCurve]] = field(default_factory=dict)
    objective: np.ndarray | None = None  # steps x 2: combined at q*, at q = 0
    flags: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.vmag)

    def record_rows(self):
        """Per-step rows of the result record (everything but metadata)."""
        head = ["t"] + [f"tap:{r}" for r in self.reg_ids]
        if self.dvc_q is not None:
            head += [f"q:{p}" for p in self.dvc_phases] + [f"v:{p}" for p in self.dvc_phases]
        if self.curve_ids is not None:
            head.append("curve")
        head += [f"{b}.{p}" for b, p in self.monitored]
        yield head
        for i in range(self.steps):
            row = [str(self.start + i)] + [str(int(x)) for x in self.taps[i]]
            if self.dvc_q is not None:
                row += [f"{x:.6f}" for x in self.dvc_q[i]] + [f"{x:.9f}" for x in self.dvc_v[i]]
            if self.curve_ids is not None:
                row.append(self.curve_ids[i])
            row += [f"{x:.9f}" for x in self.vmag[i]]
            yield row


# -- simulation loop --------------------------------------------------------------

def prepare(s: Scenario, model: FeederModel | None = None):
    """Load the feeder and profiles for a scenario and check they fit together."""
    if model is None:
        model = load_feeder(s.feeder)
    if s.case == "base":
        model = model.with_dvc(None)
    elif s.dvc_bus is not None:
        model = model.with_dvc(s.dvc_bus, s.dvc_kvar)
    elif s.dvc_kvar is not None and model.dvc is not None:
        model = model.with_dvc(model.dvc.bus, s.dvc_kvar)
    if s.case != "base" and model.dvc is None:
        raise ScenarioError(f"case {s.case!r} needs a DVC: set [dvc] bus or add a dvc record")
    if s.profiles.startswith("synthetic:"):
        day = s.profiles.split(":", 1)[1]
        days = -(-(s.start + s.steps) // 1440)
        profiles = generate_synthetic_profiles(day, s.seed, n_pv=max(5, len(model.pvs)), days=days)
    else:
        profiles = load_profiles(s.profiles)
    needed = {ld.profile for ld in model.loads} | {pv.profile_id for pv in model.pvs}
    missing = sorted(needed - set(profiles))
    if missing:
        raise ScenarioError(f"profiles missing for ids {missing}")
    for pid in needed:
        if not profiles[pid].covers(s.steps, s.resolution, s.start):
            raise ScenarioError(
                f"profile {pid!r} does not cover {s.steps} steps from {s.start} at {s.resolution:g} s")
    return model, profiles


def _series(model: FeederModel, profiles: Mapping[str, TimeSeriesProfile], s: Scenario):
    sl = slice(s.start, s.start + s.steps)
    lm = {pid: profiles[pid].values[sl] * s.load_scale for pid in {ld.profile for ld in model.loads}}
    pm = {pid: profiles[pid].values[sl] * s.pv_scale for pid in {pv.profile_id for pv in model.pvs}}
    load_kw = np.zeros(s.steps)
    for ld in model.loads:
        load_kw += ld.p_nominal * lm[ld.profile]
    pv_kw = np.zeros(s.steps)
    for pv in model.pvs:
        pv_kw += pv.rated_kw * pm[pv.profile_id]
    return lm, pm, load_kw, pv_kw


def run_scenario(s: Scenario, model: FeederModel | None = None,
                 schedule: CurveSchedule | None = None, progress=None) -> ScenarioResult:
    """Step the horizon; regulator taps and DVC output chain from step to step.

    ``schedule`` supplies per-step curves for the supervised case.
    """
    model, profiles = prepare(s, model)
    lm, pm, load_kw, pv_kw = _series(model, profiles, s)
    net = network(model)
    mon = model.monitored_node_phases()
    mon_idx = np.array([net.index[x] for x in mon], dtype=int)
    reg_ids = tuple(model.regulator_ids)
    T = s.steps
    vmag = np.empty((T, len(mon)))
    taps_rec = np.empty((T, len(reg_ids)), dtype=np.int64)
    has_dvc = model.dvc is not None and s.case != "base"
    dvc_phases = model.buses[model.dvc.bus].phases if has_dvc else ""
    dvc_q = np.zeros((T, len(dvc_phases))) if has_dvc else None
    dvc_v = np.zeros((T, len(dvc_phases))) if has_dvc else None
    dvc_idx = [net.index[(model.dvc.bus, p)] for p in dvc_phases] if has_dvc else []
    objective = np.zeros((T, 2)) if s.case == "optimal_dispatch" else None
    flags: list[str] = []
    kw = dict(tol=s.tol, max_iter=s.max_iter, control_max_rounds=s.control_max_rounds)

    curves: dict = {}
    curve_ids = None
    state = None
    if s.case in ("local_vvc", "supervised"):
        std = s.vvc_curve(model)
        if s.case == "supervised":
            if schedule is None:
                raise ScenarioError("supervised case needs a curve schedule (see run_supervised)")
            if len(schedule.step_curve) != T:
                raise ScenarioError("curve schedule length does not match the horizon")
            curves = dict(schedule.curves)
            curve_ids = schedule.step_curve
        else:
            curves = {STANDARD_ID: {p: std for p in dvc_phases}}
            curve_ids = (STANDARD_ID,) * T
        state = DvcState.for_model(model, curves[curve_ids[0]])

    taps = {r: 0 for r in reg_ids}
    v_prev = None
    for t in range(T):
        op = OperatingPoint({pid: float(x[t]) for pid, x in lm.items()},
                            {pid: float(x[t]) for pid, x in pm.items()},
                            taps, source_pu=s.source_pu)
        try:
            if s.case == "base":
                snap, taps = solve_with_controls(model, op, v0=v_prev, t=t, **kw)
            elif s.case == "optimal_dispatch":
                out = optimal_dispatch(model, op, taps, s.dispatch, v0=v_prev, t=t, **kw)
                snap, taps = out.snapshot, out.taps
                dvc_q[t] = [out.q_star[p] for p in dvc_phases]
                objective[t] = (out.objective.combined, out.objective_at_zero.combined)
            else:
                state = dataclasses.replace(state, active_curve=curves[curve_ids[t]])
                res = settle_local_control(model, op, state, dq_tol=s.vvc.get("dq_tol", 1.0),
                                           max_rounds=int(s.vvc.get("max_rounds", 10)),
                                           strict=bool(s.vvc.get("strict", False)),
                                           v0=v_prev, t=t, **kw)
                if not res.converged:
                    flags.append(f"step {s.start + t}: local Volt/VAR control did not settle")
                    log.warning("step %d: local Volt/VAR control did not settle", s.start + t)
                snap, taps, state = res.snapshot, res.taps, res.state
                dvc_q[t] = [state.q_per_phase[p] for p in dvc_phases]
        except FeederVoltError as exc:
            raise SimulationError(exc, step=s.start + t) from exc
        v_prev = snap.v
        vmag[t] = np.abs(snap.v[mon_idx])
        taps_rec[t] = [taps[r] for r in reg_ids]
        if has_dvc:
            dvc_v[t] = np.abs(snap.v[dvc_idx])
        if progress is not None:
            progress(t + 1, T)

    return ScenarioResult(
        name=s.name, case=s.case, seed=s.seed, config_hash=s.config_hash(), start=s.start,
        resolution=s.resolution, monitored=tuple(mon), vmag=vmag, reg_ids=reg_ids, taps=taps_rec,
        load_kw=load_kw, pv_kw=pv_kw,
        bus_zone={b.id: b.zone_id for b in model.buses.values()},
        bus_phases={b.id: b.phases for b in model.buses.values()},
        dvc_bus=model.dvc.bus if has_dvc else None, dvc_phases=dvc_phases, dvc_q=dvc_q, dvc_v=dvc_v,
        curve_ids=curve_ids, curves=curves, objective=objective, flags=flags,
    )


def run_supervised(s: Scenario, mode: str | None = None, update_period: int | None = None,
                   reference: ScenarioResult | None = None,
                   model: FeederModel | None = None) -> tuple[ScenarioResult, CurveSchedule]:
    """Local control with curves rebuilt per window from an optimal-dispatch reference run."""
    mode = mode or s.sup_mode
    period = update_period or s.sup_period
    s = s.replace(case="supervised", sup_mode=mode, sup_period=period)
    if reference is None:
        raise ScenarioError("supervised run needs an optimal-dispatch reference run")
    if reference.case != "optimal_dispatch" or reference.dvc_q is None:
        raise ScenarioError("reference run must be an optimal-dispatch run with a DVC")
    if reference.steps != s.steps or reference.start != s.start:
        raise ScenarioError("reference run covers a different horizon")
    model, _ = prepare(s, model)
    if reference.dvc_bus != model.dvc.bus:
        raise ScenarioError(f"reference DVC at {reference.dvc_bus}, scenario at {model.dvc.bus}")
    labels = segment(reference.load_kw, reference.pv_kw, s.sup_threshold)
    schedule = build_schedule(extract_trajectory(reference), labels, mode, period,
                              s.vvc_curve(model), s.resolution, s.sup_min_points)
    return run_scenario(s, model, schedule), schedule


# -- reports -----------------------------------------------------------------------

HIST_EDGES = np.round(np.arange(0.90, 1.1 + 1e-9, 0.005), 3)


def _write_csv(path: Path, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow(r)
    return path


def metrics_rows(result: ScenarioResult, report: MetricsReport, label: str | None = None):
    label = label or result.case
    phases_of = {}
    for rid in result.reg_ids:
        phases_of[rid] = rid.rsplit(".", 1)[-1] if "." in rid else ""
    head = ["case", "phase", "v_out_lower", "v_in", "v_out_upper", "total_points",
            "pct_out_lower", "pct_in", "pct_out_upper"] + [f"taps:{r}" for r in result.reg_ids] + ["taps_total"]
    rows = [head]

    def row(ph, lo, vin, up, taps):
        tot = lo + vin + up
        pct = [f"{100.0 * x / tot:.4f}" if tot else "0" for x in (lo, vin, up)]
        tap_cells = [str(taps[r]) if r in taps else "" for r in result.reg_ids]
        return [label, ph, lo, vin, up, tot] + pct + tap_cells + [sum(taps.values())]

    for ph, (lo, vin, up) in report.by_phase.items():
        taps = {r: c for r, c in report.tap_changes.items() if ph in phases_of.get(r, ph)}
        rows.append(row(ph, lo, vin, up, taps))
    rows.append(row("all", report.v_out_lower, report.v_in, report.v_out_upper, dict(report.tap_changes)))
    return rows


def histogram_rows(result: ScenarioResult):
    edges = np.concatenate(([-np.inf], HIST_EDGES, [np.inf]))
    phase_of = np.array([p for _, p in result.monitored])
    rows = [["v_low", "v_high", "A", "B", "C", "total"]]
    counts = {}
    for p in "ABC":
        vm = result.vmag[:, phase_of == p].ravel()
        counts[p] = np.histogram(vm, edges)[0] if vm.size else np.zeros(len(edges) - 1, int)
    for i in range(len(edges) - 1):
        c = [int(counts[p][i]) for p in "ABC"]
        rows.append([f"{edges[i]:.3f}", f"{edges[i + 1]:.3f}"] + c + [sum(c)])
    return rows


def emit_reports(result: ScenarioResult, out_dir, cfg: DispatchConfig | VoltageBand | None = None,
                 schedule: CurveSchedule | None = None) -> dict[str, Path]:
    """Write metrics, histogram, tap, Q-V and record CSVs into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ScenarioError(f"cannot write to output directory {out}: {exc}") from None
    report = score_run(result, cfg)
    files = {
        "metrics": _write_csv(out / "metrics.csv", metrics_rows(result, report)),
        "histogram": _write_csv(out / "histogram.csv", histogram_rows(result)),
        "taps": _write_csv(out / "taps.csv",
                           [["t"] + list(result.reg_ids)]
                           + [[result.start + i] + [int(x) for x in result.taps[i]] for i in range(result.steps)]),
        "record": _write_csv(out / "record.csv", result.record_rows()),
        "meta": _write_csv(out / "meta.csv", [["key", "value"], ["name", result.name], ["case", result.case],
                                              ["seed", result.seed], ["config_hash", result.config_hash],
                                              ["steps", result.steps], ["flags", len(result.flags)]]
                           + [["flag", f] for f in result.flags]),
    }
    if result.dvc_q is not None:
        rows = [["phase", "t", "v", "q", "curve"]]
        for j, p in enumerate(result.dvc_phases):
            for i in range(result.steps):
                cid = result.curve_ids[i] if result.curve_ids is not None else ""
                rows.append([p, result.start + i, f"{result.dvc_v[i, j]:.9f}", f"{result.dvc_q[i, j]:.6f}", cid])
        files["qv"] = _write_csv(out / "qv.csv", rows)
    if schedule is not None:
        files["curves"] = _write_csv(out / "curves.csv", [["curve", "phase", "record"]] + schedule.records())
    return files
