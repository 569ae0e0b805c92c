"""Optimal per-phase DVC dispatch and run scoring.

The per-step objective is ``w_mu * f_mu + w_theta * f_theta`` where ``f_mu``
sums band violations (pu) over the monitored node-phases and ``f_theta``
counts regulator tap steps taken relative to the previous step's settled
taps. Both are kept per phase; the combined value sums over phases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ControlOscillationError, ConvergenceError, DispatchError, ValidationError
from .model import PHASES, FeederModel
from .powerflow import (
    DEFAULT_CONTROL_ROUNDS,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    OperatingPoint,
    VoltageSnapshot,
    solve_with_controls,
)

WEIGHT_SWEEP = (0.0, 0.01, 0.05, 0.1, 0.5, 1.0)


@dataclass(frozen=True)
class VoltageBand:
    v_lower: float = 0.98
    v_upper: float = 1.03

    def __post_init__(self):
        if not 0 < self.v_lower < self.v_upper:
            raise ValidationError(f"invalid voltage band [{self.v_lower}, {self.v_upper}]")


@dataclass(frozen=True)
class DispatchConfig:
    w_mu: float = 1.0
    w_theta: float = 0.05
    band: VoltageBand = field(default_factory=VoltageBand)
    q_step_tol: float = 1.0  # kVAR
    monitored_set: tuple[tuple[str, str], ...] | None = None  # None: model default
    max_sweeps: int = 3

    def __post_init__(self):
        if self.w_mu < 0 or self.w_theta < 0 or self.w_mu + self.w_theta <= 0:
            raise ValidationError("weights must be non-negative and not both zero")
        if not self.q_step_tol > 0:
            raise ValidationError("q_step_tol must be positive")
        if self.monitored_set is not None:
            object.__setattr__(self, "monitored_set", tuple(tuple(x) for x in self.monitored_set))


@dataclass(frozen=True)
class ObjectiveValue:
    f_mu: Mapping[str, float]
    f_theta: Mapping[str, int]
    w_mu: float
    w_theta: float

    @property
    def f_mu_total(self) -> float:
        return float(sum(self.f_mu.values()))

    @property
    def f_theta_total(self) -> int:
        return int(sum(self.f_theta.values()))

    @property
    def combined(self) -> float:
        return self.w_mu * self.f_mu_total + self.w_theta * self.f_theta_total


def _monitor(model: FeederModel, cfg: DispatchConfig):
    key = ("monitor", cfg.monitored_set)
    hit = model._cache.get(key)
    if hit is None:
        labels = cfg.monitored_set if cfg.monitored_set is not None else model.monitored_node_phases()
        from .powerflow import network

        net = network(model)
        try:
            idx = np.array([net.index[lab] for lab in labels], dtype=int)
        except KeyError as exc:
            raise ValidationError(f"monitored node-phase {exc.args[0]} not in model") from None
        ph = np.array([PHASES.index(p) for _, p in labels], dtype=int)
        hit = (idx, ph)
        model._cache[key] = hit
    return hit


def _f_mu_array(vm: np.ndarray, ph: np.ndarray, band: VoltageBand) -> np.ndarray:
    excess = np.maximum(vm - band.v_upper, 0.0) + np.maximum(band.v_lower - vm, 0.0)
    return np.bincount(ph, excess, 3)


def objective_f_mu(snapshot: VoltageSnapshot, cfg: DispatchConfig,
                   model: FeederModel | None = None) -> dict[str, float]:
    """Band violation per phase, summed over the monitored node-phases.

    Without a model the monitored set must be given in ``cfg``.
    """
    if model is not None:
        idx, ph = _monitor(model, cfg)
    else:
        if cfg.monitored_set is None:
            raise ValidationError("monitored_set required when no model is given")
        idx = np.array([snapshot.index[lab] for lab in cfg.monitored_set], dtype=int)
        ph = np.array([PHASES.index(p) for _, p in cfg.monitored_set], dtype=int)
    sums = _f_mu_array(np.abs(snapshot.v[idx]), ph, cfg.band)
    present = sorted(set(ph.tolist()))
    return {PHASES[i]: float(sums[i]) for i in present}


def _reg_phases(reg_phases, ids) -> dict[str, str]:
    if isinstance(reg_phases, FeederModel):
        return {r.id: r.phases for r in reg_phases.regulators}
    if reg_phases is not None:
        return dict(reg_phases)
    out = {}
    for rid in ids:
        suffix = rid.rsplit(".", 1)[-1] if "." in rid else ""
        if not suffix or any(c not in PHASES for c in suffix):
            raise ValidationError(f"cannot infer phases of regulator {rid!r}; pass reg_phases")
        out[rid] = suffix
    return out


def objective_f_theta(taps_now: Mapping[str, int], taps_prev: Mapping[str, int],
                      reg_phases=None) -> dict[str, int]:
    """Tap steps per phase between two settled tap maps.

    ``reg_phases`` maps regulator id to its phases (or is a model); by default
    the phases are read from the id suffix (``"160R.A"``). A ganged unit
    counts its movement on every phase it serves.
    """
    if set(taps_now) != set(taps_prev):
        raise ValidationError(
            f"tap maps disagree on regulators: {sorted(set(taps_now) ^ set(taps_prev))}")
    phases = _reg_phases(reg_phases, taps_now)
    out: dict[str, int] = {}
    for rid, now in taps_now.items():
        d = abs(int(now) - int(taps_prev[rid]))
        for p in phases[rid]:
            out[p] = out.get(p, 0) + d
    return out


class DispatchOutcome(NamedTuple):
    q_star: dict[str, float]
    objective: ObjectiveValue
    snapshot: VoltageSnapshot
    taps: dict[str, int]
    objective_at_zero: ObjectiveValue
    probes: int


class _Prober:
    """Scores DVC set-points for one timestep, memoized by Q vector."""

    def __init__(self, model, op_t, taps_prev, cfg, tol, max_iter, control_max_rounds, v0, t):
        self.model = model
        self.cfg = cfg
        self.phases = model.buses[model.dvc.bus].phases
        self.op = op_t.replace(tap_positions=dict(taps_prev))
        self.taps_prev = dict(taps_prev)
        self.idx, self.ph = _monitor(model, cfg)
        self.present = sorted(set(self.ph.tolist()))
        self.reg_ph = {r.id: r.phases for r in model.regulators}
        self.kw = dict(tol=tol, max_iter=max_iter, control_max_rounds=control_max_rounds, t=t)
        self.v0 = v0
        self.cache: dict[tuple, tuple] = {}
        self.best: tuple | None = None  # (combined, sum|q|, q)

    def __call__(self, q: tuple) -> float:
        hit = self.cache.get(q)
        if hit is None:
            hit = self._evaluate(q)
            self.cache[q] = hit
            c = hit[0].combined
            if math.isfinite(c):
                key = (c, sum(abs(x) for x in q), q)
                if self.best is None or key < self.best:
                    self.best = key
        return hit[0].combined

    def _evaluate(self, q: tuple):
        dvc_q = {p: x for p, x in zip(self.phases, q) if x != 0.0}
        try:
            snap, taps = solve_with_controls(self.model, self.op.replace(dvc_q=dvc_q),
                                             v0=self.v0, **self.kw)
        except (ConvergenceError, ControlOscillationError):
            return _infeasible(), None, None
        sums = _f_mu_array(np.abs(snap.v[self.idx]), self.ph, self.cfg.band)
        f_mu = {PHASES[i]: float(sums[i]) for i in self.present}
        f_theta = {p: 0 for p in f_mu}
        f_theta.update(objective_f_theta(taps, self.taps_prev, self.reg_ph))
        obj = ObjectiveValue(f_mu, f_theta, self.cfg.w_mu, self.cfg.w_theta)
        return obj, snap, taps

    def result(self, q: tuple):
        return self.cache[q]


class _Infeasible(ObjectiveValue):
    @property
    def combined(self) -> float:
        return math.inf


def _infeasible() -> ObjectiveValue:
    return _Infeasible({}, {}, 0.0, 0.0)


def _search_phase(g, q: list, j: int, lim: float, tol: float) -> float:
    """Coarse 9-point scan then bisection on one phase's Q."""

    def at(x):
        qq = list(q)
        qq[j] = x
        return g(tuple(qq))

    def rank(x):
        return (at(x), abs(x), x)

    h = lim / 4.0
    pts = sorted({-lim + i * h for i in range(9)} | {q[j]})
    best = min(pts, key=rank)
    if not math.isfinite(at(best)):
        return q[j]
    lo, hi = max(-lim, best - h), min(lim, best + h)
    d = tol / 4.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        right = min(mid + d, lim)
        a, b = at(mid), at(right)
        for x in (mid, right):
            if rank(x) < rank(best):
                best = x
        if min(a, b) > at(best):
            # mid sits past a tap jump; the incumbent's side is better
            if best < mid:
                hi = mid
            else:
                lo = mid
        elif b < a:
            lo = mid
        elif b > a:
            hi = min(mid + d, hi)
        elif mid > 0:  # flat: lean toward zero output
            hi = min(mid + d, hi)
        else:
            lo = mid
    cands = [best, lo, hi]
    if lo <= 0.0 <= hi:
        cands.append(0.0)
    return min(cands, key=rank)


def optimal_dispatch(model: FeederModel, op_t: OperatingPoint, taps_prev: Mapping[str, int],
                     cfg: DispatchConfig | None = None, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER,
                     control_max_rounds: int = DEFAULT_CONTROL_ROUNDS,
                     v0: np.ndarray | None = None, t: int | None = None) -> DispatchOutcome:
    """Per-phase DVC set-points minimizing the combined objective for one step.

    Coordinate descent over phases A, B, C (up to ``cfg.max_sweeps`` sweeps).
    Each phase is searched with a 9-point scan over the full range, then
    bisection inside the bracket around the best scan point, until the
    interval is below ``cfg.q_step_tol``. Every probe re-settles the
    regulators starting from ``taps_prev``. The returned point is the best
    probe overall, and Q = 0 is always probed first, so the result never
    scores worse than leaving the DVC idle.
    """
    cfg = cfg or DispatchConfig()
    if model.dvc is None:
        raise ValidationError("optimal dispatch needs a DVC in the model")
    g = _Prober(model, op_t, taps_prev, cfg, tol, max_iter, control_max_rounds, v0, t)
    n = len(g.phases)
    zero = (0.0,) * n
    if g(zero) == 0.0:
        return _outcome(g, zero)
    lim = model.dvc_phase_limit
    q = list(zero)
    for _ in range(cfg.max_sweeps):
        moved = False
        for j in range(n):
            new = _search_phase(g, q, j, lim, cfg.q_step_tol)
            if abs(new - q[j]) >= cfg.q_step_tol:
                moved = True
            q[j] = new
        if not moved:
            break
    if g.best is None:
        raise DispatchError(f"every dispatch probe failed to solve (step {t})")
    return _outcome(g, g.best[2])


def _outcome(g: _Prober, q: tuple) -> DispatchOutcome:
    obj, snap, taps = g.result(q)
    zero = (0.0,) * len(q)
    return DispatchOutcome(dict(zip(g.phases, q)), obj, snap, taps, g.result(zero)[0], len(g.cache))


# -- run scoring ---------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    v_out_lower: int
    v_in: int
    v_out_upper: int
    tap_changes: Mapping[str, int]
    total_points: int
    by_phase: Mapping[str, tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.v_out_lower + self.v_in + self.v_out_upper != self.total_points:
            raise ValidationError("voltage bins do not partition the monitored points")

    @property
    def total_tap_changes(self) -> int:
        return int(sum(self.tap_changes.values()))

    @property
    def out_of_band_share(self) -> float:
        return (self.v_out_lower + self.v_out_upper) / self.total_points if self.total_points else 0.0

    @property
    def in_band_share(self) -> float:
        return self.v_in / self.total_points if self.total_points else 0.0


def count_bins(vm: np.ndarray, band: VoltageBand) -> tuple[int, int, int]:
    lower = int(np.count_nonzero(vm < band.v_lower))
    upper = int(np.count_nonzero(vm > band.v_upper))
    return lower, int(vm.size) - lower - upper, upper


def tap_change_counts(tap_history: np.ndarray, reg_ids: Sequence[str]) -> dict[str, int]:
    """Total tap steps per regulator over a (steps x regulators) trajectory."""
    th = np.asarray(tap_history, dtype=np.int64).reshape(-1, len(reg_ids))
    moves = np.abs(np.diff(th, axis=0)).sum(axis=0) if len(th) > 1 else np.zeros(len(reg_ids), int)
    return {rid: int(m) for rid, m in zip(reg_ids, moves)}


def score_run(result, cfg: DispatchConfig | VoltageBand | None = None) -> MetricsReport:
    """Bin every monitored voltage point of a run and count tap steps.

    ``result`` needs ``monitored`` (node-phase labels), ``vmag``
    (steps x monitored), ``reg_ids`` and ``taps`` (steps x regulators).
    """
    if isinstance(cfg, VoltageBand):
        band, subset = cfg, None
    else:
        cfg = cfg or DispatchConfig()
        band, subset = cfg.band, cfg.monitored_set
    labels = list(result.monitored)
    vm = np.asarray(result.vmag)
    if subset is not None:
        pos = {lab: i for i, lab in enumerate(labels)}
        try:
            cols = [pos[tuple(lab)] for lab in subset]
        except KeyError as exc:
            raise ValidationError(f"node-phase {exc.args[0]} was not recorded in the run") from None
        vm = vm[:, cols]
        labels = [labels[c] for c in cols]
    lower, inside, upper = count_bins(vm, band)
    by_phase = {}
    phase_of = np.array([p for _, p in labels])
    for p in PHASES:
        mask = phase_of == p
        if mask.any():
            by_phase[p] = count_bins(vm[:, mask], band)
    taps = tap_change_counts(result.taps, result.reg_ids)
    return MetricsReport(lower, inside, upper, taps, int(vm.size), by_phase)
