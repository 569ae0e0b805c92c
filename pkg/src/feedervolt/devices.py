"""DVC state and the piecewise Volt/VAR local control law.

Sign convention: positive Q is injection (raises the local voltage).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import LocalControlError, ValidationError
from .model import FeederModel
from .powerflow import (
    DEFAULT_CONTROL_ROUNDS,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    OperatingPoint,
    VoltageSnapshot,
    solve_with_controls,
)

MODES = ("standard", "shifted", "fitted")

# IEEE 1547 category B outer breakpoints; the dead band is 0.98-1.02
DEFAULT_V1 = 0.92
DEFAULT_V2 = 0.98
DEFAULT_V3 = 1.02
DEFAULT_V4 = 1.08


@dataclass(frozen=True)
class VoltVarCurve:
    mode: str
    v1: float
    v2: float
    v3: float
    v4: float
    q_lim: float  # kVAR per phase
    slope: float | None = None  # kVAR per pu, fitted mode only
    v_center: float | None = None
    q_offset: float = 0.0  # fitted mode: constant term, non-zero only for a flat fit

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown curve mode {self.mode!r}")
        if not self.q_lim > 0:
            raise ValidationError("q_lim must be positive")
        if self.mode == "fitted":
            if self.slope is None or self.v_center is None:
                raise ValidationError("fitted curve needs slope and v_center")
            if self.slope > 0:
                raise ValidationError("fitted curve slope must be <= 0")
        elif not (self.v1 < self.v2 <= self.v3 < self.v4):
            raise ValidationError(
                f"breakpoints must satisfy v1 < v2 <= v3 < v4, got {self.v1, self.v2, self.v3, self.v4}")

    @classmethod
    def standard(cls, q_lim: float, v1=DEFAULT_V1, v2=DEFAULT_V2, v3=DEFAULT_V3, v4=DEFAULT_V4):
        return cls("standard", v1, v2, v3, v4, q_lim)

    @classmethod
    def fitted(cls, q_lim: float, slope: float, v_center: float, q_offset: float = 0.0):
        # v1/v4 are where the clamped line saturates, v2 = v3 where it crosses q_offset
        if slope < 0:
            v1 = v_center - (q_lim - q_offset) / -slope
            v4 = v_center + (q_lim + q_offset) / -slope
        else:
            v1, v4 = -math.inf, math.inf
        return cls("fitted", v1, v_center, v_center, v4, q_lim, slope, v_center, q_offset)

    @property
    def m1(self) -> float:
        """Injection-side slope magnitude, kVAR per pu."""
        return self.q_lim / (self.v2 - self.v1)

    @property
    def m2(self) -> float:
        return self.q_lim / (self.v4 - self.v3)

    def __call__(self, v):
        return vvc_evaluate(self, v)

    def to_record(self) -> str:
        parts = ["vvc", self.mode] + [_fmt(x) for x in (self.v1, self.v2, self.v3, self.v4, self.q_lim)]
        if self.mode == "fitted":
            parts += [_fmt(self.slope), _fmt(self.v_center)]
            if self.q_offset:
                parts.append(_fmt(self.q_offset))
        return " ".join(parts)

    @classmethod
    def from_record(cls, text: str) -> "VoltVarCurve":
        tok = text.split()
        if tok and tok[0] == "vvc":
            tok = tok[1:]
        if len(tok) not in (6, 8, 9):
            raise ValidationError(f"bad vvc record {text!r}")
        mode = tok[0]
        try:
            vals = [float(x) for x in tok[1:]]
        except ValueError:
            raise ValidationError(f"bad vvc record {text!r}") from None
        if mode == "fitted":
            if len(vals) < 7:
                raise ValidationError("fitted vvc record needs slope and v_center")
            return cls("fitted", *vals[:7], q_offset=vals[7] if len(vals) > 7 else 0.0)
        if len(vals) != 5:
            raise ValidationError(f"{mode} vvc record takes five numbers")
        return cls(mode, *vals)


def _fmt(x: float) -> str:
    return repr(float(x))


def vvc_evaluate(curve: VoltVarCurve, v):
    """Reactive power command (kVAR) for local voltage ``v`` (pu).

    Accepts a scalar or an array.
    """
    scalar = np.ndim(v) == 0
    va = np.asarray(v, dtype=float)
    if curve.mode == "fitted":
        q = np.clip(curve.q_offset + curve.slope * (va - curve.v_center), -curve.q_lim, curve.q_lim)
    else:
        ql = curve.q_lim
        q = np.zeros_like(va)
        q = np.where(va <= curve.v1, ql, q)
        rise = (va > curve.v1) & (va < curve.v2)
        q = np.where(rise, ql * (curve.v2 - va) / (curve.v2 - curve.v1), q)
        sink = (va > curve.v3) & (va < curve.v4)
        q = np.where(sink, -ql * (va - curve.v3) / (curve.v4 - curve.v3), q)
        q = np.where(va >= curve.v4, -ql, q)
    return float(q) if scalar else q


@dataclass(frozen=True)
class DvcState:
    bus: str
    q_per_phase: Mapping[str, float]
    q_limit_per_phase: float
    # one curve for all phases, or a per-phase mapping; None in dispatch mode
    active_curve: VoltVarCurve | Mapping[str, VoltVarCurve] | None = None

    def __post_init__(self):
        for ph, q in self.q_per_phase.items():
            if abs(q) > self.q_limit_per_phase * (1 + 1e-9):
                raise ValidationError(f"DVC phase {ph} output {q} exceeds {self.q_limit_per_phase} kVAR")

    def curve_for(self, phase: str) -> VoltVarCurve | None:
        c = self.active_curve
        if c is None or isinstance(c, VoltVarCurve):
            return c
        return c.get(phase)

    @classmethod
    def for_model(cls, model: FeederModel, curve=None) -> "DvcState":
        if model.dvc is None:
            raise ValidationError("model has no DVC")
        phases = model.buses[model.dvc.bus].phases
        return cls(model.dvc.bus, {p: 0.0 for p in phases}, model.dvc_phase_limit, curve)


def dvc_apply(state: DvcState, snapshot: VoltageSnapshot) -> DvcState:
    """Evaluate the active curve on each phase's terminal voltage."""
    if state.active_curve is None:
        raise ValidationError("DVC has no active curve (optimal-dispatch mode)")
    q = {}
    for ph in state.q_per_phase:
        curve = state.curve_for(ph)
        q[ph] = vvc_evaluate(curve, snapshot.magnitude(state.bus, ph)) if curve is not None else 0.0
    return dataclasses.replace(state, q_per_phase=q)


@dataclass
class LocalControlOutcome:
    snapshot: VoltageSnapshot
    taps: dict[str, int]
    state: DvcState
    rounds: int
    converged: bool
    history: list = field(default_factory=list)


def settle_local_control(model: FeederModel, op: OperatingPoint, state: DvcState,
                         dq_tol: float = 1.0, max_rounds: int = 10, tol: float = DEFAULT_TOL,
                         max_iter: int = DEFAULT_MAX_ITER,
                         control_max_rounds: int = DEFAULT_CONTROL_ROUNDS,
                         v0=None, t=None, strict: bool = True) -> LocalControlOutcome:
    """Iterate curve and network to a self-consistent DVC output.

    Each round solves the network (regulators settling from ``op``'s taps)
    with the current Q, evaluates the curve, and moves Q toward the command.
    The move is damped per phase, halving whenever the correction changes
    sign, so steep curves approach the fixpoint instead of bouncing between
    the limits. Stops when every phase's correction is below ``dq_tol`` kVAR.
    """
    q = dict(state.q_per_phase)
    alpha = {ph: 1.0 for ph in q}
    prev_delta = {ph: 0.0 for ph in q}
    lim = state.q_limit_per_phase
    history = []
    v = v0
    snap = taps = None
    for rnd in range(1, max_rounds + 1):
        snap, taps = solve_with_controls(model, op.replace(dvc_q=dict(q)), tol, max_iter,
                                         control_max_rounds, v0=v, t=t)
        v = snap.v
        target = dvc_apply(dataclasses.replace(state, q_per_phase=q), snap).q_per_phase
        delta = {ph: target[ph] - q[ph] for ph in q}
        history.append((dict(q), dict(target)))
        if all(abs(d) < dq_tol for d in delta.values()):
            return LocalControlOutcome(snap, taps, dataclasses.replace(state, q_per_phase=q),
                                       rnd, True, history)
        for ph, d in delta.items():
            if d * prev_delta[ph] < 0:
                alpha[ph] *= 0.5
            prev_delta[ph] = d
            q[ph] = float(np.clip(q[ph] + alpha[ph] * d, -lim, lim))
    if strict:
        raise LocalControlError(
            f"DVC local control did not settle in {max_rounds} rounds "
            f"(last corrections {', '.join(f'{p}={d:.2f}' for p, d in delta.items())} kVAR)")
    # keep the last applied Q and the network state it produced
    return LocalControlOutcome(snap, taps, dataclasses.replace(state, q_per_phase=history[-1][0]),
                               max_rounds, False, history)
