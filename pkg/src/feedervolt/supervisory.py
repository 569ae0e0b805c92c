"""Volt/VAR curves learned from optimal-dispatch trajectories.

The day is split into low-PV and high-PV segments by the PV/load ratio.
Low-PV steps keep the standard curve. High-PV steps are grouped into
clock-aligned windows of ``update_period`` minutes and each window gets a
curve built from the optimal (v, q) points observed in that same window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .devices import VoltVarCurve
from .errors import ValidationError

log = logging.getLogger(__name__)

UPDATE_PERIODS = (30, 60, 120, 240)
DEFAULT_THRESHOLD = 0.25
MIN_FIT_POINTS = 10
DEAD_BAND_HALF = 0.02
STANDARD_ID = "standard"


@dataclass(frozen=True, eq=False)
class QvTrajectory:
    phases: str
    t: np.ndarray  # step indices
    v: np.ndarray  # steps x phases, pu at the DVC bus
    q: np.ndarray  # steps x phases, kVAR

    def __len__(self):
        return len(self.t)

    def phase(self, ph: str, steps=None) -> tuple[np.ndarray, np.ndarray]:
        j = self.phases.index(ph)
        if steps is None:
            return self.v[:, j], self.q[:, j]
        return self.v[steps, j], self.q[steps, j]


def extract_trajectory(run) -> QvTrajectory:
    if getattr(run, "dvc_q", None) is None:
        raise ValidationError("run has no DVC records")
    return QvTrajectory(run.dvc_phases, np.arange(len(run.dvc_q)),
                        np.asarray(run.dvc_v, dtype=float), np.asarray(run.dvc_q, dtype=float))


@dataclass(frozen=True, eq=False)
class SegmentLabel:
    high: np.ndarray  # bool per step
    threshold: float

    @property
    def tags(self) -> list[str]:
        return ["high_pv" if h else "low_pv" for h in self.high]

    def runs(self) -> list[tuple[int, int]]:
        """Contiguous high-PV runs as half-open step ranges."""
        out, start = [], None
        for i, h in enumerate(self.high):
            if h and start is None:
                start = i
            elif not h and start is not None:
                out.append((start, i))
                start = None
        if start is not None:
            out.append((start, len(self.high)))
        return out


def segment(load_series, pv_series, threshold: float = DEFAULT_THRESHOLD) -> SegmentLabel:
    load = np.asarray(load_series, dtype=float)
    pv = np.asarray(pv_series, dtype=float)
    if load.shape != pv.shape:
        raise ValidationError("load and PV series differ in length")
    if np.any(load <= 0):
        raise ValidationError(f"non-positive load at step {int(np.argmax(load <= 0))}")
    return SegmentLabel(pv / load > threshold, threshold)


def shift_curve(base: VoltVarCurve, v_window) -> VoltVarCurve:
    """Re-center the dead band on the window's mean voltage, keeping both slopes."""
    v = np.asarray(getattr(v_window, "v", v_window), dtype=float).ravel()
    if v.size == 0:
        raise ValidationError("cannot shift a curve on an empty window")
    if base.mode == "fitted":
        raise ValidationError("shift needs a curve with a dead band")
    ref = float(np.mean(v))
    v2, v3 = ref - DEAD_BAND_HALF, ref + DEAD_BAND_HALF
    return VoltVarCurve("shifted", v2 - (base.v2 - base.v1), v2, v3, v3 + (base.v4 - base.v3), base.q_lim)


def fit_curve(v_window, q_window, q_lim: float, base: VoltVarCurve | None = None,
              min_points: int = MIN_FIT_POINTS) -> VoltVarCurve:
    """Least-squares line through the window's (v, q) points, clamped to +-q_lim.

    Falls back to a shifted ``base`` (standard by default) when the window is
    too small or has no voltage spread. A rising fit is flattened to the mean Q.
    """
    v = np.asarray(v_window, dtype=float).ravel()
    q = np.asarray(q_window, dtype=float).ravel()
    if v.shape != q.shape:
        raise ValidationError("v and q windows differ in length")
    base = base or VoltVarCurve.standard(q_lim)
    if v.size < max(min_points, 2):
        return shift_curve(base, v)
    if np.ptp(v) == 0.0:
        return shift_curve(base, v)
    vbar, qbar = float(v.mean()), float(q.mean())
    dv = v - vbar
    sxx = float(dv @ dv)
    slope = float(dv @ (q - qbar)) / sxx
    if slope >= 0.0:
        if slope > 0.0:
            log.warning("rising Q-V fit (slope %.4g kVAR/pu) flattened to the mean", slope)
        return VoltVarCurve.fitted(q_lim, 0.0, vbar, float(np.clip(qbar, -q_lim, q_lim)))
    return VoltVarCurve.fitted(q_lim, slope, vbar - qbar / slope)


@dataclass(frozen=True)
class CurveSchedule:
    update_period: int  # minutes
    mode: str
    step_curve: tuple[str, ...]  # curve-set id active at each step
    curves: Mapping[str, Mapping[str, VoltVarCurve]]  # id -> phase -> curve

    def curve_at(self, t: int) -> Mapping[str, VoltVarCurve]:
        return self.curves[self.step_curve[t]]

    def records(self) -> list[tuple[str, str, str]]:
        """(curve id, phase, record line) for every scheduled curve."""
        return [(cid, ph, c.to_record()) for cid, per in self.curves.items() for ph, c in per.items()]


def build_schedule(traj: QvTrajectory, labels: SegmentLabel, mode: str, update_period: int,
                   base: VoltVarCurve, resolution: float = 60.0,
                   min_points: int = MIN_FIT_POINTS) -> CurveSchedule:
    """Assign a curve set to every step (perfect foresight within each window)."""
    if mode not in ("standard", "shifted", "fitted"):
        raise ValidationError(f"unknown supervisory mode {mode!r}")
    if update_period <= 0:
        raise ValidationError("update period must be positive")
    n = len(labels.high)
    if len(traj) != n:
        raise ValidationError(f"trajectory has {len(traj)} steps, segmentation {n}")
    std = {ph: base for ph in traj.phases}
    curves: dict[str, dict[str, VoltVarCurve]] = {STANDARD_ID: std}
    ids = [STANDARD_ID] * n
    if mode == "standard":
        return CurveSchedule(update_period, mode, tuple(ids), curves)
    per_window = max(1, int(round(update_period * 60.0 / resolution)))
    high = np.flatnonzero(labels.high)
    for w in np.unique(high // per_window):
        steps = high[high // per_window == w]
        cid = f"w{int(w):03d}"
        per = {}
        for ph in traj.phases:
            v, q = traj.phase(ph, steps)
            if mode == "shifted":
                per[ph] = shift_curve(base, v)
            else:
                per[ph] = fit_curve(v, q, base.q_lim, base, min_points)
        curves[cid] = per
        for s in steps:
            ids[s] = cid
    return CurveSchedule(update_period, mode, tuple(ids), curves)


def trajectory_from_points(points: Sequence[tuple[float, float]], phase: str = "A") -> QvTrajectory:
    """Single-phase trajectory from (v, q) pairs; handy for scripting and tests."""
    arr = np.asarray(points, dtype=float).reshape(-1, 2)
    return QvTrajectory(phase, np.arange(len(arr)), arr[:, :1].copy(), arr[:, 1:].copy())
