"""DVC siting: shortlist buses by voltage variation, then compare full runs."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .dispatch import MetricsReport, score_run
from .errors import FeederVoltError, SimulationError, ValidationError
from .model import FeederModel


def bus_sort_key(bus: str):
    """Numeric ids in numeric order, then the rest alphabetically ("8" < "13" < "150r")."""
    m = re.fullmatch(r"(\d+)(.*)", bus)
    return (0, int(m.group(1)), m.group(2)) if m else (1, 0, bus)


@dataclass(frozen=True)
class Candidate:
    bus: str
    zone: int
    score: float  # pu


@dataclass(frozen=True)
class CandidateRanking:
    zone: int
    candidates: tuple[Candidate, ...]  # best first

    @property
    def buses(self) -> list[str]:
        return [c.bus for c in self.candidates]


def variation_scores(result, zone: int | None = None, three_phase_only: bool = True) -> dict[str, float]:
    """Per-bus voltage variation: std over time of each phase, averaged over phases."""
    cols: dict[str, list[int]] = {}
    for i, (bus, _) in enumerate(result.monitored):
        if zone is not None and result.bus_zone[bus] != zone:
            continue
        if three_phase_only and len(result.bus_phases[bus]) < 3:
            continue
        cols.setdefault(bus, []).append(i)
    std = np.std(np.asarray(result.vmag), axis=0)
    return {bus: float(np.mean(std[c])) for bus, c in cols.items()}


def rank_candidates(base_result, zone: int | None = None, k: int = 3,
                    three_phase_only: bool = True) -> CandidateRanking:
    """Top-``k`` buses of ``zone`` by variation score over a no-DVC run.

    A three-phase DVC needs a three-phase bus, so single- and two-phase
    buses are skipped unless ``three_phase_only`` is off. With ``zone=None``
    the zone with the largest summed score is used. Ties go to the lower bus id.
    """
    if k <= 0:
        raise ValidationError("k must be positive")
    if zone is None:
        totals: dict[int, float] = {}
        for bus, sc in variation_scores(base_result, None, three_phase_only).items():
            z = base_result.bus_zone[bus]
            totals[z] = totals.get(z, 0.0) + sc
        if not totals:
            raise ValidationError("no eligible buses in the run")
        zone = min(totals, key=lambda z: (-totals[z], z))
    scores = variation_scores(base_result, zone, three_phase_only)
    if not scores:
        raise ValidationError(f"zone {zone} has no eligible monitored buses")
    order = sorted(scores, key=lambda b: (-scores[b], bus_sort_key(b)))
    return CandidateRanking(zone, tuple(Candidate(b, zone, scores[b]) for b in order[:k]))


@dataclass(frozen=True)
class PlacementReport:
    metrics: Mapping[str, MetricsReport]
    winner: str
    base: MetricsReport | None = None

    def rows(self):
        head = ["bus", "v_out_lower", "v_in", "v_out_upper", "total_points", "pct_in",
                "out_of_band_share", "tap_changes", "winner"]
        out = [head]
        if self.base is not None:
            m = self.base
            out.append(["base", m.v_out_lower, m.v_in, m.v_out_upper, m.total_points,
                        f"{100 * m.in_band_share:.4f}", f"{m.out_of_band_share:.6f}", m.total_tap_changes, ""])
        for bus in sorted(self.metrics, key=bus_sort_key):
            m = self.metrics[bus]
            out.append([bus, m.v_out_lower, m.v_in, m.v_out_upper, m.total_points,
                        f"{100 * m.in_band_share:.4f}", f"{m.out_of_band_share:.6f}", m.total_tap_changes,
                        "yes" if bus == self.winner else ""])
        return out


def pick_winner(metrics: Mapping[str, MetricsReport]) -> str:
    if not metrics:
        raise ValidationError("no candidates evaluated")
    return min(metrics, key=lambda b: (-metrics[b].v_in, metrics[b].v_out_upper, bus_sort_key(b)))


def evaluate_placements(model: FeederModel | None, candidates: Iterable, scenario,
                        base=None, keep_results: dict | None = None) -> PlacementReport:
    """One optimal-dispatch run per candidate with voltage-only weights.

    ``base`` (a no-DVC result) is scored alongside when given. Runs are
    stored in ``keep_results`` by bus when a dict is passed.
    """
    from .harness import run_scenario

    buses = [c.bus if isinstance(c, Candidate) else str(c) for c in candidates]
    if not buses:
        raise ValidationError("no placement candidates")
    s = scenario.replace(case="optimal_dispatch").with_weights(0.0)
    metrics = {}
    for bus in buses:
        try:
            res = run_scenario(s.replace(dvc_bus=bus), model)
        except SimulationError as exc:
            raise SimulationError(exc.cause, step=exc.step, candidate=bus) from exc
        except FeederVoltError as exc:
            raise SimulationError(exc, candidate=bus) from exc
        metrics[bus] = score_run(res, s.dispatch)
        if keep_results is not None:
            keep_results[bus] = res
    return PlacementReport(metrics, pick_winner(metrics),
                           score_run(base, s.dispatch) if base is not None else None)
