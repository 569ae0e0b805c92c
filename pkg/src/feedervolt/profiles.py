"""Time-series profiles: CSV ingest and synthetic day generators.

Profile CSVs are wide: a ``timestamp`` column (ISO 8601) followed by one
column per profile id, values in per unit of the element rating.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ProfileError

DAY_STEPS = 1440
DAY_TYPES = ("sunny", "cloudy")
MIN_CLOUDY_RAMPS = 20  # one-minute PV swings above 20 % of rating on a cloudy day


@dataclass(frozen=True, eq=False)
class TimeSeriesProfile:
    id: str
    resolution: float  # seconds
    values: np.ndarray
    start: datetime | None = None

    def __len__(self):
        return len(self.values)

    def covers(self, steps: int, resolution: float, start: int = 0) -> bool:
        return self.resolution == resolution and start + steps <= len(self.values)


def read_profiles_csv(text: str, source: str = "<csv>") -> dict[str, TimeSeriesProfile]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ProfileError(f"{source}: empty profile file") from None
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0].lower() != "timestamp":
        raise ProfileError(f"{source}: header must be 'timestamp,<profile id>,...'")
    ids = header[1:]
    if len(set(ids)) != len(ids):
        raise ProfileError(f"{source}: duplicate profile ids in header")

    stamps: list[datetime] = []
    rows: list[list[float]] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ProfileError(f"{source}:{lineno}: expected {len(header)} columns, got {len(row)}")
        try:
            stamps.append(datetime.fromisoformat(row[0].strip()))
        except ValueError:
            raise ProfileError(f"{source}:{lineno}: bad timestamp {row[0]!r}") from None
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise ProfileError(f"{source}:{lineno}: non-numeric value") from None
        if any(v < 0 or v != v for v in vals):
            raise ProfileError(f"{source}:{lineno}: negative or NaN profile value")
        rows.append(vals)
    if len(stamps) < 2:
        raise ProfileError(f"{source}: need at least two rows to infer the resolution")

    step = stamps[1] - stamps[0]
    if step <= timedelta(0):
        raise ProfileError(f"{source}: timestamps must increase")
    for prev, cur in zip(stamps, stamps[1:]):
        if cur - prev != step:
            if cur - prev > step:
                raise ProfileError(
                    f"{source}: gap in profile, missing timestamp {(prev + step).isoformat()}")
            raise ProfileError(f"{source}: irregular timestamp {cur.isoformat()}")
    data = np.asarray(rows, dtype=float)
    res = step.total_seconds()
    return {pid: TimeSeriesProfile(pid, res, data[:, i].copy(), stamps[0]) for i, pid in enumerate(ids)}


def load_profiles(path) -> dict[str, TimeSeriesProfile]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ProfileError(f"cannot read profile file {p}: {exc}") from exc
    return read_profiles_csv(text, source=str(p))


def write_profiles_csv(profiles: dict[str, TimeSeriesProfile], path) -> None:
    ids = list(profiles)
    first = profiles[ids[0]]
    n = len(first)
    for pid in ids:
        if len(profiles[pid]) != n or profiles[pid].resolution != first.resolution:
            raise ProfileError("profiles written together must share length and resolution")
    start = first.start or datetime(2023, 1, 1)
    step = timedelta(seconds=first.resolution)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + ids)
        for i in range(n):
            w.writerow([(start + i * step).isoformat()] + [f"{profiles[pid].values[i]:.6f}" for pid in ids])


# -- synthetic days ---------------------------------------------------------

def _residential_load(minutes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    h = minutes / 60.0
    shape = (
        0.42
        + 0.22 * np.exp(-0.5 * ((h - 7.5) / 1.3) ** 2)
        + 0.50 * np.exp(-0.5 * ((h - 19.0) / 2.2) ** 2)
        + 0.06 * np.exp(-0.5 * ((h - 13.0) / 3.0) ** 2)
    )
    # aggregated-meter noise: slow AR(1) wander plus small white noise
    ar = np.empty_like(shape)
    e = rng.normal(0.0, 0.006, size=shape.size)
    acc = 0.0
    for i, x in enumerate(e):
        acc = 0.97 * acc + x
        ar[i] = acc
    load = shape * (1.0 + ar + rng.normal(0.0, 0.004, size=shape.size))
    return np.clip(load / load.max(), 0.05, None)


def _clear_sky(minutes: np.ndarray, sunrise=6.25, sunset=20.0, peak=0.92) -> np.ndarray:
    h = minutes / 60.0
    x = (h - sunrise) / (sunset - sunrise)
    bell = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)
    return peak * bell ** 1.4


def _cloud_events(rng: np.random.Generator, n_minutes: int):
    """Shared cloud passages: (start minute, duration, depth)."""
    events = []
    t = 8.0 * 60 + rng.exponential(15.0)
    while t < 17.5 * 60:
        dur = int(rng.integers(3, 22))
        depth = float(rng.uniform(0.35, 0.62))
        events.append((int(t), dur, depth))
        t += dur + rng.exponential(16.0)
    # a few short ones in the shoulders of the day
    for _ in range(4):
        s = int(rng.uniform(6.8 * 60, 19.0 * 60))
        events.append((s, int(rng.integers(2, 8)), float(rng.uniform(0.2, 0.45))))
    return [e for e in events if e[0] < n_minutes]


def _cloudy_site(clear, events, hits, lag, noise):
    trans = np.ones(DAY_STEPS)
    for (s, dur, depth), hit in zip(events, hits):
        if hit:
            a = min(DAY_STEPS, s + lag)
            b = min(DAY_STEPS, a + dur)
            trans[a:b] = np.minimum(trans[a:b], 1.0 - depth)
    pv = np.clip(clear * trans * noise, 0.0, 1.0)
    # limit minute-to-minute ramps to 60 % of rating
    for k in range(1, DAY_STEPS):
        d = pv[k] - pv[k - 1]
        if abs(d) > 0.6:
            pv[k] = pv[k - 1] + np.sign(d) * 0.6
    return pv


def generate_synthetic_profiles(day_type: str, seed: int, n_pv: int = 5, days: int = 1,
                                resolution: float = 60.0,
                                start: datetime | None = None) -> dict[str, TimeSeriesProfile]:
    """Synthetic ``load`` and ``pv1..pvN`` profiles for a sunny or cloudy day.

    Sunny PV is a smooth bell with sub-percent noise. Cloudy PV multiplies the
    bell by a transmittance that drops abruptly during cloud passages shared
    by all sites (with per-site lags), so one-minute ramps reach tens of
    percent of rating but never exceed 60 %.
    """
    if day_type not in DAY_TYPES:
        raise ProfileError(f"day type must be one of {DAY_TYPES}, got {day_type!r}")
    if resolution != 60.0:
        raise ProfileError("synthetic profiles are generated at 60 s resolution")
    rng = np.random.default_rng(seed)
    start = start or datetime(2023, 7, 15)
    loads, pvs = [], [[] for _ in range(n_pv)]
    for _ in range(days):
        minutes = np.arange(DAY_STEPS, dtype=float)
        loads.append(_residential_load(minutes, rng))
        clear = _clear_sky(minutes)
        if day_type == "sunny":
            for i in range(n_pv):
                noise = 1.0 + rng.normal(0.0, 0.002, size=DAY_STEPS)
                pvs[i].append(np.clip(clear * noise, 0.0, 1.0))
            continue
        events = _cloud_events(rng, DAY_STEPS)
        for i in range(n_pv):
            lag = int(rng.integers(0, 6))
            hits = [rng.random() >= 0.2 for _ in events]  # a miss: this passage skips the site
            noise = 1.0 + rng.normal(0.0, 0.004, size=DAY_STEPS)
            pv = _cloudy_site(clear, events, hits, lag, noise)
            if count_ramps(pv, 0.2) < MIN_CLOUDY_RAMPS:
                pv = _cloudy_site(clear, events, [True] * len(events), lag, noise)
            pvs[i].append(pv)
    out = {"load": TimeSeriesProfile("load", resolution, np.round(np.concatenate(loads), 6), start)}
    for i in range(n_pv):
        pid = f"pv{i + 1}"
        out[pid] = TimeSeriesProfile(pid, resolution, np.round(np.concatenate(pvs[i]), 6), start)
    return out


def max_ramp(values: np.ndarray) -> float:
    return float(np.max(np.abs(np.diff(values)))) if len(values) > 1 else 0.0


def count_ramps(values: np.ndarray, threshold: float) -> int:
    return int(np.sum(np.abs(np.diff(values)) > threshold))
