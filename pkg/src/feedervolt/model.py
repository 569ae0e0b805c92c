"""Feeder network data model and the ``.fdr`` feeder description reader.

A feeder file is line oriented, one keyword-prefixed record per line::

    bus  <id> <phases> <kv_ll>
    line <from> <to> <phases> <length_km> <z entries, row-major, ohm/km>
    load <bus> <phase> <kw> <kvar> <zp ip pp zq iq pq vcut> [profile]
    pv   <bus> <phases> <kw> <profile>
    reg  <from> <to> <phases> <band_pu> <setpoint_pu>
    cap  <bus> <phases> <kvar>
    dvc  <bus> <kvar_limit>

``#`` starts a comment. Impedance entries are written ``r+jx`` (``r-jx``,
``r+xj`` and plain reals are accepted too).
"""

from __future__ import annotations

import dataclasses
import math
import re
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DanglingReferenceError,
    FeederFormatError,
    TopologyError,
    ValidationError,
)

PHASES = "ABC"

# regulator hardware: 32 steps of 0.00625 pu around neutral
TAP_STEP = 0.00625
TAP_MIN = -16
TAP_MAX = 16

DEFAULT_LOAD_PROFILE = "load"


def normalize_phases(token: str) -> str:
    ph = token.strip().upper()
    if not ph or any(c not in PHASES for c in ph) or len(set(ph)) != len(ph):
        raise ValueError(f"bad phase spec {token!r}")
    return "".join(c for c in PHASES if c in ph)


_CPLX_J_FIRST = re.compile(r"^([+-]?[0-9.]+(?:[eE][+-]?\d+)?)([+-])j([0-9.]+(?:[eE][+-]?\d+)?)$")


def parse_complex(token: str) -> complex:
    """Parse ``r+jx`` / ``r-jx`` / ``r+xj`` / ``r``."""
    t = token.strip()
    m = _CPLX_J_FIRST.match(t)
    if m:
        re_part = float(m.group(1))
        im_part = float(m.group(3))
        return complex(re_part, im_part if m.group(2) == "+" else -im_part)
    return complex(t)


@dataclass(frozen=True)
class Bus:
    id: str
    phases: str
    kv_ll: float
    zone_id: int | None = None

    @property
    def kv_ln(self) -> float:
        return self.kv_ll / math.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class LineSegment:
    from_bus: str
    to_bus: str
    phases: str
    z_matrix: np.ndarray  # total ohms, |phases| x |phases|
    length: float  # km


@dataclass(frozen=True)
class ZipLoad:
    bus: str
    phase: str
    p_nominal: float  # kW
    q_nominal: float  # kVAR
    zipv: tuple[float, ...]
    profile: str = DEFAULT_LOAD_PROFILE


@dataclass(frozen=True)
class PvSystem:
    bus: str
    phases: str
    rated_kw: float
    profile_id: str


@dataclass(frozen=True)
class Regulator:
    """Ideal step-voltage regulator between ``from_bus`` and ``to_bus``.

    A multi-phase record is a ganged unit (one tap for all phases, sensing
    its first phase); single-phase records are independent units.
    """

    id: str
    from_bus: str
    to_bus: str
    phases: str
    band_pu: float
    setpoint_pu: float
    step: float = TAP_STEP
    tap_min: int = TAP_MIN
    tap_max: int = TAP_MAX

    @property
    def control_phase(self) -> str:
        return self.phases[0]

    def ratio(self, tap: int) -> float:
        return 1.0 + self.step * tap


@dataclass(frozen=True)
class Capacitor:
    bus: str
    phases: str
    kvar: float  # total, split equally over phases


@dataclass(frozen=True)
class DvcSite:
    bus: str
    kvar_limit: float  # total rating, split equally over the bus phases


@dataclass
class FeederModel:
    buses: dict[str, Bus]
    lines: tuple[LineSegment, ...]
    regulators: tuple[Regulator, ...] = ()
    loads: tuple[ZipLoad, ...] = ()
    pvs: tuple[PvSystem, ...] = ()
    caps: tuple[Capacitor, ...] = ()
    dvc: DvcSite | None = None
    source: str = ""
    base_kva: float = 1000.0  # three-phase system base
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    # -- topology -----------------------------------------------------------
    @property
    def topology(self) -> "Topology":
        topo = self._cache.get("topology")
        if topo is None:
            topo = build_topology(self)
            self._cache["topology"] = topo
        return topo

    @property
    def regulator_ids(self) -> list[str]:
        return [r.id for r in self.regulators]

    def regulator(self, reg_id: str) -> Regulator:
        for r in self.regulators:
            if r.id == reg_id:
                return r
        raise KeyError(reg_id)

    def node_phases(self) -> list[tuple[str, str]]:
        """All energized (bus, phase) pairs, source first, in BFS order."""
        return [(b, p) for b in self.topology.order for p in self.buses[b].phases]

    def regulator_buses(self) -> set[str]:
        return {r.to_bus for r in self.regulators}

    def monitored_node_phases(self) -> list[tuple[str, str]]:
        """Node-phases scored by the objective and metrics.

        Excludes the source bus and regulator output buses; their voltages are
        set by the regulating device rather than by the feeder.
        """
        skip = self.regulator_buses() | {self.source}
        return [(b, p) for b, p in self.node_phases() if b not in skip]

    @property
    def dvc_phase_limit(self) -> float:
        if self.dvc is None:
            return 0.0
        return self.dvc.kvar_limit / len(self.buses[self.dvc.bus].phases)

    def with_dvc(self, bus: str | None, kvar_limit: float | None = None) -> "FeederModel":
        """Copy of the model with the DVC moved to ``bus`` (``None`` removes it).

        The compiled network is shared because the DVC is not part of it.
        """
        if bus is None:
            new_dvc = None
        else:
            if bus not in self.buses:
                raise DanglingReferenceError(bus, "dvc placement")
            if kvar_limit is None:
                kvar_limit = self.dvc.kvar_limit if self.dvc is not None else 1000.0
            new_dvc = DvcSite(bus, float(kvar_limit))
        new = dataclasses.replace(self, dvc=new_dvc, _cache={})
        for key in ("topology", "network", "upstream_regs", "reg_limits"):
            if key in self._cache:
                new._cache[key] = self._cache[key]
        return new

    def zones(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for b in self.topology.order:
            out.setdefault(self.buses[b].zone_id, []).append(b)
        return out


@dataclass(frozen=True)
class Branch:
    """Series element feeding ``child`` from ``parent``."""

    parent: str
    child: str
    phases: str
    line: LineSegment | None = None
    regulators: tuple[Regulator, ...] = ()

    @property
    def is_regulator(self) -> bool:
        return self.line is None


@dataclass(frozen=True)
class Topology:
    order: tuple[str, ...]  # BFS order, source first
    parent_branch: dict[str, Branch]
    children: dict[str, tuple[str, ...]]

    def path_to_source(self, bus: str) -> list[str]:
        path = [bus]
        while bus in self.parent_branch:
            bus = self.parent_branch[bus].parent
            path.append(bus)
        return path

    def subtree(self, bus: str) -> list[str]:
        out = []
        stack = [bus]
        while stack:
            b = stack.pop()
            out.append(b)
            stack.extend(self.children.get(b, ()))
        return out


def build_topology(model: FeederModel) -> Topology:
    adjacency: dict[str, list[tuple[str, object]]] = {b: [] for b in model.buses}
    series: dict[tuple[str, str], list[Regulator]] = {}
    for reg in model.regulators:
        series.setdefault((reg.from_bus, reg.to_bus), []).append(reg)
    pairs = set()
    for ln in model.lines:
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in pairs or ln.from_bus == ln.to_bus:
            raise TopologyError(f"parallel or looped segment {ln.from_bus}-{ln.to_bus}")
        pairs.add(key)
        adjacency[ln.from_bus].append((ln.to_bus, ln))
        adjacency[ln.to_bus].append((ln.from_bus, ln))
    for (f, t), regs in series.items():
        key = frozenset((f, t))
        if key in pairs or f == t:
            raise TopologyError(f"regulator {f}-{t} parallels another branch")
        pairs.add(key)
        adjacency[f].append((t, tuple(regs)))
        adjacency[t].append((f, tuple(regs)))

    n_edges = len(pairs)
    if n_edges != len(model.buses) - 1:
        raise TopologyError(
            f"non-radial topology: {n_edges} branches for {len(model.buses)} buses"
        )
    src = model.source
    order = [src]
    seen = {src}
    parent_branch: dict[str, Branch] = {}
    children: dict[str, list[str]] = {b: [] for b in model.buses}
    queue = deque([src])
    while queue:
        b = queue.popleft()
        for nb, elem in adjacency[b]:
            if nb in seen:
                continue
            seen.add(nb)
            if isinstance(elem, LineSegment):
                br = Branch(b, nb, elem.phases, line=elem)
            else:
                regs = elem
                if regs[0].from_bus != b:
                    raise TopologyError(
                        f"regulator {regs[0].id} is oriented against the power flow "
                        f"(from {regs[0].from_bus} but fed from {b})"
                    )
                phases = normalize_phases("".join(r.phases for r in regs))
                br = Branch(b, nb, phases, regulators=regs)
            parent_branch[nb] = br
            children[b].append(nb)
            order.append(nb)
            queue.append(nb)
    if len(seen) != len(model.buses):
        missing = sorted(set(model.buses) - seen)
        raise TopologyError(f"non-radial topology: buses not connected to source: {missing[:5]}")
    return Topology(tuple(order), parent_branch, {k: tuple(v) for k, v in children.items()})


# -- reading ----------------------------------------------------------------

def _floats(tokens, lineno, path, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise FeederFormatError(f"non-numeric {what}: {' '.join(tokens)}", lineno, path) from None


def parse_feeder(text: str, path: str | None = None, name: str = "") -> FeederModel:
    buses: dict[str, Bus] = {}
    lines: list[LineSegment] = []
    regs: list[Regulator] = []
    loads: list[ZipLoad] = []
    pvs: list[PvSystem] = []
    caps: list[Capacitor] = []
    dvc = None
    refs: list[tuple[str, int, str]] = []  # (bus, lineno, context)

    def phases_of(tok, lineno):
        try:
            return normalize_phases(tok)
        except ValueError as exc:
            raise FeederFormatError(str(exc), lineno, path) from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kw = tok[0].lower()
        args = tok[1:]
        if kw == "bus":
            if len(args) != 3:
                raise FeederFormatError("bus expects: <id> <phases> <kv_ll>", lineno, path)
            bid = args[0]
            if bid in buses:
                raise FeederFormatError(f"duplicate bus {bid!r}", lineno, path)
            (kv,) = _floats(args[2:3], lineno, path, "kv")
            if kv <= 0:
                raise FeederFormatError(f"bus {bid}: kv_ll must be positive", lineno, path)
            buses[bid] = Bus(bid, phases_of(args[1], lineno), kv)
        elif kw == "line":
            if len(args) < 5:
                raise FeederFormatError(
                    "line expects: <from> <to> <phases> <length_km> <z entries>", lineno, path)
            f, t = args[0], args[1]
            ph = phases_of(args[2], lineno)
            (length,) = _floats(args[3:4], lineno, path, "length")
            n = len(ph)
            ztoks = args[4:]
            if len(ztoks) != n * n:
                raise FeederFormatError(
                    f"line {f}-{t}: expected {n * n} impedance entries, got {len(ztoks)}",
                    lineno, path)
            try:
                z = np.array([parse_complex(z) for z in ztoks], dtype=complex).reshape(n, n)
            except ValueError:
                raise FeederFormatError(f"line {f}-{t}: bad impedance entry", lineno, path) from None
            if length <= 0:
                raise FeederFormatError(f"line {f}-{t}: length must be positive", lineno, path)
            if np.any(z.diagonal().real <= 0):
                raise FeederFormatError(
                    f"line {f}-{t}: diagonal resistance must be positive", lineno, path)
            lines.append(LineSegment(f, t, ph, z * length, length))
            refs += [(f, lineno, f"line {f}-{t}"), (t, lineno, f"line {f}-{t}")]
        elif kw == "load":
            if len(args) not in (11, 12):
                raise FeederFormatError(
                    "load expects: <bus> <phase> <kw> <kvar> <7 zipv> [profile]", lineno, path)
            ph = phases_of(args[1], lineno)
            if len(ph) != 1:
                raise FeederFormatError("load phase must be a single phase", lineno, path)
            vals = _floats(args[2:11], lineno, path, "load value")
            profile = args[11] if len(args) == 12 else DEFAULT_LOAD_PROFILE
            loads.append(ZipLoad(args[0], ph, vals[0], vals[1], tuple(vals[2:9]), profile))
            refs.append((args[0], lineno, "load"))
        elif kw == "pv":
            if len(args) != 4:
                raise FeederFormatError("pv expects: <bus> <phases> <kw> <profile>", lineno, path)
            (kw_rated,) = _floats(args[2:3], lineno, path, "kw")
            if kw_rated <= 0:
                raise FeederFormatError("pv rating must be positive", lineno, path)
            pvs.append(PvSystem(args[0], phases_of(args[1], lineno), kw_rated, args[3]))
            refs.append((args[0], lineno, "pv"))
        elif kw == "reg":
            if len(args) != 5:
                raise FeederFormatError(
                    "reg expects: <from> <to> <phases> <band_pu> <setpoint_pu>", lineno, path)
            f, t = args[0], args[1]
            ph = phases_of(args[2], lineno)
            band, setpt = _floats(args[3:5], lineno, path, "regulator setting")
            if band <= 0 or setpt <= 0:
                raise FeederFormatError("regulator band and setpoint must be positive", lineno, path)
            regs.append(Regulator(f"{f}R.{ph}", f, t, ph, band, setpt))
            refs += [(f, lineno, f"reg {f}-{t}"), (t, lineno, f"reg {f}-{t}")]
        elif kw == "cap":
            if len(args) != 3:
                raise FeederFormatError("cap expects: <bus> <phases> <kvar>", lineno, path)
            (kvar,) = _floats(args[2:3], lineno, path, "kvar")
            caps.append(Capacitor(args[0], phases_of(args[1], lineno), kvar))
            refs.append((args[0], lineno, "cap"))
        elif kw == "dvc":
            if len(args) != 2:
                raise FeederFormatError("dvc expects: <bus> <kvar_limit>", lineno, path)
            if dvc is not None:
                raise FeederFormatError("only one dvc record is supported", lineno, path)
            (lim,) = _floats(args[1:2], lineno, path, "kvar_limit")
            if lim <= 0:
                raise FeederFormatError("dvc kvar_limit must be positive", lineno, path)
            dvc = DvcSite(args[0], lim)
            refs.append((args[0], lineno, "dvc"))
        else:
            raise FeederFormatError(f"unknown record type {tok[0]!r}", lineno, path)

    if not buses:
        raise FeederFormatError("feeder file declares no buses", None, path)
    for bus_id, lineno, ctx in refs:
        if bus_id not in buses:
            raise DanglingReferenceError(bus_id, f"{ctx}, line {lineno}")

    targets = {ln.to_bus for ln in lines} | {r.to_bus for r in regs}
    roots = [b for b in buses if b not in targets]
    if len(roots) != 1:
        raise TopologyError(
            f"expected exactly one source bus (a bus never fed by a segment), found {roots[:5]}")
    model = FeederModel(
        buses=buses, lines=tuple(lines), regulators=tuple(regs), loads=tuple(loads),
        pvs=tuple(pvs), caps=tuple(caps), dvc=dvc, source=roots[0], name=name,
    )
    validate(model)
    return assign_zones(model)


def load_feeder(path) -> FeederModel:
    """Read and validate a ``.fdr`` feeder description file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read feeder file {p}: {exc}") from exc
    return parse_feeder(text, path=str(p), name=p.stem)


def validate(model: FeederModel) -> None:
    topo = model.topology  # raises on non-radial input
    ids = [r.id for r in model.regulators]
    if len(ids) != len(set(ids)):
        raise ValidationError(f"duplicate regulator definition among {ids}")
    for child, br in topo.parent_branch.items():
        pb, cb = model.buses[br.parent], model.buses[child]
        if set(br.phases) - set(pb.phases):
            raise ValidationError(f"branch {br.parent}-{child} phases {br.phases} not on bus {br.parent}")
        if cb.phases != br.phases:
            raise ValidationError(
                f"bus {child} phases {cb.phases} differ from its feeding branch phases {br.phases}")
        if not math.isclose(pb.kv_ll, cb.kv_ll, rel_tol=1e-9):
            raise ValidationError(
                f"branch {br.parent}-{child} joins buses of different voltage; transformers are not modelled")
    for reg in model.regulators:
        if len({r.id for r in model.regulators if r.from_bus == reg.from_bus and r.to_bus == reg.to_bus
                and set(r.phases) & set(reg.phases)}) > 1:
            raise ValidationError(f"overlapping regulator phases at {reg.from_bus}-{reg.to_bus}")
    for ld in model.loads:
        if ld.phase not in model.buses[ld.bus].phases:
            raise ValidationError(f"load at {ld.bus} on phase {ld.phase} not present on the bus")
        zp, ip, pp, zq, iq, pq, vcut = ld.zipv
        if abs(zp + ip + pp - 1.0) > 1e-9 or abs(zq + iq + pq - 1.0) > 1e-9:
            raise ValidationError(f"load at {ld.bus}: ZIP coefficients must sum to 1")
        if not 0.0 < vcut < 1.0:
            raise ValidationError(f"load at {ld.bus}: v_cutoff must lie in (0, 1)")
    for dev in list(model.pvs) + list(model.caps):
        if set(dev.phases) - set(model.buses[dev.bus].phases):
            raise ValidationError(f"{type(dev).__name__} at {dev.bus} uses phases missing on the bus")


def assign_zones(model: FeederModel) -> FeederModel:
    """Label each bus with the voltage zone of its nearest upstream regulator.

    The source zone is 0; every series regulator opens a new zone, numbered
    in breadth-first order from the source.
    """
    topo = model.topology
    zone = {model.source: 0}
    next_zone = 1
    for b in topo.order[1:]:
        br = topo.parent_branch[b]
        if br.is_regulator:
            zone[b] = next_zone
            next_zone += 1
        else:
            zone[b] = zone[br.parent]
    buses = {bid: dataclasses.replace(bus, zone_id=zone[bid]) for bid, bus in model.buses.items()}
    new = dataclasses.replace(model, buses=buses, _cache={})
    if "topology" in model._cache:
        new._cache["topology"] = model._cache["topology"]
    return new
