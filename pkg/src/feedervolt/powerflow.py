"""Unbalanced three-phase power flow on radial feeders.

The sweep is written in matrix form. ``A`` sums node injection currents into
branch currents (backward sweep) and ``B`` accumulates the per-branch
voltage drops, with full phase coupling, along each node's path to the
source (forward sweep). Regulators are ideal per-phase ratios; quantities
inside each voltage zone are referred to the source side, so the
tap-dependent network operator is a rescaled sum of fixed per-zone blocks::

    V' = V_src - sum_z  diag(1/R_z) (B_z A) diag(1/R_z) I'

where ``R_z`` is the cumulative regulator ratio of zone ``z``.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConvergenceError, ControlOscillationError, ValidationError
from .model import PHASES, FeederModel

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50
DEFAULT_CONTROL_ROUNDS = 20

_ANGLE = {p: np.exp(-2j * math.pi / 3 * i) for i, p in enumerate(PHASES)}


@dataclass
class OperatingPoint:
    """Solver inputs for one instant.

    Profile multipliers are looked up by profile id; ids that are absent use
    ``load_default`` / ``pv_default``. ``dvc_q`` is kVAR per phase,
    positive for injection.
    """

    load_multiplier_per_profile: Mapping[str, float] = field(default_factory=dict)
    pv_multiplier_per_profile: Mapping[str, float] = field(default_factory=dict)
    tap_positions: Mapping[str, int] = field(default_factory=dict)
    dvc_q: Mapping[str, float] = field(default_factory=dict)
    source_pu: float = 1.0
    load_default: float = 1.0
    pv_default: float = 0.0

    def replace(self, **kw) -> "OperatingPoint":
        d = dict(
            load_multiplier_per_profile=self.load_multiplier_per_profile,
            pv_multiplier_per_profile=self.pv_multiplier_per_profile,
            tap_positions=self.tap_positions,
            dvc_q=self.dvc_q,
            source_pu=self.source_pu,
            load_default=self.load_default,
            pv_default=self.pv_default,
        )
        d.update(kw)
        return OperatingPoint(**d)


@dataclass(eq=False)
class VoltageSnapshot:
    """Complex node voltages in per unit of each bus's line-to-neutral base."""

    labels: tuple[tuple[str, str], ...]
    index: dict[tuple[str, str], int]
    v: np.ndarray
    t: int | None = None
    iterations: int = 0

    @property
    def vmag(self) -> np.ndarray:
        return np.abs(self.v)

    def __getitem__(self, key: tuple[str, str]) -> complex:
        return complex(self.v[self.index[key]])

    def magnitude(self, bus: str, phase: str) -> float:
        return float(abs(self.v[self.index[(bus, phase)]]))

    def magnitudes(self, keys) -> np.ndarray:
        return np.abs(self.v[[self.index[k] for k in keys]])

    def as_dict(self) -> dict[tuple[str, str], complex]:
        return {lab: complex(x) for lab, x in zip(self.labels, self.v)}


class Network:
    """Tap-independent matrices and device arrays compiled from a model."""

    def __init__(self, model: FeederModel, cache_size: int = 512):
        topo = model.topology
        self.labels = tuple(model.node_phases())
        self.index = {lab: i for i, lab in enumerate(self.labels)}
        src_phases = model.buses[model.source].phases
        self.n_src = len(src_phases)
        n = len(self.labels)
        k = n - self.n_src
        self.n = n
        self.k = k
        self.phase_idx = np.array([PHASES.index(p) for _, p in self.labels])
        self.angle = np.array([_ANGLE[p] for _, p in self.labels])
        zone = np.array([model.buses[b].zone_id for b, _ in self.labels])
        self.node_zone = zone
        n_zones = int(zone.max()) + 1
        self.n_zones = n_zones

        # base quantities per node-phase
        s_phase = model.base_kva / 3.0  # kVA per phase
        self.s_base_phase = s_phase
        kv_ln = np.array([model.buses[b].kv_ln for b, _ in self.labels])
        self.z_base = (kv_ln * 1e3) ** 2 / (s_phase * 1e3)

        # zone tree and the regulators opening each zone
        self.zone_parent = np.zeros(n_zones, dtype=int)
        self.zone_regs: list[list[tuple[int, int]]] = [[] for _ in range(n_zones)]
        reg_pos = {r.id: i for i, r in enumerate(model.regulators)}
        self.reg_ids = [r.id for r in model.regulators]
        for b in topo.order[1:]:
            br = topo.parent_branch[b]
            if br.is_regulator:
                z = model.buses[b].zone_id
                self.zone_parent[z] = model.buses[br.parent].zone_id
                for reg in br.regulators:
                    for p in reg.phases:
                        self.zone_regs[z].append((reg_pos[reg.id], PHASES.index(p)))
        self.reg_step = np.array([r.step for r in model.regulators], dtype=float)
        self.reg_ctrl_node = np.array(
            [self.index[(r.to_bus, r.control_phase)] for r in model.regulators], dtype=int)

        # backward-sweep summation matrix A (branch-phase <- node injections)
        # and per-zone forward drop matrices; non-source block only
        off = self.n_src
        A = np.zeros((k, k))
        for b in topo.order[1:]:
            sub = topo.subtree(b)
            for p in model.buses[b].phases:
                row = self.index[(b, p)] - off
                for e in sub:
                    key = (e, p)
                    if key in self.index:
                        A[row, self.index[key] - off] = 1.0
        self.A = A
        B = [np.zeros((k, k), dtype=complex) for _ in range(n_zones)]
        used = np.zeros(n_zones, dtype=bool)
        for b in topo.order[1:]:
            path = topo.path_to_source(b)[:-1]  # excludes source
            for p in model.buses[b].phases:
                row = self.index[(b, p)] - off
                for c in path:
                    br = topo.parent_branch[c]
                    if br.line is None:
                        continue
                    zc = model.buses[c].zone_id
                    used[zc] = True
                    zpu = br.line.z_matrix / self.z_base[self.index[(c, br.phases[0])]]
                    j = br.phases.index(p)
                    for kk, q in enumerate(br.phases):
                        B[zc][row, self.index[(c, q)] - off] = zpu[j, kk]
        self.zone_blocks = [(z, B[z] @ A) for z in range(n_zones) if used[z]]
        self._op_cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

        # devices
        idx = self.index
        self.load_profiles = sorted({ld.profile for ld in model.loads})
        pidx = {p: i for i, p in enumerate(self.load_profiles)}
        self.ld_node = np.array([idx[(ld.bus, ld.phase)] for ld in model.loads], dtype=int)
        self.ld_prof = np.array([pidx[ld.profile] for ld in model.loads], dtype=int)
        self.ld_p = np.array([ld.p_nominal for ld in model.loads]) / s_phase
        self.ld_q = np.array([ld.q_nominal for ld in model.loads]) / s_phase
        zipv = np.array([ld.zipv for ld in model.loads]).reshape(-1, 7)
        self.ld_zipv = zipv
        pv_rows = [(idx[(pv.bus, p)], pv.profile_id, pv.rated_kw / len(pv.phases) / s_phase)
                   for pv in model.pvs for p in pv.phases]
        self.pv_profiles = sorted({r[1] for r in pv_rows})
        pvidx = {p: i for i, p in enumerate(self.pv_profiles)}
        self.pv_node = np.array([r[0] for r in pv_rows], dtype=int)
        self.pv_prof = np.array([pvidx[r[1]] for r in pv_rows], dtype=int)
        self.pv_p = np.array([r[2] for r in pv_rows], dtype=float)
        cap_rows = [(idx[(c.bus, p)], c.kvar / len(c.phases) / s_phase) for c in model.caps for p in c.phases]
        self.cap_node = np.array([r[0] for r in cap_rows], dtype=int)
        self.cap_q = np.array([r[1] for r in cap_rows], dtype=float)
        self.dev_node = np.concatenate((self.ld_node, self.pv_node, self.cap_node)).astype(int)
        # conjugated power coefficients per device at unit multiplier
        zc = zipv[:, :3] * self.ld_p[:, None] - 1j * zipv[:, 3:6] * self.ld_q[:, None]
        n_pv, n_cap = len(self.pv_node), len(self.cap_node)
        self.dev_coef = (
            np.concatenate((zc[:, 0], np.zeros(n_pv), 1j * self.cap_q)),
            np.concatenate((zc[:, 1], np.zeros(n_pv), np.zeros(n_cap))),
            np.concatenate((zc[:, 2], -self.pv_p.astype(complex), np.zeros(n_cap))),
        )
        self.dev_vcut = np.concatenate((zipv[:, 6], np.zeros(n_pv + n_cap)))

    # -- tap-dependent operator ------------------------------------------------
    def zone_ratios(self, taps: np.ndarray) -> np.ndarray:
        R = np.ones((self.n_zones, 3))
        for z in range(1, self.n_zones):
            R[z] = R[self.zone_parent[z]]
            for ri, ph in self.zone_regs[z]:
                R[z, ph] = R[self.zone_parent[z], ph] * (1.0 + self.reg_step[ri] * taps[ri])
        return R

    def operator(self, taps: np.ndarray):
        key = taps.tobytes()
        hit = self._op_cache.get(key)
        if hit is not None:
            self._op_cache.move_to_end(key)
            return hit
        R = self.zone_ratios(taps)
        ph = self.phase_idx[self.n_src:]
        r_node = R[self.node_zone[self.n_src:], ph]
        M = np.zeros((self.k, self.k), dtype=complex)
        for z, blk in self.zone_blocks:
            inv = 1.0 / R[z, ph]
            M += blk * np.outer(inv, inv)
        hit = (M, r_node)
        self._op_cache[key] = hit
        if len(self._op_cache) > self._cache_size:
            self._op_cache.popitem(last=False)
        return hit

    # -- device currents ---------------------------------------------------------
    def shunts(self, op: OperatingPoint, dvc_node=None, dvc_q=None) -> "Shunts":
        """Per-device current coefficients for one operating point."""
        lm = np.array([float(op.load_multiplier_per_profile.get(p, op.load_default))
                       for p in self.load_profiles])
        pm = np.array([float(op.pv_multiplier_per_profile.get(p, op.pv_default))
                       for p in self.pv_profiles])
        scale = np.concatenate((lm[self.ld_prof] if len(self.ld_prof) else np.zeros(0),
                                pm[self.pv_prof] if len(self.pv_prof) else np.zeros(0),
                                np.ones(len(self.cap_node))))
        cz, ci, cp = (c * scale for c in self.dev_coef)
        node, vcut = self.dev_node, self.dev_vcut
        if dvc_node is not None and len(dvc_node):
            # constant-Q injection; same fixpoint as a re-linearized Q/|V|^2 susceptance
            node = np.concatenate((node, dvc_node))
            vcut = np.concatenate((vcut, np.zeros(len(dvc_node))))
            cz = np.concatenate((cz, np.zeros(len(dvc_node))))
            ci = np.concatenate((ci, np.zeros(len(dvc_node))))
            cp = np.concatenate((cp, 1j * np.asarray(dvc_q)))
        return Shunts(node, cz, ci, cp, vcut, self.n)


@dataclass(eq=False)
class Shunts:
    """Shunt devices as ``I = (c_z + c_i/|V|' + c_p/|V|'^2) V`` in load convention.

    ``|V|'`` is ``max(|V|, vcut)``, so ZIP loads turn into constant impedance
    below their cutoff. PV is a negative constant-power term, capacitors a
    constant susceptance and the DVC a constant reactive injection.
    """

    node: np.ndarray
    cz: np.ndarray
    ci: np.ndarray
    cp: np.ndarray
    vcut: np.ndarray
    n: int

    def currents(self, v: np.ndarray) -> np.ndarray:
        vd = v[self.node]
        ve = np.maximum(np.abs(vd), self.vcut)
        cur = (self.cz + (self.ci + self.cp / ve) / ve) * vd
        return np.bincount(self.node, cur.real, self.n) + 1j * np.bincount(self.node, cur.imag, self.n)


def network(model: FeederModel) -> Network:
    net = model._cache.get("network")
    if net is None:
        net = Network(model)
        model._cache["network"] = net
    return net


def tap_vector(model: FeederModel, taps: Mapping[str, int]) -> np.ndarray:
    unknown = set(taps) - set(model.regulator_ids)
    if unknown:
        raise ValidationError(f"unknown regulator ids {sorted(unknown)}")
    vec = np.array([int(taps.get(r.id, 0)) for r in model.regulators], dtype=np.int64)
    for r, t in zip(model.regulators, vec):
        if not r.tap_min <= t <= r.tap_max:
            raise ValidationError(f"tap {t} of {r.id} outside [{r.tap_min}, {r.tap_max}]")
    return vec


def _dvc_arrays(model: FeederModel, net: Network, op: OperatingPoint):
    if not op.dvc_q:
        return None, None
    if model.dvc is None:
        raise ValidationError("operating point sets DVC output but the model has no DVC")
    lim = model.dvc_phase_limit
    phases = model.buses[model.dvc.bus].phases
    nodes, q = [], []
    for ph, val in op.dvc_q.items():
        if ph not in phases:
            raise ValidationError(f"DVC phase {ph} not present at bus {model.dvc.bus}")
        if abs(val) > lim * (1 + 1e-9):
            raise ValidationError(f"DVC output {val} kVAR on phase {ph} exceeds limit {lim}")
        nodes.append(net.index[(model.dvc.bus, ph)])
        q.append(val / net.s_base_phase)
    return np.array(nodes, dtype=int), np.array(q)


def solve(model: FeederModel, op: OperatingPoint, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER, v0: np.ndarray | None = None,
          t: int | None = None) -> VoltageSnapshot:
    """Backward/forward sweep for one operating point.

    Device currents are re-evaluated from the latest voltages each sweep; the
    DVC holds its reactive output constant. Stops when the largest per-phase
    voltage change between sweeps falls below ``tol``.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    ctx = _Context(model, op)
    v, it = ctx.sweep(tap_vector(model, op.tap_positions), tol, max_iter, v0)
    return VoltageSnapshot(ctx.net.labels, ctx.net.index, v, t=t, iterations=it)


class _Context:
    """Tap-independent per-instant inputs, shared across control rounds."""

    def __init__(self, model: FeederModel, op: OperatingPoint):
        net = network(model)
        self.net = net
        self.shunts = net.shunts(op, *_dvc_arrays(model, net, op))
        self.vs = op.source_pu * net.angle

    def sweep(self, taps: np.ndarray, tol: float, max_iter: int, v0=None):
        net = self.net
        M, r_node = net.operator(taps)
        shunts = self.shunts
        ns = net.n_src
        vs = self.vs
        v = np.empty(net.n, dtype=complex)
        if v0 is not None and len(v0) == net.n:
            v[:] = v0
        else:
            v[ns:] = r_node * vs[ns:]
        v[:ns] = vs[:ns]
        v_src_ref = vs[ns:]
        worst = math.inf
        for it in range(1, max_iter + 1):
            i_draw = shunts.currents(v)
            v_new = r_node * (v_src_ref - M @ (r_node * i_draw[ns:]))
            worst = float(np.max(np.abs(v_new - v[ns:]))) if net.k else 0.0
            v[ns:] = v_new
            if not math.isfinite(worst):
                break
            if worst < tol:
                return v, it
        raise ConvergenceError(
            f"power flow did not converge in {max_iter} iterations (worst change {worst:.3g} pu)",
            worst_residual=worst)


def current_mismatch(model: FeederModel, op: OperatingPoint, snap: VoltageSnapshot) -> float:
    """Largest per-node KCL mismatch (pu current) implied by ``snap``.

    Branch currents are recomputed from the voltage drops across each segment
    (``Z^-1 dV``), independently of the sweep's summation matrix.
    """
    net = network(model)
    topo = model.topology
    taps = tap_vector(model, op.tap_positions)
    v = snap.v
    draw = net.shunts(op, *_dvc_arrays(model, net, op)).currents(v)
    idx = net.index
    reg_pos = {r.id: i for i, r in enumerate(model.regulators)}

    into: dict[str, np.ndarray] = {}  # current entering each bus from its parent branch
    for b in topo.order[1:]:
        br = topo.parent_branch[b]
        if br.line is not None:
            zpu = br.line.z_matrix / net.z_base[idx[(b, br.phases[0])]]
            vp = np.array([v[idx[(br.parent, p)]] for p in br.phases])
            vc = np.array([v[idx[(b, p)]] for p in br.phases])
            into[b] = np.linalg.solve(zpu, vp - vc)

    worst = 0.0
    # regulator branches carry whatever leaves their output bus, scaled by the ratio
    for b in reversed(topo.order):
        phases = model.buses[b].phases
        out = np.array([draw[idx[(b, p)]] for p in phases])
        for c in topo.children[b]:
            cbr = topo.parent_branch[c]
            cur = into[c]
            for kk, p in enumerate(cbr.phases):
                out[phases.index(p)] += cur[kk]
        br = topo.parent_branch.get(b)
        if br is None:
            continue
        if br.is_regulator:
            scaled = out.copy()
            for reg in br.regulators:
                a = reg.ratio(int(taps[reg_pos[reg.id]]))
                for p in reg.phases:
                    scaled[phases.index(p)] *= a
            into[b] = scaled
        else:
            worst = max(worst, float(np.max(np.abs(into[b] - out))))
    return worst


def regulator_moves(model: FeederModel, snap: VoltageSnapshot, taps: np.ndarray) -> np.ndarray:
    """One control round: +1/-1/0 per regulator.

    A regulator outside its band steps toward it unless an upstream
    regulator is also moving this round (upstream settles first).
    """
    net = network(model)
    return _moves(model, snap.v[net.reg_ctrl_node], np.asarray(taps))


def _moves(model: FeederModel, v_ctrl: np.ndarray, taps: np.ndarray) -> np.ndarray:
    lo, hi, tmin, tmax = _reg_limits(model)
    vm = np.abs(v_ctrl)
    want = np.where((vm < lo) & (taps < tmax), 1, 0) - np.where((vm > hi) & (taps > tmin), 1, 0)
    if not want.any():
        return want
    moves = want.copy()
    for i, up in enumerate(_upstream_regs(model)):
        if want[i] and any(want[j] for j in up):
            moves[i] = 0
    return moves


def _reg_limits(model: FeederModel):
    hit = model._cache.get("reg_limits")
    if hit is None:
        regs = model.regulators
        hit = (np.array([r.setpoint_pu - r.band_pu / 2 for r in regs]),
               np.array([r.setpoint_pu + r.band_pu / 2 for r in regs]),
               np.array([r.tap_min for r in regs]), np.array([r.tap_max for r in regs]))
        model._cache["reg_limits"] = hit
    return hit


def _upstream_regs(model: FeederModel) -> list[list[int]]:
    up = model._cache.get("upstream_regs")
    if up is None:
        topo = model.topology
        pos = {}
        for i, r in enumerate(model.regulators):
            pos.setdefault(r.to_bus, []).append(i)
        up = []
        for r in model.regulators:
            path = topo.path_to_source(r.from_bus)
            up.append([j for b in path for j in pos.get(b, [])])
        model._cache["upstream_regs"] = up
    return up


def solve_with_controls(model: FeederModel, op_base: OperatingPoint, tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER,
                        control_max_rounds: int = DEFAULT_CONTROL_ROUNDS,
                        v0: np.ndarray | None = None, t: int | None = None):
    """Solve, step regulators one tap toward their bands, repeat until settled.

    Returns ``(snapshot, taps)`` with ``taps`` a dict of settled positions.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    taps = tap_vector(model, op_base.tap_positions)
    ids = model.regulator_ids
    ctx = _Context(model, op_base)
    net = ctx.net
    v = v0
    for rnd in range(control_max_rounds + 1):
        v, it = ctx.sweep(taps, tol, max_iter, v)
        moves = _moves(model, v[net.reg_ctrl_node], taps) if len(taps) else taps
        if not moves.any():
            snap = VoltageSnapshot(net.labels, net.index, v, t=t, iterations=it)
            return snap, dict(zip(ids, taps.tolist()))
        if rnd == control_max_rounds:
            break
        taps = taps + moves
    moving = [ids[i] for i in np.flatnonzero(moves)]
    raise ControlOscillationError(moving, control_max_rounds)
