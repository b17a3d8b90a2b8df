"""Backward microscopic flow through a quenched medium, event taxonomy, Monte Carlo.

The flow ``T^{-t}`` is computed by running the forward dynamics with the
velocity and the field both negated.  Times stored in an :class:`EventLog` are
physical (forward) times in ``[0, t]``: collision ``i`` has forward entry time
``t_in`` and forward exit time ``t_out``, and collisions are listed in the order
they are met going backward, so ``t_in`` decreases along the log.  Flag times
are measured as elapsed backward time ``s = t - (physical time)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .dynamics import (
    DynamicsError,
    FieldParams,
    Interaction,
    Obstacle,
    PhaseState,
    entry_times,
    free_arc,
    impact_parameter,
    integrate_in_potential,
    perp,
    reflect,
)
from .medium import MediumSample, ScalingRegime
from .potentials import PotentialSpec
from .scattering import ScatteringTable, build_table, wrap_angle

FLAG_NAMES = ("chi1_violated", "overlap", "circ", "arc", "recollision", "interference")


class FlowError(RuntimeError):
    """Integrator fault during a flow, with the offending obstacle and entry state."""

    def __init__(self, cause: Exception, ident: int, state: PhaseState):
        super().__init__(f"obstacle {ident}: {cause} (entry x={state.x.tolist()}, v={state.v.tolist()})")
        self.cause = cause
        self.ident = ident
        self.state = state


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class Collision:
    t_in: float
    t_out: float
    ident: int
    center: tuple
    rho: float  # forward impact parameter (macro units)
    theta: float  # forward scattering angle, clockwise, in (-pi, pi]
    phi: float  # Omega * (t_in - t_out of the next, earlier, collision); arc back to t = 0 for the last

    @property
    def duration(self) -> float:
        return self.t_out - self.t_in


@dataclass
class EventLog:
    t: float
    field: FieldParams
    radius: float
    collisions: List[Collision] = field(default_factory=list)
    flags: Dict[str, Optional[float]] = field(default_factory=lambda: {k: None for k in FLAG_NAMES})
    recollisions: List[tuple] = field(default_factory=list)
    interferences: List[tuple] = field(default_factory=list)
    overlaps: List[tuple] = field(default_factory=list)
    missed: List[tuple] = field(default_factory=list)

    def set_flag(self, name: str, s: float) -> None:
        cur = self.flags.get(name)
        if cur is None or s < cur:
            self.flags[name] = float(s)

    def flagged(self, name: str) -> bool:
        return self.flags.get(name) is not None

    @property
    def tau_max(self) -> float:
        return max((c.duration for c in self.collisions), default=0.0)

    def gaps(self) -> np.ndarray:
        """Free flight times between consecutive events, including both ends of [0, t]."""
        if not self.collisions:
            return np.array([self.t])
        ends = [self.t]
        for c in self.collisions:
            ends.extend([c.t_out, c.t_in])
        ends.append(0.0)
        e = np.array(ends)
        return e[0::2] - e[1::2]

    def gap_starts(self) -> np.ndarray:
        """Elapsed backward time at which each free gap begins."""
        out = [0.0]
        for c in self.collisions:
            out.append(self.t - c.t_in)
        return np.array(out)

    @property
    def ids(self) -> np.ndarray:
        return np.array([c.ident for c in self.collisions], dtype=np.int64)


@dataclass(frozen=True)
class FreeSegment:
    s0: float  # elapsed backward time at the start
    start: PhaseState  # run coordinates (velocity of the reversed run)
    duration: float

    def state_at(self, s: float, omega: float) -> PhaseState:
        x, v = free_arc(self.start.x, self.start.v, omega, s - self.s0)
        return PhaseState(x, v)


@dataclass(frozen=True)
class InteractionSegment:
    s0: float
    start: PhaseState
    end: PhaseState
    duration: float
    obstacle: Obstacle
    interaction: Optional[Interaction] = None


@dataclass
class Trajectory:
    """Piecewise description of one backward run, in run coordinates."""

    t: float
    field: FieldParams  # the field of the run (reversed for backward flows)
    backward: bool
    segments: list = field(default_factory=list)
    final_run_state: Optional[PhaseState] = None

    @property
    def final(self) -> PhaseState:
        """Physical phase point: T^{-t}(initial) for a backward run."""
        st = self.final_run_state
        return st.reversed() if self.backward else st.copy()

    def free_segments(self) -> List[FreeSegment]:
        return [s for s in self.segments if isinstance(s, FreeSegment)]

    def check_contiguity(self, tol: float = 1e-10) -> float:
        """Largest endpoint mismatch between consecutive segments."""
        worst = 0.0
        om = self.field.Omega
        for a, b in zip(self.segments[:-1], self.segments[1:]):
            if isinstance(a, FreeSegment):
                x, _ = free_arc(a.start.x, a.start.v, om, a.duration)
                t_end = a.s0 + a.duration
            else:
                x = a.end.x
                t_end = a.s0 + a.duration
            worst = max(worst, float(np.hypot(*(x - b.start.x))), abs(t_end - b.s0))
        return worst

    def state_at(self, s: float) -> PhaseState:
        """Run-coordinate state at elapsed time ``s``.

        Exact on free arcs; inside a support the dense output is used when kept,
        otherwise the entry and exit states are joined linearly (the passage
        lasts a time of the order of the obstacle size).
        """
        if s <= 0.0:
            seg = self.segments[0]
            return seg.start.copy()
        om = self.field.Omega
        for seg in self.segments:
            if s <= seg.s0 + seg.duration or seg is self.segments[-1]:
                ds = min(s - seg.s0, seg.duration)
                if isinstance(seg, FreeSegment):
                    return seg.state_at(seg.s0 + ds, om)
                it = seg.interaction
                if it is not None and it.solution is not None:
                    y = it.solution.sol(ds / it.micro_scale)
                    return PhaseState(it.center + it.micro_scale * y[:2], y[2:4])
                w = ds / seg.duration if seg.duration > 0 else 1.0
                v = (1 - w) * seg.start.v + w * seg.end.v
                return PhaseState((1 - w) * seg.start.x + w * seg.end.x, v / np.hypot(*v))
        return self.final_run_state.copy()

    def physical_at(self, s: float) -> PhaseState:
        st = self.state_at(s)
        return st.reversed() if self.backward else st

    def sample_path(self, ds: float) -> np.ndarray:
        """Positions along the path every ``ds`` (free arcs exact, interactions by their chord)."""
        pts = []
        om = self.field.Omega
        for seg in self.segments:
            if isinstance(seg, FreeSegment):
                n = max(2, int(math.ceil(seg.duration / ds)) + 1)
                x, _ = free_arc(seg.start.x, seg.start.v, om, np.linspace(0.0, seg.duration, n))
                pts.append(x)
            else:
                pts.append(np.vstack([seg.start.x, seg.end.x]))
        return np.vstack(pts) if pts else np.empty((0, 2))


# ---------------------------------------------------------------------------
# scattering tables used by the table-driven interaction

_TABLES: dict = {}


def scattering_table(pot: PotentialSpec, b: float) -> ScatteringTable:
    """Cached table for ``(pot, b)``; the opposite field is obtained by mirroring."""
    key = (pot, b)
    tab = _TABLES.get(key)
    if tab is None:
        mirror = _TABLES.get((pot, -b))
        tab = mirror.mirrored() if mirror is not None else build_table(pot, b)
        _TABLES[key] = tab
    return tab


def _table_interaction(state: PhaseState, c: np.ndarray, a: float, pot: PotentialSpec, table: ScatteringTable):
    """Exit state and macro duration from the tabulated sweep and time."""
    R = pot.support_radius
    scale = a / R
    d = state.x - c
    rho = float(d[0] * state.v[1] - d[1] * state.v[0]) / scale
    if abs(rho) >= R * (1.0 - 1e-12):
        return state.copy(), 0.0
    psi = math.atan2(d[1], d[0]) + float(table.sweep_at(rho))
    er = np.array([math.cos(psi), math.sin(psi)])
    q = rho / R
    v = math.sqrt(max(1.0 - q * q, 0.0)) * er + q * perp(er)
    return PhaseState(c + a * er, v), scale * float(table.tau_at(rho))


# ---------------------------------------------------------------------------
# the flow


class _Pool:
    """Obstacles of a disk around ``p0``, refreshed as the tracer moves."""

    def __init__(self, sample: MediumSample, field: FieldParams):
        self.sample = sample
        self.field = field
        a = sample.radius
        self.a = a
        cap = 0.99 * 64.0 * sample.cell_size
        dens = sample.mu_eps
        by_count = math.sqrt(2e4 / (math.pi * dens)) if dens > 0 else cap
        self.L = min(cap, max(by_count, 16.0 * a, 4.0 * sample.cell_size))
        self.p0 = None
        self.rp = 0.0
        self.c = np.empty((0, 2))
        self.ids = np.empty(0, dtype=np.int64)

    def _load(self, p0, rp):
        self.p0 = np.asarray(p0, dtype=float)
        self.rp = rp
        self.c, self.ids = self.sample.centers_near(self.p0, rp)

    def window(self, state: PhaseState, remaining: float):
        """(duration, centers, ids) of a window whose arc stays inside the pool."""
        fp = self.field
        a = self.a
        if fp.B != 0.0:
            xc = state.x + perp(state.v) / fp.Omega
            RL = fp.R_L
            fits = self.p0 is not None and float(np.hypot(*(xc - self.p0))) + RL + a <= self.rp
            if not fits and 1.2 * RL + a <= self.L:
                self._load(xc, 1.2 * RL + a)
                fits = True
            if fits:
                dur = min(remaining, fp.T_L)
                r = np.hypot(self.c[:, 0] - xc[0], self.c[:, 1] - xc[1])
                sel = np.abs(r - RL) < a * (1.0 + 1e-9) + 1e-15
                return dur, self.c[sel], self.ids[sel]
        room = -1.0 if self.p0 is None else self.rp - a - float(np.hypot(*(state.x - self.p0)))
        if room < 0.25 * (self.L - a):
            ahead = 0.5 * (self.L - a)
            self._load(state.x + ahead * state.v, self.L)
            room = self.rp - a - float(np.hypot(*(state.x - self.p0)))
        dur = min(remaining, room)
        d = np.hypot(self.c[:, 0] - state.x[0], self.c[:, 1] - state.x[1])
        sel = d < dur + a
        return dur, self.c[sel], self.ids[sel]


def flow(
    initial: PhaseState,
    t: float,
    sample: MediumSample,
    pot: PotentialSpec,
    field: FieldParams,
    method: str = "table",
    backward: bool = True,
    arc_window: Optional[float] = None,
    rescan: bool = True,
):
    """Run ``T^{-t}`` (or ``T^t`` with ``backward=False``); returns ``(Trajectory, EventLog)``.

    ``method="table"`` crosses smooth supports with the tabulated polar sweep and
    time (fast); ``method="ode"`` integrates every passage.  Hard disks reflect.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if method not in ("table", "ode"):
        raise ValueError(f"unknown method {method!r}")
    run_field = field.reversed() if backward else field
    om = run_field.Omega
    a = sample.radius
    st = initial.reversed() if backward else initial.copy()
    traj = Trajectory(t, run_field, backward)
    log = EventLog(t, field, a)
    table = None
    if method == "table" and not pot.hard:
        table = scattering_table(pot, pot.eps * run_field.B)

    hits: list = []  # (s_in, s_out, ident, center, entry_state, exit_state)
    s = 0.0

    def interact(state, obs, inside=False):
        c = np.asarray(obs.c, dtype=float)
        if pot.hard:
            if inside:
                return None
            return PhaseState(state.x, reflect(state.x, state.v, c)), 0.0, None
        try:
            if inside or method == "ode":
                it = integrate_in_potential(state, obs, pot, run_field, from_inside=inside)
                return it.exit, it.tau, it
            ex, tau = _table_interaction(state, c, a, pot, table)
            return ex, tau, None
        except DynamicsError as exc:
            raise FlowError(exc, obs.ident, state) from exc

    def finish_inside(state, obs, dt, inside=False):
        it = integrate_in_potential(state, obs, pot, run_field, keep_solution=True, from_inside=inside)
        y = it.solution.sol(dt / it.micro_scale)
        return PhaseState(it.center + it.micro_scale * y[:2], y[2:4]), it

    last_id = None
    # chi_1: the starting point lies inside a support
    c0, id0 = sample.centers_near(st.x, 0.0)
    if len(id0):
        log.set_flag("chi1_violated", 0.0)
        if not pot.hard:
            obs = Obstacle(tuple(c0[0]), a, int(id0[0]))
            res = interact(st, obs, inside=True)
            ex, tau, it = res
            if tau >= t:
                end, it = finish_inside(st, obs, t, inside=True)
                traj.segments.append(InteractionSegment(0.0, st, end, t, obs, it))
                traj.final_run_state = end
                return traj, log
            traj.segments.append(InteractionSegment(0.0, st, ex, tau, obs, it))
            st, s, last_id = ex, tau, obs.ident

    pool = _Pool(sample, run_field)
    seg_start, seg_s0 = st.copy(), s
    while s < t:
        remaining = t - s
        dur, cs, ids = pool.window(st, remaining)
        hit_t, k = math.inf, -1
        if len(ids):
            times, _ = entry_times(st.x, st.v, om, cs, a)
            if last_id is not None:
                same = ids == last_id
                if np.any(same):
                    guard = 0.5 * run_field.T_L if om != 0 else math.inf
                    times = np.where(same & (times < guard), np.inf, times)
            times = np.where(times <= 1e-14 * max(1.0, a), np.inf, times)
            k = int(np.argmin(times))
            hit_t = float(times[k])
        if hit_t > dur:
            x, v = free_arc(st.x, st.v, om, dur)
            st = PhaseState(x, v)
            s += dur
            continue
        x, v = free_arc(st.x, st.v, om, hit_t)
        # near-tangent entries lose digits radially; put the point back on the circle
        d = x - cs[k]
        x = cs[k] + d * (a / float(np.hypot(*d)))
        entry = PhaseState(x, v)
        s += hit_t
        traj.segments.append(FreeSegment(seg_s0, seg_start, s - seg_s0))
        obs = Obstacle((float(cs[k, 0]), float(cs[k, 1])), a, int(ids[k]))
        ex, tau, it = interact(entry, obs)
        if s + tau > t:
            end, it = finish_inside(entry, obs, t - s)
            traj.segments.append(InteractionSegment(s, entry, end, t - s, obs, it))
            hits.append((s, t, obs.ident, np.asarray(obs.c), entry, end))
            traj.final_run_state = end
            s = t
            break
        traj.segments.append(InteractionSegment(s, entry, ex, tau, obs, it))
        hits.append((s, s + tau, obs.ident, np.asarray(obs.c), entry, ex))
        s += tau
        st, last_id = ex, obs.ident
        seg_start, seg_s0 = st.copy(), s
    else:
        traj.segments.append(FreeSegment(seg_s0, seg_start, t - seg_s0))
        traj.final_run_state = st

    _fill_log(log, hits, backward, om)
    tau_b = default_tau_bound(log)
    if field.B != 0.0:
        if detect_circ(log, field, tau_b):
            log.set_flag("circ", _first_gap_time(log, field.T_L - tau_b))
        w = arc_window if arc_window is not None else field.T_L
        if detect_arc(log, field, w, tau_b):
            log.set_flag("arc", _first_gap_time(log, w - tau_b))
    _detect_overlap(log)
    if rescan:
        detect_recollision_interference_overlap(traj, log)
    return traj, log


def _fill_log(log: EventLog, hits, backward: bool, om_run: float) -> None:
    t = log.t
    rows = []
    for s_in, s_out, ident, c, en, ex in hits:
        if backward:
            # forward passage: enters at the run's exit point with reversed velocity
            fin, fout = ex.reversed(), en.reversed()
            t_in, t_out = t - s_out, t - s_in
        else:
            fin, fout = en, ex
            t_in, t_out = s_in, s_out
        rho = impact_parameter(fin.x, fin.v, c)
        theta = float(wrap_angle(math.atan2(fin.v[1], fin.v[0]) - math.atan2(fout.v[1], fout.v[0])))
        rows.append((t_in, t_out, ident, (float(c[0]), float(c[1])), rho, theta))
    om = log.field.Omega
    for i, r in enumerate(rows):
        if backward:
            nxt_out = rows[i + 1][1] if i + 1 < len(rows) else 0.0
            phi = om * (r[0] - nxt_out)
        else:
            prev_out = rows[i - 1][1] if i > 0 else 0.0
            phi = om * (r[0] - prev_out)
        log.collisions.append(Collision(r[0], r[1], r[2], r[3], r[4], r[5], phi))


def _first_gap_time(log: EventLog, threshold: float) -> float:
    g = log.gaps()
    starts = log.gap_starts()
    idx = np.nonzero(g >= threshold)[0]
    if len(idx) == 0:
        return log.t
    return float(starts[idx[0]] + max(threshold, 0.0))


# ---------------------------------------------------------------------------
# detectors


def chord_allowance(field: FieldParams, radius: float) -> float:
    """Longest arc of a Larmor circle inside one support.

    After a passage the free orbit closes on the same support, which it reaches
    ``T_L`` minus this arc after leaving; for hard disks the collision time is
    zero and this is the whole slack.
    """
    if field.B == 0:
        return 0.0
    RL = field.R_L
    return 2.0 * RL * math.asin(min(1.0, radius / RL))


def default_tau_bound(log: EventLog) -> float:
    return log.tau_max + chord_allowance(log.field, log.radius)


def detect_circ(log: EventLog, field: FieldParams, tau_bound: Optional[float] = None) -> bool:
    """A free gap of at least ``T_L - tau_bound``: a full orbit without meeting a new obstacle."""
    if field.B == 0:
        return False
    tb = default_tau_bound(log) if tau_bound is None else tau_bound
    return detect_arc(log, field, field.T_L, tb)


def detect_arc(log: EventLog, field: FieldParams, window: float, tau_bound: Optional[float] = None) -> bool:
    tb = default_tau_bound(log) if tau_bound is None else tau_bound
    return bool(np.any(log.gaps() >= window - tb))


def circ_limit_probability(nu: float, T: float, t: float, n: int = 4000) -> float:
    """P[some free gap >= T within [0, t]] when collisions form a Poisson process of rate ``nu``.

    Renewal equation ``q(s) = 1`` for ``s < T`` and
    ``q(s) = int_0^T nu e^{-nu u} q(s - u) du`` otherwise, on a grid of ``n``
    points per period (trapezoid rule).
    """
    if t < T:
        return 0.0
    h = T / n
    m = int(math.ceil(t / h))
    u = np.arange(n + 1) * h
    w = nu * np.exp(-nu * u) * h
    w[0] *= 0.5
    w[-1] *= 0.5
    q = np.ones(m + 1)
    for i in range(n, m + 1):
        # q at s_i uses q at s_i - u_j, j = 0..n; the j = 0 term is implicit
        past = q[i - np.arange(1, n + 1)]
        q[i] = (w[1:] @ past) / (1.0 - w[0])
    s = m * h
    # linear interpolation to t
    frac = (s - t) / h
    qt = (1 - frac) * q[m] + frac * q[m - 1]
    return float(1.0 - qt)


def _detect_overlap(log: EventLog) -> None:
    cols = log.collisions
    a = log.radius
    seen: dict = {}
    for j, c in enumerate(cols):
        for ident, (i, ci) in seen.items():
            if ident != c.ident and math.hypot(ci[0] - c.center[0], ci[1] - c.center[1]) < 2.0 * a:
                pair = (i, j)
                if pair not in log.overlaps:
                    log.overlaps.append(pair)
                    log.set_flag("overlap", log.t - c.t_out)
        seen.setdefault(c.ident, (j, c.center))


def detect_recollision_interference_overlap(traj: Trajectory, log: EventLog) -> EventLog:
    """Geometric re-scan of every free arc against every hit obstacle.

    Collision indices follow the log (backward order) and free segment ``k``
    ends at collision ``k``.  If segment ``k`` enters the support hit at
    ``m <= k - 2``, ``(m, k)`` is a recollision; if it enters the support hit at
    ``m >= k + 2`` (a later window), ``(k, m)`` is an interference.  Entries into
    supports that do not end the segment are impossible on a true flow and are
    kept in ``log.missed``.
    """
    _detect_overlap(log)
    cols = log.collisions
    log.missed = []
    if not cols:
        return log
    a = log.radius
    om = traj.field.Omega
    centers = np.array([c.center for c in cols], dtype=float)
    ids = log.ids
    n = len(cols)
    for k, seg in enumerate(traj.free_segments()):
        if seg.duration <= 0:
            continue
        times, _ = entry_times(seg.start.x, seg.start.v, om, centers, a)
        entered = np.nonzero(times <= seg.duration * (1.0 + 1e-9) + 1e-12)[0]
        for m in entered:
            m = int(m)
            s_hit = seg.s0 + float(times[m])
            if k >= n or ids[m] != ids[k]:
                log.missed.append((k, m))
                continue
            if m <= k - 2:
                log.recollisions.append((m, k))
                log.set_flag("recollision", s_hit)
            elif m >= k + 2:
                log.interferences.append((k, m))
                log.set_flag("interference", s_hit)
    log.recollisions = sorted(set(log.recollisions))
    log.interferences = sorted(set(log.interferences))
    return log


def tube_area(traj: Trajectory, radius: float, ds: Optional[float] = None) -> float:
    """Area of the radius-neighbourhood of the path (polygon buffer)."""
    from shapely.geometry import LineString, Point

    step = ds if ds is not None else radius / 4.0
    pts = traj.sample_path(step)
    if len(pts) < 2:
        return Point(pts[0]).buffer(radius, 64).area
    return LineString(pts).buffer(radius, 64).area


# ---------------------------------------------------------------------------
# Monte Carlo over media


def seed_for(seed: int, *key: int) -> int:
    """64-bit child seed, a pure function of ``(seed, key)``."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_workers(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("MAGLORENTZ_WORKERS")
    return max(1, int(env)) if env else 1


@dataclass
class FEpsEstimate:
    """``f_eps`` at phase points for one or several times.

    Arrays indexed by time carry a leading axis of length ``len(times)``.
    """

    times: np.ndarray
    xs: np.ndarray
    phis: np.ndarray
    per_seed: np.ndarray  # (n_seeds, n_times, n_points)
    clean_per_seed: np.ndarray  # f0 at the backward point when no flag is set by then, else 0
    seed_flags: np.ndarray  # (n_seeds, n_flags) number of flagged points per seed (at the last time)
    seed_collisions: np.ndarray  # (n_seeds,) mean collision count per point (last time)
    observables_per_seed: np.ndarray  # (n_seeds, n_times, n_obs)

    @property
    def n_seeds(self) -> int:
        return self.per_seed.shape[0]

    @property
    def mean(self) -> np.ndarray:
        m = self.per_seed.mean(axis=0)
        return m[0] if len(self.times) == 1 else m

    @property
    def stderr(self) -> np.ndarray:
        e = self.per_seed.std(axis=0, ddof=1) / math.sqrt(self.n_seeds)
        return e[0] if len(self.times) == 1 else e

    @property
    def clean_mean(self) -> np.ndarray:
        m = self.clean_per_seed.mean(axis=0)
        return m[0] if len(self.times) == 1 else m

    @property
    def observables(self) -> np.ndarray:
        m = self.observables_per_seed.mean(axis=0)
        return m[0] if len(self.times) == 1 else m

    @property
    def observables_stderr(self) -> np.ndarray:
        e = self.observables_per_seed.std(axis=0, ddof=1) / math.sqrt(self.n_seeds)
        return e[0] if len(self.times) == 1 else e

    @property
    def flag_fractions(self) -> Dict[str, float]:
        npts = self.n_seeds * len(self.xs)
        tot = self.seed_flags.sum(axis=0)
        return {name: float(tot[i]) / npts for i, name in enumerate(FLAG_NAMES)}

    @property
    def collisions_mean(self) -> float:
        return float(self.seed_collisions.mean())

    def marginal_per_seed(self, n_angles: int) -> np.ndarray:
        """Average over positions sharing an angle: (n_seeds, n_times, n_angles).

        Points must be ordered position-major with ``n_angles`` angles each.
        """
        ns, nt, npnt = self.per_seed.shape
        return self.per_seed.reshape(ns, nt, npnt // n_angles, n_angles).mean(axis=2)


@dataclass(frozen=True)
class CosineDensity:
    """Homogeneous ``(1 + sum_k a_k cos(k phi)) / 2pi``; picklable for worker processes."""

    amplitudes: tuple = (0.5,)

    def __post_init__(self):
        if sum(abs(a) for a in self.amplitudes) > 1.0:
            raise ValueError("amplitudes must keep the density non-negative")

    def angular(self, phi):
        phi = np.asarray(phi, dtype=float)
        out = np.ones_like(phi)
        for k, a in enumerate(self.amplitudes, start=1):
            out = out + a * np.cos(k * phi)
        return out / (2.0 * np.pi)

    def __call__(self, x, phi):
        return self.angular(phi)


def _fe_task(args):
    (k, seed, regime, field, times, xs, phis, f0, observables, method, arc_window) = args
    ms = seed_for(seed, k)
    sample = MediumSample(ms, regime, field)
    pot = regime.potential
    n = len(xs)
    nt = len(times)
    t_max = float(max(times))
    vals = np.empty((nt, n))
    clean = np.empty((nt, n))
    flags = np.zeros(len(FLAG_NAMES), dtype=np.int64)
    ncol = 0
    for p in range(n):
        if t_max == 0:
            v = float(f0(xs[p : p + 1], phis[p : p + 1])[0])
            vals[:, p] = clean[:, p] = v
            continue
        traj, log = flow(PhaseState.from_angle(xs[p], phis[p]), t_max, sample, pot, field, method=method,
                         arc_window=arc_window)
        first = min((s for s in log.flags.values() if s is not None), default=math.inf)
        for i, t in enumerate(times):
            fin = traj.final if t == t_max else traj.physical_at(t)
            v = float(f0(fin.x[None, :], np.array([fin.angle]))[0])
            vals[i, p] = v
            clean[i, p] = 0.0 if first <= t else v
        for i, name in enumerate(FLAG_NAMES):
            flags[i] += int(log.flagged(name))
        ncol += len(log.collisions)
    obs = np.array([[o(xs, phis, vals[i]) for o in observables] for i in range(nt)]).reshape(nt, len(observables))
    return k, vals, clean, flags, ncol / max(n, 1), obs


def estimate_f_eps(
    f0: Callable,
    t,
    regime: ScalingRegime,
    field: FieldParams,
    n_seeds: int,
    seed: int,
    xs=None,
    phis=None,
    observables: Sequence[Callable] = (),
    method: str = "table",
    workers: Optional[int] = None,
    arc_window: Optional[float] = None,
) -> FEpsEstimate:
    """Average of ``f0(T^{-t}(x, v))`` over ``n_seeds`` independent media.

    ``f0(x, phi)`` takes positions ``(n, 2)`` and velocity angles ``(n,)``.  All
    points of one seed share that seed's medium.  ``t`` may be a list of times:
    the medium is static, so every ``T^{-s}`` with ``s <= max(t)`` lies on the
    same backward path and one run per point serves all of them.  Each
    observable is called as ``obs(xs, phis, values)`` and returns a scalar.
    """
    if n_seeds < 2:
        raise ValueError("need at least two seeds for a standard error")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0):
        raise ValueError("t must be non-negative")
    if phis is None:
        phis = 2.0 * np.pi * np.arange(64) / 64
    phis = np.asarray(phis, dtype=float).ravel()
    if xs is None:
        xs = np.zeros((len(phis), 2))
    xs = np.asarray(xs, dtype=float).reshape(-1, 2)
    if len(xs) != len(phis):
        raise ValueError("xs and phis must pair up")
    observables = tuple(observables)
    items = [(k, seed, regime, field, times, xs, phis, f0, observables, method, arc_window) for k in range(n_seeds)]
    res = sorted(_run_workers(_fe_task, items, resolve_workers(workers)), key=lambda r: r[0])
    return FEpsEstimate(
        times=times,
        xs=xs,
        phis=phis,
        per_seed=np.array([r[1] for r in res]),
        clean_per_seed=np.array([r[2] for r in res]),
        seed_flags=np.array([r[3] for r in res]),
        seed_collisions=np.array([r[4] for r in res]),
        observables_per_seed=np.array([r[5] for r in res]),
    )


def phase_grid(n_angles: int, positions) -> tuple:
    """Position-major grid of ``(xs, phis)`` with ``n_angles`` equispaced angles per position."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    ang = 2.0 * np.pi * np.arange(n_angles) / n_angles
    return np.repeat(pos, n_angles, axis=0), np.tile(ang, len(pos))


# ---------------------------------------------------------------------------
# pathology frequencies


@dataclass(frozen=True)
class RunRecord:
    eps: float
    seed_index: int
    x: float
    y: float
    phi: float
    collisions: int
    flags: tuple  # booleans in FLAG_NAMES order (chi1 reported as the violation)


@dataclass
class PathologyRow:
    eps: float
    n: int
    counts: Dict[str, int]

    def freq(self, name: str) -> float:
        return self.counts[name] / self.n

    def wilson(self, name: str, level: float = 0.95):
        ci = stats.binomtest(self.counts[name], self.n).proportion_ci(confidence_level=level, method="wilson")
        return float(ci.low), float(ci.high)


@dataclass
class PathologyTable:
    rows: List[PathologyRow]
    records: List[RunRecord]

    def slope(self, name: str):
        """Log-log slope of the frequency against eps over the nonzero entries (None if < 2)."""
        pts = [(r.eps, r.freq(name)) for r in self.rows if r.counts[name] > 0]
        if len(pts) < 2:
            return None
        e, f = np.log(np.array(pts)).T
        return float(np.polyfit(e, f, 1)[0])


def _path_task(args):
    (eps, k, seed, regime, field, t, method, nu) = args
    reg = regime.with_eps(eps)
    ms = seed_for(seed, int(round(-1e6 * math.log(eps))), k)
    sample = MediumSample(ms, reg, field)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(ms, spawn_key=(7,))))
    phi = float(rng.uniform(0.0, 2.0 * np.pi))
    x = np.zeros(2)
    window = field.T_L * eps**nu if field.B != 0 else None
    _, log = flow(PhaseState.from_angle(x, phi), t, sample, reg.potential, field, method=method, arc_window=window)
    flags = tuple(log.flagged(n) for n in FLAG_NAMES)
    return RunRecord(eps, k, 0.0, 0.0, phi, len(log.collisions), flags)


def pathology_scan(
    regime: ScalingRegime,
    eps_list: Sequence[float],
    t: float,
    n_seeds: int,
    field: FieldParams,
    seed: int,
    method: str = "table",
    nu: Optional[float] = None,
    workers: Optional[int] = None,
) -> PathologyTable:
    """Empirical frequency of each flag per ``eps`` (one backward run per medium).

    ``nu`` sets the arc window ``T_L eps^nu`` (default ``alpha``).
    """
    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be decreasing with at least 3 entries")
    if eps_list[0] / eps_list[-1] < 100.0 * (1 - 1e-9):
        raise ValueError("eps list must span at least two decades")
    return pathology_frequencies(regime, eps_list, t, n_seeds, field, seed, method, nu, workers)


def pathology_frequencies(regime, eps_list, t, n_seeds, field, seed, method="table", nu=None,
                          workers=None) -> PathologyTable:
    """:func:`pathology_scan` without the checks on the shape of the eps list."""
    nu = regime.alpha if nu is None else nu
    items = [(e, k, seed, regime, field, t, method, nu) for e in eps_list for k in range(n_seeds)]
    recs = _run_workers(_path_task, items, resolve_workers(workers))
    rows = []
    for e in eps_list:
        mine = [r for r in recs if r.eps == e]
        counts = {name: sum(int(r.flags[i]) for r in mine) for i, name in enumerate(FLAG_NAMES)}
        rows.append(PathologyRow(e, len(mine), counts))
    return PathologyTable(rows, recs)
