"""Free cyclotron motion and single-obstacle interaction.

Conventions: unit speed, unit charge and mass.  A field ``B > 0`` turns the
velocity counter-clockwise at angular frequency ``Omega = B``; ``B < 0`` is the
reversed field used by backward-in-time flows.  The impact parameter is
``rho = (x - c) x v`` (the z-component of the angular momentum about the
obstacle centre), positive when the centre lies to the left of the tangent line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .potentials import PotentialSpec

RTOL = 1e-11
ATOL = 1e-13
GRAZING_TOL = 1e-13


class DynamicsError(RuntimeError):
    """Numerical fault in the obstacle integrator ("trapped", "entered-inside")."""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


@dataclass(frozen=True)
class FieldParams:
    B: float

    def __post_init__(self):
        if not math.isfinite(self.B):
            raise ValueError("B must be finite")

    @property
    def Omega(self) -> float:
        return self.B

    @property
    def R_L(self) -> float:
        return math.inf if self.B == 0 else 1.0 / abs(self.B)

    @property
    def T_L(self) -> float:
        return math.inf if self.B == 0 else 2.0 * math.pi / abs(self.B)

    def reversed(self) -> "FieldParams":
        return FieldParams(-self.B)


@dataclass(eq=False)
class PhaseState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(2)
        self.v = np.asarray(self.v, dtype=float).reshape(2)

    @classmethod
    def from_angle(cls, x, phi: float) -> "PhaseState":
        return cls(x, (math.cos(phi), math.sin(phi)))

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.v))

    @property
    def angle(self) -> float:
        return math.atan2(self.v[1], self.v[0])

    def reversed(self) -> "PhaseState":
        return PhaseState(self.x.copy(), -self.v)

    def copy(self) -> "PhaseState":
        return PhaseState(self.x.copy(), self.v.copy())


@dataclass(frozen=True)
class Obstacle:
    c: tuple
    radius: float
    ident: int = -1

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


def perp(v):
    """Counter-clockwise quarter turn, R(pi/2) v."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def rotate(v, angle):
    v = np.asarray(v, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1]], axis=-1)


def _arc_coeffs(omega: float, t):
    """sin(w t)/w and (1 - cos(w t))/w, continuous through w = 0."""
    th = omega * t
    if omega == 0.0:
        return t, 0.0 * t
    return np.sin(th) / omega, 2.0 * np.sin(0.5 * th) ** 2 / omega


def free_arc(x, v, omega: float, t):
    """Position and velocity after time ``t`` of free motion (vectorised over ``t``)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    t = np.asarray(t, dtype=float)
    S, C = _arc_coeffs(omega, t)
    S = np.asarray(S)[..., None]
    C = np.asarray(C)[..., None]
    xt = x + S * v + C * perp(v)
    vt = rotate(v, omega * t)
    return xt, vt


def cyclotron_center(state: PhaseState, field: FieldParams) -> np.ndarray:
    if field.B == 0:
        raise ValueError("no cyclotron centre without a field")
    return state.x + perp(state.v) / field.Omega


def cyclotron_advance(state: PhaseState, dt: float, field: FieldParams) -> PhaseState:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    x, v = free_arc(state.x, state.v, field.Omega, dt)
    return PhaseState(x, v)


@dataclass(frozen=True)
class Hit:
    time: float
    index: int
    rho: float
    obstacle: Optional[Obstacle] = None
    grazing: bool = False


def entry_times(x, v, omega: float, centers, radius: float):
    """Earliest positive entrance time into each disk along the free arc.

    Returns ``(times, grazing)``; ``times`` is ``inf`` where the arc never enters
    the disk (within one cyclotron period).  Tangential contacts are misses and
    are marked in ``grazing``.

    The squared distance to a centre, multiplied by ``1 + tan^2(w t / 2)``, is a
    quadratic in ``u = (2 / w) tan(w t / 2)``; this form stays well conditioned
    down to ``w = 0``, where ``u = t``.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    n = centers.shape[0]
    times = np.full(n, np.inf)
    grazing = np.zeros(n, dtype=bool)
    if n == 0:
        return times, grazing
    R = float(radius)
    w = (np.asarray(x, dtype=float) - centers) / R
    v = np.asarray(v, dtype=float)
    om = omega * R
    wv = w @ v
    wj = w @ perp(v)
    k0 = np.einsum("ij,ij->i", w, w) - 1.0
    a2 = 1.0 + om * wj + 0.25 * k0 * om * om
    a1 = 2.0 * wv
    disc = wv * wv - a2 * k0
    grazing = np.abs(disc) < GRAZING_TOL
    ok = disc >= GRAZING_TOL
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -(wv + np.where(wv >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(a2 != 0, q / a2, np.inf)
        r2 = np.where(q != 0, k0 / q, np.inf)
    # entering root: D decreases through zero, dD/du = 2 a2 u + a1 < 0
    cand = np.full(n, np.nan)
    for r in (r1, r2):
        good = ok & np.isfinite(r) & (2.0 * a2 * r + a1 < 0)
        cand = np.where(good & np.isnan(cand), r, cand)
    has = ~np.isnan(cand)
    u = np.where(has, cand, 0.0) * R
    if omega == 0.0:
        t = u
        valid = has & (t > 0)
    else:
        t = 2.0 / omega * np.arctan(0.5 * omega * u)
        period = 2.0 * math.pi / abs(omega)
        t = np.where(t <= 0, t + period, t)
        valid = has
    times = np.where(valid, t, np.inf)
    return times, grazing


def impact_parameter(x, v, c) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(c, dtype=float)
    return float(d[0] * v[1] - d[1] * v[0])


def first_obstacle_hit(
    state: PhaseState,
    obstacles: Iterable[Obstacle] | Sequence[Obstacle],
    field: FieldParams,
    t_max: float,
) -> Optional[Hit]:
    """Earliest entrance into any obstacle support within ``(0, t_max]``."""
    obs = list(obstacles)
    if not obs:
        return None
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    radii = np.array([o.radius for o in obs])
    centers = np.array([o.c for o in obs], dtype=float)
    times = np.full(len(obs), np.inf)
    graz = np.zeros(len(obs), dtype=bool)
    for rad in np.unique(radii):
        sel = radii == rad
        t, g = entry_times(state.x, state.v, field.Omega, centers[sel], rad)
        times[sel] = t
        graz[sel] = g
    i = int(np.argmin(times))
    if not times[i] <= t_max:
        return None
    xh, vh = free_arc(state.x, state.v, field.Omega, times[i])
    rho = impact_parameter(xh, vh, centers[i])
    return Hit(float(times[i]), i, rho, obs[i], bool(graz[i]))


def reflect(x, v, c) -> np.ndarray:
    """Specular reflection off a hard disk centred at ``c`` (entry point ``x``)."""
    n = np.asarray(c, dtype=float) - np.asarray(x, dtype=float)
    n = n / np.hypot(*n)
    return v - 2.0 * np.dot(n, v) * n


@dataclass
class Interaction:
    """Result of integrating through one obstacle support."""

    exit: PhaseState
    tau: float
    solution: object = None
    micro_scale: float = 1.0
    center: np.ndarray = None

    def path(self, t):
        """Macroscopic position at times ``t`` after entry (dense output)."""
        if self.solution is None:
            raise ValueError("no dense output retained")
        y = self.solution.sol(np.asarray(t, dtype=float) / self.micro_scale)
        return self.center + self.micro_scale * y[:2].T


def integrate_in_potential(
    state: PhaseState,
    obstacle: Obstacle,
    pot: PotentialSpec,
    field: FieldParams,
    keep_solution: bool = False,
    from_inside: bool = False,
) -> Interaction:
    """Integrate the equations of motion inside one obstacle until the tracer leaves.

    Integration runs in micro variables (lengths and times divided by ``eps``),
    where the support radius is ``pot.support_radius`` and the field is ``eps * B``.
    """
    c = np.asarray(obstacle.c, dtype=float)
    a = obstacle.radius
    d = state.x - c
    dist = float(np.hypot(*d))
    if from_inside:
        if dist >= a:
            raise DynamicsError("entered-inside", "from_inside requested for a point outside the support")
    elif abs(dist - a) > 1e-10 * max(1.0, a) + 1e-10 * a:
        raise DynamicsError("entered-inside", f"entry point at distance {dist!r} from centre, radius {a!r}")
    if pot.hard:
        return Interaction(PhaseState(state.x, reflect(state.x, state.v, c)), 0.0, center=c)

    scale = a / pot.support_radius
    R = pot.support_radius
    b = scale * field.B
    y0 = d / scale if from_inside else d * (R / dist)
    rho = float(y0[0] * state.v[1] - y0[1] * state.v[0])
    if not from_inside and (abs(rho) >= R * (1.0 - 1e-12) or float(np.dot(y0, state.v)) >= 0.0):
        return Interaction(state.copy(), 0.0, center=c, micro_scale=scale)

    def rhs(_t, s):
        y1, y2, u1, u2 = s
        r = math.hypot(y1, y2)
        f = -float(pot.dV(r)) / r if r > 0 else 0.0
        return [u1, u2, -b * u2 + f * y1, b * u1 + f * y2]

    def leave(_t, s):
        return s[0] * s[0] + s[1] * s[1] - R * R

    leave.terminal = True
    leave.direction = 1.0

    t_cap = 10.0 * 2.0 * math.pi / abs(b) if b != 0 else 1e4 * R
    sol = solve_ivp(
        rhs,
        (0.0, t_cap),
        np.concatenate([y0, state.v]),
        method="DOP853",
        rtol=RTOL,
        atol=ATOL,
        events=leave,
        dense_output=keep_solution,
    )
    if sol.status != 1 or len(sol.t_events[0]) == 0:
        raise DynamicsError("trapped", f"no exit before t = {t_cap:.3g} (micro units), rho = {rho:.6g}")
    t_exit = float(sol.t_events[0][0])
    ye = sol.y_events[0][0]
    x_exit = c + scale * ye[:2]
    return Interaction(
        PhaseState(x_exit, ye[2:]),
        scale * t_exit,
        solution=sol if keep_solution else None,
        micro_scale=scale,
        center=c,
    )
