"""Single-obstacle scattering: deflection angles, collision times, cross sections
and the grazing-collision diffusion coefficient.

Everything here works in micro units (see :mod:`maglorentz.potentials`): the
impact parameter ``rho`` ranges over ``(-R, R)`` with ``R = pot.support_radius``
and the field enters through the micro field strength ``b = eps * B``.

Angle convention: the scattering angle ``theta`` is the *clockwise* turn of the
velocity between entry and exit (wrapped to ``(-pi, pi]``), so a repulsive
obstacle whose centre lies to the left of the incoming line (``rho > 0``)
produces ``theta > 0``.  The counter-clockwise rotation applied to the velocity
is ``-theta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicSpline

from .dynamics import FieldParams
from .potentials import HardDisk, PotentialSpec, SmoothCompact, TruncatedPower

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-12
ROOT_XTOL = 1e-14


class ScatteringError(RuntimeError):
    def __init__(self, message: str, rho: Optional[float] = None):
        super().__init__(message if rho is None else f"{message} (rho = {rho!r})")
        self.rho = rho


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


def hard_disk_angle(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("hard-disk impact parameter must satisfy |rho| <= 1")
    out = np.sign(rho) * (math.pi - 2.0 * np.arcsin(np.abs(rho)))
    out = np.where(rho == 0, math.pi, out)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Orbit:
    """Polar-angle sweep, time inside the support and closest approach of one passage."""

    rho: float
    sweep: float
    tau: float
    r_min: float

    @property
    def theta(self) -> float:
        return float(wrap_angle(self.free_sweep - self.sweep))

    @property
    def free_sweep(self) -> float:
        R = self._R
        return math.pi - 2.0 * math.asin(self.rho / R)

    _R: float = 1.0


def _radicand(pot: PotentialSpec, M: float, b: float):
    def F(r):
        return 1.0 - 2.0 * pot.V(r) - (M / r + 0.5 * b * r) ** 2

    return F


def _closest_approach(F, R: float, rho: float) -> float:
    """Largest zero of the radial radicand below the support radius."""
    hi = R
    r = R
    if F(R) <= 0:
        return R
    lo = None
    for _ in range(4000):
        r *= 0.97
        if r < 1e-300:
            break
        if float(F(r)) <= 0.0:
            lo = r
            break
        hi = r
    if lo is None:
        return 0.0
    try:
        return optimize.brentq(lambda s: float(F(s)), lo, hi, xtol=ROOT_XTOL * R, rtol=1e-15, maxiter=500)
    except ValueError as exc:  # pragma: no cover - bracket established above
        raise ScatteringError("closest-approach bracketing failed", rho) from exc


def _turning_u(G, u_lo: float, rho: float) -> float:
    """First zero of the radicand in ``u = |M| / r`` above ``u_lo``."""
    lo = u_lo
    u = max(u_lo, 1e-300)
    hi = None
    for _ in range(8000):
        u = u * 1.02 + 1e-12
        if float(G(u)) <= 0.0:
            hi = u
            break
        lo = u
    if hi is None:
        raise ScatteringError("no turning point found", rho)
    try:
        return optimize.brentq(lambda w: float(G(w)), lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
    except ValueError as exc:  # pragma: no cover
        raise ScatteringError("turning-point bracketing failed", rho) from exc


def _endpoint_quad(fun, lo: float, hi: float) -> float:
    """Integral over [lo, hi] of a function with an inverse-square-root singularity at ``hi``.

    Uses ``w = hi - (hi - lo) cos^2 chi``; ``fun`` receives ``(w, hi - w, jac)``
    so the distance to the singular endpoint is available without cancellation.
    """
    span = hi - lo

    def kernel(chi):
        s, c = math.sin(chi), math.cos(chi)
        d = span * c * c
        return fun(hi - d, d, 2.0 * span * s * c)

    return integrate.quad(kernel, 0.0, 0.5 * math.pi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400,
                          full_output=1)[0]


def _vdiff(pot: PotentialSpec, r_lo: float, r_hi: float) -> float:
    """V(r_lo) - V(r_hi), switching to a midpoint derivative when the radii nearly coincide."""
    h = r_hi - r_lo
    if abs(h) < 1e-5 * max(r_lo, 1e-300):
        return -float(pot.dV(0.5 * (r_lo + r_hi))) * h
    return float(pot.V(r_lo)) - float(pot.V(r_hi))


def orbit(rho: float, pot: PotentialSpec, b: float = 0.0) -> Orbit:
    """Quadrature of the polar sweep and of the time spent inside the support.

    In polar coordinates about the centre, ``M = r^2 dtheta/dt - b r^2 / 2`` and
    the energy are conserved.  The time is integrated in ``r`` and the sweep
    ``int M / r^2 dt`` in ``u = |M| / r``, which stays regular when the tracer
    passes close to the centre.  Both radicands are written as differences from
    their value at the turning point, factored so that nothing cancels near it.
    """
    R = pot.support_radius
    rho = float(rho)
    if abs(rho) > R:
        raise ScatteringError("impact parameter outside the support", rho)
    if pot.hard:
        return Orbit(rho, 0.0, 0.0, R, _R=R)
    if abs(rho) == R:
        return Orbit(rho, math.pi - 2.0 * math.asin(rho / R), 0.0, R, _R=R)
    M = rho - 0.5 * b * R * R
    F = _radicand(pot, M, b)
    aM = abs(M)
    opts = dict(epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400, full_output=1)

    if M == 0.0:
        r_min = 0.0 if not pot.reflective() else _closest_approach(F, R, rho)
        s_m = math.pi if r_min == 0.0 else 0.0
    else:

        def G(u):
            return 1.0 - 2.0 * float(pot.V(aM / u)) - (u + 0.5 * b * M / u) ** 2

        u_R = aM / R
        u_max = _turning_u(G, u_R, rho)
        r_min = aM / u_max
        q_max = u_max + 0.5 * b * M / u_max

        def sweep_kernel(u, d, jac):
            q = u + 0.5 * b * M / u
            g = d * (1.0 - 0.5 * b * M / (u * u_max)) * (q_max + q) + 2.0 * _vdiff(pot, r_min, aM / u)
            return jac / math.sqrt(g) if g > 0.0 else 0.0

        s_m = math.copysign(2.0 * _endpoint_quad(sweep_kernel, u_R, u_max), M)

    span = R - r_min
    if r_min == 0.0:

        def tk(chi):
            s, c = math.sin(chi), math.cos(chi)
            f = float(F(span * s * s))
            return 2.0 * span * s * c / math.sqrt(f) if f > 0.0 else 0.0

    else:
        p_min = M / r_min + 0.5 * b * r_min

        def tk(chi):
            s, c = math.sin(chi), math.cos(chi)
            e = span * c * c
            r = r_min + e
            p = M / r + 0.5 * b * r
            f = 2.0 * _vdiff(pot, r_min, r) + e * (M / (r * r_min) - 0.5 * b) * (p_min + p)
            return 2.0 * span * s * c / math.sqrt(f) if f > 0.0 else 0.0

    tau = 2.0 * integrate.quad(tk, 0.0, 0.5 * math.pi, **opts)[0]
    return Orbit(rho, s_m + 0.5 * b * tau, tau, r_min, _R=R)


def micro_field(pot: PotentialSpec, field: Optional[FieldParams]) -> float:
    return 0.0 if field is None else pot.eps * field.B


def angle_no_field(rho, pot: PotentialSpec):
    """Scattering angle without magnetic field."""
    if pot.hard:
        return hard_disk_angle(np.asarray(rho) / pot.support_radius)
    rho = np.asarray(rho, dtype=float)
    out = np.array([orbit(r, pot, 0.0).theta for r in rho.ravel()]).reshape(rho.shape)
    return out if out.ndim else float(out)


def angle_with_field(rho, pot: PotentialSpec, field: FieldParams):
    """Scattering angle with the field acting inside the support (micro field ``eps*B``)."""
    if pot.hard:
        return hard_disk_angle(np.asarray(rho) / pot.support_radius)
    b = micro_field(pot, field)
    rho = np.asarray(rho, dtype=float)
    out = np.array([orbit(r, pot, b).theta for r in rho.ravel()]).reshape(rho.shape)
    return out if out.ndim else float(out)


def collision_time(rho, pot: PotentialSpec, field: Optional[FieldParams] = None):
    """Macroscopic time spent inside the support (``eps`` times the micro time)."""
    if pot.hard:
        return np.zeros_like(np.asarray(rho, dtype=float)) if np.ndim(rho) else 0.0
    b = micro_field(pot, field)
    rho = np.asarray(rho, dtype=float)
    out = np.array([pot.eps * orbit(r, pot, b).tau for r in rho.ravel()]).reshape(rho.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# derivative of the deflection angle (independent of any tabulation)


def _truncated_inverse_cross(rho: float, pot: TruncatedPower) -> float:
    """|dtheta/drho| for the truncated power law without field.

    Uses the ``beta`` representation, ``u^2 + 2((u/rho)^s - A^-s) = sin^2 beta``
    with ``u = rho / r``: a boundary term from the lower limit ``arcsin(rho/A)``
    plus a regular integral over ``beta``.
    """
    s, A = pot.s, pot.support_radius
    rho = abs(float(rho))
    if rho == 0.0 or rho >= A:
        raise ScatteringError("derivative defined for 0 < |rho| < A", rho)
    x0 = s * rho**-2 * A ** (2.0 - s)
    boundary = 2.0 * x0 / ((1.0 + x0) * math.sqrt(A * A - rho * rho))
    c0 = 2.0 * A**-s

    def u_of(beta):
        target = math.sin(beta) ** 2 + c0
        g = lambda u: u * u + 2.0 * (u / rho) ** s - target
        hi = max(rho / A, 1e-300)
        while g(hi) < 0.0:
            hi *= 2.0
        return optimize.brentq(g, 0.0, hi, xtol=1e-300, rtol=1e-15, maxiter=500)

    def kern(beta):
        u = u_of(beta)
        w = s * u ** (s - 2.0) * rho**-s
        D = u * (1.0 + w)
        bracket = s - (1.0 + (s - 1.0) * w) / (1.0 + w)
        return math.sin(beta) * s * u ** (s - 1.0) / (D * D) * bracket

    lo = math.asin(rho / A)
    body = integrate.quad(kern, lo, 0.5 * math.pi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)[0]
    return 2.0 / rho ** (s + 1.0) * body + boundary


def dtheta_drho_reference(rho, pot: PotentialSpec, b: float = 0.0, h: Optional[float] = None):
    """dtheta/drho without going through a table.

    Hard disk: closed form.  Truncated power law at ``b = 0``: the ``beta``
    integral above.  Otherwise a Richardson-extrapolated central difference of
    the quadrature angle.
    """
    R = pot.support_radius
    rho = np.asarray(rho, dtype=float)
    out = np.empty(rho.shape)
    for idx, r in np.ndenumerate(rho):
        if pot.hard:
            out[idx] = -2.0 / math.sqrt(R * R - r * r)
        elif isinstance(pot, TruncatedPower) and b == 0.0 and r != 0.0:
            out[idx] = -_truncated_inverse_cross(r, pot)
        else:
            step = h if h is not None else 1e-3 * min(R - abs(r), R)
            th = lambda x: orbit(x, pot, b).theta

            def cd(k):
                d = th(r + k) - th(r - k)
                return float(wrap_angle(d)) / (2.0 * k)

            out[idx] = (4.0 * cd(0.5 * step) - cd(step)) / 3.0
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# tabulated scattering map and differential cross section

TABLE_VERSION = 1


@dataclass(frozen=True, eq=False)
class ScatteringTable:
    """theta(rho) on a grid uniform in ``sigma = arcsin(rho / R)``.

    The grid clusters nodes at the support edge where ``dtheta/drho`` of a hard
    wall diverges; in ``sigma`` every angle map is smooth.  ``theta_u`` is the
    unwrapped (continuous) angle, ``theta`` the wrapped one.  Angles are in the
    clockwise convention of :func:`orbit`.
    """

    sigma: np.ndarray
    rho: np.ndarray
    theta_u: np.ndarray
    sweep: np.ndarray
    tau: np.ndarray
    R: float
    eps: float
    b: float
    kind: str
    finite_total: bool = True
    _spline: CubicSpline = field(default=None, repr=False)
    _tau_spline: CubicSpline = field(default=None, repr=False)
    _sweep_spline: CubicSpline = field(default=None, repr=False)

    @property
    def theta(self) -> np.ndarray:
        return wrap_angle(self.theta_u)

    @property
    def rho_max(self) -> float:
        return self.R

    def theta_at(self, rho):
        s = np.arcsin(np.clip(np.asarray(rho, dtype=float) / self.R, -1.0, 1.0))
        return wrap_angle(self._spline(s))

    def tau_at(self, rho):
        """Micro time inside the support."""
        s = np.arcsin(np.clip(np.asarray(rho, dtype=float) / self.R, -1.0, 1.0))
        return np.maximum(self._tau_spline(s), 0.0)

    def sweep_at(self, rho):
        """Counter-clockwise change of the polar angle about the centre."""
        s = np.arcsin(np.clip(np.asarray(rho, dtype=float) / self.R, -1.0, 1.0))
        return self._sweep_spline(s)

    def dtheta_dsigma(self, sigma=None):
        return self._spline(self.sigma if sigma is None else sigma, 1)

    def dtheta_drho(self, rho=None) -> np.ndarray:
        """Spline derivative; the support edges use the one-sided limit."""
        if rho is None:
            s = self.sigma
        else:
            s = np.arcsin(np.clip(np.asarray(rho, dtype=float) / self.R, -1.0, 1.0))
        d1 = self._spline(s, 1)
        c = self.R * np.cos(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = d1 / c
            edge = c <= 1e-14 * self.R
            if np.any(edge):
                d2 = self._spline(s, 2)
                flat = np.abs(d1) < 1e-9
                lim = np.where(flat, -d2 / (self.R * np.sin(s)), np.copysign(np.inf, -d1 * np.sign(s)))
                out = np.where(edge, lim, out)
        return out

    # -- branch structure --------------------------------------------------

    def turning_points(self, tol: float = 1e-8) -> np.ndarray:
        """sigma values where dtheta/drho changes sign (Gamma unbounded there).

        Extrema whose angular excursion is below ``tol`` are quadrature noise in
        the flat tails and are discarded in pairs.
        """
        roots = self._spline.derivative().roots(extrapolate=False)
        roots = np.sort(roots[(roots > self.sigma[0]) & (roots < self.sigma[-1])])
        cand = []
        for r in roots:
            h = 1e-7
            if np.sign(self._spline(r - h, 1)) != np.sign(self._spline(r + h, 1)):
                cand.append(float(r))
        pts = [float(self.sigma[0]), *cand, float(self.sigma[-1])]
        changed = True
        while changed and len(pts) > 2:
            changed = False
            v = self._spline(np.array(pts))
            if abs(v[1] - v[0]) < tol:
                del pts[1]
                changed = True
                continue
            if abs(v[-2] - v[-1]) < tol:
                del pts[-2]
                changed = True
                continue
            for i in range(1, len(pts) - 2):
                if abs(v[i + 1] - v[i]) < tol:
                    del pts[i : i + 2]
                    changed = True
                    break
        return np.array(pts[1:-1])

    def branches(self) -> list:
        """Monotone pieces as (sigma_lo, sigma_hi) intervals covering the grid."""
        cuts = [self.sigma[0], *self.turning_points(), self.sigma[-1]]
        return [(a, b) for a, b in zip(cuts[:-1], cuts[1:]) if b > a]

    def _branch_inverse(self, lo, hi, targets):
        """sigma in [lo, hi] with theta_u(sigma) = target (nan where out of range)."""
        sg = np.linspace(lo, hi, 4 * max(8, int((hi - lo) / (self.sigma[1] - self.sigma[0]))) + 1)
        tg = self._spline(sg)
        if tg[-1] < tg[0]:
            sg, tg = sg[::-1], tg[::-1]
        tg = np.maximum.accumulate(tg)
        targets = np.asarray(targets, dtype=float)
        inside = (targets >= tg[0]) & (targets <= tg[-1])
        out = np.full(targets.shape, np.nan)
        if not np.any(inside):
            return out
        s = np.interp(targets[inside], tg, sg)
        for _ in range(3):
            d = self._spline(s, 1)
            step = np.where(np.abs(d) > 1e-300, (self._spline(s) - targets[inside]) / d, 0.0)
            s = np.clip(s - step, min(lo, hi), max(lo, hi))
        out[inside] = s
        return out

    def gamma(self, theta) -> np.ndarray:
        """Differential cross section sum over branches of |drho/dtheta|."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        total = np.zeros(theta.shape)
        tmin, tmax = float(np.min(self.theta_u)), float(np.max(self.theta_u))
        m_lo = int(math.floor((tmin - math.pi) / (2 * math.pi))) - 1
        m_hi = int(math.ceil((tmax + math.pi) / (2 * math.pi))) + 1
        for lo, hi in self.branches():
            for m in range(m_lo, m_hi + 1):
                tgt = theta + 2.0 * math.pi * m
                s = self._branch_inverse(lo, hi, tgt)
                ok = ~np.isnan(s)
                if not np.any(ok):
                    continue
                d = np.abs(self._spline(s[ok], 1))
                with np.errstate(divide="ignore"):
                    total[ok] += np.where(d > 0, self.R * np.cos(s[ok]) / d, np.inf)
        return total

    def rho_measure_below(self, theta) -> np.ndarray:
        """Measure of impact parameters whose wrapped angle is <= theta (exact branch integral of Gamma)."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        sg = np.linspace(self.sigma[0], self.sigma[-1], 16 * len(self.sigma))
        w = self.R * np.diff(np.sin(sg))
        mid = 0.5 * (sg[1:] + sg[:-1])
        tw = wrap_angle(self._spline(mid))
        order = np.argsort(tw)
        cum = np.concatenate([[0.0], np.cumsum(w[order])])
        return np.interp(theta, np.concatenate([[tw[order][0]], tw[order]]), cum)

    def mirrored(self) -> "ScatteringTable":
        """Table for the opposite field: theta_{-b}(rho) = -theta_b(-rho)."""
        tu = -self.theta_u[::-1].copy()
        sw = -self.sweep[::-1].copy()
        ta = self.tau[::-1].copy()
        return ScatteringTable(
            sigma=self.sigma, rho=self.rho, theta_u=tu, sweep=sw, tau=ta, R=self.R, eps=self.eps, b=-self.b,
            kind=self.kind, finite_total=self.finite_total, _spline=CubicSpline(self.sigma, tu),
            _tau_spline=CubicSpline(self.sigma, ta), _sweep_spline=CubicSpline(self.sigma, sw),
        )

    # -- serialization -------------------------------------------------------

    def to_csv(self, path) -> None:
        from .tables import write_csv

        meta = {"format": f"scattering-table v{TABLE_VERSION}", "kind": self.kind, "eps": self.eps, "b": self.b,
                "R": self.R}
        rows = zip(self.rho, self.theta, self.dtheta_drho(), self.tau)
        write_csv(path, ("rho", "theta", "dtheta_drho", "tau"), rows, header=meta)


def build_table(pot: PotentialSpec, b: float = 0.0, n: int = 2049) -> ScatteringTable:
    """Tabulate theta, sweep and tau on ``n`` nodes (``n >= 2049`` by default)."""
    if n < 33:
        raise ValueError("table needs at least 33 nodes")
    R = pot.support_radius
    sigma = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n)
    rho = R * np.sin(sigma)
    rho[0], rho[-1] = -R, R
    if pot.hard:
        theta = -math.pi - 2.0 * sigma
        sweep = np.zeros(n)
        tau = np.zeros(n)
        tu = theta
    else:
        sweep = np.empty(n)
        tau = np.empty(n)
        th = np.empty(n)
        symmetric = b == 0.0
        half = n // 2
        idx = range(half, n) if symmetric else range(n)
        for i in idx:
            o = orbit(rho[i], pot, b)
            sweep[i], tau[i], th[i] = o.sweep, o.tau, o.theta
        if symmetric:
            for i in range(half):
                j = n - 1 - i
                sweep[i], tau[i], th[i] = -sweep[j], tau[j], -th[j]
            if n % 2 == 1:
                th[half] = float(wrap_angle(th[half]))
        tu = np.unwrap(th)
    sp = CubicSpline(sigma, tu)
    return ScatteringTable(
        sigma=sigma,
        rho=rho,
        theta_u=tu,
        sweep=sweep,
        tau=tau,
        R=R,
        eps=pot.eps,
        b=b,
        kind=pot.kind,
        finite_total=not isinstance(pot, TruncatedPower),
        _spline=sp,
        _tau_spline=CubicSpline(sigma, tau),
        _sweep_spline=CubicSpline(sigma, sweep),
    )


@dataclass(frozen=True, eq=False)
class CrossSection:
    table: ScatteringTable
    theta_grid: np.ndarray
    gamma: np.ndarray
    turning_theta: np.ndarray
    max_rel_mismatch: float


def cross_section(pot: PotentialSpec, field: Optional[FieldParams], theta_grid, n: int = 2049,
                  n_check: int = 48) -> CrossSection:
    """Gamma(theta) from a table, with the spline derivative cross-checked against
    :func:`dtheta_drho_reference` at ``n_check`` nodes away from turning points."""
    if n < 2048:
        raise ValueError("cross sections need at least 2048 table nodes")
    b = micro_field(pot, field)
    tab = build_table(pot, b, n)
    tg = np.asarray(theta_grid, dtype=float)
    gam = tab.gamma(tg)
    tp = tab.turning_points()
    turning_theta = wrap_angle(tab._spline(tp)) if len(tp) else np.array([])
    mism = 0.0
    if n_check:
        sig = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n_check + 2)[1:-1]
        sig = sig[np.abs(sig) > 1e-9]
        if len(tp):
            sig = sig[np.min(np.abs(sig[:, None] - tp[None, :]), axis=1) > 0.05]
        rr = tab.R * np.sin(sig)
        ref = np.asarray(dtheta_drho_reference(rr, pot, b))
        spl = tab.dtheta_drho(rr)
        scale = np.maximum(np.abs(ref), 1e-6 * np.max(np.abs(ref)))
        mism = float(np.max(np.abs(spl - ref) / scale))
    return CrossSection(tab, tg, gam, np.asarray(turning_theta), mism)


# ---------------------------------------------------------------------------
# grazing-collision diffusion coefficient


@dataclass(frozen=True)
class DiffusionCoefficient:
    explicit: float
    limit: float
    eps: tuple
    at_eps: tuple

    def ratio(self, i: int = -1) -> float:
        return self.at_eps[i] / self.explicit


def _inner_integral(rho: float, profile) -> float:
    if rho <= 0.0:
        return 0.0
    f = lambda t: (rho / math.sin(t)) * float(profile.dphi(rho / math.sin(t)))
    return integrate.quad(f, math.asin(rho), 0.5 * math.pi, epsabs=1e-15, epsrel=1e-12, limit=200)[0]


def xi_explicit(pot: SmoothCompact, mu: float) -> float:
    """(mu/2) int_{-1}^{1} ( int_rho^1 (rho/u) phi'(rho/u) du / sqrt(1-u^2) )^2 drho."""
    val = integrate.quad(lambda r: _inner_integral(r, pot.profile) ** 2, 0.0, 1.0,
                         epsabs=1e-15, epsrel=1e-10, limit=200)
    return mu * val[0]  # even integrand: (mu/2) * 2 * int_0^1


def xi_at(pot: SmoothCompact, mu: float, nodes: int = 400) -> float:
    """(mu eps^{-2 alpha} / 2) int theta_eps^2 drho by Gauss-Legendre in sigma."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    sig = 0.25 * math.pi * (x + 1.0)
    wt = 0.25 * math.pi * w * np.cos(sig)
    th = np.array([orbit(math.sin(s), pot, 0.0).theta for s in sig])
    return mu * pot.coupling**-2 * float(np.sum(wt * th * th))


def xi_grazing_limit(profile, mu: float, alpha: float = 0.1) -> float:
    """eps -> 0 value of :func:`xi_at`, Richardson-extrapolated in the coupling g = eps^alpha."""
    gs = (4e-3, 2e-3, 1e-3)
    vals = [xi_at(SmoothCompact(eps=g ** (1.0 / alpha), alpha=alpha, profile=profile), mu) for g in gs]
    # xi(g) = x0 + c1 g + c2 g^2 through three points with ratio 2
    a, b_, c = vals
    return (8.0 * c - 6.0 * b_ + a) / 3.0


def landau_diffusion_coefficient(pot: SmoothCompact, mu: float, eps_list=(1e-2, 1e-3, 1e-4)) -> DiffusionCoefficient:
    if not isinstance(pot, SmoothCompact):
        raise TypeError("the diffusion coefficient is defined for the smooth compact potential")
    if mu == 0.0 or float(np.max(np.abs(pot.profile.phi(np.linspace(0, 1, 64))))) == 0.0:
        z = tuple(0.0 for _ in eps_list)
        return DiffusionCoefficient(0.0, 0.0, tuple(eps_list), z)
    ex = xi_explicit(pot, mu)
    lim = xi_grazing_limit(pot.profile, mu, pot.alpha)
    at = tuple(xi_at(SmoothCompact(eps=e, alpha=pot.alpha, profile=pot.profile), mu) for e in eps_list)
    return DiffusionCoefficient(ex, lim, tuple(eps_list), at)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True, eq=False)
class AngleSampler:
    theta_grid: np.ndarray
    cdf: np.ndarray
    total: float
    theta_min: float

    def __call__(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        return np.interp(u, self.cdf, self.theta_grid)


def angle_sampler(table: ScatteringTable, theta_min: float = 0.0, n_grid: int = 8193) -> AngleSampler:
    """Inverse-CDF sampler with density proportional to Gamma(theta) 1{|theta| >= theta_min}."""
    if theta_min < 0:
        raise ValueError("theta_min must be non-negative")
    if theta_min == 0.0 and not table.finite_total:
        raise ScatteringError("theta_min = 0 with a divergent total cross section")
    if theta_min >= math.pi:
        raise ValueError("theta_min must be below pi")
    neg = np.linspace(-math.pi, -theta_min, n_grid // 2)
    pos = np.linspace(theta_min, math.pi, n_grid // 2)
    grid = np.concatenate([neg, pos])
    m = table.rho_measure_below(grid)
    # remove the excluded window (-theta_min, theta_min)
    gap = m[n_grid // 2] - m[n_grid // 2 - 1]
    m[n_grid // 2:] -= gap
    m = m - m[0]
    total = float(m[-1])
    if total <= 0:
        raise ScatteringError("empty angular support above theta_min")
    cdf = np.maximum.accumulate(m / total)
    return AngleSampler(grid, cdf, total, theta_min)


def sample_scattering_angle(table: ScatteringTable, rng: np.random.Generator, theta_min: float = 0.0, size=None):
    return angle_sampler(table, theta_min)(rng, size)


# ---------------------------------------------------------------------------
# second route: direct integration of the equations of motion


def angle_by_ode(rho: float, pot: PotentialSpec, b: float = 0.0):
    """Clockwise turn of the velocity and micro time inside the support, from the ODE.

    Independent of :func:`orbit`: the tracer enters the support of radius
    ``R`` moving along +x with impact parameter ``rho`` and is integrated with
    the micro field ``b`` until it leaves.
    """
    from .dynamics import Obstacle, PhaseState, integrate_in_potential

    R = pot.support_radius
    if abs(rho) >= R:
        return 0.0, 0.0
    x0 = np.array([-math.sqrt(R * R - rho * rho), -rho])
    st = PhaseState(x0, np.array([1.0, 0.0]))
    # obstacle radius equal to the support radius puts the integrator in micro units
    out = integrate_in_potential(st, Obstacle((0.0, 0.0), R), pot, FieldParams(b))
    turn = math.atan2(out.exit.v[1], out.exit.v[0])
    return float(wrap_angle(-turn)), float(out.tau)
