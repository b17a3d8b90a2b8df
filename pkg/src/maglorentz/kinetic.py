"""Linear kinetic equations on the velocity circle with magnetic transport.

Angular dependence is spectral: ``nphi`` equispaced angles, Fourier modes
``f_k = sum_j f(phi_j) exp(-i k phi_j)``.  The field rotates velocities
counter-clockwise, so free transport sends ``f(phi)`` to ``f(phi - Omega t)``,
i.e. ``f_k -> f_k exp(-i k Omega t)``.  Every collision operator here is a
convolution on the circle and acts diagonally: ``f_k -> exp(lambda_k t) f_k``.

Jump kernels use the clockwise scattering angle ``theta(rho)`` of the scattering
module; a collision turns the velocity by ``-theta`` and the density gains from
the pre-collisional angle ``phi + theta``, hence
``lambda_k = rate * int (exp(i k theta(rho)) - 1) drho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import ndimage, optimize, special

from .dynamics import FieldParams
from .medium import ScalingRegime
from .potentials import HardDisk, PotentialSpec, TruncatedPower
from .scattering import ScatteringTable, angle_sampler, build_table, wrap_angle
from .tables import write_csv

FIELD_FORMAT_VERSION = 1


class SolverError(RuntimeError):
    """Instability monitor tripped (mass drift or negativity)."""


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# fields


@dataclass
class AngularField:
    """f(phi) (homogeneous) or f(x, y, phi) on cell centres of a box (gridded)."""

    values: np.ndarray
    t: float = 0.0
    box: Optional[tuple] = None
    boundary: str = "periodic"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not _is_pow2(self.nphi):
            raise ValueError("nphi must be a power of two")
        if self.values.ndim == 3:
            if self.box is None:
                raise ValueError("gridded fields need a box")
            if self.boundary not in ("periodic", "absorbing"):
                raise ValueError(f"unknown boundary {self.boundary!r}")
        elif self.values.ndim != 1:
            raise ValueError("values must be (nphi,) or (nx, ny, nphi)")

    @property
    def mode(self) -> str:
        return "homogeneous" if self.values.ndim == 1 else "gridded"

    @property
    def nphi(self) -> int:
        return self.values.shape[-1]

    @property
    def phis(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nphi) / self.nphi

    @property
    def dphi(self) -> float:
        return 2.0 * np.pi / self.nphi

    @property
    def spacing(self):
        nx, ny = self.values.shape[:2]
        return self.box[0] / nx, self.box[1] / ny

    def cell_centers(self):
        nx, ny = self.values.shape[:2]
        hx, hy = self.spacing
        return (np.arange(nx) + 0.5) * hx, (np.arange(ny) + 0.5) * hy

    def mass(self) -> float:
        m = float(np.sum(self.values)) * self.dphi
        if self.mode == "gridded":
            hx, hy = self.spacing
            m *= hx * hy
        return m

    def marginal(self) -> np.ndarray:
        """Angular density integrated over space (the field itself when homogeneous)."""
        if self.mode == "homogeneous":
            return self.values.copy()
        hx, hy = self.spacing
        return self.values.sum(axis=(0, 1)) * hx * hy

    def modes(self) -> np.ndarray:
        """Normalised Fourier coefficients ``(1/2pi) int f(phi) exp(-i k phi) dphi`` of the marginal."""
        return np.fft.rfft(self.marginal()) / self.nphi

    def copy(self) -> "AngularField":
        return replace(self, values=self.values.copy())

    @classmethod
    def homogeneous(cls, f: Callable, nphi: int, t: float = 0.0) -> "AngularField":
        phis = 2.0 * np.pi * np.arange(nphi) / nphi
        return cls(np.asarray(f(phis), dtype=float) * np.ones(nphi), t)

    @classmethod
    def gridded(cls, f: Callable, nx: int, ny: int, nphi: int, box=(1.0, 1.0), boundary: str = "periodic",
                t: float = 0.0) -> "AngularField":
        x = (np.arange(nx) + 0.5) * box[0] / nx
        y = (np.arange(ny) + 0.5) * box[1] / ny
        phis = 2.0 * np.pi * np.arange(nphi) / nphi
        X, Y, P = np.meshgrid(x, y, phis, indexing="ij")
        return cls(np.asarray(f(X, Y, P), dtype=float) * np.ones(X.shape), t, tuple(box), boundary)

    def to_csv(self, path, kernel_id: str = "", extra: Optional[dict] = None) -> None:
        meta = {"format": f"angular-field v{FIELD_FORMAT_VERSION}", "mode": self.mode, "nphi": self.nphi,
                "t": float(self.t), "kernel": kernel_id}
        if self.mode == "gridded":
            meta.update(nx=self.values.shape[0], ny=self.values.shape[1], box=list(self.box),
                        boundary=self.boundary)
        if extra:
            meta.update(extra)
        vals = self.values if self.mode == "gridded" else self.values[None, None, :]
        rows = ((i, j, k, v) for (i, j, k), v in np.ndenumerate(vals))
        write_csv(path, ("ix", "iy", "iphi", "value"), rows, header=meta)


# ---------------------------------------------------------------------------
# transport


def _spectral_rotate(values: np.ndarray, angle: float) -> np.ndarray:
    """g(phi) = f(phi - angle) along the last axis, exactly for band-limited data."""
    n = values.shape[-1]
    F = np.fft.rfft(values, axis=-1)
    k = np.arange(F.shape[-1])
    ph = np.exp(-1j * k * angle)
    if n % 2 == 0:
        # Nyquist mode: keep the real part of the shifted cosine
        ph[-1] = math.cos(n // 2 * angle)
    return np.fft.irfft(F * ph, n=n, axis=-1)


def characteristic_displacement(phis, omega: float, dt: float) -> np.ndarray:
    """Foot minus arrival point, ``x(t) - x(t + dt)``, for arrival velocity angle ``phi``."""
    ang = np.asarray(phis, dtype=float) - omega * dt
    vf = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    pf = np.stack([-vf[:, 1], vf[:, 0]], axis=-1)
    if omega == 0.0:
        S, C = dt, 0.0
    else:
        S = math.sin(omega * dt) / omega
        C = 2.0 * math.sin(0.5 * omega * dt) ** 2 / omega
    return -(S * vf + C * pf)


def _spatial_shift(plane: np.ndarray, dx: float, dy: float, hx: float, hy: float, boundary: str,
                   interpolation: str) -> np.ndarray:
    """g(x) = f(x + d) on the cell-centre grid."""
    if interpolation == "spectral":
        if boundary != "periodic":
            raise ValueError("spectral interpolation needs a periodic box")
        nx, ny = plane.shape
        kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=hx)
        ky = 2.0 * np.pi * np.fft.rfftfreq(ny, d=hy)
        F = np.fft.rfft2(plane)
        ph = np.exp(1j * (kx[:, None] * dx + ky[None, :] * dy))
        if nx % 2 == 0:
            ph[nx // 2, :] = ph[nx // 2, :].real
        if ny % 2 == 0:
            ph[:, -1] = ph[:, -1].real
        return np.fft.irfft2(F * ph, s=plane.shape)
    mode = "grid-wrap" if boundary == "periodic" else "constant"
    return ndimage.shift(plane, (-dx / hx, -dy / hy), order=1, mode=mode, cval=0.0, prefilter=False)


def transport_step(f: AngularField, dt: float, fp: FieldParams, interpolation: str = "bilinear",
                   guard: bool = True) -> AngularField:
    """Semi-Lagrangian step along exact cyclotron characteristics."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if guard and fp.B != 0 and dt > fp.T_L / 16.0 * (1.0 + 1e-12):
        raise ValueError("dt exceeds T_L / 16")
    om = fp.Omega
    g = _spectral_rotate(f.values, om * dt) if om != 0 else f.values.copy()
    if f.mode == "gridded":
        hx, hy = f.spacing
        disp = characteristic_displacement(f.phis, om, dt)
        out = np.empty_like(g)
        for j in range(f.nphi):
            out[:, :, j] = _spatial_shift(g[:, :, j], disp[j, 0], disp[j, 1], hx, hy, f.boundary, interpolation)
        g = out
    return replace(f, values=g, t=f.t + dt)


def exact_rotation(f: AngularField, t: float, fp: FieldParams) -> AngularField:
    """Homogeneous transport over any time (no step guard)."""
    if f.mode != "homogeneous":
        raise ValueError("exact_rotation is homogeneous only")
    return replace(f, values=_spectral_rotate(f.values, fp.Omega * t), t=f.t + t)


# ---------------------------------------------------------------------------
# collision kernels

KERNEL_KINDS = ("boltzmann-eps", "truncated", "uncut", "landau", "hard-gbe")

_GL_NODES = 24
_GL_PANELS = 128


def _crossings(table: ScatteringTable, theta_min: float) -> list:
    """sigma values where the wrapped angle crosses +-theta_min."""
    sg = np.linspace(table.sigma[0], table.sigma[-1], 16 * len(table.sigma))
    w = np.abs(wrap_angle(table._spline(sg))) - theta_min
    out = []
    idx = np.nonzero(np.sign(w[:-1]) * np.sign(w[1:]) < 0)[0]
    f = lambda s: abs(float(wrap_angle(table._spline(s)))) - theta_min
    for i in idx:
        out.append(optimize.brentq(f, sg[i], sg[i + 1], xtol=1e-15))
    return out


@dataclass(frozen=True, eq=False)
class CollisionKernel:
    """Spectral collision operator.

    ``rate`` multiplies the impact-parameter integral (macro collisions per unit
    time and unit micro impact parameter).  ``landau`` uses ``xi`` only;
    ``hard-gbe`` carries ``T_L`` and the collision frequency ``nu`` for the
    memory equation.
    """

    kind: str
    rate: float = 0.0
    table: Optional[ScatteringTable] = None
    xi: float = 0.0
    theta_min: float = 0.0
    T_L: float = math.inf
    nu: float = 0.0
    label: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind in ("boltzmann-eps", "truncated", "uncut") and self.table is None:
            raise ValueError("jump kernels need a scattering table")
        if self.kind == "uncut" and not self.theta_min > 0:
            raise ValueError("the un-cutoff kernel needs theta_min > 0")

    @property
    def ident(self) -> str:
        return self.label or self.kind

    def _jump_integral(self, ks: np.ndarray) -> np.ndarray:
        tab = self.table
        cuts = [tab.sigma[0], tab.sigma[-1]]
        if self.theta_min > 0:
            cuts += _crossings(tab, self.theta_min)
        cuts = np.unique(np.array(cuts))
        x, w = leggauss(_GL_NODES)
        total = np.zeros(len(ks), dtype=complex)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            if self.theta_min > 0:
                mid = abs(float(wrap_angle(tab._spline(0.5 * (lo + hi)))))
                if mid < self.theta_min:
                    continue
            npan = max(1, int(math.ceil(_GL_PANELS * (hi - lo) / math.pi)))
            edges = np.linspace(lo, hi, npan + 1)
            a, b = edges[:-1, None], edges[1:, None]
            s = (0.5 * (b - a) * x[None, :] + 0.5 * (a + b)).ravel()
            ww = (0.5 * (b - a) * w[None, :]).ravel() * tab.R * np.cos(s)
            th = tab._spline(s)
            total += (np.exp(1j * np.outer(ks, th)) - 1.0) @ ww
        return total

    def multipliers(self, nphi: int) -> np.ndarray:
        """lambda_k for k = 0 .. nphi/2 (rfft layout); lambda_0 = 0 exactly."""
        if not _is_pow2(nphi):
            raise ValueError("nphi must be a power of two")
        got = self._cache.get(nphi)
        if got is not None:
            return got
        ks = np.arange(nphi // 2 + 1)
        if self.kind == "landau":
            lam = (-self.xi * ks.astype(float) ** 2).astype(complex)
        elif self.kind == "hard-gbe":
            lam = self.rate * gbe_kernel_weights(0, ks)
        else:
            lam = self.rate * self._jump_integral(ks.astype(float))
        lam[0] = 0.0
        if nphi % 2 == 0:
            lam[-1] = lam[-1].real
        self._cache[nphi] = lam
        return lam

    @property
    def total_rate(self) -> float:
        """Jump rate (inf for Landau)."""
        if self.kind == "landau":
            return math.inf
        if self.kind == "hard-gbe":
            return 2.0 * self.rate
        if self.theta_min > 0:
            return self.rate * float(self.sampler().total)
        return self.rate * 2.0 * self.table.R

    def sampler(self):
        s = self._cache.get("sampler")
        if s is None:
            s = angle_sampler(self.table, self.theta_min)
            self._cache["sampler"] = s
        return s


def boltzmann_eps_kernel(regime: ScalingRegime, field: Optional[FieldParams] = None, n: int = 2049) -> CollisionKernel:
    """Jump kernel of the scaled medium (field acting inside the support when given)."""
    pot = regime.potential
    b = 0.0 if field is None else pot.eps * field.B
    tab = build_table(pot, b, n=n)
    scale = regime.obstacle_radius / pot.support_radius
    kind = "truncated" if isinstance(pot, TruncatedPower) else "boltzmann-eps"
    return CollisionKernel(kind, rate=regime.mu_eps * scale, table=tab, label=f"{kind}:{pot.kind}:eps={pot.eps!r}")


def landau_kernel(xi: float) -> CollisionKernel:
    if xi < 0:
        raise ValueError("xi must be non-negative")
    return CollisionKernel("landau", xi=xi, label=f"landau:xi={xi!r}")


def _power_law_small_angle_radius(s: float, theta: float) -> float:
    """rho with theta(rho) ~ theta for the untruncated r^-s law (small-angle impulse formula)."""
    c = math.sqrt(math.pi) * special.gamma(0.5 * (s + 1.0)) / special.gamma(0.5 * s)
    return (c / theta) ** (1.0 / s)


def uncut_kernel(mu: float, s: float, theta_min: float, n: int = 4097) -> CollisionKernel:
    """Power-law kernel restricted to ``|theta| >= theta_min``.

    The potential is truncated well beyond the impact parameter whose deflection
    equals ``theta_min`` so the truncation does not affect the retained angles
    at the tabulation accuracy.
    """
    if not theta_min > 0:
        raise ValueError("theta_min must be positive")
    A = 8.0 * max(_power_law_small_angle_radius(s, theta_min), 1.0)
    gamma = 0.9
    pot = TruncatedPower(eps=A ** (1.0 / (gamma - 1.0)), s=s, gamma=gamma)
    tab = build_table(pot, 0.0, n=n)
    return CollisionKernel("uncut", rate=mu, table=tab, theta_min=theta_min,
                           label=f"uncut:s={s!r}:theta_min={theta_min!r}")


def hard_disk_gbe_kernel(mu: float, fp: FieldParams, nu: Optional[float] = None) -> CollisionKernel:
    """Hard disks in the Boltzmann-Grad scaling; ``nu = 2 mu`` unless given."""
    nu = 2.0 * mu if nu is None else nu
    return CollisionKernel("hard-gbe", rate=mu, T_L=fp.T_L, nu=nu, label=f"hard-gbe:mu={mu!r}:nu={nu!r}")


def markov_hard_disk_kernel(mu: float) -> CollisionKernel:
    return CollisionKernel("boltzmann-eps", rate=mu, table=build_table(HardDisk(1.0)), label=f"hard:mu={mu!r}")


# ---------------------------------------------------------------------------
# collision step


def collide_step(f: AngularField, kernel: CollisionKernel, dt: float) -> AngularField:
    """Exact exponential step f_k <- exp(lambda_k dt) f_k."""
    lam = kernel.multipliers(f.nphi)
    F = np.fft.rfft(f.values, axis=-1)
    return replace(f, values=np.fft.irfft(F * np.exp(lam * dt), n=f.nphi, axis=-1))


# ---------------------------------------------------------------------------
# generalized Boltzmann equation (memory of full Larmor orbits)


def gbe_kernel_weights(k: int, modes, fixed_angle: Optional[float] = None, n_quad: int = 64) -> np.ndarray:
    """Mode weights ``G_k(m)`` of the lag-``k`` term for hard disks.

    With ``psi`` the angle of ``n`` from ``v`` and ``theta(psi) = pi + 2 psi``:
    ``G_k(m) = int_{cos psi > 0} cos psi e^{i m (k+1) theta} + int_{cos psi < 0} cos psi e^{i m k theta}``.
    The first half-circle is the gain (post-collisional reading, shifted by k
    more turns), the second the loss.  ``fixed_angle`` replaces ``k theta(psi)``
    in the shift by ``k * fixed_angle``.
    """
    m = np.asarray(modes, dtype=float)
    x, w = leggauss(n_quad)
    psi = 0.5 * math.pi * x  # gain half, cos psi > 0
    wg = 0.5 * math.pi * w * np.cos(psi)
    th = math.pi + 2.0 * psi
    psl = math.pi + psi  # loss half, cos < 0
    wl = 0.5 * math.pi * w * np.cos(psl)
    thl = math.pi + 2.0 * psl
    if fixed_angle is None:
        gain = np.exp(1j * np.outer(m, (k + 1) * th)) @ wg
        loss = np.exp(1j * np.outer(m, k * thl)) @ wl
    else:
        shift = np.exp(1j * m * k * fixed_angle)
        gain = shift * (np.exp(1j * np.outer(m, th)) @ wg)
        loss = shift * (wl.sum() + 0j) * np.ones(len(m))
    return gain + loss


def _phi12(z: np.ndarray):
    """(e^z - 1)/z and (e^z - 1 - z)/z^2 without cancellation for small |z|."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 1 + z / 2 + z * z / 6 + z**3 / 24, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z * z / 24 + z**3 / 120, (np.expm1(zs) - zs) / (zs * zs))
    return p1, p2


@dataclass
class GBEHistory:
    """Ring buffer of rotating-frame modes at every step over the last ``kmax`` periods."""

    steps_per_period: int
    buffer: list = field(default_factory=list)  # buffer[n] = modes at step n

    def at(self, n: int) -> np.ndarray:
        if n < 0 or n >= len(self.buffer) or self.buffer[n] is None:
            raise KeyError(f"history lag not stored (step {n})")
        return self.buffer[n]

    def push(self, g: np.ndarray, keep_periods: int) -> None:
        self.buffer.append(g)
        drop = len(self.buffer) - 1 - keep_periods * self.steps_per_period - 1
        if drop >= 0 and self.buffer[drop] is not None:
            self.buffer[drop] = None


class GBESolver:
    """Homogeneous memory equation, integrated in the frame co-rotating with the field.

    In that frame the lagged reads at multiples of ``T_L`` carry no phase, and
    ``g_m' = sum_k c_k(t) G_k(m) g_m(t - k T_L)`` with
    ``c_k = mu e^{-nu k T_L}``, times ``(1 - e^{-nu T_L})`` for every read whose
    time argument exceeds ``T_L`` (``lag_factor="argument"``) or for every
    ``k >= 1`` read (``lag_factor="lagged"``).  The ``k = 0`` part is integrated
    exactly; the memory forcing is linear in time across a step.
    """

    def __init__(self, f0: AngularField, kernel: CollisionKernel, fp: FieldParams, dt: float,
                 fixed_angle: Optional[float] = None, lag_factor: str = "argument", max_lags: Optional[int] = None):
        if f0.mode != "homogeneous":
            raise ValueError("the memory solver is homogeneous")
        if kernel.kind != "hard-gbe":
            raise ValueError("GBESolver needs a hard-gbe kernel")
        if fp.B == 0:
            raise ValueError("memory terms need a field")
        if lag_factor not in ("argument", "lagged"):
            raise ValueError("lag_factor is 'argument' or 'lagged'")
        T = fp.T_L
        spp = T / dt
        if abs(spp - round(spp)) > 1e-9 * spp or round(spp) < 1:
            raise ValueError("dt must divide T_L")
        self.spp = int(round(spp))
        self.dt = T / self.spp
        self.fp = fp
        self.kernel = kernel
        self.nphi = f0.nphi
        self.modes = np.arange(self.nphi // 2 + 1)
        self.fixed_angle = fixed_angle
        self.lag_factor = lag_factor
        self.mu = kernel.rate
        self.decay = math.exp(-kernel.nu * T)
        # lags whose weight is below 1e-18 of the first are dropped
        if max_lags is None:
            max_lags = 1 if self.decay == 0 else max(1, int(math.ceil(-math.log(1e-18) / max(kernel.nu * T, 1e-300))))
        self.max_lags = max_lags
        self._G = {}
        self.n = 0
        self.t0 = f0.t
        g0 = np.fft.rfft(f0.values) / self.nphi
        self.hist = GBEHistory(self.spp)
        self.hist.push(g0, max_lags)

    def G(self, k: int) -> np.ndarray:
        got = self._G.get(k)
        if got is None:
            got = gbe_kernel_weights(k, self.modes, self.fixed_angle)
            got[0] = 0.0
            self._G[k] = got
        return got

    def _factor(self, k: int, n_arg: int) -> float:
        """Weight of the lag-k read at argument step ``n_arg`` (time n_arg * dt since start)."""
        c = self.mu * self.decay**k
        if self.lag_factor == "argument":
            if n_arg > self.spp:
                c *= 1.0 - self.decay
        elif k >= 1:
            c *= 1.0 - self.decay
        return c

    def _memory(self, n: int) -> np.ndarray:
        """Forcing sum_{k>=1} c_k G_k g(t_n - k T_L) at step n (zero when no lag exists)."""
        out = np.zeros(len(self.modes), dtype=complex)
        for k in range(1, self.max_lags + 1):
            na = n - k * self.spp
            if na < 0:
                break
            out += self._factor(k, na) * self.G(k) * self.hist.at(na)
        return out

    def step(self) -> None:
        n = self.n
        dt = self.dt
        # the k = 0 coefficient is constant over the step: its argument is the current time,
        # and step boundaries fall on multiples of T_L
        lam = self._factor(0, n + 1) * self.G(0)
        g = self.hist.at(n)
        F0 = self._memory(n)
        F1 = self._memory(n + 1)
        z = lam * dt
        p1, p2 = _phi12(z)
        g1 = np.exp(z) * g + dt * (p1 * F0 + p2 * (F1 - F0))
        g1[0] = g[0]
        self.hist.push(g1, self.max_lags)
        self.n += 1

    @property
    def t(self) -> float:
        return self.t0 + self.n * self.dt

    def field(self) -> AngularField:
        """Current lab-frame field."""
        g = self.hist.at(self.n) * self.nphi
        ph = np.exp(-1j * self.modes * self.fp.Omega * (self.n * self.dt))
        if self.nphi % 2 == 0:
            ph[-1] = ph[-1].real
        return AngularField(np.fft.irfft(g * ph, n=self.nphi), self.t)


def gbe_step(solver: GBESolver) -> AngularField:
    """Advance the memory equation by one step and return the lab-frame field."""
    solver.step()
    return solver.field()


# ---------------------------------------------------------------------------
# driver


@dataclass
class Solution:
    times: List[float]
    fields: List[AngularField]
    final: AngularField
    mass0: float
    max_mass_drift: float
    min_value: float
    steps: int

    def checkpoint(self, t: float) -> AngularField:
        i = int(np.argmin(np.abs(np.array(self.times) - t)))
        return self.fields[i]


def _check(f: AngularField, mass0: float, stats: dict) -> None:
    m = f.mass()
    drift = abs(m - mass0) / max(abs(mass0), 1e-300)
    mn = float(np.min(f.values))
    stats["drift"] = max(stats["drift"], drift)
    stats["min"] = min(stats["min"], mn)
    if drift > 1e-9:
        raise SolverError(f"mass drift {drift:.3e} at t = {f.t!r} exceeds 1e-9")
    if mn < -1e-6:
        raise SolverError(f"negative value {mn:.3e} at t = {f.t!r}")


def solve(
    f0: AngularField,
    kernel: CollisionKernel,
    fp: FieldParams,
    t_end: float,
    dt: float,
    checkpoints: Sequence[float] = (),
    interpolation: str = "bilinear",
    monitor: bool = True,
    **gbe_options,
) -> Solution:
    """Integrate to ``t_end``: Strang splitting T(dt/2) C(dt) T(dt/2), or the memory solver."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    nsteps = int(round((t_end - f0.t) / dt))
    if nsteps < 0 or abs(f0.t + nsteps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("t_end - t0 must be a multiple of dt")
    stats = {"drift": 0.0, "min": float(np.min(f0.values))}
    mass0 = f0.mass()
    cps = sorted(float(c) for c in checkpoints)
    cp_steps = {int(round((c - f0.t) / dt)): c for c in cps}
    times, fields = [], []
    if 0 in cp_steps:
        times.append(f0.t)
        fields.append(f0.copy())
    if kernel.kind == "hard-gbe":
        solver = GBESolver(f0, kernel, fp, dt, **gbe_options)
        f = f0
        for n in range(1, nsteps + 1):
            f = gbe_step(solver)
            if monitor:
                _check(f, mass0, stats)
            if n in cp_steps:
                times.append(f.t)
                fields.append(f)
    else:
        f = f0.copy()
        half = 0.5 * dt
        homog = f.mode == "homogeneous"
        for n in range(1, nsteps + 1):
            if homog:
                f = exact_rotation(f, half, fp)
                f = collide_step(f, kernel, dt)
                f = exact_rotation(f, half, fp)
            else:
                f = transport_step(f, half, fp, interpolation)
                f = collide_step(f, kernel, dt)
                f = transport_step(f, half, fp, interpolation)
            f.t = f0.t + n * dt
            if monitor:
                _check(f, mass0, stats)
            if n in cp_steps:
                times.append(f.t)
                fields.append(f.copy())
    return Solution(times, fields, f, mass0, stats["drift"], stats["min"], nsteps)


def exact_homogeneous(f0: AngularField, kernel: CollisionKernel, fp: FieldParams, t: float) -> AngularField:
    """Closed-form homogeneous solution of a Markovian kernel: rotation and decay commute."""
    if kernel.kind == "hard-gbe":
        raise ValueError("no closed form for the memory equation")
    lam = kernel.multipliers(f0.nphi)
    k = np.arange(len(lam))
    ph = np.exp((lam - 1j * k * fp.Omega) * t)
    if f0.nphi % 2 == 0:
        ph[-1] = ph[-1].real
    return AngularField(np.fft.irfft(np.fft.rfft(f0.values) * ph, n=f0.nphi), f0.t + t)


def operator_gap(kernel: CollisionKernel, xi: float, g: Callable, nphi: int = 64) -> float:
    """L2 norm on the circle of ``(L - xi Laplacian) g``."""
    lam = kernel.multipliers(nphi)
    k = np.arange(len(lam))
    phis = 2.0 * np.pi * np.arange(nphi) / nphi
    G = np.fft.rfft(g(phis))
    r = np.fft.irfft(G * (lam + xi * k**2), n=nphi)
    return float(math.sqrt(np.sum(r * r) * 2.0 * np.pi / nphi))


# ---------------------------------------------------------------------------
# particle method


@dataclass
class DSMCResult:
    phis: np.ndarray  # samples of the final velocity angle
    nphi: int
    t: float

    @property
    def n(self) -> int:
        return len(self.phis)

    def histogram(self):
        """Density on the angular grid (bins centred on the grid angles) and per-bin stderr."""
        h = 2.0 * np.pi / self.nphi
        idx = np.floor(np.mod(self.phis + 0.5 * h, 2.0 * np.pi) / h).astype(int) % self.nphi
        counts = np.bincount(idx, minlength=self.nphi).astype(float)
        p = counts / self.n
        dens = p / h
        se = np.sqrt(p * (1 - p) / self.n) / h
        return dens, se

    def mode(self, k: int):
        """``(1/2pi) E exp(-i k phi)`` for a unit-mass density, with its standard error."""
        z = np.exp(-1j * k * self.phis)
        m = z.mean() / (2.0 * np.pi)
        se = math.sqrt(float(np.var(z.real, ddof=1) + np.var(z.imag, ddof=1)) / self.n) / (2.0 * np.pi)
        return complex(m), se

    def field(self) -> AngularField:
        return AngularField(self.histogram()[0], self.t)


def dsmc_sample(
    sampler: Callable,
    kernel: Optional[CollisionKernel],
    fp: FieldParams,
    t_end: float,
    n_particles: int,
    seed: int,
    nphi: int = 64,
    chunk: int = 200_000,
) -> DSMCResult:
    """Independent paths of the velocity jump process with cyclotron rotation.

    ``sampler(rng, n)`` draws initial angles.  In the homogeneous setting only
    the velocity angle matters, and rotation commutes with jumps, so the final
    angle is ``phi0 + Omega t - sum(theta)`` with a Poisson number of jumps.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    out = np.empty(n_particles)
    done = 0
    if kernel is not None and kernel.kind == "hard-gbe":
        raise ValueError("use markov_hard_disk_kernel for particle paths")
    rate = 0.0 if kernel is None else kernel.total_rate
    if kernel is not None and kernel.kind != "landau":
        if not math.isfinite(rate) or rate > 1e8:
            raise ValueError("total jump rate is not finite; raise theta_min")
    while done < n_particles:
        m = min(chunk, n_particles - done)
        phi = np.asarray(sampler(rng, m), dtype=float) + fp.Omega * t_end
        if kernel is not None and kernel.kind == "landau":
            phi += math.sqrt(2.0 * kernel.xi * t_end) * rng.standard_normal(m)
        elif rate > 0:
            nj = rng.poisson(rate * t_end, m)
            tot = int(nj.sum())
            if tot:
                if kernel.theta_min > 0:
                    th = kernel.sampler()(rng, tot)
                else:
                    R = kernel.table.R
                    th = kernel.table.theta_at(rng.uniform(-R, R, tot))
                owner = np.repeat(np.arange(m), nj)
                phi -= np.bincount(owner, weights=th, minlength=m)
        out[done : done + m] = np.mod(phi, 2.0 * np.pi)
        done += m
    return DSMCResult(out, nphi, t_end)
