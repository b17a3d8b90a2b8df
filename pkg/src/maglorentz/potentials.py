"""Radial scatterer potentials.

All potentials are described in *micro* units: the tracer has unit speed far
from the obstacle, lengths are measured in units of the scale parameter
``eps``, and the interaction is supported on ``r < support_radius``.  The
macroscopic obstacle radius is ``eps * support_radius``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class RadialProfile:
    """A radial shape function on [0, 1] together with its first two derivatives."""

    name: str
    phi: Callable[[Array], Array] = field(compare=False)
    dphi: Callable[[Array], Array] = field(compare=False)
    d2phi: Callable[[Array], Array] = field(compare=False)

    def check(self, n: int = 1024) -> None:
        """Sample the profile and enforce positivity, monotonicity and compact support."""
        r = np.linspace(0.0, 1.0, n)
        p, dp = self.phi(r), self.dphi(r)
        if np.any(p < -1e-14):
            raise ValueError(f"profile {self.name!r} takes negative values")
        if np.any(dp[1:-1] > 1e-14):
            raise ValueError(f"profile {self.name!r} is not non-increasing on (0, 1)")
        outside = self.phi(np.linspace(1.0, 2.0, 64))
        if np.any(np.abs(outside) > 1e-14):
            raise ValueError(f"profile {self.name!r} does not vanish for r >= 1")


def _cubic_phi(r):
    r = np.asarray(r, dtype=float)
    w = np.clip(1.0 - r * r, 0.0, None)
    return w**3


def _cubic_dphi(r):
    r = np.asarray(r, dtype=float)
    w = np.clip(1.0 - r * r, 0.0, None)
    return -6.0 * r * w**2


def _cubic_d2phi(r):
    r = np.asarray(r, dtype=float)
    w = np.clip(1.0 - r * r, 0.0, None)
    return -6.0 * w**2 + 24.0 * r * r * w


def reference_profile() -> RadialProfile:
    """phi(r) = (1 - r^2)^3 on [0, 1], zero outside (C^2, repulsive)."""
    return _REFERENCE


_REFERENCE = RadialProfile("cubic", _cubic_phi, _cubic_dphi, _cubic_d2phi)


def wall_profile(steepness: float, height: float = 1.0) -> RadialProfile:
    """Steep repulsive wall ``height * (1 - exp(-k (1 - r)))``; a mollified hard disk."""
    k = float(steepness)

    def phi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, height * -np.expm1(-k * np.clip(1.0 - r, 0.0, None)), 0.0)

    def dphi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, -height * k * np.exp(-k * np.clip(1.0 - r, 0.0, None)), 0.0)

    def d2phi(r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, -height * k * k * np.exp(-k * np.clip(1.0 - r, 0.0, None)), 0.0)

    return RadialProfile(f"wall(k={k:g},h={height:g})", phi, dphi, d2phi)


class PotentialSpec:
    """Base class.  Subclasses are frozen dataclasses (hashable, cacheable)."""

    kind: str = ""
    eps: float
    hard: bool = False

    @property
    def support_radius(self) -> float:
        return 1.0

    @property
    def macro_radius(self) -> float:
        return self.eps * self.support_radius

    def V(self, r):
        raise NotImplementedError

    def dV(self, r):
        raise NotImplementedError

    def reflective(self) -> bool:
        """True when a head-on tracer cannot reach the centre (bounces back)."""
        return True


@dataclass(frozen=True)
class HardDisk(PotentialSpec):
    eps: float = 1e-3
    kind: str = field(default="hard", init=False)
    hard: bool = field(default=True, init=False)

    def V(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, np.inf, 0.0)

    def dV(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class SmoothCompact(PotentialSpec):
    """Weak-coupling potential ``eps**alpha * phi(r)`` supported on the unit disk."""

    eps: float = 1e-3
    alpha: float = 0.1
    profile: RadialProfile = field(default_factory=reference_profile)
    kind: str = field(default="smooth", init=False)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.profile.check()

    @property
    def coupling(self) -> float:
        return self.eps**self.alpha

    def V(self, r):
        return self.coupling * self.profile.phi(r)

    def dV(self, r):
        return self.coupling * self.profile.dphi(r)

    def reflective(self) -> bool:
        return 2.0 * self.coupling * float(self.profile.phi(0.0)) >= 1.0


@dataclass(frozen=True)
class TruncatedPower(PotentialSpec):
    """Inverse power law ``r**-s`` cut off at ``A = eps**(gamma - 1)``.

    The constant tail beyond ``A`` is subtracted, so the potential vanishes at the
    support boundary and the tracer enters with unit speed.
    """

    eps: float = 1e-3
    s: float = 3.0
    gamma: float = 0.9
    kind: str = field(default="power", init=False)

    def __post_init__(self):
        if self.s <= 2:
            raise ValueError("exponent s must exceed 2")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @property
    def support_radius(self) -> float:
        return self.eps ** (self.gamma - 1.0)

    def V(self, r):
        r = np.asarray(r, dtype=float)
        A = self.support_radius
        with np.errstate(divide="ignore"):
            return np.where(r < A, r ** (-self.s) - A ** (-self.s), 0.0)

    def dV(self, r):
        r = np.asarray(r, dtype=float)
        A = self.support_radius
        with np.errstate(divide="ignore"):
            return np.where(r < A, -self.s * r ** (-self.s - 1.0), 0.0)
