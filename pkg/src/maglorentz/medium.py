"""Poisson scatterer configurations, generated lazily cell by cell.

Every cell's content is a pure function of ``(seed, cell index)``: the cell's
generator is a Philox stream keyed by those integers, so the sample does not
depend on the order in which cells are visited (forward and backward replays
see the same obstacles).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

import numpy as np

from .dynamics import FieldParams, Obstacle
from .potentials import HardDisk, PotentialSpec, RadialProfile, SmoothCompact, TruncatedPower, reference_profile

_ID_OFFSET = 1 << 20
_ID_K_BITS = 21


def pack_id(ix: int, iy: int, k: int) -> int:
    # 21 bits per field; anything outside would silently alias another cell
    if not (-_ID_OFFSET <= ix < _ID_OFFSET and -_ID_OFFSET <= iy < _ID_OFFSET):
        raise ValueError(f"cell index ({ix}, {iy}) outside +-2^20")
    if not 0 <= k < (1 << _ID_K_BITS):
        raise ValueError(f"in-cell index {k} does not fit in {_ID_K_BITS} bits")
    return ((ix + _ID_OFFSET) << (2 * _ID_K_BITS)) | ((iy + _ID_OFFSET) << _ID_K_BITS) | k


def unpack_id(ident: int):
    mask = (1 << _ID_K_BITS) - 1
    return ((ident >> (2 * _ID_K_BITS)) & mask) - _ID_OFFSET, ((ident >> _ID_K_BITS) & mask) - _ID_OFFSET, ident & mask


def _zigzag(n: int) -> int:
    return 2 * n if n >= 0 else -2 * n - 1


def cell_generator(seed: int, ix: int, iy: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one cell (Philox keyed through a SeedSequence)."""
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=(_zigzag(ix), _zigzag(iy), stream))
    return np.random.Generator(np.random.Philox(ss))


REGIME_KINDS = ("weak", "intermediate", "boltzmann-grad", "long-range")


@dataclass(frozen=True)
class ScalingRegime:
    """Obstacle density, radius and potential as functions of ``eps``.

    ``weak`` and ``intermediate``: smooth potential ``eps^alpha phi`` of range
    ``eps`` with density ``mu eps^-(1+2 alpha)``.  ``boltzmann-grad``: hard disks
    of radius ``eps`` with density ``mu / eps``.  ``long-range``: truncated
    ``r^-s`` with macroscopic range ``eps^gamma`` and density ``mu / eps``.
    """

    kind: str
    mu: float
    eps: float
    alpha: float = 0.1
    gamma: float = 0.9
    s: float = 3.0
    profile: RadialProfile = field(default_factory=reference_profile, compare=False)
    hard: bool = False

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ValueError(f"unknown regime kind {self.kind!r}")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def validate(self) -> "ScalingRegime":
        """Enforce the parameter domains of the limit theorems."""
        if self.kind == "intermediate" and not 0.0 < self.alpha < 0.125:
            raise ValueError("alpha must lie in (0, 1/8) for the intermediate regime")
        if self.kind == "weak" and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.kind == "long-range":
            if not 6.0 / 7.0 < self.gamma < 1.0:
                raise ValueError("gamma must lie in (6/7, 1)")
            if not self.s > 2:
                raise ValueError("s must exceed 2")
        return self

    @property
    def delta(self) -> float:
        return 1.0 + 2.0 * self.alpha if self.kind in ("weak", "intermediate") else 1.0

    @property
    def mu_eps(self) -> float:
        return self.mu * self.eps ** (-self.delta)

    @property
    def potential(self) -> PotentialSpec:
        if self.kind == "boltzmann-grad" or self.hard:
            return HardDisk(eps=self.eps)
        if self.kind == "long-range":
            return TruncatedPower(eps=self.eps, s=self.s, gamma=self.gamma)
        return SmoothCompact(eps=self.eps, alpha=self.alpha, profile=self.profile)

    @property
    def obstacle_radius(self) -> float:
        return self.potential.macro_radius

    @property
    def collision_rate(self) -> float:
        """Rate of support entries of a straight path: mu_eps * 2 * radius."""
        return 2.0 * self.mu_eps * self.obstacle_radius

    def with_eps(self, eps: float) -> "ScalingRegime":
        return replace(self, eps=eps)


class MediumSample:
    """Quenched Poisson configuration, materialized on first touch of each cell."""

    def __init__(self, seed: int, regime: ScalingRegime, field: Optional[FieldParams] = None,
                 cell_size: Optional[float] = None, stream: int = 0):
        self.seed = int(seed)
        self.regime = regime
        self.radius = regime.obstacle_radius
        self.mu_eps = regime.mu_eps
        if cell_size is None:
            rl = field.R_L if field is not None else math.inf
            cell_size = max(4.0 * self.radius, rl / 8.0 if math.isfinite(rl) else 0.0)
            if cell_size <= 0:
                cell_size = 4.0 * self.radius
            # keep the expected cell occupancy moderate
            if self.mu_eps > 0:
                cell_size = min(cell_size, max(4.0 * self.radius, math.sqrt(256.0 / self.mu_eps)))
        self.cell_size = float(cell_size)
        self.stream = stream
        self._cells: dict = {}
        self._lock = threading.Lock()

    # -- cell level ------------------------------------------------------------

    def cell(self, ix: int, iy: int):
        """Centers (n, 2) and packed ids (n,) of one cell."""
        key = (ix, iy)
        got = self._cells.get(key)
        if got is not None:
            return got
        made = self._make_cell(ix, iy)
        with self._lock:
            return self._cells.setdefault(key, made)

    def _make_cell(self, ix: int, iy: int):
        h = self.cell_size
        lam = self.mu_eps * h * h
        if lam == 0:
            return np.empty((0, 2)), np.empty(0, dtype=np.int64)
        rng = cell_generator(self.seed, ix, iy, self.stream)
        n = int(rng.poisson(lam))
        u = rng.random((n, 2))
        centers = np.column_stack([(ix + u[:, 0]) * h, (iy + u[:, 1]) * h])
        ids = pack_id(ix, iy, 0) + np.arange(n, dtype=np.int64)
        return centers, ids

    @property
    def realized_cells(self) -> int:
        return len(self._cells)

    # -- queries -----------------------------------------------------------------

    def centers_near(self, point, radius: float):
        """Centers and ids of all obstacles whose support meets the disk (point, radius)."""
        if radius > 64.0 * self.cell_size:
            raise ValueError("query radius exceeds the locality bound of 64 cells")
        p = np.asarray(point, dtype=float)
        reach = radius + self.radius
        h = self.cell_size
        x0, x1 = int(math.floor((p[0] - reach) / h)), int(math.floor((p[0] + reach) / h))
        y0, y1 = int(math.floor((p[1] - reach) / h)), int(math.floor((p[1] + reach) / h))
        cs, ids = [], []
        for ix in range(x0, x1 + 1):
            for iy in range(y0, y1 + 1):
                c, i = self.cell(ix, iy)
                if len(i):
                    cs.append(c)
                    ids.append(i)
        if not cs:
            return np.empty((0, 2)), np.empty(0, dtype=np.int64)
        c = np.concatenate(cs)
        i = np.concatenate(ids)
        d2 = np.sum((c - p) ** 2, axis=1)
        keep = d2 < reach * reach
        return c[keep], i[keep]

    def obstacles_near(self, point, radius: float) -> Iterator[Obstacle]:
        c, ids = self.centers_near(point, radius)
        for ci, ii in zip(c, ids):
            yield Obstacle((float(ci[0]), float(ci[1])), self.radius, int(ii))

    def count_in_box(self, lo, hi) -> int:
        """Number of centers in the axis-aligned box [lo, hi)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        h = self.cell_size
        n = 0
        for ix in range(int(math.floor(lo[0] / h)), int(math.floor(hi[0] / h)) + 1):
            for iy in range(int(math.floor(lo[1] / h)), int(math.floor(hi[1] / h)) + 1):
                c, _ = self.cell(ix, iy)
                if len(c):
                    n += int(np.sum(np.all((c >= lo) & (c < hi), axis=1)))
        return n

    def thinned(self, keep: float, stream: int = 1) -> "ThinnedSample":
        return ThinnedSample(self, keep, stream)


class ThinnedSample(MediumSample):
    """Independent p-thinning of a parent sample (coin flips keyed like the cells)."""

    def __init__(self, parent: MediumSample, keep: float, stream: int):
        if not 0.0 <= keep <= 1.0:
            raise ValueError("keep probability must lie in [0, 1]")
        self.parent = parent
        self.keep = keep
        self.seed = parent.seed
        self.regime = parent.regime
        self.radius = parent.radius
        self.mu_eps = parent.mu_eps * keep
        self.cell_size = parent.cell_size
        self.stream = stream
        self._cells = {}
        self._lock = threading.Lock()

    def _make_cell(self, ix, iy):
        c, i = self.parent.cell(ix, iy)
        rng = cell_generator(self.seed, ix, iy, 1000 + self.stream)
        flips = rng.random(len(i)) < self.keep
        return c[flips], i[flips]


# ---------------------------------------------------------------------------
# full-orbit survival


@dataclass(frozen=True)
class SurvivalEstimate:
    p: float
    stderr: float
    n: int
    annulus_area: float
    exact: float  # exp(-mu_eps * area) for the annulus of width 2 * radius
    heuristic: float  # exp(-2 pi R_L mu_eps radius), the width-radius annulus

    def z_score(self, target: float) -> float:
        se = self.stderr if self.stderr > 0 else math.sqrt(max(target * (1 - target), 1e-300) / self.n)
        return (self.p - target) / se


def annulus_area(R_L: float, a: float) -> float:
    return math.pi * ((R_L + a) ** 2 - max(R_L - a, 0.0) ** 2)


def survival_probability_full_orbit(regime: ScalingRegime, field: FieldParams, n_samples: int, seed: int,
                                    mode: str = "counts") -> SurvivalEstimate:
    """Fraction of media whose Larmor annulus (width ``2 * radius``) holds no obstacle center.

    ``counts`` draws the Poisson count of the annulus directly; ``medium`` builds
    a lazily generated sample per seed and counts centers geometrically.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be at least 1e3")
    if field.B == 0:
        raise ValueError("full orbits need a field")
    a = regime.obstacle_radius
    R = field.R_L
    area = annulus_area(R, a)
    lam = regime.mu_eps * area
    exact = math.exp(-lam)
    heur = math.exp(-2.0 * math.pi * R * regime.mu_eps * a)
    if regime.mu == 0:
        return SurvivalEstimate(1.0, 0.0, n_samples, area, 1.0, 1.0)
    if mode == "counts":
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        empty = rng.poisson(lam, n_samples) == 0
        k = int(np.sum(empty))
    elif mode == "medium":
        k = 0
        for i in range(n_samples):
            m = MediumSample(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint64)[0], regime, field)
            c, _ = m.centers_near((0.0, 0.0), R + a)
            r = np.hypot(c[:, 0], c[:, 1])
            k += int(not np.any(np.abs(r - R) < a))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    p = k / n_samples
    return SurvivalEstimate(p, math.sqrt(p * (1.0 - p) / n_samples), n_samples, area, exact, heur)
