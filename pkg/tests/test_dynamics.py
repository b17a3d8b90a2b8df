import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maglorentz.dynamics import (
    DynamicsError,
    FieldParams,
    Obstacle,
    PhaseState,
    cyclotron_advance,
    cyclotron_center,
    entry_times,
    first_obstacle_hit,
    free_arc,
    integrate_in_potential,
    perp,
)
from maglorentz.potentials import HardDisk, SmoothCompact, TruncatedPower

angles = st.floats(0.0, 2 * math.pi, allow_nan=False)
fields = st.floats(0.1, 5.0)
coords = st.floats(-10.0, 10.0)


def test_field_params_identities():
    for B in (0.3, 1.0, 7.0):
        fp = FieldParams(B)
        assert fp.R_L * B == 1.0
        assert fp.T_L * B == pytest.approx(2 * math.pi, abs=0, rel=1e-16)


def test_cyclotron_center_examples():
    c = cyclotron_center(PhaseState(np.zeros(2), np.array([1.0, 0.0])), FieldParams(1.0))
    np.testing.assert_allclose(c, [0.0, 1.0], atol=1e-15)
    c = cyclotron_center(PhaseState(np.array([3.0, -2.0]), np.array([0.0, 1.0])), FieldParams(2.0))
    np.testing.assert_allclose(c, [2.5, -2.0], atol=1e-15)


@given(coords, coords, angles, fields)
def test_center_at_larmor_radius(x, y, phi, B):
    s = PhaseState.from_angle(np.array([x, y]), phi)
    fp = FieldParams(B)
    assert np.hypot(*(cyclotron_center(s, fp) - s.x)) == pytest.approx(fp.R_L, rel=1e-12)


def test_full_and_half_period():
    fp = FieldParams(1.3)
    s = PhaseState.from_angle(np.array([0.4, -1.1]), 0.7)
    full = cyclotron_advance(s, fp.T_L, fp)
    np.testing.assert_allclose(full.x, s.x, atol=1e-10)
    np.testing.assert_allclose(full.v, s.v, atol=1e-10)
    half = cyclotron_advance(s, fp.T_L / 2, fp)
    np.testing.assert_allclose(half.x, 2 * cyclotron_center(s, fp) - s.x, atol=1e-12)
    np.testing.assert_allclose(half.v, -s.v, atol=1e-12)


def test_counter_clockwise_gyration():
    # v' = B v_perp with v_perp the counter-clockwise quarter turn
    fp = FieldParams(1.0)
    s = PhaseState.from_angle(np.zeros(2), 0.0)
    out = cyclotron_advance(s, 1e-3, fp)
    assert out.v[1] > 0


def test_weak_field_is_nearly_straight():
    fp = FieldParams(1e-6)
    s = PhaseState.from_angle(np.array([0.2, 0.3]), 1.1)
    out = cyclotron_advance(s, 1.0, fp)
    assert np.hypot(*(out.x - (s.x + s.v))) <= 1e-6


@given(coords, coords, angles, fields, st.floats(0, 20), st.floats(0, 20))
def test_group_property_and_speed(x, y, phi, B, a, b):
    fp = FieldParams(B)
    s = PhaseState.from_angle(np.array([x, y]), phi)
    two = cyclotron_advance(cyclotron_advance(s, a, fp), b, fp)
    one = cyclotron_advance(s, a + b, fp)
    assert np.hypot(*(two.x - one.x)) <= 1e-11 * max(1.0, abs(x) + abs(y) + a + b)
    assert np.hypot(*(two.v - one.v)) <= 1e-11
    assert abs(np.hypot(*one.v) - 1.0) <= 1e-12


def test_negative_dt_rejected():
    with pytest.raises(ValueError):
        cyclotron_advance(PhaseState.from_angle(np.zeros(2), 0.0), -1.0, FieldParams(1.0))


def _bisect_entry(x, v, omega, c, r, t_hi):
    """Entry time by dense scan plus bisection on |x(t) - c| - r."""
    ts = np.linspace(0.0, t_hi, 200001)
    xt, _ = free_arc(x, v, omega, ts)
    d = np.hypot(*(xt - c).T) - r
    idx = np.nonzero((d[:-1] > 0) & (d[1:] <= 0))[0]
    if not len(idx):
        return math.inf
    lo, hi = ts[idx[0]], ts[idx[0] + 1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        xm, _ = free_arc(x, v, omega, mid)
        if np.hypot(*(xm - c)) - r > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.mark.parametrize("dphi", [0.3, 1.7, 4.0])
def test_hit_time_against_bisection(dphi):
    fp = FieldParams(1.0)
    s = PhaseState.from_angle(np.zeros(2), 0.0)
    xc = cyclotron_center(s, fp)
    # obstacle centred on the orbit circle, dphi ahead
    c = xc + fp.R_L * np.array([math.sin(dphi), -math.cos(dphi)])
    r = 0.05
    hit = first_obstacle_hit(s, [Obstacle(tuple(c), r)], fp, 10.0)
    ref = _bisect_entry(s.x, s.v, fp.Omega, c, r, fp.T_L)
    assert hit is not None
    assert hit.time == pytest.approx(ref, abs=1e-12)
    assert hit.time < dphi / fp.Omega
    assert -r < hit.rho < r


def test_unreachable_obstacle_misses():
    fp = FieldParams(2.0)
    s = PhaseState.from_angle(np.zeros(2), 0.0)
    xc = cyclotron_center(s, fp)
    c = xc + np.array([2 * fp.R_L + 0.2, 0.0])
    assert first_obstacle_hit(s, [Obstacle(tuple(c), 0.1)], fp, 100.0) is None


def test_weak_field_hit_matches_ray():
    fp = FieldParams(1e-8)
    s = PhaseState.from_angle(np.zeros(2), 0.2)
    c = np.array([3.0, 0.9])
    r = 0.5
    hit = first_obstacle_hit(s, [Obstacle(tuple(c), r)], fp, 100.0)
    # ray-circle: |t v - c|^2 = r^2
    b = s.v @ c
    ref = b - math.sqrt(b * b - (c @ c - r * r))
    assert hit.time == pytest.approx(ref, abs=1e-6)


def test_tangent_orbit_is_grazing():
    fp = FieldParams(1.0)
    s = PhaseState.from_angle(np.zeros(2), 0.0)
    xc = cyclotron_center(s, fp)
    r = 0.1
    c = xc + (fp.R_L + r) * np.array([1.0, 0.0])
    t, g = entry_times(s.x, s.v, fp.Omega, c[None, :], r)
    assert g[0] and not np.isfinite(t[0])


def test_impact_parameter_sign():
    # centre to the left of the tangent line gives rho > 0
    fp = FieldParams(1e-9)
    s = PhaseState.from_angle(np.array([0.0, 0.0]), 0.0)
    hit = first_obstacle_hit(s, [Obstacle((5.0, 0.3), 0.5)], fp, 20.0)
    assert hit.rho > 0


def test_hard_disk_reflection():
    obs = Obstacle((1.0, 0.0), 0.5)
    x = np.array([1.0 - 0.5 * math.cos(0.3), -0.5 * math.sin(0.3)])
    v = np.array([1.0, 0.0])
    out = integrate_in_potential(PhaseState(x, v), obs, HardDisk(0.5), FieldParams(1.0))
    n = (np.array(obs.c) - x) / 0.5
    np.testing.assert_allclose(out.exit.v, v - 2 * (n @ v) * n, atol=1e-15)
    assert out.tau == 0.0


def _entry(rho, a):
    return PhaseState(np.array([-math.sqrt(a * a - rho * rho), -rho]), np.array([1.0, 0.0]))


def test_entry_precondition():
    with pytest.raises(DynamicsError):
        integrate_in_potential(PhaseState(np.array([-0.5, 0.0]), np.array([1.0, 0.0])), Obstacle((0.0, 0.0), 1.0),
                               SmoothCompact(eps=1.0), FieldParams(1.0))


def test_grazing_entry_passes_unchanged():
    pot = SmoothCompact(eps=1e-2)
    a = pot.macro_radius
    st_ = PhaseState(np.array([0.0, -a]), np.array([1.0, 0.0]))
    out = integrate_in_potential(st_, Obstacle((0.0, 0.0), a), pot, FieldParams(1.0))
    assert out.tau == 0.0
    np.testing.assert_allclose(out.exit.v, st_.v, atol=1e-8)


@pytest.mark.parametrize("pot", [SmoothCompact(eps=1e-2, alpha=0.1), TruncatedPower(eps=1e-2)])
@pytest.mark.parametrize("rho_frac", [-0.8, -0.2, 0.0, 0.45, 0.9])
def test_energy_momentum_and_reversibility(pot, rho_frac):
    fp = FieldParams(1.0)
    a = pot.macro_radius
    obs = Obstacle((0.0, 0.0), a)
    st_ = _entry(rho_frac * a, a)
    it = integrate_in_potential(st_, obs, pot, fp, keep_solution=True)
    assert abs(np.hypot(*it.exit.v) - 1.0) <= 1e-9
    # energy and the conjugate momentum along the dense output (micro units)
    R = pot.support_radius
    b = (a / R) * fp.B
    ts = np.linspace(0.0, it.solution.t[-1], 400)
    y = it.solution.sol(ts)
    r = np.hypot(y[0], y[1])
    E = 0.5 * (y[2] ** 2 + y[3] ** 2) + pot.V(r)
    assert np.max(np.abs(E - 0.5)) <= 1e-9
    M = y[0] * y[3] - y[1] * y[2] - 0.5 * b * r * r
    assert np.max(np.abs(M - M[0])) <= 1e-8
    back = integrate_in_potential(it.exit.reversed(), obs, pot, fp.reversed())
    assert np.hypot(*(back.exit.x - st_.x)) <= 1e-7 * max(a, 1e-300) + 1e-12
    assert np.hypot(*(back.exit.v + st_.v)) <= 1e-7


def test_collision_time_scales_like_eps():
    fp = FieldParams(1.0)
    taus = []
    E = (1e-2, 1e-3, 1e-4)
    for e in E:
        pot = SmoothCompact(eps=e, alpha=0.1)
        a = pot.macro_radius
        taus.append(integrate_in_potential(_entry(0.5 * a, a), Obstacle((0.0, 0.0), a), pot, fp).tau)
    slope = np.polyfit(np.log(E), np.log(taus), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.05)


def test_zero_field_matches_straight_line_scattering():
    # B = 0: the exit velocity depends only on rho, and the free part is a straight line
    pot = SmoothCompact(eps=1e-2, alpha=0.1)
    a = pot.macro_radius
    it0 = integrate_in_potential(_entry(0.3 * a, a), Obstacle((0.0, 0.0), a), pot, FieldParams(0.0))
    shifted = _entry(0.3 * a, a)
    shifted = PhaseState(shifted.x + np.array([5.0, 2.0]), shifted.v)
    it1 = integrate_in_potential(shifted, Obstacle((5.0, 2.0), a), pot, FieldParams(0.0))
    np.testing.assert_allclose(it1.exit.v, it0.exit.v, atol=1e-12)
    np.testing.assert_allclose(it1.exit.x - [5.0, 2.0], it0.exit.x, atol=1e-12)
    s = PhaseState.from_angle(np.zeros(2), 0.4)
    x, _ = free_arc(s.x, s.v, 0.0, 2.5)
    np.testing.assert_allclose(x, 2.5 * s.v, atol=1e-15)


def test_perp_orientation():
    np.testing.assert_allclose(perp(np.array([1.0, 0.0])), [0.0, 1.0])
