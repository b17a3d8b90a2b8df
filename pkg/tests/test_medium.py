import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from maglorentz.dynamics import FieldParams
from maglorentz.medium import (
    MediumSample,
    ScalingRegime,
    annulus_area,
    pack_id,
    survival_probability_full_orbit,
    unpack_id,
)
from maglorentz.potentials import HardDisk, SmoothCompact, TruncatedPower

FP = FieldParams(1.0)


def test_regime_scalings():
    r = ScalingRegime("intermediate", 2.0, 1e-2, alpha=0.1)
    assert r.mu_eps == pytest.approx(2.0 * 1e-2 ** -1.2, rel=1e-14)
    assert isinstance(r.potential, SmoothCompact)
    assert r.obstacle_radius == pytest.approx(1e-2)
    b = ScalingRegime("boltzmann-grad", 2.0, 1e-3)
    assert b.mu_eps == pytest.approx(2000.0)
    assert isinstance(b.potential, HardDisk)
    lr = ScalingRegime("long-range", 1.0, 1e-3, gamma=0.9, s=3.0)
    assert isinstance(lr.potential, TruncatedPower)
    assert lr.mu_eps == pytest.approx(1000.0)
    assert lr.obstacle_radius == pytest.approx(1e-3 ** 0.9)


@pytest.mark.parametrize("kw", [dict(kind="intermediate", alpha=0.2), dict(kind="long-range", gamma=0.8),
                                dict(kind="long-range", s=2.0)])
def test_regime_domains(kw):
    kind = kw.pop("kind")
    with pytest.raises(ValueError):
        ScalingRegime(kind, 1.0, 1e-2, **kw).validate()


def test_bad_regime_values():
    with pytest.raises(ValueError):
        ScalingRegime("plasma", 1.0, 1e-2)
    with pytest.raises(ValueError):
        ScalingRegime("boltzmann-grad", -1.0, 1e-2)


@given(st.integers(-2**20, 2**20 - 1), st.integers(-2**20, 2**20 - 1), st.integers(0, 2**21 - 1))
def test_id_packing_roundtrip(ix, iy, k):
    assert unpack_id(pack_id(ix, iy, k)) == (ix, iy, k)


@pytest.mark.parametrize("ix, iy, k", [(2**20, 0, 0), (0, -2**20 - 1, 0), (0, 0, 2**21), (0, 0, -1)])
def test_id_packing_rejects_overflow(ix, iy, k):
    with pytest.raises(ValueError):
        pack_id(ix, iy, k)


def _counts(mu_eps, lo, hi, n, cell=1.0, base=0):
    reg = ScalingRegime("boltzmann-grad", mu_eps * 1e-2, 1e-2)
    return np.array([MediumSample(base + s, reg, FP, cell_size=cell).count_in_box(lo, hi) for s in range(n)])


def test_empty_probability():
    # mu_eps * area = 0.01; the 0.002 band is only 2 sigma at 1e4 seeds, so use 1e5
    c = _counts(100.0, (0.2, 0.2), (0.21, 0.21), 100_000)
    assert np.mean(c == 0) == pytest.approx(math.exp(-0.01), abs=0.002)


def test_poisson_mean_in_unit_square():
    mu = 50.0
    c = _counts(mu, (0.0, 0.0), (1.0, 1.0), 10_000)
    assert abs(c.mean() - mu) <= 3 * math.sqrt(mu / 10_000)
    assert c.var(ddof=1) == pytest.approx(mu, rel=0.05)


def test_disjoint_queries_uncorrelated():
    reg = ScalingRegime("boltzmann-grad", 0.5, 1e-2)
    a, b = [], []
    for s in range(10_000):
        m = MediumSample(s, reg, FP, cell_size=1.0)
        a.append(m.count_in_box((0.1, 0.1), (0.6, 0.6)))
        b.append(m.count_in_box((0.6, 0.6), (1.1, 1.1)))
    assert abs(np.corrcoef(a, b)[0, 1]) <= 0.03


@settings(max_examples=25)
@given(st.integers(0, 2**64 - 1), st.permutations(range(6)))
def test_query_order_does_not_change_sample(seed, order):
    reg = ScalingRegime("boltzmann-grad", 1.0, 1e-2)
    pts = [(0.1 * k, -0.2 * k) for k in range(6)]
    m1, m2 = MediumSample(seed, reg, FP), MediumSample(seed, reg, FP)
    first = {k: m1.centers_near(pts[k], 0.3) for k in range(6)}
    second = {k: m2.centers_near(pts[k], 0.3) for k in order}
    for k in range(6):
        np.testing.assert_array_equal(first[k][0], second[k][0])
        np.testing.assert_array_equal(first[k][1], second[k][1])


def test_obstacles_near_matches_brute_force():
    reg = ScalingRegime("boltzmann-grad", 1.0, 1e-2)
    m = MediumSample(77, reg, FP)
    h = m.cell_size
    allc = np.concatenate([m.cell(ix, iy)[0] for ix in range(-20, 21) for iy in range(-20, 21)])
    p, r = np.array([0.3, -0.7]), 0.45
    ref = allc[np.hypot(*(allc - p).T) < r + m.radius]
    got = np.array([o.c for o in m.obstacles_near(p, r)])
    assert 20 * h > r + 1
    assert sorted(map(tuple, got)) == sorted(map(tuple, ref))
    assert all(o.radius == m.radius for o in m.obstacles_near(p, r))


def test_locality_bound():
    m = MediumSample(1, ScalingRegime("boltzmann-grad", 1.0, 1e-2), FP)
    with pytest.raises(ValueError):
        m.centers_near((0, 0), 65 * m.cell_size)


def test_thinning_consistency():
    reg2 = ScalingRegime("boltzmann-grad", 2 * 20 * 1e-2, 1e-2)
    reg1 = ScalingRegime("boltzmann-grad", 20 * 1e-2, 1e-2)
    box = ((0.0, 0.0), (1.0, 1.0))
    thin = [MediumSample(s, reg2, FP, cell_size=1.0).thinned(0.5).count_in_box(*box) for s in range(4000)]
    direct = [MediumSample(10**6 + s, reg1, FP, cell_size=1.0).count_in_box(*box) for s in range(4000)]
    assert stats.ks_2samp(thin, direct).pvalue > 0.01


def test_cell_materialization_is_idempotent():
    m = MediumSample(3, ScalingRegime("boltzmann-grad", 1.0, 1e-2), FP)
    a = m.cell(2, -1)
    m._cells.clear()
    b = m.cell(2, -1)
    np.testing.assert_array_equal(a[0], b[0])


# -- full-orbit survival --------------------------------------------------------


def test_survival_zero_density():
    est = survival_probability_full_orbit(ScalingRegime("boltzmann-grad", 0.0, 1e-3), FP, 1000, 1)
    assert est.p == 1.0


def test_survival_needs_enough_samples():
    with pytest.raises(ValueError):
        survival_probability_full_orbit(ScalingRegime("boltzmann-grad", 1.0, 1e-3), FP, 999, 1)


def test_survival_hard_disk_exact_annulus():
    reg = ScalingRegime("boltzmann-grad", 1.0, 1e-3)
    est = survival_probability_full_orbit(reg, FP, 10**6, 11)
    # annulus of width 2 eps: mu_eps * 4 pi R_L eps = 4 pi mu
    assert est.exact == pytest.approx(math.exp(-4 * math.pi), rel=1e-5)
    assert abs(est.z_score(est.exact)) <= 3


@pytest.mark.xfail(strict=True, reason="the hit annulus has width 2 eps, so survival is exp(-4 pi), "
                                       "not the width-eps heuristic exp(-2 pi)")
def test_survival_hard_disk_heuristic():
    est = survival_probability_full_orbit(ScalingRegime("boltzmann-grad", 1.0, 1e-3), FP, 10**6, 11)
    assert abs(est.z_score(math.exp(-2 * math.pi))) <= 3


def test_survival_intermediate_exact_annulus():
    reg = ScalingRegime("intermediate", 0.1, 0.1, alpha=0.1)
    est = survival_probability_full_orbit(reg, FP, 10**6, 12)
    assert est.exact == pytest.approx(math.exp(-reg.mu_eps * annulus_area(1.0, 0.1)), rel=1e-14)
    assert abs(est.z_score(est.exact)) <= 3


@pytest.mark.xfail(strict=True, reason="same width-2-radius annulus: exp(-4 pi 10^0.2 (1 + O(eps))) is about "
                                       "2e-9, not 4.7e-5")
def test_survival_intermediate_heuristic():
    reg = ScalingRegime("intermediate", 1.0, 0.1, alpha=0.1)
    est = survival_probability_full_orbit(reg, FP, 10**7, 13)
    assert abs(est.z_score(math.exp(-2 * math.pi * 10 ** 0.2))) <= 3


def test_survival_geometric_mode_agrees():
    reg = ScalingRegime("boltzmann-grad", 0.2, 5e-2)
    est = survival_probability_full_orbit(reg, FP, 1000, 4, mode="medium")
    assert abs(est.z_score(est.exact)) <= 3
