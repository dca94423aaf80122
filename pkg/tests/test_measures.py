import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CHEB, Z2
from dynlab.measures import (AtomicMeasure, ProximityWarning, arc_partition, atomic_conformal_measure,
                             autocorrelation, bin_masses, birkhoff_measure, conformality_residual,
                             dyadic_partition, entropy_lyapunov, gauge_check, integrability_check,
                             interval_partition, invariant_density_estimate, orbit, transfer_apply,
                             weak_limit_schedule)


def arcsine(x):
    return 4 / (np.pi * np.sqrt(4 - x ** 2))


# atomic measures and partitions ----------------------------------------------------------


def test_circle_measure_is_uniform():
    nu = atomic_conformal_measure(Z2, 1.0, 1.0, 10, min_level=10)
    assert nu.mass() == pytest.approx(1.0)
    m = bin_masses(nu, arc_partition(32))
    assert np.max(np.abs(m - 1 / 32)) < 1e-13


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 2.0), st.integers(1, 7), st.floats(0, 6.2))
def test_measure_is_probability(p, n, theta):
    nu = atomic_conformal_measure(CHEB, 1.5 * np.exp(1j * theta), p, n)
    assert np.all(nu.weights >= 0) and nu.mass() == pytest.approx(1.0, abs=1e-12)
    assert len(nu.points) == 2 ** (n + 1) - 1


def test_json_roundtrip():
    nu = atomic_conformal_measure(CHEB, 1.7 + 0.1j, 1.0, 5, min_level=2)
    import json
    back = AtomicMeasure.from_json(json.loads(nu.dumps()))
    assert np.array_equal(back.points, nu.points) and np.array_equal(back.weights, nu.weights)
    assert back.min_level == 2 and back.p == 1.0


def test_invalid_measures():
    with pytest.raises(ValueError):
        atomic_conformal_measure(Z2, 1.0, 1.0, 4, min_level=5)
    with pytest.raises(ValueError):
        AtomicMeasure(np.zeros(2, complex), np.array([1.0, -1.0]), 1.0, 0j, 1, np.zeros(2, int))


def test_partitions_half_open():
    part = interval_partition(-2, 2, 4)
    idx = part.index(np.array([-2, -1, 0, 2 - 1e-15 - 1e-9, 2, 0.5 + 2j]))
    assert list(idx) == [0, 1, 2, 3, -1, -1]
    arc = arc_partition(4)
    assert list(arc.index(np.array([1, 1j, -1, -1j, 0.1, 3]))) == [0, 1, 2, 3, -1, -1]
    dy = dyadic_partition((0, 1, 0, 1), 1)
    assert list(dy.index(np.array([0.25 + 0.25j, 0.75 + 0.25j, 0.25 + 0.75j, 1.0]))) == [0, 1, 2, -1]


def test_weak_limit_schedule_on_circle():
    s = weak_limit_schedule(Z2, 1.0, [1.5, 1.2, 1.0], 10, arc_partition(8), min_level=8)
    assert s.stabilized and s.masses.shape == (3, 8)


# conformality, gauge, integrability ------------------------------------------------------


def test_conformality_on_circle():
    nu = atomic_conformal_measure(Z2, 1.0, 1.0, 10, min_level=10)
    rep = conformality_residual(nu, Z2, 1.0, arc_partition(16))
    assert rep.max_residual < 1e-12 and rep.skipped == []


def test_conformality_detects_wrong_exponent():
    nu = atomic_conformal_measure(Z2, 1.0, 1.0, 10, min_level=10)
    rep = conformality_residual(nu, Z2, 1.5, arc_partition(16))
    assert rep.max_residual == pytest.approx(2 ** 0.5 - 1, rel=1e-9)


def test_conformality_skips_critical_cell():
    nu = atomic_conformal_measure(CHEB, 1.7 + 0.05j, 1.0, 8, min_level=6)
    rep = conformality_residual(nu, CHEB, 1.0, interval_partition(-2, 2, 16))
    assert 8 in rep.skipped  # the cell [0, 0.25) holds the critical point


def test_gauge_on_circle():
    nu = atomic_conformal_measure(Z2, np.exp(0.3j), 1.0, 13, min_level=13)
    g = gauge_check(nu, 1.0, 0.02)
    assert g.passed and not g.skipped
    assert np.nanmin(g.ratio_q) > 1 / np.pi - 0.05
    thin = gauge_check(atomic_conformal_measure(Z2, np.exp(0.3j), 1.0, 8, min_level=8), 1.0, 0.02)
    assert not thin.passed and len(thin.skipped) == 16


def test_integrability():
    nu = atomic_conformal_measure(CHEB, 1.7 + 0.05j, 1.0, 10, min_level=8)
    rep = integrability_check(nu, [-2.0, 2.0], 0.5, C=10.0)
    assert rep.passed and rep.sup < 2
    on = integrability_check(nu, nu.points[:1], 0.5)
    assert on.excluded == [1]


# transfer operator -----------------------------------------------------------------------


def test_transfer_on_circle_is_one():
    assert np.allclose(transfer_apply(Z2, 1.0, [1.0, np.exp(1j)], 10), 1.0, rtol=1e-12)


def test_transfer_chebyshev_density():
    x = np.array([0.0, 1.0, -1.3])
    assert np.allclose(transfer_apply(CHEB, 1.0, x, 10), arcsine(x), rtol=1e-5)


def test_cesaro_traces():
    d = invariant_density_estimate(Z2, 1.0, [1.0, 1j], 6)
    assert d.traces.shape == (2, 6) and np.allclose(d.values, 1.0)
    assert np.allclose(d.trace_last_delta, 0.0) and d.minimum == pytest.approx(1.0)
    with pytest.raises(ValueError):
        invariant_density_estimate(Z2, 1.0, [1.0], 0)


def test_proximity_warning():
    with pytest.warns(ProximityWarning):
        transfer_apply(CHEB, 1.0, [2.0], 3)


# orbit statistics ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cheb_orbit():
    o, escaped = orbit(CHEB, 0.1234, 200000)
    assert not escaped
    return o


def test_birkhoff_arcsine_deciles(cheb_orbit):
    edges = 2 * np.cos(np.pi * np.linspace(1, 0, 11))
    b = birkhoff_measure(CHEB, 0, 0, edges, orbit_values=cheb_orbit)
    assert np.max(np.abs(b.masses - 0.1)) < 0.005


def test_entropy_and_lyapunov(cheb_orbit):
    st_ = entropy_lyapunov(CHEB, cheb_orbit, 256, lo=-2, hi=2)
    assert st_.lyapunov == pytest.approx(np.log(2), abs=5e-3)
    assert st_.entropy == pytest.approx(np.log(2), abs=5e-3)


def test_orbit_escape():
    o, escaped = orbit(Z2, 2.0, 50)
    assert escaped and len(o) < 51


def test_autocorrelation(cheb_orbit):
    ac = autocorrelation(cheb_orbit.real, 5)
    assert ac[0] == pytest.approx(1.0) and np.all(np.abs(ac[1:]) < 0.02)
    assert np.all(autocorrelation(np.ones(10), 3) == 1)
