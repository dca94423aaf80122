import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BASILICA, CHEB, Z2
from dynlab.maps import (MapError, MapSpec, PoleProximityError, collapse_critical_blocks,
                         critical_points, evaluate_and_derivative, forward_orbit, julia_bbox,
                         multiplicity_check)
from dynlab.raster import DyadicRaster, filled_raster, julia_membership_grid
from dynlab.roots import aberth_roots, cluster_roots, poly_roots, relative_residual


# evaluation ------------------------------------------------------------------------------


def test_evaluate_examples():
    assert evaluate_and_derivative(Z2, 1 + 0j) == (1, 2)
    assert evaluate_and_derivative(CHEB, 2 + 0j) == (2, 4)
    assert evaluate_and_derivative(Z2, 0j) == (0, 0)


def test_vectorized_evaluation_matches_scalar():
    f = MapSpec.rational([1, 0, -1], [2, 0, 3])
    z = np.array([0.3 + 0.1j, -1.2 + 2j, 4j])
    F, dF = evaluate_and_derivative(f, z)
    for i, w in enumerate(z):
        a, b = evaluate_and_derivative(f, w)
        assert F[i] == pytest.approx(a) and dF[i] == pytest.approx(b)


def test_pole_is_rejected():
    f = MapSpec.rational([1, 0, 0], [1, -1])
    with pytest.raises(PoleProximityError):
        evaluate_and_derivative(f, 1 + 0j)


def test_degree_below_two_rejected():
    with pytest.raises(MapError):
        MapSpec.polynomial([2, 1])


def test_json_roundtrip():
    for f in (Z2, CHEB, MapSpec.rational([1, 0, 2], [1, 1j]), MapSpec.interval([-4, 4, 0])):
        g = MapSpec.from_json(f.to_json())
        assert g.hash() == f.hash()


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_matches_finite_difference(x, y):
    f = MapSpec.rational([1, 0.5, 0, -1], [1, 0, 2])
    z = complex(x, y)
    h = 1e-6
    _, d = evaluate_and_derivative(f, z)
    fd = (evaluate_and_derivative(f, z + h)[0] - evaluate_and_derivative(f, z - h)[0]) / (2 * h)
    if abs(d) > 1e-3:
        assert abs(d - fd) / abs(d) < 1e-6


# critical points -------------------------------------------------------------------------


def test_critical_points_of_quadratics():
    (c,) = [c for c in critical_points(Z2) if not c.at_infinity]
    assert c.location == 0 and c.multiplicity == 2 and c.in_julia == "no"
    (c,) = [c for c in critical_points(CHEB) if not c.at_infinity]
    assert c.location == 0 and c.multiplicity == 2
    assert np.allclose(forward_orbit(CHEB, 0j, 3), [0, -2, 2, 2])


def test_cubic_critical_points():
    f = MapSpec.polynomial([1, 0, -3, 0])
    fin = sorted((c for c in critical_points(f) if not c.at_infinity), key=lambda c: c.location.real)
    assert [round(c.location.real, 9) for c in fin] == [-1, 1]
    assert all(c.multiplicity == 2 for c in fin)


@pytest.mark.parametrize("fmap", [Z2, CHEB, BASILICA, MapSpec.polynomial([1, 0, -3, 0]),
                                  MapSpec.rational([1, 0, 1], [2, 0, 0]),
                                  MapSpec.polynomial([1, 0, 0, 0, 0.3])])
def test_riemann_hurwitz_count(fmap):
    crit = critical_points(fmap)
    assert sum(c.multiplicity - 1 for c in crit) == 2 * (fmap.degree - 1)
    assert all(multiplicity_check(fmap, c) for c in crit)


def test_collapse_leaves_chebyshev_unchanged():
    crit = critical_points(CHEB)
    out = collapse_critical_blocks(crit)
    assert [(c.location, c.multiplicity) for c in out] == [(c.location, c.multiplicity) for c in crit]


def test_collapse_merges_critical_relation():
    # F(z) = z^3 - 3z + b has critical points +-1; choose b so that F(1) = -1
    f = MapSpec.polynomial([1, 0, -3, 1])
    assert abs(evaluate_and_derivative(f, 1 + 0j)[0] + 1) < 1e-12
    out = [c for c in collapse_critical_blocks(critical_points(f)) if not c.at_infinity]
    assert len(out) == 1 and out[0].multiplicity == 4 and abs(out[0].location + 1) < 1e-6


# roots -----------------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(-2, 2)), min_size=2, max_size=6))
def test_aberth_residuals(pairs):
    roots = np.array([complex(a, b) for a, b in pairs])
    c = np.poly(roots)
    found = poly_roots(c)
    assert np.max(relative_residual(c, found)) < 1e-8


def test_aberth_batch():
    c = np.array([[1, 0, -1], [1, 0, 4]], dtype=complex)
    r = np.sort_complex(aberth_roots(c))
    assert np.allclose(r[0], [-1, 1]) and np.allclose(r[1], [-2j, 2j])


def test_poly_roots_with_zero_roots():
    r = poly_roots([1, -1, 0, 0])
    assert sorted(np.round(r.real, 12)) == [0, 0, 1]


def test_cluster_roots_double():
    groups = cluster_roots(np.array([1 + 1e-8, 1 - 1e-8, 3.0]), 1e-5)
    assert sorted(n for _, n in groups) == [1, 2]


# rasters ---------------------------------------------------------------------------------


def _circle_distance(r):
    return np.abs(np.abs(r.cell_centers()) - 1)


@pytest.mark.parametrize("k", [8, 9])
def test_circle_raster(k):
    r = julia_membership_grid(Z2, (-2, 2, -2, 2), k)
    h = r.cell_size
    assert np.all(_circle_distance(r) <= 2 * h)
    # every cell crossing the circle is marked, so the count grows like 2^k
    assert 2 ** k < r.count() < 2 ** k * 8


def test_segment_raster_and_stability():
    counts = []
    for k in (7, 8, 9):
        r = julia_membership_grid(CHEB, julia_bbox(CHEB), k)
        c = r.cell_centers()
        assert np.all(np.abs(c.imag) <= 2 * r.cell_size)
        xs = np.sort(c.real)
        assert xs[0] < -1.95 and xs[-1] > 1.95
        counts.append(r.count())
    assert counts[0] < counts[1] < counts[2]


def test_cantor_dust_raster():
    f = MapSpec.unicritical(2, 10)
    r = julia_membership_grid(f, julia_bbox(f), 8)
    assert 0 < r.count() < 4 ** 8 / 50


def test_raster_coarsen_and_filled():
    r = filled_raster(6)
    assert r.count() == 4 ** 6 and r.coarsen(3).count() == 64
    bits = np.zeros((8, 8), dtype=bool)
    bits[0, 0] = True
    d = DyadicRaster((0, 1, 0, 1), 3, bits)
    assert d.coarsen(0).count() == 1 and d.coarsen(2).count() == 1
