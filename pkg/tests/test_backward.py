import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CHEB, Z2
from dynlab.backward import (CriticalContext, PreimageTree, ball_pullback_components, branch_points,
                             cached_tree, in_H, koebe_bounds, koebe_check, preimages,
                             pullback_contraction, pullback_diameter_sum, read_tree_cache,
                             restricted_membership, shrinking_neighborhoods,
                             univalent_pullback_radius, write_tree_cache)
from dynlab.maps import MapSpec

SMALL_DELTAS = np.full(40, 0.01)


# preimages -------------------------------------------------------------------------------


def test_preimages_of_one_under_z2():
    orbits = preimages(Z2, 1.0, 2)
    ends = np.sort_complex(np.array([o.points[-1] for o in orbits]))
    assert np.allclose(ends, np.sort_complex(np.array([-1, -1j, 1j, 1])))
    assert np.allclose([o.cumulative[-1] for o in orbits], 4.0)


def test_depth_zero_and_chebyshev_level_one():
    (o,) = preimages(CHEB, 0.7, 0)
    assert o.length == 0 and o.log_derivative == 0
    orbits = preimages(CHEB, 2.0, 1)
    assert sorted(np.round([o.points[-1].real for o in orbits], 12)) == [-2, 2]
    assert np.allclose([o.step_derivs[0] for o in orbits], 4)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.integers(1, 6))
def test_branch_completeness(x, y, n):
    f = MapSpec.polynomial([1, 0, -0.5 + 0.2j, 0.1])
    tree = PreimageTree(f, complex(x, y) + 3, n)
    assert len(tree.points[n]) == 3 ** n
    assert np.sum(np.full(3 ** n, 3.0 ** -n)) == pytest.approx(1.0)
    # each node maps onto its parent
    F = f.num_coeffs
    imgs = np.polyval(F, tree.points[n])
    parents = np.repeat(tree.points[n - 1], 3)
    assert np.max(np.abs(imgs - parents)) < 1e-9 * (1 + np.max(np.abs(parents)))


def test_tree_cache_roundtrip(tmp_path):
    tree = PreimageTree(CHEB, 0.3 + 0.2j, 6)
    path = tmp_path / "t.bin"
    write_tree_cache(tree, path)
    back = read_tree_cache(CHEB, 0.3 + 0.2j, 6, path)
    for k in range(7):
        assert np.array_equal(back.points[k], tree.points[k])
        assert np.array_equal(back.logder[k], tree.logder[k])
    assert read_tree_cache(Z2, 0.3 + 0.2j, 6, path) is None  # different map
    t2 = cached_tree(CHEB, 0.3 + 0.2j, 6, str(tmp_path / "c"))
    t3 = cached_tree(CHEB, 0.3 + 0.2j, 6, str(tmp_path / "c"))
    assert np.array_equal(t2.logder[6], t3.logder[6])


# shrinking neighbourhoods and univalent radii --------------------------------------------


def test_circle_branches_never_hit():
    tree = PreimageTree(Z2, 1.0, 8)
    for i in (0, 37, 255):
        sh = shrinking_neighborhoods(Z2, 1.0, 0.1, tree.orbit(8, i), SMALL_DELTAS)
        assert sh.first_hit is None
        assert all(sh.nested_ok)


def test_chebyshev_hit_level_one():
    # z = 2 with the branch through -2: U_1 contains 0 once r * Delta_1 > |2 - F(0)| ... = dist(2, F^1 0) = 4
    branch = branch_points(CHEB, 2.0, [0])
    assert abs(branch.points[1] + 2) < 1e-12 or abs(branch.points[1] - 2) < 1e-12
    branch = branch if abs(branch.points[1] + 2) < 1e-12 else branch_points(CHEB, 2.0, [1])
    D1 = 1 - SMALL_DELTAS[0]
    assert shrinking_neighborhoods(CHEB, 2.0, 4.0 / D1 * 1.01, branch, SMALL_DELTAS).first_hit == 1
    assert shrinking_neighborhoods(CHEB, 2.0, 4.0 / D1 * 0.99, branch, SMALL_DELTAS).first_hit is None


def test_zero_radius_is_degenerate():
    tree = PreimageTree(CHEB, 1.0, 4)
    sh = shrinking_neighborhoods(CHEB, 1.0, 0.0, tree.orbit(4, 3), SMALL_DELTAS)
    assert sh.first_hit is None and all(len(u) == 1 for u in sh.U)


def test_univalent_radius_on_circle_is_branch_independent():
    tree = PreimageTree(Z2, 1.0, 6)
    ctx = CriticalContext.build(Z2, 6)
    radii = [univalent_pullback_radius(Z2, tree.orbit(6, i), cap=2.0, ctx=ctx) for i in range(0, 64, 9)]
    # a disc of radius < 1 around 1 never pulls back onto 0
    assert min(radii) >= 0.99


def test_univalent_radius_zero_at_critical_endpoint():
    # 0 is a double preimage of -2, so level 2 over z = 2 ends (numerically) at the critical point
    tree = PreimageTree(CHEB, 2.0, 2)
    i = int(np.argmin(np.abs(tree.points[2])))
    assert abs(tree.points[2][i]) < 1e-6
    assert univalent_pullback_radius(CHEB, tree.orbit(2, i)) <= 1e-6


def test_univalent_radius_matches_first_hit():
    tree = PreimageTree(CHEB, 1.7 + 0.05j, 6)
    ctx = CriticalContext.build(CHEB, 6)
    for i in (0, 17, 40):
        o = tree.orbit(6, i)
        r = univalent_pullback_radius(CHEB, o, cap=4.0, ctx=ctx)
        assert in_H(CHEB, o, r * 0.99, ctx)
        if r < 4.0:
            assert not in_H(CHEB, o, r * 1.01, ctx)


def test_restricted_membership_matches_in_H():
    z = 1.7 + 0.05j
    tree = PreimageTree(CHEB, z, 6)
    ctx = CriticalContext.build(CHEB, 6)
    for Delta in (0.3, 1.0):
        m = restricted_membership(CHEB, tree, Delta, ctx)
        direct = np.array([in_H(CHEB, tree.orbit(6, i), Delta, ctx) for i in range(64)])
        assert np.array_equal(m[6], direct)


# Koebe -----------------------------------------------------------------------------------


def test_koebe_bounds_values():
    lo, hi = koebe_bounds(0.5)
    assert lo == pytest.approx(0.5 / 1.5 ** 3) and hi == pytest.approx(1.5 / 0.5 ** 3)


def test_koebe_on_random_pullbacks(rng):
    z = np.exp(0.3j)
    tree = PreimageTree(Z2, z, 8)
    ctx = CriticalContext.build(Z2, 8)
    for j in rng.integers(256, size=40):
        o = tree.orbit(8, int(j))
        r = univalent_pullback_radius(Z2, o, cap=2.0, ctx=ctx)
        ok, ratios = koebe_check(Z2, o, r)
        assert ok


# pullback sums ---------------------------------------------------------------------------


def test_pullback_sums_on_circle():
    levels = ball_pullback_components(Z2, 1.0, 0.05, 10)
    hi = pullback_diameter_sum(Z2, 1.0, 0.05, 1.5, 10, levels)
    lo = pullback_diameter_sum(Z2, 1.0, 0.05, 0.5, 10, levels)
    assert hi.ratio == pytest.approx(2 ** -0.5, rel=0.02)
    assert lo.ratio == pytest.approx(2 ** 0.5, rel=0.02)
    assert np.all(hi.max_degree == 1)
    assert hi.level_sums[0] == pytest.approx(0.1 ** 1.5, rel=1e-3)


def test_pullback_from_basin_is_univalent():
    levels = ball_pullback_components(Z2, 0.3, 0.1, 6)
    assert all(np.all(L.degrees == 1) for L in levels)


def test_contraction_envelope_chebyshev():
    con = pullback_contraction(CHEB, 1.7, 0.1, 12)
    assert con.envelope[0] == pytest.approx(0.2, rel=1e-3)
    assert con.envelope[12] < 1e-2


def test_contraction_off_circle():
    con = pullback_contraction(Z2, 1.5, 0.1, 10)
    assert con.envelope[-1] < con.envelope[0] * 1e-2
