import numpy as np
import pytest

from conftest import CHEB, Z2
from dynlab.backward import CriticalContext, PreimageTree, orbit_from_points, shrinking_neighborhoods
from dynlab.blocks import (backward_summability_check, decompose_blocks, decompose_with_stopping, grammar_ok,
                           large_scale_statistics,
                           scale_constants, stopping_code_ok)
from dynlab.orbits import sigma_sequence, technical_sequences


@pytest.fixture(scope="module")
def cheb_setup():
    tech = technical_sequences(sigma_sequence(CHEB, N=40), 1 / 3, 2)
    return tech, scale_constants(CHEB, tech)


@pytest.fixture(scope="module")
def z2_setup():
    tech = technical_sequences(sigma_sequence(Z2, N=40), 1 / 3, 2)
    return tech, scale_constants(Z2, tech)


@pytest.mark.parametrize("code,ok", [("", True), ("2", True), ("32", True), ("1232", True), ("3", True),
                                     ("13", True), ("31", False), ("331", False), ("124", False)])
def test_grammar(code, ok):
    assert grammar_ok(code) is ok


@pytest.mark.parametrize("code,ok", [("2", True), ("13", True), ("1113", True), ("213", True),
                                     ("3", True), ("12", False), ("2113", True), ("23", True), ("131", False)])
def test_stopping_forms(code, ok):
    assert stopping_code_ok(code) is ok


def test_scale_constants_uncertified_record(cheb_setup):
    tech, sc = cheb_setup
    assert sc.R > 0 and sc.R_prime > 0 and sc.L >= 1
    assert sc.L <= sc.L_prime and sc.L_second >= 1
    assert not sc.certified and sc.notes


def test_circle_codes_are_single_two(z2_setup):
    tech, sc = z2_setup
    tree = PreimageTree(Z2, 1.0, 10)
    ctx = CriticalContext.build(Z2, 10)
    for i in (0, 100, 1023):
        o = tree.orbit(10, i)
        assert decompose_with_stopping(Z2, o, tech, sc, ctx).code == "2"
        assert grammar_ok(decompose_blocks(Z2, o, 0.0, tech, sc, ctx).code)


def test_chebyshev_codes_and_crosscheck(cheb_setup):
    tech, sc = cheb_setup
    z = 1.9999999999
    tree = PreimageTree(CHEB, z, 12)
    ctx = CriticalContext.build(CHEB, 12)
    threes = 0
    for i in (0, 1, 2047, 4095, 777):
        o = tree.orbit(12, i)
        bc = decompose_blocks(CHEB, o, 0.0, tech, sc, ctx)
        assert grammar_ok(bc.code)
        assert bc.total_length == 12
        for b in bc.blocks:
            if b.kind == 3 and b.radius > 0:
                threes += 1
                sub = orbit_from_points(CHEB, o.points[b.start:])
                hi = shrinking_neighborhoods(CHEB, sub.points[0], b.radius * 1.0005, sub, tech.delta_n, ctx=ctx)
                lo = shrinking_neighborhoods(CHEB, sub.points[0], b.radius * 0.99, sub, tech.delta_n, ctx=ctx)
                assert hi.first_hit == b.length
                assert lo.first_hit is None or lo.first_hit > b.length
        sbc = decompose_with_stopping(CHEB, o, tech, sc, ctx)
        assert stopping_code_ok(sbc.code)
    assert threes > 0


def test_empty_orbit(cheb_setup):
    tech, sc = cheb_setup
    o = orbit_from_points(CHEB, [0.5])
    assert decompose_blocks(CHEB, o, 0.0, tech, sc).code == ""


def test_backward_summability_counts(cheb_setup):
    tech, sc = cheb_setup
    res = backward_summability_check(CHEB, 1.7 + 0.01j, 0.0, 0.5, tech, sc, 6)
    assert set(res.counts) == {"I", "II_l", "II_s"}
    for c, v in res.cumulative.items():
        assert np.all(np.diff(v) >= 0)
    empty = backward_summability_check(CHEB, 1.7, 0.0, 0.5, tech, sc, 0)
    assert all(v == 0 for v in empty.counts.values())


def test_large_scale_on_circle():
    x = np.exp(2j * np.pi * np.array([0.1234, 0.377, 0.81]))
    st = large_scale_statistics(Z2, x, 0.5, 12, 0.1)
    assert st.fraction_every_level == 1.0
    assert all(len(p) == 12 for p in st.passages)
    empty = large_scale_statistics(Z2, x, 0.5, 0, 0.1)
    assert empty.depth == 0 and all(p == [] for p in empty.passages)
