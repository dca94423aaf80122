import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BASILICA, CHEB, Z2
from dynlab.backward import PreimageTree
from dynlab.poincare import (InadmissibleWarning, divergence_type_probe, estimate_poincare_exponent,
                             monotone_in_delta, poincare_partial, restricted_poincare_partial)


def test_circle_level_sums_closed_form():
    # every level-n preimage of a point of the unit circle has |(F^n)'| = 2^n
    p = poincare_partial(Z2, np.exp(0.4j), 0.5, 10)
    n = np.arange(11)
    assert np.allclose(p.level_sums, 2.0 ** (n * 0.5), rtol=1e-12)
    assert p.cumulative[0] == 0 and p.total == pytest.approx(np.sum(2.0 ** (n[1:] * 0.5)))


def test_depth_zero():
    p = poincare_partial(Z2, 1.0, 1.0, 0)
    assert p.total == 0.0 and p.level_sums[0] == 1.0


def test_exponent_of_circle():
    est = estimate_poincare_exponent(Z2, 3.0, 12, tol=0.01)
    assert est.verdict == "ok"
    assert abs(est.delta_hat - 1.0) < 0.02
    assert est.bracket[1] - est.bracket[0] <= 0.01


def test_exponent_of_basilica_above_one():
    est = estimate_poincare_exponent(BASILICA, 2.0, 13, tol=0.01)
    assert est.verdict == "ok" and 1.0 < est.delta_hat < 1.5


def test_too_few_levels():
    with pytest.raises(ValueError):
        estimate_poincare_exponent(Z2, 3.0, 5)


def test_inadmissible_base_point_warns():
    # 2 = F^2(0) for the Chebyshev map
    with pytest.warns(InadmissibleWarning):
        p = poincare_partial(CHEB, 2.0, 1.0, 4)
    assert not p.admissible
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert poincare_partial(CHEB, 1.0 + 0.5j, 1.0, 4).admissible


def test_restricted_below_full():
    z = 1.7 + 0.05j
    tree = PreimageTree(CHEB, z, 8)
    full = poincare_partial(CHEB, z, 1.0, 8, tree=tree)
    res = restricted_poincare_partial(CHEB, z, 1.0, 0.5, 8, tree=tree)
    assert np.all(res.level_sums[1:] <= full.level_sums[1:] + 1e-15)
    with pytest.raises(ValueError):
        restricted_poincare_partial(CHEB, z, 1.0, 0.0, 8, tree=tree)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * np.pi), st.lists(st.floats(0, 3), min_size=2, max_size=6))
def test_level_sums_monotone_in_delta(theta, deltas):
    tree = PreimageTree(Z2, 1.5 * np.exp(1j * theta), 6)
    assert monotone_in_delta(tree, deltas, 6)


def test_probe_at_critical_exponent():
    at = divergence_type_probe(Z2, 1.0, 1.0, 12)
    assert at.growth_law == "polynomial" and at.divergent_consistent
    assert at.growth_exponent == pytest.approx(1.0, abs=0.05)
    above = divergence_type_probe(Z2, 1.0, 1.5, 12)
    assert above.growth_law == "none" and not above.divergent_consistent
    below = divergence_type_probe(Z2, 1.0, 0.5, 12)
    assert below.growth_law == "geometric"
