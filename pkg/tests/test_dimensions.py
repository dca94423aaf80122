import numpy as np
import pytest

from conftest import BASILICA, Z2
from dynlab.dimensions import (DegenerateRasterError, box_counting_dimension, box_counts,
                               dimension_comparison, whitney_cover, whitney_exponent)
from dynlab.raster import DyadicRaster, filled_raster

K = 10


def _raster(bits):
    return DyadicRaster((0.0, 1.0, 0.0, 1.0), K, bits)


@pytest.fixture(scope="module")
def gasket():
    # Pascal's triangle mod 2: exactly 3^j occupied cells at level j
    i, j = np.indices((2 ** K, 2 ** K))
    return _raster((i & j) == 0)


@pytest.fixture(scope="module")
def diagonal():
    i, j = np.indices((2 ** K, 2 ** K))
    return _raster(i == j)


def test_box_counting_gasket_exact(gasket):
    res = box_counting_dimension(gasket)
    assert np.array_equal(box_counts(gasket), 3 ** np.arange(K + 1))
    assert res.slope == pytest.approx(np.log2(3), abs=1e-12)
    assert res.lower == pytest.approx(res.upper, abs=1e-12)
    assert res.levels.max() == K - 2 and res.counts.min() >= 32


def test_box_counting_line_and_square(diagonal):
    assert box_counting_dimension(diagonal).slope == pytest.approx(1.0, abs=1e-12)
    assert box_counting_dimension(filled_raster(8)).slope == pytest.approx(2.0, abs=1e-12)


def test_degenerate_rasters():
    with pytest.raises(DegenerateRasterError):
        box_counting_dimension(_raster(np.zeros((2 ** K, 2 ** K), bool)))
    with pytest.raises(DegenerateRasterError):
        whitney_exponent(filled_raster(8))
    few = np.zeros((2 ** K, 2 ** K), bool)
    few[3, 3] = True
    with pytest.raises(DegenerateRasterError):
        box_counting_dimension(_raster(few))


def test_whitney_cover_disjoint(diagonal):
    cov = whitney_cover(diagonal)
    n = 2 ** K
    owner = np.zeros((n, n), int)
    for lvl, (i, j) in zip(cov.levels, cov.index):
        s = 2 ** (K - lvl)
        owner[j * s:(j + 1) * s, i * s:(i + 1) * s] += 1
    # squares are disjoint and avoid the set; cells a few cells away from it are covered
    from scipy import ndimage
    far = ndimage.distance_transform_edt(~diagonal.bits) >= 4
    assert owner.max() == 1 and np.all(owner[diagonal.bits] == 0) and np.all(owner[far] == 1)
    assert np.all(cov.distances >= 0)


def test_whitney_exponent_line(diagonal):
    # finite-resolution estimate: loose bracket around the true value 1
    w = whitney_exponent(diagonal)
    assert w.verdict == "ok" and abs(w.delta - 1.0) < 0.15
    assert w.bracket[1] - w.bracket[0] <= 1e-3


def test_whitney_monotone_level_sums(gasket):
    w = whitney_exponent(gasket, deltas=[1.0, 1.5, 2.0])
    assert np.all(np.diff(w.level_sums, axis=0) <= 0)
    assert 1.5 < w.delta < 2.0


def test_comparison_circle():
    rep = dimension_comparison(Z2, {"level": 11, "poincare_depth": 12})
    est = rep.estimates()
    assert all(abs(v - 1.0) < 0.1 for v in est.values())
    assert rep.passed and rep.fact_upper_ok


def test_comparison_basilica_between_one_and_two():
    rep = dimension_comparison(BASILICA, {"level": 10, "poincare_depth": 13})
    assert rep.passed and rep.fact_upper_ok
    assert all(1.0 < v < 1.5 for v in rep.estimates().values())
    assert rep.box_bracket[1] < 1.9
