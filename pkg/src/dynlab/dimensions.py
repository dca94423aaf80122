"""Box-counting dimension, Whitney exponents and the cross-estimator comparison."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .maps import julia_bbox
from .raster import DyadicRaster, julia_membership_grid

DROP_FINEST = 2
MIN_COUNT = 32
MIN_SCALES = 4


class DegenerateRasterError(ValueError):
    """The raster is empty or completely filled where a proper subset is needed."""


@dataclass
class BoxCountResult:
    levels: np.ndarray
    rho: np.ndarray
    counts: np.ndarray
    slope: float
    upper: float
    lower: float
    all_counts: np.ndarray  # N at every level 0..k


def box_counts(raster):
    """``N(K, rho)`` for ``rho = side / 2**j``, j = 0..k."""
    return np.array([raster.coarsen(j).count() for j in range(raster.k + 1)])


def _usable_levels(counts, k, levels=None):
    if levels is None:
        levels = range(0, k - DROP_FINEST + 1)
    return np.array([j for j in levels if counts[j] >= MIN_COUNT and j <= k], dtype=int)


def box_counting_dimension(raster: DyadicRaster, levels=None):
    """Least-squares slope of ``log N`` against ``log(1/rho)``, with extreme two-point slopes.

    The two finest raster levels and levels with fewer than 32 occupied
    cells are discarded unless ``levels`` is given explicitly.
    """
    # a full raster is the legitimate area case, only an empty one is degenerate
    if raster.count() == 0:
        raise DegenerateRasterError("raster is empty")
    counts = box_counts(raster)
    use = _usable_levels(counts, raster.k, levels)
    if len(use) < MIN_SCALES:
        raise DegenerateRasterError(f"only {len(use)} usable scales; at least {MIN_SCALES} needed")
    side = raster.bbox[1] - raster.bbox[0]
    rho = side / 2.0 ** use
    x = use * math.log(2.0)
    y = np.log(counts[use].astype(float))
    slope = float(np.polyfit(x, y, 1)[0])
    two = np.diff(y) / np.diff(x)
    return BoxCountResult(use, rho, counts[use], slope, float(two.max()), float(two.min()), counts)


# ---------------------------------------------------------------------------
# Whitney squares


@dataclass
class WhitneyCover:
    levels: np.ndarray  # level of each square
    index: np.ndarray  # (i, j) lower-left cell index at that level
    diameters: np.ndarray
    distances: np.ndarray
    counts_per_level: np.ndarray  # squares retained at levels 0..k
    bbox: tuple

    def ratio_ok(self):
        r = self.distances / self.diameters
        return bool(np.all((r >= 0.25) & (r <= 4.0)))


def _min_pool(a, f):
    n = a.shape[0] // f
    return a.reshape(n, f, n, f).min(axis=(1, 3))


def whitney_cover(raster: DyadicRaster):
    """Maximal dyadic squares ``Q`` in the complement with ``diam(Q) <= dist(Q, K)``.

    Distances come from the Euclidean distance transform of the raster,
    reduced by one cell side so that they never exceed the true distance
    to the (cell-resolved) set. A retained square's parent fails the
    condition, which bounds ``dist / diam`` by 4.
    """
    bits = raster.bits
    if not bits.any():
        raise DegenerateRasterError("raster is empty")
    if bits.all():
        raise DegenerateRasterError("complement is empty")
    h = raster.cell_size
    dist = (ndimage.distance_transform_edt(~bits) - 1.0) * h
    dist = np.where(bits, -1.0, np.maximum(dist, 0.0))
    k = raster.k
    side = raster.bbox[1] - raster.bbox[0]
    taken = np.zeros_like(bits)  # fine cells already covered by a retained square
    lv, idx, diam, dd = [], [], [], []
    counts = np.zeros(k + 1, dtype=int)
    for j in range(k + 1):
        f = 2 ** (k - j)
        d = _min_pool(dist, f)
        covered = _min_pool(~taken, f) == 0  # every fine cell already taken
        s = side / 2 ** j
        ok = (d >= math.sqrt(2) * s) & ~covered
        # squares partially covered by a bigger square cannot occur: dyadic nesting
        iy, ix = np.nonzero(ok)
        counts[j] = len(iy)
        if len(iy):
            lv.append(np.full(len(iy), j))
            idx.append(np.column_stack([ix, iy]))
            diam.append(np.full(len(iy), math.sqrt(2) * s))
            dd.append(d[iy, ix])
            mask = np.kron(ok, np.ones((f, f), dtype=bool))
            taken |= mask
    cat = (lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape))
    return WhitneyCover(cat(lv, 0).astype(int), cat(idx, (0, 2)).astype(int), cat(diam, 0),
                        cat(dd, 0), counts, raster.bbox)


@dataclass
class WhitneyResult:
    delta: float
    bracket: tuple
    levels: np.ndarray
    counts: np.ndarray
    deltas: np.ndarray
    level_sums: np.ndarray  # (deltas, levels)
    cover: WhitneyCover
    verdict: str


def whitney_exponent(raster: DyadicRaster, deltas=None, tol=1e-3, levels=None, cover=None):
    """Convergence exponent of ``sum diam(Q)^delta`` over small Whitney squares.

    Per-level sums over the usable levels (the two finest dropped, at
    least 32 squares per level, large squares dropped) are fitted by a
    geometric ratio; the exponent is where the ratio crosses 1, found by
    bisection. ``deltas`` is an optional grid at which per-level sums are
    also reported.
    """
    cover = whitney_cover(raster) if cover is None else cover
    use = _usable_levels(cover.counts_per_level, raster.k, levels)
    if len(use) < MIN_SCALES:
        raise DegenerateRasterError(f"only {len(use)} usable Whitney levels")
    side = raster.bbox[1] - raster.bbox[0]
    diam = math.sqrt(2) * side / 2.0 ** use
    cnt = cover.counts_per_level[use].astype(float)

    def slope(d):
        return float(np.polyfit(use, np.log(cnt) + d * np.log(diam), 1)[0])

    lo, hi = 0.0, 2.5
    if not (slope(lo) > 0 > slope(hi)):
        verdict = "inconclusive"
    else:
        verdict = "ok"
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                lo = mid
            else:
                hi = mid
    grid = np.array([0.5, 1.0, 1.5, 2.0] if deltas is None else deltas, dtype=float)
    sums = np.array([cnt * diam ** d for d in grid])
    return WhitneyResult(0.5 * (lo + hi) if verdict == "ok" else float("nan"), (lo, hi), use,
                         cover.counts_per_level[use], grid, sums, cover, verdict)


# ---------------------------------------------------------------------------
# comparison


DEFAULT_COMPARISON = {"level": 11, "max_iter": 500, "poincare_z": [3.0, 0.0], "poincare_depth": 14,
                      "tol": 1e-3, "gap_tol": 0.1, "pad": 0.05}


@dataclass
class DimensionReport:
    poincare: float
    poincare_bracket: tuple
    whitney: float
    whitney_bracket: tuple
    box: float
    box_bracket: tuple  # (lower, upper) two-point slopes
    gaps: dict
    passed: bool
    fact_upper_ok: bool
    notes: list = field(default_factory=list)
    raster: DyadicRaster = None
    details: dict = field(default_factory=dict)

    def estimates(self):
        return {"poincare": self.poincare, "whitney": self.whitney, "box": self.box}


def dimension_comparison(fmap, config=None, raster=None):
    """The three dimension estimates of one map, pairwise gaps and the Whitney-vs-box check."""
    from .poincare import estimate_poincare_exponent

    cfg = dict(DEFAULT_COMPARISON)
    cfg.update(config or {})
    if raster is None:
        raster = julia_membership_grid(fmap, julia_bbox(fmap, cfg["pad"]), int(cfg["level"]),
                                       max_iter=int(cfg["max_iter"]))
    box = box_counting_dimension(raster)
    wh = whitney_exponent(raster, tol=cfg["tol"])
    z = complex(*cfg["poincare_z"]) if isinstance(cfg["poincare_z"], (list, tuple)) else complex(cfg["poincare_z"])
    pe = estimate_poincare_exponent(fmap, z, int(cfg["poincare_depth"]), tol=cfg["tol"])
    est = {"poincare": pe.delta_hat, "whitney": wh.delta, "box": box.slope}
    gaps = {f"{a}-{b}": abs(est[a] - est[b]) for a, b in itertools.combinations(est, 2)}
    passed = all(np.isfinite(v) for v in est.values()) and all(g < cfg["gap_tol"] for g in gaps.values())
    notes = ["box counting bounds the Hausdorff dimension from above only"]
    if pe.verdict != "ok" or wh.verdict != "ok":
        notes.append("an estimator was inconclusive")
    return DimensionReport(pe.delta_hat, pe.bracket, wh.delta, wh.bracket, box.slope,
                           (box.lower, box.upper), gaps, bool(passed),
                           bool(wh.delta <= box.upper + 0.05), notes, raster,
                           {"box_levels": box.levels.tolist(), "box_counts": box.counts.tolist(),
                            "whitney_levels": wh.levels.tolist(),
                            "whitney_counts": wh.counts.tolist()})
