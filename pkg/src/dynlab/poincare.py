"""Poincaré series over preimage trees and estimates of their convergence exponent."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .backward import CriticalContext, PreimageTree, geometric_ratio, restricted_membership

ADM_TOL = 1e-6
FIT_LEVELS = 6
MIN_LEVELS = 8


class InadmissibleWarning(UserWarning):
    """The base point lies within ``adm_tol`` of a forward critical orbit."""


@dataclass
class PoincarePartial:
    z: complex
    delta: float
    level_sums: np.ndarray  # S_0 .. S_n
    cumulative: np.ndarray
    admissible: bool
    restricted_to: float = 0.0  # Delta for restricted sums, 0 for the full series

    @property
    def total(self):
        return float(self.cumulative[-1]) if len(self.cumulative) else 0.0


@dataclass
class PoincareEstimate:
    z: complex
    deltas: np.ndarray
    level_sums: np.ndarray  # shape (len(deltas), depth + 1)
    delta_hat: float
    bracket: tuple
    depth: int
    verdict: str
    diagnostics: dict = field(default_factory=dict)


def admissible(fmap, z, n_max, adm_tol=ADM_TOL, ctx=None):
    """True when z keeps a distance above ``adm_tol`` from ``F^i(Crit)``, 1 <= i <= n_max."""
    if n_max <= 0:
        return True
    ctx = CriticalContext.build(fmap, n_max) if ctx is None else ctx
    if not len(ctx.locations):
        return True
    return float(np.min(np.abs(ctx.images[1:n_max + 1] - z))) > adm_tol


def _tree(fmap, z, n_max, tree):
    if tree is not None and tree.n >= n_max and abs(tree.z - complex(z)) == 0:
        return tree
    return PreimageTree(fmap, z, n_max)


def level_sums_from_tree(tree, delta, n_max=None, mask=None):
    """``S_n(delta)`` for n = 0..n_max from stored log-derivatives (optionally masked)."""
    n_max = tree.n if n_max is None else n_max
    out = np.empty(n_max + 1)
    for n in range(n_max + 1):
        ld = tree.logder[n]
        w = np.exp(-delta * ld)
        out[n] = float(np.sum(w[mask[n]])) if mask is not None else float(np.sum(w))
    return out


def poincare_partial(fmap, z, delta, n_max, tree=None, adm_tol=ADM_TOL):
    """Level sums ``sum_{F^n y = z} |(F^n)'(y)|^-delta`` for n = 1..n_max and their partial sums.

    Level 0 (the base point itself) is excluded from the cumulative sum; the
    returned ``level_sums`` keep it at index 0 as 1 for reference.
    """
    z = complex(z)
    n_max = int(n_max)
    ok = admissible(fmap, z, n_max, adm_tol)
    if not ok:
        warnings.warn(f"base point {z} is within {adm_tol} of a forward critical orbit",
                      InadmissibleWarning, stacklevel=2)
    if n_max <= 0:
        return PoincarePartial(z, float(delta), np.ones(1), np.zeros(1), ok)
    tree = _tree(fmap, z, n_max, tree)
    sums = level_sums_from_tree(tree, delta, n_max)
    cum = np.concatenate([[0.0], np.cumsum(sums[1:])])
    return PoincarePartial(z, float(delta), sums, cum, ok)


def restricted_poincare_partial(fmap, z, delta, Delta, n_max, tree=None, adm_tol=ADM_TOL,
                                member=None):
    """As :func:`poincare_partial`, summing only over branches in ``H(z, Delta)``."""
    if Delta <= 0:
        raise ValueError("Delta must be positive")
    z = complex(z)
    n_max = int(n_max)
    ok = admissible(fmap, z, n_max, adm_tol)
    if not ok:
        warnings.warn(f"base point {z} is within {adm_tol} of a forward critical orbit",
                      InadmissibleWarning, stacklevel=2)
    if n_max <= 0:
        return PoincarePartial(z, float(delta), np.ones(1), np.zeros(1), ok, float(Delta))
    tree = _tree(fmap, z, n_max, tree)
    member = restricted_membership(fmap, tree, Delta) if member is None else member
    sums = level_sums_from_tree(tree, delta, n_max, member)
    cum = np.concatenate([[0.0], np.cumsum(sums[1:])])
    return PoincarePartial(z, float(delta), sums, cum, ok, float(Delta))


def monotone_in_delta(tree, deltas, n):
    """Check ``S_n`` is nonincreasing along an increasing delta grid; None when not applicable."""
    if np.min(tree.logder[n]) < 0:
        return None
    s = [float(np.sum(np.exp(-d * tree.logder[n]))) for d in sorted(deltas)]
    return bool(np.all(np.diff(s) <= 1e-12 * max(s)))


def _log_slope(sums, last=FIT_LEVELS):
    return math.log(geometric_ratio(sums[1:], last))


def estimate_poincare_exponent(fmap, z, n_max, tol=0.01, lo=0.0, hi=3.0, tree=None,
                               adm_tol=ADM_TOL):
    """Bisection on delta by the fitted per-level ratio of ``S_n(delta)`` over the last 6 levels.

    A ratio below 1 puts delta on the convergent side, above 1 on the
    divergent side. The returned bracket has width at most ``tol``.
    """
    if n_max < MIN_LEVELS:
        raise ValueError(f"at least {MIN_LEVELS} levels are needed")
    z = complex(z)
    if not admissible(fmap, z, n_max, adm_tol):
        warnings.warn(f"base point {z} is within {adm_tol} of a forward critical orbit",
                      InadmissibleWarning, stacklevel=2)
    tree = _tree(fmap, z, n_max, tree)
    grid, rows = [], []

    def slope(d):
        s = level_sums_from_tree(tree, d, n_max)
        grid.append(float(d))
        rows.append(s)
        return _log_slope(s)

    s_lo, s_hi = slope(lo), slope(hi)
    diag = {"slope_lo": s_lo, "slope_hi": s_hi}
    if not (s_lo > 0 > s_hi):
        order = np.argsort(grid)
        return PoincareEstimate(z, np.array(grid)[order], np.array(rows)[order], float("nan"),
                                (lo, hi), n_max, "inconclusive", diag)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    r_lo = geometric_ratio(level_sums_from_tree(tree, lo, n_max)[1:])
    r_hi = geometric_ratio(level_sums_from_tree(tree, hi, n_max)[1:])
    diag.update({"ratio_at_lo": r_lo, "ratio_at_hi": r_hi,
                 "monotone_at_depth": monotone_in_delta(tree, grid, n_max)})
    order = np.argsort(grid)
    return PoincareEstimate(z, np.array(grid)[order], np.array(rows)[order], float(mid), (lo, hi),
                            n_max, "ok", diag)


@dataclass
class DivergenceProbe:
    delta: float
    level_sums: np.ndarray
    cumulative: np.ndarray
    ratio: float
    growth_law: str  # "geometric", "polynomial", "logarithmic" or "none"
    growth_exponent: float
    divergent_consistent: bool


def divergence_type_probe(fmap, z, delta_hat, n_max, tol=0.02, tree=None):
    """Growth law of the partial sums at ``delta_hat``.

    Level sums decaying geometrically (fitted ratio below ``1 - tol``) give a
    plateau: ``none``. Otherwise the cumulative sums are unbounded-trending
    and are fitted by ``n^a`` (``polynomial``), by ``log n`` when the power
    is small (``logarithmic``), or flagged ``geometric`` when the level sums
    themselves grow.
    """
    p = poincare_partial(fmap, z, delta_hat, n_max, tree=tree)
    sums, cum = p.level_sums, p.cumulative
    ratio = geometric_ratio(sums[1:])
    n = np.arange(1, n_max + 1, dtype=float)
    half = max(1, n_max // 2)
    a = float(np.polyfit(np.log(n[half - 1:]), np.log(np.maximum(cum[half:], 1e-300)), 1)[0]) \
        if n_max - half >= 1 else float("nan")
    if ratio < 1 - tol:
        law, consistent = "none", False
    elif ratio > 1 + tol:
        law, consistent = "geometric", True
    else:
        law, consistent = ("polynomial" if a > 0.5 else "logarithmic"), True
    return DivergenceProbe(float(delta_hat), sums, cum, float(ratio), law, a, consistent)
