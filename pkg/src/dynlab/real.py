"""Interval maps: Schwarzian derivative, real transfer operator and the acim report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .maps import MapError, MapSpec, evaluate_and_derivative, taylor_coefficients
from .orbits import SigmaSeq, _log_growth_from, summability_report
from .parallel import ordered_map

CRIT_TOL = 1e-12
REAL_TOL = 1e-9
PERIOD_HORIZON = 6


@dataclass
class IntervalMap:
    """A real rational (usually polynomial) map of ``[a, b]``."""

    fmap: MapSpec
    domain: tuple
    critical: list = field(default_factory=list)  # (location, multiplicity) inside (a, b)
    invariant: bool = False

    @classmethod
    def polynomial(cls, coeffs, domain=(0.0, 1.0)):
        return cls.from_mapspec(MapSpec.interval(coeffs, domain))

    @classmethod
    def rational(cls, num, den, domain=(0.0, 1.0)):
        """Real rational map; degree below 2 is allowed here (Schwarzian checks only)."""
        try:
            fmap = MapSpec.rational(num, den)
        except MapError:
            fmap = _LowDegree(np.array(num, dtype=complex), np.array(den, dtype=complex))
        return cls.from_mapspec(fmap, domain)

    @classmethod
    def from_mapspec(cls, fmap, domain=None):
        if domain is None:
            domain = getattr(fmap, "domain", None) or (0.0, 1.0)
        a, b = float(domain[0]), float(domain[1])
        crit = _real_critical_points(fmap, a, b)
        pts = np.concatenate([[a, b], [c for c, _ in crit]])
        vals = evaluate_and_derivative(fmap, pts + 0j)[0].real
        inv = bool(vals.min() >= a - REAL_TOL and vals.max() <= b + REAL_TOL)
        return cls(fmap, (a, b), crit, inv)

    def __call__(self, x):
        return evaluate_and_derivative(self.fmap, np.asarray(x, dtype=float) + 0j)[0].real

    def derivative(self, x):
        return evaluate_and_derivative(self.fmap, np.asarray(x, dtype=float) + 0j)[1].real

    @property
    def mu_max(self):
        return max((m for _, m in self.critical), default=1)


@dataclass(frozen=True)
class _LowDegree:
    # a Mobius or affine map: enough for evaluation and Taylor data
    num_coeffs: np.ndarray
    den_coeffs: np.ndarray
    domain: tuple = None

    def preimages_of(self, w):
        raise MapError("transfer operators need degree at least 2")


def _real_critical_points(fmap, a, b):
    p = np.array(fmap.num_coeffs, dtype=complex)
    q = np.array(fmap.den_coeffs, dtype=complex)
    num = np.polysub(np.polymul(np.polyder(p), q), np.polymul(p, np.polyder(q))) if len(q) > 1 \
        else np.polyder(p)
    if len(num) == 0 or np.all(num == 0):
        return []
    roots = np.roots(num)
    out = []
    for r in roots:
        if abs(r.imag) > 1e-7 or not (a < r.real < b):
            continue
        x = float(r.real)
        for i, (c, m) in enumerate(out):
            if abs(c - x) < 1e-6:
                out[i] = (c, m + 1)
                break
        else:
            out.append((x, 2))
    return out


def schwarzian(f: IntervalMap, x, tol=CRIT_TOL):
    """``f'''/f' - (3/2) (f''/f')^2``."""
    t = taylor_coefficients(f.fmap, complex(float(x)), 3).real
    d1, d2, d3 = t[1], 2 * t[2], 6 * t[3]
    if abs(d1) <= tol:
        raise ValueError(f"|f'(x)| <= {tol} at x = {x}: too close to a critical point")
    return float(d3 / d1 - 1.5 * (d2 / d1) ** 2)


@dataclass
class SchwarzianReport:
    passed: bool
    max_value: float  # the margin: largest S over the grid (negative when passing)
    min_value: float
    skipped: int


def negative_schwarzian_check(f: IntervalMap, grid=None, crit_tol=1e-6, tol=1e-9):
    """``S(f) < 0`` on every grid point away from the critical points."""
    a, b = f.domain
    grid = np.linspace(a, b, 10 ** 4) if grid is None else np.asarray(grid, dtype=float)
    vals, skipped = [], 0
    for x in grid:
        if any(abs(x - c) < crit_tol for c, _ in f.critical):
            skipped += 1
            continue
        try:
            vals.append(schwarzian(f, x))
        except ValueError:
            skipped += 1
    vals = np.array(vals)
    return SchwarzianReport(bool(vals.size and vals.max() < -tol), float(vals.max()),
                            float(vals.min()), skipped)


# ---------------------------------------------------------------------------
# real transfer operator


def _level_sums(f, x, N, rho0):
    """``L_rl^i(rho0)(x)`` for i = 0..N by enumeration of real preimages."""
    out = np.empty(N + 1)
    out[0] = float(rho0(np.array([x]))[0])
    ys = np.array([float(x)])
    w = np.ones(1)
    for i in range(1, N + 1):
        if ys.size == 0:
            out[i:] = 0.0
            break
        roots = f.fmap.preimages_of(ys + 0j)
        a, b = f.domain
        ok = (np.abs(roots.imag) <= REAL_TOL * np.maximum(1, np.abs(roots))) & \
             (roots.real >= a - REAL_TOL) & (roots.real <= b + REAL_TOL)
        par = np.nonzero(ok)[0]
        y = np.clip(roots.real[ok], a, b)
        d = np.abs(f.derivative(y))
        w = w[par] / d
        ys = y
        out[i] = float(np.sum(w * rho0(ys)))
    return out


@dataclass
class RealDensity:
    grid: np.ndarray
    values: np.ndarray  # Cesaro average, nan at skipped points
    N: int
    traces: np.ndarray
    skipped: list
    oracle_error: Optional[float] = None


def real_transfer_apply(f: IntervalMap, grid, N, delta=1.0, rho0=None, crit_value_tol=1e-9):
    """Average of ``L_rl^i(rho0)`` over i = 1..N at the grid points (``N = 0`` returns ``rho0``).

    ``L_rl(rho)(x) = sum_{f(y) = x, y real} rho(y) / |f'(y)|^delta`` and
    ``rho0`` defaults to the uniform density ``1 / (b - a)``.
    """
    if delta != 1.0:
        raise ValueError("the real transfer operator is fixed to delta = 1")
    a, b = f.domain
    rho0 = (lambda y: np.full(np.shape(y), 1.0 / (b - a))) if rho0 is None else rho0
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    cvals = [float(f(np.array([c]))[0]) for c, _ in f.critical]
    skipped = [i for i, x in enumerate(grid) if any(abs(x - v) < crit_value_tol for v in cvals)]
    keep = [i for i in range(len(grid)) if i not in skipped]
    rows = ordered_map(lambda i: _level_sums(f, grid[i], N, rho0), keep)
    traces = np.full((len(grid), max(N, 1)), np.nan)
    values = np.full(len(grid), np.nan)
    for i, r in zip(keep, rows):
        if N == 0:
            values[i] = r[0]
            traces[i, 0] = r[0]
        else:
            traces[i] = np.cumsum(r[1:]) / np.arange(1, N + 1)
            values[i] = traces[i, -1]
    return RealDensity(grid, values, int(N), traces, skipped)


def real_transfer_once(f: IntervalMap, rho: Callable, grid):
    """One application ``L_rl(rho)`` at the grid points."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    return np.array([_level_sums(f, x, 1, rho)[1] for x in grid])


def arcsine_density(x):
    x = np.asarray(x, dtype=float)
    return 1.0 / (np.pi * np.sqrt(x * (1 - x)))


# ---------------------------------------------------------------------------
# combined report


def _iterate(f, x, k):
    y = np.asarray(x, dtype=float)
    dy = np.ones_like(y)
    for _ in range(k):
        fy, d = evaluate_and_derivative(f.fmap, y + 0j)
        dy = dy * d.real
        y = fy.real
    return y, dy


def periodic_points(f: IntervalMap, period, samples=20000):
    """Real points of exact or divisor period, by sign changes of ``f^k(x) - x`` and Brent refinement.

    Near-tangential zeros (no sign change, ``|f^k x - x| < 1e-8``) are returned as well.
    """
    a, b = f.domain
    xs = np.linspace(a, b, samples + 1)
    g = _iterate(f, xs, period)[0] - xs
    pts = []
    for i in range(samples):
        if g[i] == 0:
            pts.append(xs[i])
        elif g[i] * g[i + 1] < 0:
            pts.append(brentq(lambda t: float(_iterate(f, np.array([t]), period)[0][0] - t),
                              xs[i], xs[i + 1], xtol=1e-14))
    if g[-1] == 0:
        pts.append(xs[-1])
    mins = np.flatnonzero((np.abs(g[1:-1]) < 1e-8) & (np.abs(g[1:-1]) <= np.abs(g[:-2]))
                          & (np.abs(g[1:-1]) <= np.abs(g[2:]))) + 1
    pts.extend(xs[mins])
    pts = np.unique(np.round(np.array(pts, dtype=float), 12))
    return pts


@dataclass
class PeriodicReport:
    all_repelling: bool
    worst: float  # smallest |(f^k)'| over the found points
    worst_point: Optional[float]
    counts: dict


def repelling_periodic_check(f: IntervalMap, horizon=PERIOD_HORIZON):
    worst, where, counts = math.inf, None, {}
    for k in range(1, horizon + 1):
        pts = periodic_points(f, k)
        counts[k] = int(len(pts))
        if len(pts):
            m = np.abs(_iterate(f, pts, k)[1])
            i = int(np.argmin(m))
            if m[i] < worst:
                worst, where = float(m[i]), float(pts[i])
    return PeriodicReport(bool(worst > 1 + 1e-9), worst, where, counts)


def real_sigma_sequence(f: IntervalMap, N):
    """``min_c |(f^n)'(f(c))|`` over the critical points in the open interval."""
    if not f.critical:
        return SigmaSeq.vacuous_sequence(N, 1)
    per = [_log_growth_from(f.fmap, complex(c), N) for c, _ in f.critical]
    stack = np.vstack(per)
    idx = np.argmin(stack, axis=0)
    return SigmaSeq(stack[idx, np.arange(N)], idx, f.mu_max, False, tuple(per),
                    tuple(complex(c) for c, _ in f.critical))


@dataclass
class IntervalAcimReport:
    verdict: str  # "pass", "hypothesis not met" or "precondition failure"
    schwarzian: SchwarzianReport
    periodic: PeriodicReport
    summability: object
    threshold: float
    alpha_below_threshold: bool
    density: Optional[RealDensity]
    notes: list = field(default_factory=list)


def interval_acim_report(f: IntervalMap, alpha, n_max=20, grid=None, N=18, oracle=None):
    """Negative Schwarzian, repelling cycles, real summability at ``alpha < 1/(1 + mu_max)`` and the acim."""
    notes = []
    per = repelling_periodic_check(f)
    sch = negative_schwarzian_check(f)
    sigma = real_sigma_sequence(f, n_max)
    summ = summability_report(sigma, alpha)
    thr = 1.0 / (1 + f.mu_max)
    below = alpha < thr
    a, b = f.domain
    grid = np.linspace(a + 0.05 * (b - a), b - 0.05 * (b - a), 91) if grid is None else grid
    dens = real_transfer_apply(f, grid, N)
    if oracle is not None:
        ok = np.isfinite(dens.values)
        ref = oracle(dens.grid[ok])
        dens.oracle_error = float(np.max(np.abs(dens.values[ok] / ref - 1)))
    if not f.invariant:
        notes.append("the interval is not mapped into itself")
    if not per.all_repelling:
        verdict = "precondition failure"
        notes.append(f"non-repelling periodic point near {per.worst_point} (|(f^k)'| = {per.worst:.6g})")
    elif not (sch.passed and below and summ.verdict == "converges"):
        verdict = "hypothesis not met"
        if not below:
            notes.append(f"alpha = {alpha} is not below 1/(1 + mu_max) = {thr:.6g}")
        if not sch.passed:
            notes.append("Schwarzian derivative is not negative on the grid")
        if summ.verdict != "converges":
            notes.append(f"summability verdict: {summ.verdict}")
    else:
        verdict = "pass"
    return IntervalAcimReport(verdict, sch, per, summ, thr, below, dens, notes)
