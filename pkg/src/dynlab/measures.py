"""Conformal measures from preimage trees, transfer operators and orbit statistics."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .backward import DEFAULT_BUDGET, CriticalContext, PreimageTree, preimage_levels
from .maps import critical_points, evaluate_and_derivative
from .orbits import scalar_stepper
from .parallel import ordered_map

MASS_TOL = 1e-12
PROXIMITY_TOL = 1e-6


class ProximityWarning(UserWarning):
    """An evaluation point lies close to a forward critical orbit."""


# ---------------------------------------------------------------------------
# atomic measures


@dataclass
class AtomicMeasure:
    points: np.ndarray
    weights: np.ndarray
    p: float
    z: complex
    depth: int
    levels: np.ndarray  # level of each atom in the preimage tree
    patterson: bool = False  # the Patterson correction is not applied (h = 1)
    min_level: int = 0

    def __post_init__(self):
        total = float(np.sum(self.weights))
        if not (total > 0 and np.all(self.weights >= 0)):
            raise ValueError("weights must be nonnegative with positive total")

    def mass(self, mask=None):
        return float(np.sum(self.weights if mask is None else self.weights[mask]))

    def to_json(self):
        atoms = [[float(p.real), float(p.imag), float(w)] for p, w in zip(self.points, self.weights)]
        return {"exponent": float(self.p), "base_point": [float(self.z.real), float(self.z.imag)],
                "depth": int(self.depth), "min_level": int(self.min_level),
                "levels": [int(v) for v in self.levels], "atoms": atoms}

    @classmethod
    def from_json(cls, data):
        a = np.array(data["atoms"], dtype=float).reshape(-1, 3)
        z = complex(*data["base_point"])
        levels = np.array(data.get("levels", np.zeros(len(a))), dtype=int)
        return cls(a[:, 0] + 1j * a[:, 1], a[:, 2], float(data["exponent"]), z, int(data["depth"]),
                   levels, False, int(data.get("min_level", 0)))

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)


def atomic_conformal_measure(fmap, z, p, n_max, min_level=0, tree=None):
    """Normalized ``sum_n sum_{F^n y = z} |(F^n)'(y)|^-p delta_y`` over levels ``min_level..n_max``.

    ``min_level = 0`` is the plain truncated construction. A positive value
    keeps only the deep levels, which is how the ``p -> delta`` limit
    (where the series diverges and mass escapes to deep levels) is
    imitated at a fixed depth.
    """
    if not 0 <= min_level <= n_max:
        raise ValueError("need 0 <= min_level <= n_max")
    tree = PreimageTree(fmap, z, n_max) if tree is None else tree
    pts, w, lev = [], [], []
    for n in range(min_level, n_max + 1):
        pts.append(tree.points[n])
        w.append(np.exp(-p * tree.logder[n]))
        lev.append(np.full(len(tree.points[n]), n))
    w = np.concatenate(w)
    total = w.sum()
    if not total > 0 or not np.isfinite(total):
        raise ArithmeticError("total mass is zero or not finite")
    return AtomicMeasure(np.concatenate(pts), w / total, float(p), complex(z), int(n_max),
                         np.concatenate(lev), False, int(min_level))


# partitions map points to cell indices (-1 outside), half-open in every coordinate


@dataclass
class Partition:
    count: int
    index: Callable
    labels: list = field(default_factory=list)


def _half_open(u, m, snap):
    # u in cell units; points within ``snap`` below a boundary belong to the upper cell
    return np.floor(u + snap).astype(int)


def arc_partition(m, r_min=0.5, r_max=2.0, snap=1e-9):
    """``m`` equal angular sectors of the annulus ``r_min <= |z| < r_max``."""
    def index(z):
        z = np.asarray(z, dtype=complex)
        t = np.mod(np.angle(z) / (2 * np.pi), 1.0)
        k = np.mod(_half_open(t * m, m, snap), m)
        ok = (np.abs(z) >= r_min) & (np.abs(z) < r_max)
        return np.where(ok, k, -1)
    return Partition(m, index, [(i / m, (i + 1) / m) for i in range(m)])


def interval_partition(a, b, m, height=1.0, snap=1e-9):
    """``m`` equal strips ``[x_i, x_{i+1}) x [-height, height)`` over ``[a, b]``."""
    def index(z):
        z = np.asarray(z, dtype=complex)
        k = _half_open((z.real - a) / (b - a) * m, m, snap)
        ok = (k >= 0) & (k < m) & (np.abs(z.imag) < height)
        return np.where(ok, k, -1)
    h = (b - a) / m
    return Partition(m, index, [(a + i * h, a + (i + 1) * h) for i in range(m)])


def dyadic_partition(bbox, k):
    """Half-open dyadic squares of side ``(x1 - x0) / 2**k``."""
    x0, x1, y0, y1 = bbox
    n = 2 ** k

    def index(z):
        z = np.asarray(z, dtype=complex)
        i = np.floor((z.real - x0) / (x1 - x0) * n).astype(int)
        j = np.floor((z.imag - y0) / (y1 - y0) * n).astype(int)
        ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
        return np.where(ok, j * n + i, -1)
    return Partition(n * n, index, [])


def bin_masses(nu, partition):
    idx = partition.index(nu.points)
    out = np.zeros(partition.count)
    np.add.at(out, idx[idx >= 0], nu.weights[idx >= 0])
    return out


@dataclass
class ScheduleReport:
    p_values: list
    masses: np.ndarray  # (len(p_values), cells)
    max_change: list  # max relative change between consecutive p
    stabilized: bool


def weak_limit_schedule(fmap, z, p_values, n_max, partition, min_level=0, tol=0.03):
    """Binned masses along a decreasing p schedule; stabilized when the last change is below ``tol``."""
    tree = PreimageTree(fmap, z, n_max)
    rows = [bin_masses(atomic_conformal_measure(fmap, z, p, n_max, min_level, tree), partition)
            for p in p_values]
    rows = np.array(rows)
    change = [float(np.max(np.abs(rows[i + 1] - rows[i]) / np.maximum(rows[i + 1], 1e-300)))
              for i in range(len(rows) - 1)]
    return ScheduleReport(list(p_values), rows, change, bool(change and change[-1] < tol))


# ---------------------------------------------------------------------------
# conformality, gauge, integrability


@dataclass
class ConformalityReport:
    residuals: np.ndarray  # relative residual per cell (nan for skipped cells)
    max_residual: float
    mean_residual: float
    skipped: list
    image_mass: np.ndarray
    jacobian_mass: np.ndarray


def conformality_residual(nu, fmap, p, partition, crit=None, min_mass=0.0):
    """Relative residuals ``|nu(F(B)) - int_B |F'|^p dnu| / nu(F(B))`` per cell ``B``.

    An atom ``x`` lies in ``F(B)`` exactly when one of its preimages lies in
    ``B``. Cells containing a critical point, or where two preimages of one
    atom fall into the same cell (``F`` not injective there), are skipped.
    """
    crit = critical_points(fmap) if crit is None else crit
    cidx = partition.index(np.array([c.location for c in crit if not c.at_infinity], dtype=complex))
    bad = set(int(v) for v in np.atleast_1d(cidx) if v >= 0)
    pre = fmap.preimages_of(nu.points)  # (atoms, deg)
    cells = partition.index(pre.ravel()).reshape(pre.shape)
    image = np.zeros(partition.count)
    for j in range(pre.shape[1]):
        k = cells[:, j]
        np.add.at(image, k[k >= 0], nu.weights[k >= 0])
        for jj in range(j + 1, pre.shape[1]):
            dup = (cells[:, j] == cells[:, jj]) & (cells[:, j] >= 0)
            bad.update(int(v) for v in np.unique(cells[dup, j]))
    _, df = evaluate_and_derivative(fmap, nu.points)
    own = partition.index(nu.points)
    jac = np.zeros(partition.count)
    sel = own >= 0
    np.add.at(jac, own[sel], nu.weights[sel] * np.abs(df[sel]) ** p)
    res = np.full(partition.count, np.nan)
    for b in range(partition.count):
        if b in bad or image[b] <= min_mass:
            continue
        res[b] = abs(image[b] - jac[b]) / image[b]
    valid = res[np.isfinite(res)]
    return ConformalityReport(res, float(valid.max()) if valid.size else float("nan"),
                              float(valid.mean()) if valid.size else float("nan"),
                              sorted(bad), image, jac)


@dataclass
class GaugeReport:
    q: float
    eps: float
    radii: np.ndarray
    samples: np.ndarray
    ratio_q: np.ndarray  # (samples, radii)
    ratio_q_eps: np.ndarray
    skipped: list
    passed: bool


def gauge_check(nu, q, eps, samples=16, radii=None, bounds=(0.2, 5.0), min_atoms=8, seed=0):
    """Ratios ``nu(B(x, r)) / r^q`` and ``nu(B(x, r)) / r^(q - eps)`` at atoms drawn from nu."""
    radii = 2.0 ** -np.arange(3, 9) if radii is None else np.asarray(radii, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(nu.points), size=samples, replace=True, p=nu.weights / nu.weights.sum())
    tree = cKDTree(np.column_stack([nu.points.real, nu.points.imag]))
    rq = np.full((samples, len(radii)), np.nan)
    rqe = np.full((samples, len(radii)), np.nan)
    skipped = []
    for s, i in enumerate(idx):
        x = nu.points[i]
        small = tree.query_ball_point([x.real, x.imag], radii.min())
        if len(small) < min_atoms:
            skipped.append(int(s))
            continue
        for j, r in enumerate(radii):
            m = float(nu.weights[tree.query_ball_point([x.real, x.imag], r)].sum())
            rq[s, j] = m / r ** q
            rqe[s, j] = m / r ** (q - eps)
    lo, hi = bounds
    used = np.isfinite(rq[:, 0])
    ok = bool(used.any()) and bool(np.all((rq[used] >= lo) & (rq[used] <= hi))) \
        and bool(np.all((rqe[used] >= lo) & (rqe[used] <= hi)))
    return GaugeReport(float(q), float(eps), radii, nu.points[idx], rq, rqe, skipped, ok)


@dataclass
class IntegrabilityReport:
    eta: float
    integrals: np.ndarray  # one per orbit point F^i(c), i = 0..horizon
    excluded: list  # atoms sitting on orbit points, per i
    sup: float
    passed: Optional[bool]


def integrability_check(nu, orbit, eta, C=None, tol=1e-15):
    """``int |z - F^i(c)|^-eta dnu`` over the supplied orbit points."""
    orbit = np.atleast_1d(np.asarray(orbit, dtype=complex))
    vals, excl = [], []
    for a in orbit:
        d = np.abs(nu.points - a)
        on = d <= tol
        vals.append(float(np.sum(nu.weights[~on] * d[~on] ** (-eta))))
        excl.append(int(on.sum()))
    vals = np.array(vals)
    sup = float(vals.max()) if vals.size else 0.0
    return IntegrabilityReport(float(eta), vals, excl, sup, None if C is None else bool(sup <= C))


# ---------------------------------------------------------------------------
# transfer operator


@dataclass
class DensityField:
    points: np.ndarray
    values: np.ndarray
    delta: float
    N: int
    traces: np.ndarray  # running Cesaro averages, (points, N)
    envelope: Optional[np.ndarray] = None

    @property
    def trace_last_delta(self):
        if self.traces.shape[1] < 2:
            return np.zeros(len(self.points))
        return np.abs(self.traces[:, -1] - self.traces[:, -2])

    @property
    def minimum(self):
        return float(np.min(self.values))


def _forward_critical_points(fmap, n, crit=None):
    ctx = CriticalContext.build(fmap, max(n, 1), crit)
    return ctx.images[1:].ravel()


def transfer_level_sums(fmap, z, delta, N, budget=DEFAULT_BUDGET):
    """``L^i(1)(z)`` for i = 0..N by explicit enumeration of ``F^{-i}(z)``."""
    out = np.empty(N + 1)
    out[0] = 1.0
    if N == 0:
        return out
    pts, steps = preimage_levels(fmap, [complex(z)], N, budget=max(budget, fmap.degree ** N))
    logd = np.zeros(1)
    deg = fmap.degree
    for k in range(1, N + 1):
        logd = steps[k][0] + np.repeat(logd, deg)
        out[k] = float(np.sum(np.exp(-delta * logd)))
    return out


def _proximity(fmap, points, N):
    orb = _forward_critical_points(fmap, N)
    if not len(orb):
        return
    d = np.min(np.abs(np.asarray(points)[:, None] - orb[None, :]), axis=1)
    if np.any(d < PROXIMITY_TOL):
        warnings.warn("evaluation point within 1e-6 of a forward critical orbit", ProximityWarning,
                      stacklevel=3)


def transfer_apply(fmap, delta, points, N, budget=DEFAULT_BUDGET):
    """``L^N(1)`` at each point: ``sum_{F^N y = z} |(F^N)'(y)|^-delta``."""
    points = np.atleast_1d(np.asarray(points, dtype=complex))
    _proximity(fmap, points, N)
    rows = ordered_map(lambda z: transfer_level_sums(fmap, z, delta, N, budget)[-1], points)
    return np.array(rows)


def invariant_density_estimate(fmap, delta, grid, N, budget=DEFAULT_BUDGET, tech=None, crit=None):
    """Cesàro averages ``(1/N) sum_{i<N} L^i(1)`` at the grid points.

    With technical sequences supplied, the envelope ``g(z) = sum_k gamma_k^-delta
    dist(F^k Crit, z)^(-(1 - 1/mu) delta)`` is reported alongside.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=complex))
    if N < 1:
        raise ValueError("N must be at least 1")
    _proximity(fmap, grid, N)
    rows = np.array(ordered_map(lambda z: transfer_level_sums(fmap, z, delta, N - 1, budget), grid))
    traces = np.cumsum(rows, axis=1) / np.arange(1, N + 1)
    env = None
    if tech is not None:
        crit = critical_points(fmap) if crit is None else crit
        ctx = CriticalContext.build(fmap, len(tech.gamma_n), crit)
        mu = tech.mu_max
        env = np.zeros(len(grid))
        for k in range(1, len(tech.gamma_n) + 1):
            d = np.min(np.abs(grid[:, None] - ctx.images[k][None, :]), axis=1)
            env += tech.gamma_n[k - 1] ** -delta * d ** (-(1 - 1 / mu) * delta)
    return DensityField(grid, traces[:, -1], float(delta), int(N), traces, env)


# ---------------------------------------------------------------------------
# orbit statistics


@dataclass
class BirkhoffMeasure:
    edges: np.ndarray
    masses: np.ndarray
    n: int
    escaped: bool
    coordinate: str


def orbit(fmap, x0, n, project=None, escape_radius=1e6):
    """``x0, F(x0), ..., F^n(x0)`` as a complex array; stops early on escape."""
    step = scalar_stepper(fmap)
    out = np.empty(n + 1, dtype=complex)
    w = complex(x0)
    out[0] = w
    for k in range(1, n + 1):
        w = step(w)[0]
        if project is not None:
            w = project(w)
        if not abs(w) < escape_radius:
            return out[:k], True
        out[k] = w
    return out, False


def _coordinate(values, coordinate):
    if coordinate == "real":
        return values.real
    if coordinate == "angle":
        return np.mod(np.angle(values) / (2 * np.pi), 1.0)
    raise ValueError("coordinate must be 'real' or 'angle'")


def birkhoff_measure(fmap, x0, n, bins, coordinate="real", project=None, orbit_values=None):
    """Histogram of the orbit ``x0, ..., F^n(x0)`` over the bin edges (normalized to mass 1)."""
    if orbit_values is None:
        orbit_values, escaped = orbit(fmap, x0, n, project)
    else:
        escaped = False
    x = _coordinate(orbit_values, coordinate)
    edges = np.asarray(bins, dtype=float)
    counts, _ = np.histogram(x, bins=edges)
    total = counts.sum()
    return BirkhoffMeasure(edges, counts / total if total else counts.astype(float), len(x) - 1,
                           escaped, coordinate)


@dataclass
class ErgodicStats:
    entropy: float
    lyapunov: float
    jacobians: np.ndarray  # per bin, nan where the bin is empty
    n: int
    coarse_bins: list = field(default_factory=list)


def entropy_lyapunov(fmap, orbit_values, bins=256, coordinate="real", lo=None, hi=None, samples=33):
    """Lyapunov exponent and entropy ``int log Jac dsigma`` from an orbit.

    The Jacobian on a bin ``A`` is ``sigma(F(A)) / sigma(A)`` with both
    masses taken from the orbit's empirical distribution; ``F(A)`` is the
    interval (or arc) spanned by ``F`` on samples of ``A``. Bins whose
    image wraps around more than once are reported as too coarse.
    """
    z = np.asarray(orbit_values, dtype=complex)
    n = len(z)
    _, df = evaluate_and_derivative(fmap, z)
    chi = float(np.mean(np.log(np.abs(df))))
    x = _coordinate(z, coordinate)
    lo = float(x.min()) if lo is None else lo
    hi = float(x.max()) if hi is None else hi
    if coordinate == "angle":
        lo, hi = 0.0, 1.0
    edges = np.linspace(lo, hi, bins + 1)
    xs = np.sort(x)
    counts = np.histogram(x, bins=edges)[0]
    jac = np.full(bins, np.nan)
    coarse = []

    def cdf(v):
        return np.searchsorted(xs, v, side="right") / n

    for b in range(bins):
        if counts[b] == 0:
            continue
        t = np.linspace(edges[b], edges[b + 1], samples)
        if coordinate == "real":
            img = evaluate_and_derivative(fmap, t + 0j)[0].real
            m = cdf(img.max()) - cdf(img.min())
        else:
            img = evaluate_and_derivative(fmap, np.exp(2j * np.pi * t))[0]
            a = np.unwrap(np.angle(img)) / (2 * np.pi)
            a0, a1 = float(a.min()), float(a.max())
            if a1 - a0 >= 1:
                coarse.append(b)
                continue
            f0 = a0 % 1.0
            f1 = f0 + (a1 - a0)
            m = cdf(f1) - cdf(f0) if f1 <= 1 else (1 - cdf(f0)) + cdf(f1 - 1)
        jac[b] = m / (counts[b] / n)
    valid = np.isfinite(jac) & (jac > 0)
    h = float(np.sum(counts[valid] / n * np.log(jac[valid])))
    return ErgodicStats(h, chi, jac, n, coarse)


def autocorrelation(values, max_lag=20):
    """Normalized autocorrelation of a real sequence for lags 0..max_lag."""
    x = np.asarray(values, dtype=float)
    x = x - x.mean()
    var = float(np.dot(x, x)) / len(x)
    if var == 0:
        return np.ones(max_lag + 1)
    return np.array([float(np.dot(x[:len(x) - k], x[k:])) / (len(x) - k) / var
                     for k in range(max_lag + 1)])
