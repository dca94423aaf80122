"""Backward orbits: preimage trees, pulled-back curves and neighbourhoods.

A preimage tree stores every level ``F^{-k}(z)`` as a flat array whose node
``i`` has parent ``i // deg`` and root index ``i % deg``; the base-``deg``
digits of ``i`` are therefore the branch identifier. Pullbacks of discs are
tracked as polygons obtained by continuing roots of ``F(y) = w`` along the
sampled boundary, refining wherever the nearest-root choice is ambiguous.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .maps import critical_points, evaluate_and_derivative

DEFAULT_BUDGET = 2 ** 20
STEP_TOL = 1e-9
BOUNDARY_SAMPLES = 64
AMBIGUITY_RATIO = 0.3
MAX_CURVE_POINTS = 20000
MAX_REFINE_ROUNDS = 30


class BudgetExceeded(RuntimeError):
    """The preimage tree would exceed the configured node budget."""


class ContinuationError(ArithmeticError):
    """Root continuation could not resolve a branch near a critical value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# preimage trees


def preimage_levels(fmap, w, n, budget=DEFAULT_BUDGET, step_tol=STEP_TOL):
    """Level arrays of ``F^{-k}(w)`` for an array of targets ``w``.

    Returns ``(points, steps)``: lists indexed by level k = 0..n of arrays
    with shape ``(len(w), deg**k)``; ``steps[k]`` holds ``log|F'(y)|`` at the
    level-k nodes (zeros at level 0).
    """
    w = np.atleast_1d(np.asarray(w, dtype=complex))
    d = fmap.degree
    if d ** n * len(w) > budget:
        raise BudgetExceeded(f"{len(w)} x {d}^{n} nodes exceed the budget of {budget}")
    points = [w[:, None]]
    steps = [np.zeros((len(w), 1))]
    for _ in range(n):
        prev = points[-1]
        roots = fmap.preimages_of(prev.ravel()).reshape(len(w), -1)
        fy, dfy = evaluate_and_derivative(fmap, roots)
        target = np.repeat(prev, d, axis=1)
        err = np.abs(fy - target) / np.maximum(1.0, np.abs(target))
        if np.any(err > step_tol):
            raise ArithmeticError(f"preimage residual {err.max():.3g} above {step_tol}")
        points.append(roots)
        with np.errstate(divide="ignore"):
            steps.append(np.log(np.abs(dfy)))
    return points, steps


@dataclass
class BackwardOrbit:
    base: complex
    points: np.ndarray  # y_0 = base, ..., y_n
    step_derivs: np.ndarray  # |F'(y_k)|, k = 1..n
    cumulative: np.ndarray  # |(F^k)'(y_k)|, k = 1..n
    branch_id: tuple = ()

    @property
    def length(self):
        return len(self.points) - 1

    @property
    def log_derivative(self):
        return float(np.sum(np.log(self.step_derivs))) if self.length else 0.0


class PreimageTree:
    """All preimages of ``z`` up to depth ``n`` with cumulative log-derivatives."""

    def __init__(self, fmap, z, n, budget=DEFAULT_BUDGET, step_tol=STEP_TOL):
        self.fmap = fmap
        self.z = complex(z)
        self.n = int(n)
        self.deg = fmap.degree
        self.step_tol = step_tol
        pts, steps = preimage_levels(fmap, [self.z], self.n, budget, step_tol)
        self.points = [p[0] for p in pts]
        self.steps = [s[0] for s in steps]
        self.logder = [np.zeros(1)]
        for k in range(1, self.n + 1):
            self.logder.append(self.steps[k] + np.repeat(self.logder[k - 1], self.deg))

    @classmethod
    def from_levels(cls, fmap, z, points, logder, step_tol=STEP_TOL):
        self = cls.__new__(cls)
        self.fmap, self.z, self.n, self.deg = fmap, complex(z), len(points) - 1, fmap.degree
        self.step_tol = step_tol
        self.points = [np.asarray(p, dtype=complex) for p in points]
        self.logder = [np.asarray(v, dtype=float) for v in logder]
        self.steps = [np.zeros(1)] + [self.logder[k] - np.repeat(self.logder[k - 1], self.deg)
                                      for k in range(1, self.n + 1)]
        return self

    def parent(self, k, i):
        return i // self.deg

    def path(self, k, i):
        """Root indices from level 1 to level k for node ``i`` of level ``k``."""
        out = []
        for _ in range(k):
            out.append(int(i % self.deg))
            i //= self.deg
        return tuple(reversed(out))

    def orbit(self, k, i):
        idx = [i]
        for _ in range(k):
            idx.append(idx[-1] // self.deg)
        idx = idx[::-1]  # level 0 .. k
        pts = np.array([self.points[j][idx[j]] for j in range(k + 1)])
        steps = np.exp(np.array([self.steps[j][idx[j]] for j in range(1, k + 1)]))
        cum = np.exp(np.array([self.logder[j][idx[j]] for j in range(1, k + 1)]))
        return BackwardOrbit(self.z, pts, steps, cum, self.path(k, i))

    def orbits(self, k):
        return [self.orbit(k, i) for i in range(self.deg ** k)]


def preimages(fmap, z, n, budget=DEFAULT_BUDGET):
    """All ``deg**n`` backward orbits of length ``n`` ending at ``z``."""
    return PreimageTree(fmap, z, n, budget).orbits(n)


def branch_points(fmap, z, path):
    """Follow an explicit root-index path from ``z``; returns a BackwardOrbit."""
    pts = [complex(z)]
    for a in path:
        roots = fmap.preimages_of([pts[-1]])[0]
        pts.append(complex(roots[int(a)]))
    return orbit_from_points(fmap, pts, tuple(path))


def orbit_from_points(fmap, pts, branch_id=()):
    pts = np.asarray(pts, dtype=complex)
    if len(pts) > 1:
        _, d = evaluate_and_derivative(fmap, pts[1:])
        steps = np.abs(np.atleast_1d(d))
    else:
        steps = np.zeros(0)
    return BackwardOrbit(complex(pts[0]), pts, steps, np.cumprod(steps), tuple(branch_id))


# ---------------------------------------------------------------------------
# curve lifting


def lift_curve(fmap, curve, start, max_points=MAX_CURVE_POINTS):
    """Continue a root of ``F(y) = curve(t)`` along a sampled curve.

    ``start`` is the chosen preimage of ``curve[0]``. At an ambiguous step (the
    nearest root is not clearly nearer than the runner-up) a midpoint is
    inserted and the step retried, until ``max_points`` is reached. Returns
    ``(lifted, refined_curve, ambiguous)``.
    """
    ws = np.asarray(curve, dtype=complex).tolist()
    roots = np.asarray(fmap.preimages_of(ws)).tolist()
    cur = min(roots[0], key=lambda r: abs(r - start))
    out = [cur]
    ambiguous = False
    i = 1
    while i < len(ws):
        ds = sorted((abs(r - cur), k) for k, r in enumerate(roots[i]))
        if len(ds) > 1 and ds[0][0] > AMBIGUITY_RATIO * ds[1][0]:
            w0, w1 = ws[i - 1], ws[i]
            if len(ws) < max_points and abs(w1 - w0) > 1e-15 * max(1.0, abs(w1 + w0) / 2):
                mid = 0.5 * (w0 + w1)
                ws.insert(i, mid)
                roots.insert(i, np.asarray(fmap.preimages_of([mid]))[0].tolist())
                continue
            ambiguous = True
        cur = roots[i][ds[0][1]]
        out.append(cur)
        i += 1
    return np.array(out), np.array(ws), ambiguous


def disk_curve(center, radius, samples=BOUNDARY_SAMPLES, radial=8):
    """Radial segment from the centre to the boundary, then the closed boundary circle.

    Returns ``(curve, loop_start)``; ``curve[loop_start:]`` is the circle with its
    first point repeated at the end.
    """
    ang = 2 * np.pi * np.arange(samples + 1) / samples
    circ = center + radius * np.exp(1j * ang)
    ray = center + radius * np.linspace(0, 1, radial + 1)[:-1]
    return np.concatenate([ray, circ]), radial


@dataclass
class PulledDisk:
    """Pullbacks of a disc along one branch, level by level."""

    polygons: list  # level k -> closed polygon (k = 0 is the circle itself)
    closed: list  # loop closed at each level
    ambiguous: bool


def pull_back_disk(fmap, branch_pts, radius, levels, samples=BOUNDARY_SAMPLES, stop_on_open=True):
    """Pull back ``B_radius(branch_pts[0])`` along the branch for ``levels`` steps."""
    curve, s = disk_curve(branch_pts[0], radius, samples)
    polys, closed = [curve[s:]], [True]
    ambiguous = False
    for k in range(1, levels + 1):
        lifted, refined, amb = lift_curve(fmap, curve, branch_pts[k])
        ambiguous |= amb
        # refinement only inserts points, so the loop still starts at the old loop start
        s = _first_loop_index(refined, curve, s)
        poly = lifted[s:]
        ok = abs(poly[-1] - poly[0]) <= 1e-9 * max(1.0, abs(poly[0]))
        polys.append(poly)
        closed.append(bool(ok))
        curve = lifted
        if not ok and stop_on_open:
            break
    return PulledDisk(polys, closed, ambiguous)


def _first_loop_index(refined, original, s):
    target = original[s]
    idx = np.flatnonzero(refined == target)
    return int(idx[0]) if idx.size else s


def _max_gap(poly):
    if len(poly) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(poly))))


def point_in_polygon(points, poly):
    """Even-odd rule; ``points`` and ``poly`` are complex arrays."""
    points = np.atleast_1d(points)
    x, y = points.real[:, None], points.imag[:, None]
    a, b = poly[:-1], poly[1:]
    ax, ay, bx, by = a.real[None, :], a.imag[None, :], b.real[None, :], b.imag[None, :]
    cond = (ay > y) != (by > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = ax + (y - ay) * (bx - ax) / (by - ay)
    cross = cond & (x < xint)
    return (cross.sum(axis=1) % 2) == 1


def distance_to_polyline(points, poly):
    points = np.atleast_1d(points)
    a, b = poly[:-1][None, :], poly[1:][None, :]
    p = points[:, None]
    ab = b - a
    denom = np.abs(ab) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip(((p - a) * np.conj(ab)).real / denom, 0, 1)
    t = np.where(denom > 0, t, 0)
    return np.min(np.abs(p - (a + t * ab)), axis=1)


def polygon_hits(poly, crit_locs, closed=True):
    """True when a critical point lies inside the polygon or within 2 max-gaps of it."""
    if not closed:
        return True
    if len(crit_locs) == 0 or len(poly) < 3:
        return False
    c = np.asarray(crit_locs, dtype=complex)
    margin = 2 * _max_gap(poly)
    return bool(np.any(point_in_polygon(c, poly)) or np.any(distance_to_polyline(c, poly) < margin))


# ---------------------------------------------------------------------------
# critical data shared by the neighbourhood routines


@dataclass
class CriticalContext:
    locations: np.ndarray  # finite critical points
    images: np.ndarray  # images[k, i] = F^k(c_i), k = 0..horizon

    @classmethod
    def build(cls, fmap, horizon, crit=None):
        crit = critical_points(fmap) if crit is None else crit
        locs = np.array([c.location for c in crit if not c.at_infinity], dtype=complex)
        imgs = [locs]
        w = locs
        with np.errstate(all="ignore"):
            for _ in range(horizon):
                w = evaluate_and_derivative(fmap, w)[0] if len(w) else w
                w = np.where(np.isfinite(w), w, 1e300)
                imgs.append(w)
        return cls(locs, np.array(imgs).reshape(horizon + 1, len(locs)))

    def candidates(self, k, center, radius):
        """Critical points whose k-th image lies in ``B_radius(center)``."""
        if k >= len(self.images):
            return np.zeros(0, dtype=int)
        return np.flatnonzero(np.abs(self.images[k] - center) < radius * 1.0000001)


def _endpoint_critical(ctx, pts, tol=1e-12):
    for k in range(1, len(pts)):
        if len(ctx.locations) and np.min(np.abs(ctx.locations - pts[k])) < tol * max(1, abs(pts[k])):
            return k
    return None


def level_hit(fmap, ctx, pts, radius, k, samples=BOUNDARY_SAMPLES):
    """Does the level-k pullback of ``B_radius(pts[0])`` along ``pts`` contain a critical point?"""
    if radius <= 0:
        return False
    cand = ctx.candidates(k, pts[0], radius)
    if cand.size == 0:
        return False
    pulled = pull_back_disk(fmap, pts, radius, k, samples)
    if len(pulled.polygons) <= k:
        return True  # the loop opened at an earlier level
    return polygon_hits(pulled.polygons[k], ctx.locations[cand], pulled.closed[k])


def first_hit_constant(fmap, ctx, pts, radius, levels=None, samples=BOUNDARY_SAMPLES):
    """First level k >= 1 at which the pullback of ``B_radius`` meets a critical point."""
    levels = len(pts) - 1 if levels is None else levels
    if radius <= 0:
        return None
    cand_levels = [k for k in range(1, levels + 1) if ctx.candidates(k, pts[0], radius).size]
    if not cand_levels:
        return None
    pulled = pull_back_disk(fmap, pts, radius, cand_levels[-1], samples)
    for k in cand_levels:
        if len(pulled.polygons) <= k:
            # opened at some level <= k; the first open level is the hit
            return next(j for j in range(1, len(pulled.closed)) if not pulled.closed[j]) \
                if not all(pulled.closed) else k
        cand = ctx.candidates(k, pts[0], radius)
        if polygon_hits(pulled.polygons[k], ctx.locations[cand], pulled.closed[k]):
            return k
    return None


def cumulative_delta(delta_seq, n):
    d = np.asarray(delta_seq, dtype=float)[:n]
    if len(d) < n:
        d = np.concatenate([d, np.zeros(n - len(d))])
    return np.concatenate([[1.0], np.cumprod(1 - d)])  # Delta_0 = 1, ..., Delta_n


def first_hit_shrinking(fmap, ctx, pts, r, delta_seq, levels=None, samples=BOUNDARY_SAMPLES):
    """First k >= 1 with the shrinking neighbourhood ``U_k`` of ``B_r`` meeting a critical point."""
    levels = len(pts) - 1 if levels is None else levels
    if r <= 0:
        return None
    D = cumulative_delta(delta_seq, levels)
    for k in range(1, levels + 1):
        if ctx.candidates(k, pts[0], r * D[k]).size == 0:
            continue
        if level_hit(fmap, ctx, pts, r * D[k], k, samples):
            return k
    return None


# ---------------------------------------------------------------------------
# shrinking neighbourhoods and univalent radii


@dataclass
class ShrinkData:
    center: complex
    radius: float
    deltas: np.ndarray
    Delta: np.ndarray  # Delta_0 .. Delta_n
    U: list  # polygons of U_n (index n)
    U_prime: list  # polygons of U'_n = component of F^{-n} B_{r Delta_{n+1}}
    first_hit: Optional[int]
    nested_ok: list = field(default_factory=list)


def shrinking_neighborhoods(fmap, z, r, branch, delta_seq, samples=BOUNDARY_SAMPLES, ctx=None):
    """Pull back ``B_{r Delta_n}(z)`` along ``branch`` for every n, stopping at the first critical hit."""
    pts = np.asarray(branch.points if isinstance(branch, BackwardOrbit) else branch, dtype=complex)
    if abs(pts[0] - z) > 1e-12 * max(1, abs(z)):
        raise ValueError("branch does not start at z")
    n = len(pts) - 1
    if np.sum(delta_seq[:n]) >= 0.5:
        raise ValueError("the delta sequence must sum to less than 1/2")
    ctx = CriticalContext.build(fmap, n) if ctx is None else ctx
    D = cumulative_delta(delta_seq, n + 1)
    U, Up, nested = [], [], []
    hit = None
    if r <= 0:
        U = [np.array([p]) for p in pts]
        return ShrinkData(complex(z), 0.0, np.asarray(delta_seq[:n]), D[:n + 1], U, U, None,
                          [True] * (n + 1))
    for m in range(0, n + 1):
        pulled = pull_back_disk(fmap, pts, r * D[m], m, samples)
        if len(pulled.polygons) <= m:
            hit = next(j for j in range(1, len(pulled.closed)) if not pulled.closed[j])
            break
        U.append(pulled.polygons[m])
        if m >= 1:
            # c can only lie in the level-m pullback when F^m(c) lies in the ball itself
            cand = ctx.candidates(m, pts[0], r * D[m])
            inside = cand.size > 0 and polygon_hits(pulled.polygons[m], ctx.locations[cand],
                                                    pulled.closed[m])
            # U'_{m-1} comes from the same chain one level up
            Up.append(pulled.polygons[m - 1])
            nested.append(_nested(pulled.polygons[m - 1], U[m - 1]))
            if inside:
                hit = m
                break
    return ShrinkData(complex(z), float(r), np.asarray(delta_seq[:n]), D[:n + 1], U, Up, hit, nested)


def _nested(inner, outer):
    margin = 2 * max(_max_gap(outer), _max_gap(inner))
    inside = point_in_polygon(inner, outer)
    near = distance_to_polyline(inner[~inside], outer) < margin if np.any(~inside) else np.array([])
    return bool(np.all(inside) or np.all(near))


def univalent_pullback_radius(fmap, branch, cap=None, rel_tol=1e-3, ctx=None,
                              samples=BOUNDARY_SAMPLES):
    """Largest Delta such that every pullback of ``B_Delta(z)`` along the branch avoids Crit.

    Bisection to relative tolerance ``rel_tol``; returns ``cap`` when no
    critical point is met below it and 0 when the branch passes through a
    critical point.
    """
    pts = np.asarray(branch.points if isinstance(branch, BackwardOrbit) else branch, dtype=complex)
    n = len(pts) - 1
    if n == 0:
        return float("inf") if cap is None else float(cap)
    ctx = CriticalContext.build(fmap, n) if ctx is None else ctx
    if _endpoint_critical(ctx, pts) is not None:
        return 0.0
    if cap is None:
        cap = 4.0 * (1 + float(np.max(np.abs(pts))))
    if first_hit_constant(fmap, ctx, pts, cap, n, samples) is None:
        return float(cap)
    # the smallest radius that can possibly hit is the nearest critical image
    dmin = min(float(np.min(np.abs(ctx.images[k] - pts[0]))) for k in range(1, n + 1))
    lo, hi = dmin * 0.999999, cap
    if first_hit_constant(fmap, ctx, pts, lo, n, samples) is not None:
        lo = 0.0
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi) if lo > 0 else max(hi * 0.5, 1e-300)
        if lo == 0 and mid < 1e-300:
            break
        if first_hit_constant(fmap, ctx, pts, mid, n, samples) is None:
            lo = mid
        else:
            hi = mid
    return float(lo)


def in_H(fmap, branch, Delta, ctx=None):
    """Membership ``y in H(z, Delta)``: the Delta-ball pulls back univalently along the branch."""
    pts = np.asarray(branch.points, dtype=complex)
    ctx = CriticalContext.build(fmap, len(pts) - 1) if ctx is None else ctx
    if _endpoint_critical(ctx, pts) is not None:
        return False
    return first_hit_constant(fmap, ctx, pts, Delta) is None


def restricted_membership(fmap, tree, Delta, ctx=None, samples=BOUNDARY_SAMPLES):
    """``H(z, Delta)`` membership for every node of a preimage tree, level by level.

    Membership is inherited from the parent, so the disc boundary is lifted
    once per surviving node. Levels at which no critical point has its image
    in ``B_Delta(z)`` cannot produce a hit and skip the polygon test.
    """
    n = tree.n
    ctx = CriticalContext.build(fmap, n) if ctx is None else ctx
    deg = tree.deg
    out = [np.ones(1, dtype=bool)]
    if Delta <= 0:
        return [np.ones(deg ** k, dtype=bool) for k in range(n + 1)]
    cand = [ctx.candidates(k, tree.z, Delta) for k in range(n + 1)]
    need = [k for k in range(1, n + 1) if cand[k].size]
    last = max(need) if need else 0
    curve, s = disk_curve(tree.z, Delta, samples)
    states = [(curve, s)]
    tol = 1e-12
    for k in range(1, n + 1):
        parent_ok = np.repeat(out[-1], deg)
        pts = tree.points[k]
        ok = parent_ok.copy()
        if len(ctx.locations):
            on_crit = np.min(np.abs(pts[:, None] - ctx.locations[None, :]), axis=1) < tol * np.maximum(1, np.abs(pts))
            ok &= ~on_crit
        new_states = [None] * len(pts)
        if k <= last:
            for i in np.flatnonzero(ok):
                pc, ps = states[i // deg]
                lifted, refined, _ = lift_curve(fmap, pc, pts[i])
                si = _first_loop_index(refined, pc, ps)
                poly = lifted[si:]
                closed = abs(poly[-1] - poly[0]) <= 1e-9 * max(1.0, abs(poly[0]))
                if not closed or (cand[k].size and polygon_hits(poly, ctx.locations[cand[k]], True)):
                    ok[i] = False
                else:
                    new_states[i] = (lifted, si)
        out.append(ok)
        states = new_states
    return out


# ---------------------------------------------------------------------------
# Koebe distortion


def koebe_bounds(s):
    return (1 - s) / (1 + s) ** 3, (1 + s) / (1 - s) ** 3


def koebe_ratios(fmap, branch, r, points=16):
    """Distortion ratios on ``|w - z| = r/2`` for a pullback certified univalent on ``B_r``.

    Returns ``(ratios, s)`` with ``s = 1/2``.
    """
    pts = np.asarray(branch.points, dtype=complex)
    n = len(pts) - 1
    z = pts[0]
    ang = 2 * np.pi * np.arange(points) / points
    circle = z + 0.5 * r * np.exp(1j * ang)
    # star path: out to the first point, then around the circle
    curve = np.concatenate([z + 0.5 * r * np.linspace(0, 1, 9)[:-1], _densify(np.append(circle, circle[0]), 8)])
    marks = [curve_index(curve, w) for w in circle]
    for k in range(1, n + 1):
        lifted, refined, _ = lift_curve(fmap, curve, pts[k])
        marks = [curve_index(refined, curve[m]) for m in marks]
        curve = lifted
    images = curve[marks]
    deriv = float(np.prod(branch.step_derivs)) if n else 1.0
    ratios = np.abs(images - pts[-1]) * deriv / (0.5 * r)
    return ratios, 0.5


def _densify(loop, m):
    seg = [loop[i] + (loop[i + 1] - loop[i]) * np.arange(m) / m for i in range(len(loop) - 1)]
    return np.concatenate(seg + [loop[-1:]])


def curve_index(curve, w):
    return int(np.argmin(np.abs(curve - w)))


def koebe_check(fmap, branch, r, points=16):
    ratios, s = koebe_ratios(fmap, branch, r, points)
    lo, hi = koebe_bounds(s)
    return bool(np.all((ratios >= lo) & (ratios <= hi))), ratios


# ---------------------------------------------------------------------------
# pullbacks of balls: all components at once


@dataclass
class ComponentLevel:
    level: int
    diameters: np.ndarray
    degrees: np.ndarray
    members: list  # level-n node indices per component


def _directions(m=64):
    return np.exp(1j * np.pi * np.arange(m) / m)


def _diameters(groups_pts):
    dirs = _directions()
    out = np.empty(len(groups_pts))
    for i, p in enumerate(groups_pts):
        proj = (p[:, None] * np.conj(dirs)[None, :]).real
        out[i] = float(np.max(proj.max(axis=0) - proj.min(axis=0)))
    return out


def ball_pullback_components(fmap, center, radius, n_max, samples=BOUNDARY_SAMPLES,
                             budget=DEFAULT_BUDGET):
    """Components of ``F^{-n}(B_radius(center))`` for n = 0..n_max.

    The boundary circle is sampled; every sample's preimage tree is built and
    consecutive samples are matched by nearest neighbour (refining the sample
    spacing where matching is ambiguous). Loop monodromy cycles give the
    components and their degrees.
    """
    theta = list(np.linspace(0, 1, samples, endpoint=False))
    results = []
    for n in range(n_max + 1):
        if fmap.degree ** n * samples > budget:
            raise BudgetExceeded(f"{samples} samples x {fmap.degree}^{n} nodes exceed budget")
        results.append(_components_at_level(fmap, center, radius, n, theta, budget))
    return results


def _level_points(fmap, w, n, budget):
    pts, _ = preimage_levels(fmap, w, n, budget=max(budget, len(w) * fmap.degree ** n))
    return pts[n]


def _components_at_level(fmap, center, radius, n, theta, budget):
    th = np.array(theta)
    for _ in range(MAX_REFINE_ROUNDS):
        w = center + radius * np.exp(2j * np.pi * th)
        P = _level_points(fmap, w, n, budget)  # (samples, deg^n)
        m = len(th)
        nxt = np.empty((m, P.shape[1]), dtype=int)
        bad = np.zeros(m, dtype=bool)
        for j in range(m):
            a, b = P[j], P[(j + 1) % m]
            k = min(2, b.size)
            dist, idx = cKDTree(np.column_stack([b.real, b.imag])).query(
                np.column_stack([a.real, a.imag]), k=k)
            if k == 1:
                dist, idx = dist[:, None], idx[:, None]
                nxt[j] = idx[:, 0]
                continue
            nxt[j] = idx[:, 0]
            amb = dist[:, 0] > AMBIGUITY_RATIO * dist[:, 1]
            # two sources landing on the same target also signals an unresolved step
            if amb.any() or len(np.unique(idx[:, 0])) < b.size:
                bad[j] = True
        if not bad.any():
            break
        gaps = np.diff(np.append(th, th[0] + 1))
        th = np.sort(np.concatenate([th, (th[bad] + 0.5 * gaps[bad]) % 1.0]))
    # monodromy of the full loop acting on the preimages of sample 0
    perm = np.arange(P.shape[1])
    for j in range(len(th)):
        perm = nxt[j][perm]
    seen = np.zeros(P.shape[1], dtype=bool)
    comps, degrees, members = [], [], []
    # component tracks: follow each cycle, collecting the polygon points along the way
    track = np.empty((len(th), P.shape[1]), dtype=int)
    cur = np.arange(P.shape[1])
    for j in range(len(th)):
        track[j] = cur
        cur = nxt[j][cur]
    for s in range(P.shape[1]):
        if seen[s]:
            continue
        cyc = [s]
        seen[s] = True
        t = perm[s]
        while t != s:
            cyc.append(int(t))
            seen[t] = True
            t = perm[t]
        pts = np.concatenate([P[np.arange(len(th)), track[:, q]] for q in cyc])
        comps.append(pts)
        degrees.append(len(cyc))
        # level-n nodes (preimages of the center) inside the component
        members.append(cyc)
    diam = _diameters(comps)
    return ComponentLevel(n, diam, np.array(degrees), members)


@dataclass
class DiameterSumReport:
    p: float
    level_sums: np.ndarray
    partial_sums: np.ndarray
    ratio: float
    max_degree: np.ndarray


def geometric_ratio(values, last=6):
    """exp of the least-squares slope of log(values) over the last ``last`` entries."""
    v = np.asarray(values, dtype=float)
    k = min(last, len(v))
    if k < 2:
        return float("nan")
    y = np.log(np.maximum(v[-k:], 1e-300))
    x = np.arange(len(v) - k, len(v))
    return float(np.exp(np.polyfit(x, y, 1)[0]))


def pullback_diameter_sum(fmap, center, radius, p, n_max, levels=None, samples=BOUNDARY_SAMPLES):
    """Level sums ``sum_components diam^p * degree`` of ``F^{-n}(B)`` for n = 0..n_max."""
    levels = ball_pullback_components(fmap, center, radius, n_max, samples) if levels is None else levels
    sums = np.array([float(np.sum(L.diameters ** p * L.degrees)) for L in levels])
    return DiameterSumReport(float(p), sums, np.cumsum(sums), geometric_ratio(sums[1:]),
                             np.array([int(L.degrees.max()) for L in levels]))


@dataclass
class ContractionReport:
    envelope: np.ndarray  # max component diameter per level
    min_derivative: np.ndarray  # min over branches of |(F^n)'| at preimages of the center
    fitted_rate: float


def pullback_contraction(fmap, center, radius, n_max, levels=None, samples=BOUNDARY_SAMPLES):
    levels = ball_pullback_components(fmap, center, radius, n_max, samples) if levels is None else levels
    env = np.array([float(L.diameters.max()) for L in levels])
    tree = PreimageTree(fmap, center, n_max)
    mind = np.array([float(np.exp(tree.logder[k].min())) for k in range(n_max + 1)])
    return ContractionReport(env, mind, geometric_ratio(env[1:]) if n_max >= 2 else float("nan"))


# ---------------------------------------------------------------------------
# on-disk cache


CACHE_MAGIC = b"DLPT"
CACHE_VERSION = 1
HEADER = struct.Struct("<4sI32sddIIdd Q")
RECORD = np.dtype([("level", "<u1"), ("index", "<u8"), ("re", "<f8"), ("im", "<f8"), ("logder", "<f8")])


def write_tree_cache(tree, path, root_tol=1e-12):
    """Fixed-width little-endian layout: header, then one record per tree node.

    Header: magic ``DLPT``, u32 version, 32-byte SHA-256 of the map, f64 z.re,
    f64 z.im, u32 depth, u32 degree, f64 step tolerance, f64 root tolerance,
    u64 record count. Record: u8 level, u64 node index (its base-deg digits
    are the root path), f64 re, f64 im, f64 cumulative log-derivative.
    """
    count = sum(len(p) for p in tree.points)
    recs = np.empty(count, dtype=RECORD)
    pos = 0
    for k, (p, ld) in enumerate(zip(tree.points, tree.logder)):
        m = len(p)
        recs["level"][pos:pos + m] = k
        recs["index"][pos:pos + m] = np.arange(m)
        recs["re"][pos:pos + m] = p.real
        recs["im"][pos:pos + m] = p.imag
        recs["logder"][pos:pos + m] = ld
        pos += m
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(CACHE_MAGIC, CACHE_VERSION, bytes.fromhex(tree.fmap.hash()),
                             tree.z.real, tree.z.imag, tree.n, tree.deg, tree.step_tol, root_tol, count))
        fh.write(recs.tobytes())


def read_tree_cache(fmap, z, n, path, step_tol=STEP_TOL):
    """Load a cached tree; returns ``None`` when the header does not match the request."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(HEADER.size)
            if len(head) < HEADER.size:
                return None
            magic, ver, h, zr, zi, depth, deg, stol, rtol, count = HEADER.unpack(head)
            if magic != CACHE_MAGIC or ver != CACHE_VERSION or h != bytes.fromhex(fmap.hash()):
                return None
            if complex(zr, zi) != complex(z) or depth < n or deg != fmap.degree or stol != step_tol:
                return None
            recs = np.frombuffer(fh.read(count * RECORD.itemsize), dtype=RECORD)
    except OSError:
        return None
    points, logder = [], []
    for k in range(n + 1):
        sel = recs[recs["level"] == k]
        points.append(sel["re"] + 1j * sel["im"])
        logder.append(sel["logder"].astype(float))
    return PreimageTree.from_levels(fmap, z, points, logder, step_tol)


def cached_tree(fmap, z, n, cache_dir=None, budget=DEFAULT_BUDGET):
    if cache_dir is None:
        return PreimageTree(fmap, z, n, budget)
    import os
    name = f"tree-{fmap.hash()[:16]}-{complex(z).real!r}-{complex(z).imag!r}-{n}.bin"
    path = os.path.join(cache_dir, name)
    tree = read_tree_cache(fmap, z, n, path)
    if tree is None:
        tree = PreimageTree(fmap, z, n, budget)
        os.makedirs(cache_dir, exist_ok=True)
        write_tree_cache(tree, path)
    return tree
