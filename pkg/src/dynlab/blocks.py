"""Block decomposition of backward orbits and the diagnostics built on it.

Backward orbits are cut into blocks of three kinds, coded by ``1``, ``2``
and ``3`` and read from right to left (the rightmost symbol is the block
that starts at the base point):

* ``3`` joins the large scale to a critical point: the shrinking
  neighbourhoods of some ball hit a critical point at the block's end;
* ``1`` joins two critical approaches the same way;
* ``2`` is a stretch along which the ``2R'`` ball pulls back univalently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backward import BOUNDARY_SAMPLES, BackwardOrbit, CriticalContext, PreimageTree, \
    cumulative_delta, first_hit_constant, first_hit_shrinking, restricted_membership
from .maps import critical_points, julia_bbox, max_multiplicity, taylor_coefficients
from .orbits import TechSequences

DEFAULT_L2 = 20
RADIUS_REL_TOL = 1e-3


# ---------------------------------------------------------------------------
# scale constants


@dataclass
class ScaleConstants:
    R: float
    R_prime: float
    M: float
    tau: Optional[int]
    L: int
    L_prime: int
    L_second: int
    K: float
    R_2t: float
    C_3t: float
    sup_derivative: float
    certified: bool
    notes: list = field(default_factory=list)

    def condition_iii(self, tech):
        lhs = 16 * self.R_prime * self.sup_derivative / float(np.min(tech.alpha_n) ** 2)
        return lhs <= self.R / self.M * (1 + 1e-12)


def _julia_samples(fmap, level=8, count=8):
    from .raster import julia_membership_grid

    r = julia_membership_grid(fmap, julia_bbox(fmap), level, max_iter=300)
    pts = r.cell_centers()
    if len(pts) == 0:
        return r, pts
    idx = np.linspace(0, len(pts) - 1, count).astype(int)
    return r, pts[idx]


def distortion_constant(fmap, crit, R, S, mu_max, radii=40, angles=32):
    """Smallest M with both ratio bounds of local critical behaviour holding on a sampled region."""
    worst = 1.0
    for c in crit:
        if c.at_infinity:
            continue
        mu = c.multiplicity
        a = abs(taylor_coefficients(fmap, c.location, mu)[mu])
        rho = max(5 * R ** (1.0 / mu_max), 2 * ((1 + S) * R / max(a, 1e-300)) ** (1.0 / mu))
        rr = rho * np.geomspace(1e-6, 1, radii)
        th = 2 * np.pi * (np.arange(angles) + 0.5) / angles
        y = c.location + rr[:, None] * np.exp(1j * th)[None, :]
        from .maps import evaluate_and_derivative

        fy, dfy = evaluate_and_derivative(fmap, y)
        fc, _ = evaluate_and_derivative(fmap, c.location)
        dist = np.abs(y - c.location)
        r1 = np.abs(dfy) / dist ** (mu - 1)
        r2 = np.abs(fy - fc) / dist ** mu
        vals = np.concatenate([r1.ravel(), r2.ravel()])
        vals = vals[np.isfinite(vals) & (vals > 0)]
        worst = max(worst, float(vals.max()), float(1 / vals.min()))
    return worst * 1.01


def scale_constants(fmap, tech: TechSequences, crit=None, base_points=None, depth=10):
    """Numerical choices of R, R', M and the empirical block constants.

    R is the largest power of two with ``(1 + sup|F'|) R < 1`` and all
    critical points ``100 R`` apart; R' solves the stated inequality with
    equality. The return-time threshold needs ``alpha_k > 16^mu M^2``,
    which the slowly growing envelope only reaches at astronomically large
    k, so it is reported as ``None`` and the constants as uncertified.
    """
    crit = critical_points(fmap) if crit is None else crit
    mu = tech.mu_max
    raster, samples = _julia_samples(fmap)
    S = float(np.max(np.abs(_deriv(fmap, raster.cell_centers())))) if raster.count() else 1.0
    finite = [c.location for c in crit if not c.at_infinity]
    pair = min((abs(a - b) for i, a in enumerate(finite) for b in finite[i + 1:]), default=math.inf)
    j = 0
    while True:
        R = 2.0 ** -j
        if (1 + S) * R < 1 and 100 * R <= pair:
            break
        j += 1
    M = distortion_constant(fmap, crit, R, S, mu)
    notes = []
    Rp = R * float(np.min(tech.alpha_n) ** 2) / (16 * M * S)
    # no critical point of the Fatou set within 2R' of J
    if raster.count():
        from scipy.spatial import cKDTree
        cells = raster.cell_centers()
        tree = cKDTree(np.column_stack([cells.real, cells.imag]))
        for c in crit:
            if c.at_infinity or c.in_julia != "no":
                continue
            d = tree.query([c.location.real, c.location.imag])[0] - raster.cell_size
            if d < 2 * Rp:
                Rp = max(d / 2, 0.0)
                notes.append("R' reduced by a Fatou critical point near J")
    target = 16 ** mu * M ** 2
    above = np.flatnonzero(tech.alpha_n > target)
    tau = int(above[0] + 1) if above.size else None
    if tau is None:
        notes.append(f"alpha_n never exceeds 16^mu M^2 = {target:.4g} within the horizon; tau unavailable")
    # empirical L, K: derivative growth over all branches at sample points of J
    if base_points is None:
        base_points = samples[:4]
    mins = np.full(depth + 1, np.inf)
    maxs = np.zeros(depth + 1)
    for z in base_points:
        t = PreimageTree(fmap, z, depth)
        for k in range(1, depth + 1):
            mins[k] = min(mins[k], float(np.exp(t.logder[k].min())))
            maxs[k] = max(maxs[k], float(np.exp(t.logder[k].max())))
    big = np.flatnonzero(mins[1:] > 6)
    L = int(big[0] + 1) if big.size else depth
    if not big.size:
        notes.append("expansion 6 not reached within the probe depth; L set to the depth")
    K = float(np.min(mins[1:L + 1]))
    R2t = float(Rp / (8 * maxs[L]))
    C3t = float(np.min(tech.alpha_n)) / (8 ** mu * M * S)
    L2 = None
    if tau is not None:
        ap = _alpha_prime(tech.alpha_n, tau)
        ok = np.flatnonzero(ap * C3t * R2t ** (mu - 1) >= 1)
        L2 = int(ok[0] + 1) if ok.size else None
    certified = tau is not None and L2 is not None and bool(big.size)
    if L2 is None:
        L2 = DEFAULT_L2
        notes.append(f"L'' not certifiable; default {DEFAULT_L2} used")
    return ScaleConstants(R, Rp, M, tau, L, L + L2, L2, K, R2t, C3t, S, certified, notes)


def _deriv(fmap, z):
    from .maps import evaluate_and_derivative
    return evaluate_and_derivative(fmap, z)[1]


def _alpha_prime(alpha_n, tau):
    # inf of products alpha_{i_0} alpha_{i_1} ... with sum i >= n and i_1, ... >= tau
    N = len(alpha_n)
    a = np.concatenate([[alpha_n[0]], alpha_n])  # a[i] = alpha_i, alpha_0 := alpha_1
    g = np.ones(N + 1)
    for n in range(1, N + 1):
        best = a[min(n, N)]
        for k in range(tau, n + 1):
            best = min(best, a[k] * g[n - k])
        g[n] = best
    return g[1:]


# ---------------------------------------------------------------------------
# codes


@dataclass
class Block:
    kind: int
    start: int
    length: int
    expansion: float
    radius: float = 0.0


@dataclass
class BlockCode:
    blocks: list  # construction order: blocks[0] starts at the base point
    certified: bool
    claims: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def code(self):
        return "".join(str(b.kind) for b in reversed(self.blocks))

    @property
    def lengths(self):
        return [b.length for b in self.blocks]

    @property
    def expansions(self):
        return [b.expansion for b in self.blocks]

    @property
    def total_length(self):
        return sum(b.length for b in self.blocks)


def grammar_ok(code):
    """Every 3 has a 2 immediately to its right, unless it is the rightmost symbol."""
    for i, ch in enumerate(code):
        if ch == "3" and i != len(code) - 1 and code[i + 1] != "2":
            return False
    return set(code) <= {"1", "2", "3"}


def _expansion(orbit, start, length):
    if length == 0:
        return 1.0
    return float(np.prod(orbit.step_derivs[start:start + length]))


class _Decomposer:
    def __init__(self, fmap, orbit, tech, scales, ctx=None, samples=BOUNDARY_SAMPLES):
        self.fmap, self.orbit, self.tech, self.sc = fmap, orbit, tech, scales
        self.pts = np.asarray(orbit.points, dtype=complex)
        self.N = len(self.pts) - 1
        self.ctx = CriticalContext.build(fmap, self.N) if ctx is None else ctx
        self.samples = samples
        if len(tech.delta_n) < self.N:
            raise ValueError("technical sequences are shorter than the orbit")

    def hit(self, j, r):
        pts = self.pts[j:]
        return first_hit_shrinking(self.fmap, self.ctx, pts, r, self.tech.delta_n,
                                   levels=self.N - j, samples=self.samples)

    def hit_radius(self, j, lo, hi):
        """Smallest r in (lo, hi] whose shrinking neighbourhoods meet a critical point."""
        rem = self.N - j
        if rem <= 0:
            return None
        D = cumulative_delta(self.tech.delta_n, rem)
        zj = self.pts[j]
        bound = min(float(np.min(np.abs(self.ctx.images[k] - zj))) / D[k]
                    for k in range(1, rem + 1)) if len(self.ctx.locations) else math.inf
        if bound > hi:
            return None
        k_hi = self.hit(j, hi)
        if k_hi is None:
            return None
        lo = max(lo, bound * 0.999999)
        if lo > 0 and self.hit(j, lo) is not None:
            return lo, self.hit(j, lo)
        while hi - lo > RADIUS_REL_TOL * hi:
            mid = 0.5 * (lo + hi)
            k = self.hit(j, mid)
            if k is None:
                lo = mid
            else:
                hi, k_hi = mid, k
        return hi, k_hi


def decompose_blocks(fmap, orbit: BackwardOrbit, Delta, tech, scales: ScaleConstants, ctx=None,
                     recode=True, samples=BOUNDARY_SAMPLES):
    """Inductive decomposition into blocks of types 1, 2, 3, followed by the short-stretch re-coding.

    The result is always emitted; ``certified`` mirrors the scale constants.
    """
    dec = _Decomposer(fmap, orbit, tech, scales, ctx, samples)
    N, R2 = dec.N, 2 * scales.R_prime
    blocks, notes = [], []
    if N == 0:
        return BlockCode([], scales.certified)
    j = 0
    # base of the induction
    found = dec.hit_radius(0, 0.0, R2)
    if found is None:
        k = min(scales.L, N)
        blocks.append(Block(2, 0, k, _expansion(orbit, 0, k), R2))
        state = "IIa"
    else:
        r0, k = found
        if r0 < Delta * (1 - 1e-9):
            notes.append("critical hit below Delta: the pullback of B_Delta is not univalent")
        blocks.append(Block(3, 0, k, _expansion(orbit, 0, k), float(r0)))
        state = "IIb"
    j = blocks[-1].length
    while j < N:
        found = dec.hit_radius(j, 0.0, R2)
        if state == "IIa":
            if found is None:
                k = min(scales.L, N - j)
                blocks.append(Block(2, j, k, _expansion(orbit, j, k), R2))
            else:
                r, k = found
                blocks.append(Block(3, j, k, _expansion(orbit, j, k), float(r)))
                state = "IIb"
        else:
            if found is None:
                # the construction guarantees a hit below 2R' at certified scales
                notes.append(f"no critical hit below 2R' after a critical approach at level {j}")
                k = min(scales.L, N - j)
                blocks.append(Block(2, j, k, _expansion(orbit, j, k), R2))
                state = "IIa"
            else:
                r, k = found
                blocks.append(Block(1, j, k, _expansion(orbit, j, k), float(r)))
        j += blocks[-1].length
    if recode:
        blocks = _recode(blocks, scales.L_second)
    bc = BlockCode(blocks, scales.certified, notes=notes)
    bc.claims = block_claims(bc, orbit, Delta, tech, scales, dec.ctx)
    return bc


def _recode(blocks, L2):
    """Replace ``1...132`` stretches of total 1/3 length below L'' by a single 2."""
    out = []
    i = 0
    while i < len(blocks):
        b = blocks[i]
        if b.kind == 2 and i + 1 < len(blocks) and blocks[i + 1].kind == 3:
            j = i + 2
            while j < len(blocks) and blocks[j].kind == 1:
                j += 1
            k = sum(x.length for x in blocks[i + 1:j])
            if k < L2:
                length = b.length + k
                exp = float(np.prod([x.expansion for x in blocks[i:j]]))
                out.append(Block(2, b.start, length, exp, b.radius))
                i = j
                continue
        out.append(b)
        i += 1
    return out


def block_claims(bc, orbit, Delta, tech, scales, ctx):
    """Measured versions of the four expansion claims (reported, never asserted)."""
    blocks = bc.blocks
    twos = [i for i, b in enumerate(blocks) if b.kind == 2]
    left2 = twos[-1] if twos else None
    out = {"non_leftmost_type2": [], "leftmost_type2": None, "stretches": []}
    for i in twos:
        b = blocks[i]
        if i == left2:
            out["leftmost_type2"] = {"length": b.length, "expansion": b.expansion,
                                     "ok": b.expansion >= scales.K * (1 - 1e-12)}
        else:
            out["non_leftmost_type2"].append({
                "length": b.length, "expansion": b.expansion,
                "ok": scales.L <= b.length < scales.L_prime and b.expansion >= 6})
    gam = tech.gamma_n
    mu = tech.mu_max
    i = 0
    while i < len(blocks):
        if blocks[i].kind == 3:
            j = i + 1
            while j < len(blocks) and blocks[j].kind == 1:
                j += 1
            stretch = blocks[i:j]
            target = float(np.prod([gam[b.length - 1] for b in stretch]))
            if i == 0:
                # a critical point inside B_Delta(z) is treated as maximally degenerate
                inside = np.any(np.abs(ctx.locations - orbit.points[0]) < Delta)
                mu_c = mu if inside else 1
                target *= Delta ** (1 - mu_c / mu) if Delta > 0 else 0.0
            exp = float(np.prod([b.expansion for b in stretch]))
            out["stretches"].append({"start": stretch[0].start, "blocks": len(stretch),
                                     "expansion": exp, "target": target, "ok": exp >= target})
            i = j
        else:
            i += 1
    return out


def decompose_with_stopping(fmap, orbit: BackwardOrbit, tech, scales: ScaleConstants, ctx=None,
                            samples=BOUNDARY_SAMPLES):
    """Decomposition stopped at the first type-2 block: codes ``2``, ``1...13`` or ``21...13``."""
    dec = _Decomposer(fmap, orbit, tech, scales, ctx, samples)
    N, R2 = dec.N, 2 * scales.R_prime
    if N == 0:
        return BlockCode([], scales.certified)
    found = dec.hit_radius(0, 0.0, R2)
    if found is None:
        return BlockCode([Block(2, 0, N, _expansion(orbit, 0, N), R2)], scales.certified)
    r, k = found
    blocks = [Block(3, 0, k, _expansion(orbit, 0, k), float(r))]
    j = k
    while j < N:
        found = dec.hit_radius(j, 0.0, R2)
        if found is None:
            blocks.append(Block(2, j, N - j, _expansion(orbit, j, N - j), R2))
            break
        r, k = found
        blocks.append(Block(1, j, k, _expansion(orbit, j, k), float(r)))
        j += k
    return BlockCode(blocks, scales.certified)


def stopping_code_ok(code):
    if code in ("", "2"):
        return True
    body = code[1:] if code.startswith("2") else code
    return len(body) >= 1 and body.endswith("3") and set(body[:-1]) <= {"1"}


# ---------------------------------------------------------------------------
# backward summability classes


@dataclass
class BackwardSummability:
    beta: float
    Delta: float
    depth: int
    level_sums: dict  # class -> per-level sums (levels 1..depth)
    cumulative: dict
    counts: dict
    targets: dict


def backward_summability_check(fmap, z, Delta, beta, tech, scales, depth, tree=None):
    """Sums of ``|(F^n)'(y)|^-beta`` over the classes I(z|z), II_l(z), II_s(z).

    Every preimage in H(z, Delta) up to ``depth`` is decomposed; ``y`` is in
    I when its code is ``1...13`` with at least one 1, in II when the code is
    a single 2 (long when its length lies in [L, L'), short below L).
    """
    classes = ("I", "II_l", "II_s")
    sums = {c: np.zeros(depth) for c in classes}
    counts = {c: 0 for c in classes}
    if depth > 0:
        tree = PreimageTree(fmap, z, depth) if tree is None else tree
        ctx = CriticalContext.build(fmap, depth)
        member = restricted_membership(fmap, tree, Delta, ctx)
        for n in range(1, depth + 1):
            for i in np.flatnonzero(member[n]):
                orb = tree.orbit(n, int(i))
                code = decompose_blocks(fmap, orb, Delta, tech, scales, ctx).code
                w = math.exp(-beta * tree.logder[n][i])
                if len(code) >= 2 and code.endswith("3") and set(code[:-1]) == {"1"}:
                    cls = "I"
                elif code == "2":
                    cls = "II_l" if scales.L <= n < scales.L_prime else ("II_s" if n < scales.L else None)
                else:
                    cls = None
                if cls:
                    sums[cls][n - 1] += w
                    counts[cls] += 1
    cum = {c: np.cumsum(v) for c, v in sums.items()}
    return BackwardSummability(float(beta), float(Delta), int(depth), sums, cum, counts,
                               {"I": 1 / 3, "II_l": 1 / 36, "II_s": "C(p)"})


# ---------------------------------------------------------------------------
# passages to the large scale


@dataclass
class LargeScaleStats:
    passages: list  # per sample: list of k with univalent pullback of B(F^k x, R')
    fraction_every_level: float
    j_star_fraction: float
    eps_frequent: list  # per sample: bool or None when fewer than two passages
    depth: int


def large_scale_statistics(fmap, samples, R_prime, depth, eps, crit=None):
    """For each sample x and k <= depth: is ``F^k`` univalent on the pullback of ``B(F^k x, R')``?"""
    from .maps import evaluate_and_derivative

    samples = np.atleast_1d(np.asarray(samples, dtype=complex))
    if depth <= 0:
        return LargeScaleStats([[] for _ in samples], 0.0, 0.0, [None] * len(samples), 0)
    ctx = CriticalContext.build(fmap, depth, crit)
    passages, freq = [], []
    for x in samples:
        orbit = [complex(x)]
        logd = [0.0]
        for _ in range(depth):
            w, dw = evaluate_and_derivative(fmap, orbit[-1])
            orbit.append(complex(w))
            logd.append(logd[-1] + math.log(max(abs(dw), 1e-320)))
        ok = []
        for k in range(1, depth + 1):
            pts = np.array(orbit[k::-1])  # F^k x, ..., x as a backward orbit
            crit_on = len(ctx.locations) and np.min(np.abs(ctx.locations[None, :] - pts[1:, None])) < 1e-12
            if crit_on:
                continue
            if first_hit_constant(fmap, ctx, pts, R_prime) is None:
                ok.append(k)
        passages.append(ok)
        if len(ok) < 2:
            freq.append(None)
        else:
            good = all(logd[b] < (1 + eps) * logd[a] for a, b in zip(ok[:-1], ok[1:]) if logd[a] > 0)
            freq.append(bool(good))
    every = float(np.mean([len(p) == depth for p in passages]))
    tail = max(1, (3 * depth) // 4)
    jstar = float(np.mean([any(k >= tail for k in p) for p in passages]))
    return LargeScaleStats(passages, every, jstar, freq, depth)
