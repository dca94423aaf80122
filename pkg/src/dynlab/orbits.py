"""Forward critical-orbit analytics.

Derivative growth along critical orbits, summability verdicts, the three
technical sequences derived from a summable growth sequence, Lyapunov
exponents, and the uniform-summability check for families of maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .maps import CriticalDatum, collapse_critical_blocks, critical_points, evaluate_and_derivative, \
    max_multiplicity
from .parallel import ordered_map


class InfeasibleError(ArithmeticError):
    """A required inequality could not be met at the requested horizon."""


class CorrespondenceError(ValueError):
    """Family members and limit map have different numbers of critical points."""


# ---------------------------------------------------------------------------
# sigma_n


@dataclass(frozen=True)
class SigmaSeq:
    """Minimal derivative growth ``sigma_n = min_c |(F^n)'(F(c))|`` for n = 1..N.

    ``log_values`` is the primary storage; ``values`` overflows to ``inf``
    for very long horizons. A vacuous sequence (no critical point in J) has
    all entries ``+inf`` and ``contributor`` set to -1.
    """

    log_values: np.ndarray
    contributor: np.ndarray
    mu_max: int = 2
    vacuous: bool = False
    per_orbit_logs: tuple = field(default=(), repr=False)
    locations: tuple = ()

    @property
    def N(self):
        return len(self.log_values)

    @property
    def values(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_values)

    @classmethod
    def from_values(cls, values, mu_max=2):
        v = np.asarray(values, dtype=float)
        return cls(np.log(v), np.zeros(len(v), dtype=int), int(mu_max))

    @classmethod
    def vacuous_sequence(cls, N, mu_max=1):
        return cls(np.full(N, np.inf), np.full(N, -1), int(mu_max), vacuous=True)


def orbit_log_derivatives(fmap, z, n):
    """``log|F'(F^k z)|`` for k = 0..n-1 (``-inf`` at a critical point)."""
    logs = np.empty(n)
    w = complex(z)
    with np.errstate(divide="ignore"):
        for k in range(n):
            w, dw = evaluate_and_derivative(fmap, w)
            # derivative is taken at the point *before* stepping
            logs[k] = np.log(abs(dw))
    return logs


def _log_growth_from(fmap, c, N):
    # log |(F^n)'(F(c))| = sum_{k=1}^{n} log|F'(F^k c)|
    w, _ = evaluate_and_derivative(fmap, c)
    steps = orbit_log_derivatives(fmap, w, N)
    return np.cumsum(steps)


def sigma_sequence(fmap, crit=None, N=20):
    """Minimal derivative growth along critical orbits in the Julia set.

    Parameters
    ----------
    fmap : MapSpec
    crit : list of CriticalDatum, optional
        Effective critical set; computed (and orbit relations collapsed) if omitted.
    N : int
        Horizon.

    Returns
    -------
    SigmaSeq
    """
    if crit is None:
        crit = collapse_critical_blocks(critical_points(fmap))
    contributing = [c for c in crit if not c.at_infinity and c.in_julia != "no"]
    mu = max_multiplicity(crit)
    if not contributing:
        return SigmaSeq.vacuous_sequence(N, mu)
    per = ordered_map(lambda c: _log_growth_from(fmap, c.location, N), contributing)
    stack = np.vstack(per)
    idx = np.argmin(stack, axis=0)
    return SigmaSeq(stack[idx, np.arange(N)], idx, mu, False, tuple(per),
                    tuple(c.location for c in contributing))


def chain_rule_consistent(fmap, sigma, tol=1e-9):
    """Check ``sigma_{n+1} <= sigma_n * max_c |F'(F^{n+1} c)|`` along the contributing orbits."""
    if sigma.vacuous or not sigma.per_orbit_logs:
        return True
    stack = np.vstack(sigma.per_orbit_logs)
    steps = np.diff(stack, axis=1)
    bound = sigma.log_values[:-1] + steps.max(axis=0)
    return bool(np.all(sigma.log_values[1:] <= bound + tol * np.maximum(1, np.abs(bound))))


# ---------------------------------------------------------------------------
# summability


@dataclass
class SummabilityReport:
    verdict: str  # converges | converges (vacuously) | diverges | inconclusive
    alpha: float
    polynomial_weight: bool
    terms: np.ndarray
    partial_sums: np.ndarray
    total_estimate: float
    certificate: dict
    thresholds: dict


def _terms(sigma, alpha, polynomial_weight):
    n = np.arange(1, sigma.N + 1)
    logt = -alpha * sigma.log_values
    if polynomial_weight:
        logt = logt + np.log(n)
    return logt


def summability_report(sigma, alpha, polynomial_weight=False, deltas=(), divergence_bound=1e6):
    """Partial sums of ``sum sigma_n^-alpha`` (or ``sum n sigma_n^-alpha``) with a verdict.

    A geometric fit on the last half of the log-terms certifies convergence
    (and supplies a closed-form tail); otherwise a power-law fit decides
    between divergence (exponent at least -1) and convergence (below -1.1).
    ``deltas`` yields the thresholds ``delta / (delta + mu_max)``.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    thresholds = {float(d): {"threshold": d / (d + sigma.mu_max), "alpha_below": alpha < d / (d + sigma.mu_max)}
                  for d in deltas}
    N = sigma.N
    if sigma.vacuous:
        z = np.zeros(N)
        return SummabilityReport("converges (vacuously)", alpha, polynomial_weight, z, z, 0.0,
                                 {"kind": "vacuous"}, thresholds)
    logt = _terms(sigma, alpha, polynomial_weight)
    terms = np.exp(logt)
    partial = np.cumsum(terms)
    if N < 4:
        return SummabilityReport("inconclusive", alpha, polynomial_weight, terms, partial,
                                 float(partial[-1]), {"kind": "short"}, thresholds)
    half = slice(N // 2, N)
    n = np.arange(1, N + 1, dtype=float)
    lin = np.polyfit(n[half], logt[half], 1)
    pw = np.polyfit(np.log(n[half]), logt[half], 1)
    slope, power = lin[0], pw[0]
    lin_res = np.max(np.abs(logt[half] - np.polyval(lin, n[half])))
    pw_res = np.max(np.abs(logt[half] - np.polyval(pw, np.log(n[half]))))
    # the exponential model must explain the tail better than the power law
    geometric = slope < -1e-3 and lin_res <= pw_res
    if geometric and power < -1.1:
        q = math.exp(slope)
        if polynomial_weight:
            q = math.exp(np.polyfit(n[half], logt[half] - np.log(n[half]), 1)[0])
            # sum_{n>N} n b q^(n-N) with b = t_N / N, in closed form
            tail = terms[-1] / N * q * ((N + 1) - N * q) / (1 - q) ** 2
        else:
            tail = terms[-1] * q / (1 - q)
        cert = {"kind": "geometric", "ratio": q}
        verdict = "converges"
    elif power < -1.1:
        tail = terms[-1] * N / (-power - 1)
        cert = {"kind": "power", "exponent": power}
        verdict = "converges"
    elif power >= -1.0 - 1e-3 or partial[-1] > divergence_bound:
        tail = math.inf
        cert = {"kind": "power", "exponent": power}
        verdict = "diverges"
    else:
        tail = math.nan
        cert = {"kind": "power", "exponent": power}
        verdict = "inconclusive"
    return SummabilityReport(verdict, alpha, polynomial_weight, terms, partial,
                             float(partial[-1] + tail), cert, thresholds)


# ---------------------------------------------------------------------------
# technical sequences


@dataclass
class TechSequences:
    alpha_n: np.ndarray
    gamma_n: np.ndarray
    delta_n: np.ndarray
    alpha: float
    beta: float
    mu_max: int
    deg: int
    constants: dict
    monotone_from: int
    checks: dict


def alpha_envelope(N):
    n = np.arange(1, N + 1, dtype=float)
    return np.sqrt(np.maximum(1.0, np.log1p(n)))


def _verify(tech, sigma_log):
    d, g, a = tech.delta_n, tech.gamma_n, tech.alpha_n
    cap = 1.0 / (16 * tech.deg * tech.mu_max)
    sum_delta = float(d.sum())
    sum_gamma = float(np.sum(g ** (-tech.beta)))
    # log form of sigma_n >= alpha_n^2 gamma_n^mu / delta_n
    rhs = 2 * np.log(a) + tech.mu_max * np.log(g) - np.log(d)
    growth = bool(np.all(sigma_log >= rhs))
    k = tech.monotone_from
    mono = bool(np.all(np.diff(a[k - 1:]) >= 0))
    return {
        "sum_delta": sum_delta, "sum_delta_ok": sum_delta < 0.5,
        "sum_gamma_beta": sum_gamma, "gamma_cap": cap, "sum_gamma_ok": sum_gamma < cap,
        "growth_ok": growth, "min_growth_margin": float(np.min(sigma_log - rhs)),
        "alpha_monotone_ok": mono,
    }


def technical_sequences(sigma, alpha, deg, mu_max=None):
    """Build ``alpha_n, gamma_n, delta_n`` from a summable sigma sequence.

    With ``delta'_n = sigma_n^-alpha``, ``gamma'_n = sigma_n^((1-alpha)/mu)
    alpha'_n^(-2/mu)`` and ``alpha'_n = max(1, log(1+n))^(1/2)``, the
    constants are fixed so that the sums land at 90% of their caps and the
    growth inequality holds with a relative margin of 1e-6. All four
    inequalities are re-checked before returning.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1); alpha = 1 gives an infinite beta")
    mu = int(sigma.mu_max if mu_max is None else mu_max)
    beta = mu * alpha / (1 - alpha)
    N = sigma.N
    ap = alpha_envelope(N)
    m = 1.0 / (16 * deg * mu)
    n = np.arange(1, N + 1, dtype=float)
    if sigma.vacuous:
        dp = 2.0 ** (-n)
        c_delta = 0.45 / dp.sum()
        gp = 2.0 ** n
        c_gamma = (np.sum(gp ** (-beta)) / (0.9 * m)) ** (1 / beta)
        c_alpha = 1.0
        log_sigma = np.full(N, np.inf)
        log_gamma = np.log(c_gamma) + n * np.log(2.0)
    else:
        ls = sigma.log_values
        log_dp = -alpha * ls
        # logs throughout: sigma_n can be astronomically large
        log_gp = (1 - alpha) / mu * ls - 2 / mu * np.log(ap)
        sum_dp = np.exp(log_dp).sum()
        sum_gp = np.exp(-beta * log_gp).sum()
        if not np.isfinite(sum_dp) or not np.isfinite(sum_gp):
            raise InfeasibleError("sums of delta'_n or gamma'_n^-beta are not finite")
        c_delta = 0.45 / sum_dp
        c_gamma = (sum_gp / (0.9 * m)) ** (1 / beta)
        c_alpha = math.sqrt(c_delta / c_gamma ** mu) * (1 - 1e-6)
        dp = np.exp(log_dp)
        log_sigma = ls
        log_gamma = np.log(c_gamma) + log_gp
    delta = c_delta * dp
    gamma = np.exp(log_gamma)
    alpha_n = c_alpha * ap
    inc = np.flatnonzero(np.diff(ap) > 0)
    monotone_from = int(inc[0] + 1) if inc.size else 1
    tech = TechSequences(alpha_n, gamma, delta, float(alpha), float(beta), mu, int(deg),
                         {"C_delta": c_delta, "C_gamma": c_gamma, "C_alpha": c_alpha},
                         monotone_from, {})
    tech.checks = _verify(tech, log_sigma)
    failed = [k for k in ("sum_delta_ok", "sum_gamma_ok", "growth_ok", "alpha_monotone_ok")
              if not tech.checks[k]]
    if failed:
        raise InfeasibleError(f"technical-sequence inequalities failed: {', '.join(failed)}")
    return tech


# ---------------------------------------------------------------------------
# Lyapunov exponents


@dataclass
class LyapunovResult:
    value: float
    trace: np.ndarray
    critical_hit: Optional[int] = None


def scalar_stepper(fmap):
    """Fast ``z -> (F(z), F'(z))`` on Python complex scalars."""
    p = [complex(a) for a in fmap.num_coeffs]
    q = [complex(a) for a in fmap.den_coeffs]
    if len(q) == 1:
        q0 = q[0]

        def step(z):
            v, dv = p[0], 0j
            for a in p[1:]:
                dv = dv * z + v
                v = v * z + a
            return v / q0, dv / q0
        return step

    def step(z):
        v, dv = p[0], 0j
        for a in p[1:]:
            dv = dv * z + v
            v = v * z + a
        u, du = q[0], 0j
        for a in q[1:]:
            du = du * z + u
            u = u * z + a
        return v / u, (dv * u - v * du) / (u * u)
    return step


def lyapunov_exponent(fmap, z, n, project: Optional[Callable] = None, crit_tol=1e-300,
                      trace_every=1):
    """``(1/n) sum_{k<n} log|F'(F^k z)|`` with its running-average trace.

    ``project`` is applied after every step; it keeps float orbits on an
    invariant set they would otherwise drift off (for instance ``z/|z|``
    on the unit circle under ``z**2``).
    """
    step = scalar_stepper(fmap)
    w = complex(z)
    total = 0.0
    trace = []
    for k in range(n):
        fw, dw = step(w)
        a = abs(dw)
        if a <= crit_tol:
            return LyapunovResult(-math.inf, np.array(trace), critical_hit=k)
        total += math.log(a)
        w = project(fw) if project is not None else fw
        if (k + 1) % trace_every == 0:
            trace.append(total / (k + 1))
    return LyapunovResult(total / n if n else 0.0, np.array(trace))


# ---------------------------------------------------------------------------
# uniform summability along families


@dataclass
class FamilyCheckReport:
    epsilon: float
    M: float
    alpha: float
    members: list  # per member: list of dicts per critical point
    correspondence: list
    verdict: str
    notes: list


def _raster_tree(raster):
    return cKDTree(np.column_stack([raster.cell_centers().real, raster.cell_centers().imag]))


def escape_time(orbit, tree, eps, cell):
    """First j >= 1 with ``dist(orbit[j], K) >= eps`` (``None`` for never, up to the horizon)."""
    pts = np.column_stack([np.real(orbit), np.imag(orbit)])
    dist, _ = tree.query(pts)
    # cell centers are within half a diagonal of the set
    dist = np.maximum(dist - cell / math.sqrt(2), 0)
    out = np.flatnonzero(dist[1:] >= eps)
    return int(out[0] + 1) if out.size else None


def s_alpha_uniform_check(family, limit, alpha, eps, M, horizon=200, raster=None, raster_level=9):
    """Check the bounded-sum condition of uniform summability on a finite family.

    For each member and each finite critical point within ``eps`` of the
    limit's Julia raster, ``E(eps)`` is the first time the orbit leaves the
    ``eps``-neighbourhood and the sum runs over ``|(F^j)'(F(c))|^-alpha``
    for ``j = 1..min(E, horizon)``.
    """
    from .maps import julia_bbox
    from .raster import julia_membership_grid

    limit_crit = [c for c in critical_points(limit) if not c.at_infinity]
    if raster is None:
        raster = julia_membership_grid(limit, julia_bbox(limit), raster_level)
    tree = _raster_tree(raster)
    cell = raster.cell_size
    notes = []

    def one(member):
        crit = [c for c in critical_points(member) if not c.at_infinity]
        if len(crit) != len(limit_crit):
            raise CorrespondenceError(
                f"{member.label()} has {len(crit)} critical points, limit has {len(limit_crit)}")
        rows = []
        for c in crit:
            d0 = tree.query([c.location.real, c.location.imag])[0]
            if d0 - cell / math.sqrt(2) >= eps:
                continue
            orbit = [c.location]
            w = c.location
            logs = []
            escaped = False
            for _ in range(horizon + 1):
                w, dw = evaluate_and_derivative(member, w)
                orbit.append(w)
                if abs(w) > 1e50:
                    escaped = True
                    break
            # orbit[j] = F^j(c); the growth term j uses F'(F^1 c)...F'(F^j c)
            with np.errstate(divide="ignore"):
                for j in range(1, len(orbit) - 1):
                    logs.append(math.log(abs(evaluate_and_derivative(member, orbit[j])[1]) or 1e-320))
            E = escape_time(np.array(orbit[:horizon + 1]), tree, eps, cell)
            stop = min(E if E is not None else horizon, len(logs))
            growth = np.cumsum(logs[:stop])
            total = float(np.sum(np.exp(-alpha * growth)))
            rows.append({"critical_point": c.location, "E": E if E is not None else "inf",
                         "sum": total, "terms": stop, "escaped": escaped})
        return rows

    members = ordered_map(one, family)
    correspondence = []
    for i, member in enumerate(family):
        crit = [c.location for c in critical_points(member) if not c.at_infinity]
        pairs = []
        for c in crit:
            j = int(np.argmin([abs(c - l.location) for l in limit_crit]))
            pairs.append((c, limit_crit[j].location))
        correspondence.append(pairs)
    ok = all(r["sum"] < M for rows in members for r in rows)
    return FamilyCheckReport(float(eps), float(M), float(alpha), members, correspondence,
                             "pass" if ok else "fail", notes)
