"""External parameter rays of the unicritical connectedness loci and experiments along them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .maps import MapSpec

TARGET_LOG_RADIUS = math.log(1e8)
SUBSTEPS = 8
MAX_NEWTON = 64
LANDING_G = 1e-6


class RayContinuationError(ArithmeticError):
    """Newton continuation failed; ``ray`` holds the points traced so far."""

    def __init__(self, message, ray):
        super().__init__(message)
        self.ray = ray


@dataclass
class RayPoint:
    theta: object  # Fraction or float
    G: float
    c: complex
    residual: float


def parse_angle(theta):
    """Exact angle from a Fraction, an ``"p/q"`` string, an int or a float (kept as float)."""
    if isinstance(theta, Fraction):
        return theta % 1
    if isinstance(theta, str):
        return Fraction(theta) % 1
    if isinstance(theta, int):
        return Fraction(theta) % 1
    return float(theta) % 1.0


def _angle_times(theta, m):
    if isinstance(theta, Fraction):
        return float((theta * m) % 1)
    return (theta * m) % 1.0


def default_schedule(G0=4.0, G_min=LANDING_G):
    """``G_j = G0 2^-j`` continued until the landing level ``G_min`` is passed."""
    out = [G0]
    while out[-1] > G_min:
        out.append(out[-1] / 2)
    return out


def _orbit_and_derivative(d, c, n):
    z, dz = c, 1.0 + 0j
    for _ in range(n - 1):
        dz = d * z ** (d - 1) * dz + 1
        z = z ** d + c
    return z, dz


def _solve(d, theta, G, c, tol):
    m = max(1, math.ceil(math.log(TARGET_LOG_RADIUS / G, d))) if G < TARGET_LOG_RADIUS else 0
    n = m + 1  # z_n = f_c^{n-1}(c) and the target is Phi^(d^m)
    dm = d ** m
    target_log = G * dm + 2j * math.pi * _angle_times(theta, dm)
    scale = abs(target_log)
    best = None
    for _ in range(MAX_NEWTON):
        z, dz = _orbit_and_derivative(d, c, n)
        if not np.isfinite(z) or dz == 0:
            raise ArithmeticError("orbit overflow during Newton step")
        # Newton on log z_n(c) = target: better scaled than the raw equation
        fz = complex(np.log(z)) - target_log
        fz = complex(fz.real, (fz.imag + math.pi) % (2 * math.pi) - math.pi)
        res = abs(fz) / scale
        if best is None or res < best[1]:
            best = (c, res)
        step = fz / (dz / z)
        if abs(step) <= tol * max(1.0, abs(c)):
            # c no longer moves in floating point; the residual is what double precision allows
            return best
        c = c - step
    raise ArithmeticError("Newton iteration did not converge")


def trace_external_ray(d, theta, schedule=None, newton_tol=1e-12, substeps=SUBSTEPS):
    """Points of the parameter ray of angle ``theta`` at the potentials of ``schedule``.

    At potential G the truncated parameter Böttcher relation
    ``f_c^(n-1)(c) = exp(d^(n-1) (G + 2 pi i theta))`` is solved by Newton's
    method, n chosen so that the target modulus reaches ``1e8``. Potentials
    between schedule points are passed through geometrically (``substeps``
    per interval) to keep each Newton start inside the basin.
    """
    theta = parse_angle(theta)
    schedule = default_schedule() if schedule is None else [float(g) for g in schedule]
    if any(b >= a for a, b in zip(schedule[:-1], schedule[1:])) or schedule[0] <= 0:
        raise ValueError("the potential schedule must be positive and strictly decreasing")
    ray = []
    G0 = schedule[0]
    c = complex(np.exp((G0 + 2j * math.pi * float(theta)) / 1.0))
    try:
        c, res = _solve(d, theta, G0, c, newton_tol)
        ray.append(RayPoint(theta, G0, c, res))
        for Ga, Gb in zip(schedule[:-1], schedule[1:]):
            for s in range(1, substeps + 1):
                G = Ga * (Gb / Ga) ** (s / substeps)
                c, res = _solve(d, theta, G, c, newton_tol)
            ray.append(RayPoint(theta, Gb, c, res))
    except ArithmeticError as exc:
        raise RayContinuationError(f"continuation failed after G = {ray[-1].G if ray else G0}: {exc}",
                                   ray) from exc
    return ray


# ---------------------------------------------------------------------------
# derivative growth along a ray


@dataclass
class GrowthFit:
    G: float
    c: complex
    log_derivatives: np.ndarray  # log|(f_c^k)'(c)|, k = 1..n (truncated at escape)
    K: float
    Lambda: float
    escaped_at: Optional[int]

    @property
    def super_exponential(self):
        return self.escaped_at is not None


@dataclass
class CEReport:
    fits: list
    tail_min_lambda: float
    tail: int


def derivative_growth(d, c, n, escape=1e10):
    """``log|(f_c^k)'(c)|`` for k = 1..n, stopping when the orbit leaves ``|z| < escape``."""
    z = complex(c)
    logs, total = [], 0.0
    for k in range(1, n + 1):
        a = abs(d * z ** (d - 1))
        if a == 0:
            logs.append(-math.inf)
            return np.array(logs), None
        total += math.log(a)
        logs.append(total)
        z = z ** d + c
        if not abs(z) < escape:
            return np.array(logs), k
    return np.array(logs), None


def ce_along_ray(d, theta, ray, n=20, tail=4):
    """Exponential fits ``|(f_c^k)'(c)| ~ K Lambda^k`` at each ray point; minimum Lambda on the tail."""
    fits = []
    for pt in ray:
        logs, esc = derivative_growth(d, pt.c, n)
        k = np.arange(1, len(logs) + 1)
        ok = np.isfinite(logs)
        if ok.sum() >= 2:
            b, a = np.polyfit(k[ok], logs[ok], 1)
            K, lam = math.exp(a), math.exp(b)
        else:
            K, lam = float("nan"), float("nan")
        fits.append(GrowthFit(pt.G, pt.c, logs, K, lam, esc))
    lams = [f.Lambda for f in fits[-tail:] if np.isfinite(f.Lambda)]
    return CEReport(fits, float(min(lams)) if lams else float("nan"), int(tail))


# ---------------------------------------------------------------------------
# dimensions along a ray


@dataclass
class RayDimensionReport:
    G: list
    c: list
    estimates: list  # per point: dict of the three estimates
    proxy: list  # median of the three
    brackets: list  # (min, max) of the three
    extrapolated: float
    landing_c: complex
    landing_estimate: float
    landing_gap: float
    cauchy_ok: bool
    notes: list = field(default_factory=list)


def dimension_along_ray(d, theta, ray, config=None, tail=4, landing_c=None):
    """Dimension estimates at the last ``tail`` ray points, extrapolated linearly in G to G = 0."""
    from .dimensions import dimension_comparison

    pts = ray[-tail:]
    est, proxy, br = [], [], []
    for pt in pts:
        rep = dimension_comparison(MapSpec.unicritical(d, pt.c), config)
        e = rep.estimates()
        v = sorted(e.values())
        est.append(e)
        proxy.append(float(v[1]))
        br.append((float(v[0]), float(v[2])))
    G = np.array([p.G for p in pts])
    if len(pts) >= 2:
        slope, icpt = np.polyfit(G, proxy, 1)
    else:
        icpt = proxy[-1]
    landing_c = pts[-1].c if landing_c is None else complex(landing_c)
    land = dimension_comparison(MapSpec.unicritical(d, landing_c), config).estimates()
    land_v = float(sorted(land.values())[1])
    gaps = [abs(a - b) for a, b in zip(proxy[:-1], proxy[1:])]
    widths = [(b1[1] - b1[0]) + (b2[1] - b2[0]) for b1, b2 in zip(br[:-1], br[1:])]
    cauchy = all(g <= w for g, w in zip(gaps, widths))
    return RayDimensionReport([p.G for p in pts], [p.c for p in pts], est, proxy, br, float(icpt),
                              landing_c, land_v, abs(float(icpt) - land_v), bool(cauchy))
