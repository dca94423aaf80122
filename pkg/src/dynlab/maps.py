"""Rational, polynomial, unicritical and interval maps.

Coefficients are stored highest degree first (the :func:`numpy.polyval`
convention), both in memory and in map-spec JSON files.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .roots import batched_roots, cluster_roots, poly_roots

KINDS = ("polynomial", "rational", "unicritical", "real-interval")

POLE_TOL = 1e-12
COMMON_ROOT_TOL = 1e-9
ORBIT_CAP = 1e100


class MapError(ValueError):
    """Invalid map specification."""


class PoleProximityError(ArithmeticError):
    """Evaluation requested too close to a pole of the map."""


def _trim(c):
    c = np.trim_zeros(np.asarray(c, dtype=complex), "f")
    return c if len(c) else np.zeros(1, dtype=complex)


@dataclass(frozen=True)
class MapSpec:
    kind: str
    num: tuple
    den: tuple = (1 + 0j,)
    d: Optional[int] = None
    c: Optional[complex] = None
    domain: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise MapError(f"unknown map kind {self.kind!r}")
        num, den = _trim(self.num), _trim(self.den)
        if abs(num[0]) == 0 or abs(den[0]) == 0:
            raise MapError("leading coefficients must be nonzero")
        if self.degree < 2:
            raise MapError("degree must be at least 2")
        if len(den) > 1:
            scale = np.abs(num).sum()
            for q in poly_roots(den):
                if abs(np.polyval(num, q)) < COMMON_ROOT_TOL * scale * max(1, abs(q)) ** (len(num) - 1):
                    raise MapError(f"numerator and denominator share the root {q:.6g}")

    # construction helpers -------------------------------------------------

    @classmethod
    def polynomial(cls, coeffs):
        return cls("polynomial", tuple(complex(a) for a in coeffs))

    @classmethod
    def rational(cls, num, den):
        return cls("rational", tuple(complex(a) for a in num), tuple(complex(a) for a in den))

    @classmethod
    def unicritical(cls, d, c):
        coeffs = [1] + [0] * (d - 1) + [c]
        return cls("unicritical", tuple(complex(a) for a in coeffs), d=int(d), c=complex(c))

    @classmethod
    def interval(cls, coeffs, domain=(0.0, 1.0)):
        return cls("real-interval", tuple(complex(float(a)) for a in coeffs),
                   domain=(float(domain[0]), float(domain[1])))

    # basic data -----------------------------------------------------------

    @property
    def num_coeffs(self):
        return _trim(self.num)

    @property
    def den_coeffs(self):
        return _trim(self.den)

    @property
    def degree(self):
        return max(len(_trim(self.num)), len(_trim(self.den))) - 1

    @property
    def is_polynomial(self):
        return len(_trim(self.den)) == 1

    def label(self):
        if self.kind == "unicritical":
            return f"z^{self.d}{_fmt_c(self.c)}"
        return f"{self.kind}(deg {self.degree})"

    def to_json(self):
        def pairs(cs):
            return [[float(np.real(a)), float(np.imag(a))] for a in cs]

        if self.kind == "unicritical":
            return {"kind": "unicritical", "d": self.d, "c": [self.c.real, self.c.imag]}
        out = {"kind": self.kind, "num": pairs(self.num_coeffs), "den": pairs(self.den_coeffs)}
        if self.domain is not None:
            out["domain"] = list(self.domain)
        return out

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or "kind" not in obj:
            raise MapError("map spec must be an object with a 'kind' field")
        kind = obj["kind"]
        if kind == "unicritical":
            c = obj.get("c", [0, 0])
            return cls.unicritical(int(obj["d"]), complex(c[0], c[1]))
        try:
            num = [complex(a[0], a[1]) for a in obj["num"]]
            den = [complex(a[0], a[1]) for a in obj.get("den", [[1, 0]])]
        except (KeyError, TypeError, IndexError) as exc:
            raise MapError(f"malformed coefficient list: {exc}") from None
        if kind == "real-interval":
            if any(abs(a.imag) > 0 for a in num + den) or len(den) != 1:
                raise MapError("real-interval maps need real polynomial coefficients")
            return cls.interval([a.real for a in num], obj.get("domain", (0.0, 1.0)))
        return cls(kind, tuple(num), tuple(den))

    def hash(self):
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # evaluation -----------------------------------------------------------

    def __call__(self, z):
        return evaluate_and_derivative(self, z)[0]

    def derivative(self, z):
        return evaluate_and_derivative(self, z)[1]

    def preimage_coefficients(self, w):
        """Rows of ``P(y) - w Q(y)`` for each target ``w``."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        d = self.degree
        num = np.zeros(d + 1, dtype=complex)
        den = np.zeros(d + 1, dtype=complex)
        p, q = self.num_coeffs, self.den_coeffs
        num[d + 1 - len(p):] = p
        den[d + 1 - len(q):] = q
        return num[None, :] - w[:, None] * den[None, :]

    def preimages_of(self, w):
        """All ``deg`` solutions of ``F(y) = w`` for each ``w``; shape ``(len(w), deg)``."""
        w = np.atleast_1d(np.asarray(w, dtype=complex))
        if self.kind == "unicritical":
            d = self.d
            base = (w - self.c) ** (1.0 / d)
            rot = np.exp(2j * np.pi * np.arange(d) / d)
            return base[:, None] * rot[None, :]
        return batched_roots(self.preimage_coefficients(w))


def _fmt_c(c):
    if c is None or c == 0:
        return ""
    if c.imag == 0:
        return f"{c.real:+g}"
    return f"+({c.real:g}{c.imag:+g}i)"


def evaluate_and_derivative(fmap, z, pole_tol=POLE_TOL):
    """Return ``(F(z), F'(z))`` by Horner evaluation and the quotient rule.

    Works elementwise on arrays. Raises :class:`PoleProximityError` when the
    denominator is below ``pole_tol`` anywhere.
    """
    z = np.asarray(z, dtype=complex)
    p, q = fmap.num_coeffs, fmap.den_coeffs
    pv = np.zeros(z.shape, dtype=complex) + p[0]
    dpv = np.zeros(z.shape, dtype=complex)
    for a in p[1:]:
        dpv = dpv * z + pv
        pv = pv * z + a
    if len(q) == 1:
        f, df = pv / q[0], dpv / q[0]
    else:
        qv = np.zeros(z.shape, dtype=complex) + q[0]
        dqv = np.zeros(z.shape, dtype=complex)
        for a in q[1:]:
            dqv = dqv * z + qv
            qv = qv * z + a
        if np.any(np.abs(qv) < pole_tol):
            raise PoleProximityError("evaluation point within pole tolerance")
        f = pv / qv
        df = (dpv * qv - pv * dqv) / (qv * qv)
    if f.ndim == 0:
        return complex(f), complex(df)
    return f, df


def taylor_coefficients(fmap, z0, order):
    """First ``order + 1`` Taylor coefficients of F around ``z0`` (by series division)."""
    def shifted(c):
        # coefficients of c(z0 + h) in increasing powers of h
        c = list(c)
        n = len(c)
        out = np.zeros(n, dtype=complex)
        work = np.array(c, dtype=complex)
        for k in range(n):
            val = work[0]
            for j in range(1, len(work)):
                val = val * z0 + work[j]
            out[k] = val
            work = np.polyder(work) / (k + 1) if len(work) > 1 else np.zeros(1)
        return out

    a = shifted(fmap.num_coeffs)
    b = shifted(fmap.den_coeffs)
    a = np.concatenate([a, np.zeros(max(0, order + 1 - len(a)))])
    b = np.concatenate([b, np.zeros(max(0, order + 1 - len(b)))])
    out = np.zeros(order + 1, dtype=complex)
    for k in range(order + 1):
        out[k] = (a[k] - np.dot(out[:k], b[k:0:-1])) / b[0]
    return out


# ---------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalDatum:
    location: complex
    multiplicity: int
    in_julia: str  # "yes" | "no" | "undetermined"
    orbit: tuple = field(default=(), repr=False)
    at_infinity: bool = False
    chain: tuple = ()
    note: str = ""


def critical_equation(fmap):
    p, q = fmap.num_coeffs, fmap.den_coeffs
    return np.polysub(np.polymul(np.polyder(p), q), np.polymul(p, np.polyder(q))) \
        if len(q) > 1 else np.polyder(p)


def forward_orbit(fmap, z, n, escape_radius=None):
    """Forward orbit ``z, F(z), ..., F^n(z)``; stops early on escape or a pole.

    The orbit is cut after the first point with modulus above ``escape_radius``
    (or :data:`ORBIT_CAP`).
    """
    out = [complex(z)]
    cap = ORBIT_CAP if escape_radius is None else escape_radius
    for _ in range(n):
        if abs(z) > cap:
            break
        try:
            z, _ = evaluate_and_derivative(fmap, z)
        except PoleProximityError:
            break
        if not np.isfinite(z):
            break
        out.append(complex(z))
    return out


def escape_radius_for(fmap):
    """Radius beyond which polynomial orbits provably escape."""
    p = fmap.num_coeffs / fmap.den_coeffs[0]
    lead = abs(p[0])
    return max(2.0, (1.0 + np.abs(p[1:]).sum()) / min(lead, 1.0) + 1.0)


def classify_orbit(fmap, z, max_iter=2000, cycle_tol=1e-10, max_period=64):
    """Tri-state Julia classification of a forward orbit.

    Returns ``(state, info)`` with state "yes", "no" or "undetermined".
    """
    R = escape_radius_for(fmap) if fmap.is_polynomial else None
    orbit = forward_orbit(fmap, z, max_iter, escape_radius=R)
    if len(orbit) <= max_iter:
        # escaped or hit a pole, i.e. reached the Fatou component of infinity
        return "no", {"reason": "escapes", "orbit": orbit}
    tail = np.array(orbit[-4 * max_period:])
    last = tail[-1]
    for p in range(1, max_period + 1):
        if abs(tail[-1] - tail[-1 - p]) < cycle_tol * max(1.0, abs(last)):
            mult = 1.0
            for w in tail[-p:]:
                mult *= abs(evaluate_and_derivative(fmap, w)[1])
            info = {"reason": "cycle", "period": p, "multiplier": mult, "orbit": orbit}
            if mult < 1 - 1e-6:
                return "no", info
            if mult <= 1 + 1e-6:
                info["reason"] = "parabolic-suspected"
                return "undetermined", info
            return "yes", info
    # slow geometric approach to some cycle is not a Julia orbit either
    for p in range(1, max_period + 1):
        gaps = np.abs(tail[p:] - tail[:-p])
        if gaps[-1] < 1e-4 and np.all(np.diff(gaps[-3 * p:]) <= 0):
            return "undetermined", {"reason": "slow-convergence", "period": p, "orbit": orbit}
    return "yes", {"reason": "bounded", "orbit": orbit}


def _refine_multiple_root(coeffs, z, mult, steps=8):
    # a root of multiplicity m is a simple root of the (m-1)-th derivative
    if mult < 2:
        return z
    g = np.polyder(coeffs, mult - 1)
    dg = np.polyder(g)
    for _ in range(steps):
        dz = np.polyval(dg, z)
        if dz == 0:
            break
        z = z - np.polyval(g, z) / dz
    return complex(z)


def critical_points(fmap, max_iter=2000, orbit_length=256, cluster_tol=1e-5):
    """All critical points with multiplicities and a Julia classification.

    For polynomials the point at infinity is appended as a Fatou critical
    point of multiplicity ``deg F``.
    """
    ce = np.trim_zeros(critical_equation(fmap), "f")
    deg = fmap.degree
    found = []
    if len(ce) > 1:
        for loc, count in cluster_roots(poly_roots(ce), cluster_tol):
            found.append((_refine_multiple_root(ce, loc, count), count + 1))
    out = []
    for loc, mu in found:
        state, info = classify_orbit(fmap, loc, max_iter=max_iter)
        orbit = tuple(forward_orbit(fmap, loc, orbit_length))
        out.append(CriticalDatum(complex(loc), int(mu), state, orbit, note=info["reason"]))
    deficit = 2 * (deg - 1) - sum(mu - 1 for _, mu in found)
    if deficit > 0:
        state, note = "no", "infinity"
        if not fmap.is_polynomial:
            p, q = fmap.num_coeffs, fmap.den_coeffs
            v = p[0] / q[0] if len(p) == len(q) else 0j
            state, info = classify_orbit(fmap, v, max_iter=max_iter)
            note = info["reason"]
        out.append(CriticalDatum(complex(np.inf), deficit + 1, state, (), at_infinity=True,
                                 note=note))
    return out


def multiplicity_check(fmap, crit, tol=1e-8):
    """The order of vanishing of F' at c matches ``mu(c) - 1``."""
    if crit.at_infinity:
        return True
    if abs(np.polyval(fmap.den_coeffs, crit.location)) < tol:
        # a critical pole: the local degree is read off 1/F
        fmap = MapSpec("rational", tuple(fmap.den_coeffs), tuple(fmap.num_coeffs))
    coeffs = taylor_coefficients(fmap, crit.location, crit.multiplicity)
    scale = max(1.0, abs(coeffs[0]))
    low = all(abs(coeffs[k]) < tol * scale for k in range(1, crit.multiplicity))
    return bool(low and abs(coeffs[crit.multiplicity]) > tol)


def max_multiplicity(crit, julia_only=True):
    mus = [c.multiplicity for c in crit if not c.at_infinity and (not julia_only or c.in_julia != "no")]
    return max(mus) if mus else 1


def collapse_critical_blocks(crit, horizon=64, tol=1e-9):
    """Merge critical points related by critical orbit relations.

    A chain ``c1 -> ... -> ck`` becomes one effective point of multiplicity
    prod(mu_j), placed at the chain's last member ``ck`` (the one whose orbit
    avoids other critical points).
    """
    finite = [c for c in crit if not c.at_infinity]
    succ = {}
    for i, a in enumerate(finite):
        orbit = a.orbit[1:horizon + 1]
        for j, b in enumerate(finite):
            if i == j:
                continue
            if any(abs(w - b.location) < tol * max(1.0, abs(b.location)) for w in orbit):
                succ[i] = j
                break
    if not succ:
        return list(crit)
    pred = {j: i for i, j in succ.items()}
    out, seen = [], set()
    for i in range(len(finite)):
        if i in seen or i in pred:
            continue
        chain = [i]
        while chain[-1] in succ and succ[chain[-1]] not in chain:
            chain.append(succ[chain[-1]])
        seen.update(chain)
        members = [finite[k] for k in chain]
        if len(members) == 1:
            out.append(members[0])
            continue
        mu = math.prod(m.multiplicity for m in members)
        tail = members[-1]
        out.append(CriticalDatum(tail.location, mu, tail.in_julia, tail.orbit,
                                 chain=tuple(m.location for m in members), note="collapsed"))
    # members of cycles of critical points keep their own entries
    for i in range(len(finite)):
        if i not in seen:
            out.append(finite[i])
    out.extend(c for c in crit if c.at_infinity)
    return out


# ---------------------------------------------------------------------------
# configuration-time validation


def infinity_in_fatou(fmap, max_iter=2000):
    """True when infinity lies in an attracting basin, so a bounded compact holds J."""
    p, q = fmap.num_coeffs, fmap.den_coeffs
    dp, dq = len(p) - 1, len(q) - 1
    if dp >= dq + 2:
        return True
    if dp == dq + 1:
        # fixed point at infinity with multiplier lead(Q)/lead(P)
        return abs(q[0] / p[0]) < 1
    v = p[0] / q[0] if dp == dq else 0j
    state, _ = classify_orbit(fmap, v, max_iter=max_iter)
    return state == "no"


def validate_for_planar_work(fmap):
    if not infinity_in_fatou(fmap):
        raise MapError("the Julia set of this map meets infinity; planar-metric work is undefined")
    return fmap


def load_map(path):
    with open(path) as fh:
        return MapSpec.from_json(json.load(fh))


def sup_derivative(fmap, bbox, n=129):
    x = np.linspace(bbox[0], bbox[1], n)
    y = np.linspace(bbox[2], bbox[3], n)
    Z = x[None, :] + 1j * y[:, None]
    return float(np.abs(evaluate_and_derivative(fmap, Z)[1]).max())


def julia_bbox(fmap, pad=0.05):
    """A square box containing the filled Julia set of a polynomial (or J of a rational map)."""
    if fmap.kind == "real-interval":
        a, b = fmap.domain
        return (a, b, -0.5 * (b - a), 0.5 * (b - a))
    if fmap.is_polynomial:
        if fmap.kind == "unicritical":
            R = max(abs(fmap.c), 2.0) ** (1.0 / (fmap.d - 1)) if abs(fmap.c) > 2 else 2.0
            R = max(R, (abs(fmap.c) + 1) ** (1.0 / fmap.d) + 0.1)
        else:
            R = escape_radius_for(fmap)
        R = R * (1 + pad)
        return (-R, R, -R, R)
    return (-4.0, 4.0, -4.0, 4.0)
