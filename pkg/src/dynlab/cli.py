"""Command-line front end: configuration, dispatch, result files, manifests and replay.

Every command reads its parameters from defaults, an optional ``--config``
JSON file and long-form flags (in increasing priority), writes CSV/JSON
results and PNG figures under ``--out`` and finishes with ``manifest.json``.
Exit status: 0 success, 2 configuration error, 3 numerical failure (a
``diagnostic.json`` is written).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
import traceback
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import __version__
from . import io as rio
from .maps import MapError, MapSpec, critical_points, julia_bbox

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
REQUIRED = object()


class ConfigError(ValueError):
    """The configuration cannot be parsed or validated."""


class ReplayMismatch(RuntimeError):
    """A replayed run produced different bytes than the recorded one."""


# ---------------------------------------------------------------------------
# parameter parsing


def parse_complex(v):
    """``1+1j``, ``"1,1"``, ``[1, 1]`` or a real number."""
    if isinstance(v, (list, tuple)):
        if len(v) != 2:
            raise ConfigError(f"complex value needs two components: {v!r}")
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)):
        return complex(v)
    s = str(v).strip().replace(" ", "")
    if "," in s:
        a, b = s.split(",", 1)
        return complex(float(a), float(b))
    try:
        return complex(s.replace("i", "j"))
    except ValueError:
        raise ConfigError(f"not a complex number: {v!r}") from None


def _split(v):
    if isinstance(v, (list, tuple)):
        return list(v)
    s = str(v).strip()
    if not s:
        return []
    sep = ";" if ";" in s else ","
    return [x for x in s.split(sep) if x.strip()]


def _as_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


CONVERTERS = {
    "float": float,
    "int": lambda v: int(v) if not isinstance(v, float) or v.is_integer() else _bad_int(v),
    "str": str,
    "bool": _as_bool,
    "complex": parse_complex,
    "floats": lambda v: [float(x) for x in _split(v)],
    "ints": lambda v: [int(x) for x in _split(v)],
    # complex lists use ';' between entries when written on the command line
    "complexes": lambda v: [parse_complex(x) for x in (v if isinstance(v, list) else _split(v))],
}


def _bad_int(v):
    raise ConfigError(f"not an integer: {v!r}")


@dataclass
class Param:
    kind: str
    default: Any = REQUIRED
    help: str = ""
    positive: bool = False
    choices: tuple = ()


@dataclass
class Command:
    name: str
    run: Callable
    params: dict
    needs_map: bool = True
    help: str = ""


COMMANDS: dict = {}


def command(name, params, needs_map=True, help=""):
    def wrap(fn):
        COMMANDS[name] = Command(name, fn, params, needs_map, help)
        return fn
    return wrap


# ---------------------------------------------------------------------------
# run context


@dataclass
class RunContext:
    out: str
    params: dict
    fmap: Any = None
    seed: int = 0
    cache: Any = None
    outputs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def path(self, name):
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        rio.write_csv(self.path(name), header, rows)
        self.outputs.append(name)

    def json(self, name, obj):
        rio.write_json(self.path(name), obj)
        self.outputs.append(name)

    def pgm(self, name, bits):
        rio.write_pgm(self.path(name), bits)
        self.outputs.append(name)

    def figure(self, name, fn, *args, **kwargs):
        fn(self.path(name), *args, **kwargs)
        self.outputs.append(name)

    def tree(self, z, n):
        from .backward import cached_tree
        return cached_tree(self.fmap, z, n, self.cache)


# ---------------------------------------------------------------------------
# shared helpers


def _sigma(ctx, n):
    from .orbits import SigmaSeq, sigma_sequence
    vals = ctx.params.get("sigma_values")
    if vals:
        if len(vals) < n:
            raise ConfigError(f"sigma_values has {len(vals)} entries, n = {n} requested")
        mu = ctx.params.get("mu_max") or 2
        return SigmaSeq.from_values(vals[:n], mu)
    if ctx.fmap is None:
        raise ConfigError("either a map or sigma_values is required")
    return sigma_sequence(ctx.fmap, N=n)


def _cplx(z):
    z = complex(z)
    return [z.real, z.imag]


def _measure(ctx):
    from .measures import atomic_conformal_measure
    p = ctx.params
    tree = ctx.tree(p["z"], p["depth"])
    return atomic_conformal_measure(ctx.fmap, p["z"], p["p"], p["depth"], p["min_level"], tree)


def _partition(ctx):
    from .measures import arc_partition, dyadic_partition, interval_partition
    p = ctx.params
    kind, m = p["partition"], p["cells"]
    if kind == "arc":
        return arc_partition(m, p["r_min"], p["r_max"])
    if kind == "interval":
        return interval_partition(p["a"], p["b"], m)
    if kind == "dyadic":
        k = int(round(math.log2(max(m, 1)) / 2))
        return dyadic_partition(julia_bbox(ctx.fmap), k)
    return None


MEASURE_PARAMS = {
    "z": Param("complex", help="base point of the preimage tree"),
    "p": Param("float", 1.0, "conformal exponent"),
    "depth": Param("int", 12, "preimage depth", positive=True),
    "min_level": Param("int", 0, "shallowest level kept in the measure"),
    "partition": Param("str", "none", "binning of the measure", choices=("none", "arc", "interval", "dyadic")),
    "cells": Param("int", 32, "number of partition cells", positive=True),
    "a": Param("float", -2.0, "left end of the interval partition"),
    "b": Param("float", 2.0, "right end of the interval partition"),
    "r_min": Param("float", 0.5, "inner radius of the arc partition", positive=True),
    "r_max": Param("float", 2.0, "outer radius of the arc partition", positive=True),
}


# ---------------------------------------------------------------------------
# orbit analysis


@command("sigma", {
    "n": Param("int", 20, "horizon", positive=True),
    "alpha": Param("float", None, "exponent for the summability verdict"),
}, help="minimal derivative growth along critical orbits")
def cmd_sigma(ctx):
    from .orbits import chain_rule_consistent, summability_report
    p = ctx.params
    s = _sigma(ctx, p["n"])
    vals = s.values
    ctx.csv("sigma.csv", ["n", "sigma", "log_sigma", "contributor"],
            [(i + 1, vals[i], s.log_values[i], int(s.contributor[i])) for i in range(s.N)])
    out = {"N": s.N, "mu_max": s.mu_max, "vacuous": s.vacuous,
           "critical_points": [_cplx(c) for c in s.locations],
           "chain_rule_ok": chain_rule_consistent(ctx.fmap, s) if ctx.fmap is not None else None}
    if p["alpha"] is not None:
        r = summability_report(s, p["alpha"])
        out.update({"alpha": p["alpha"], "verdict": r.verdict, "total_estimate": r.total_estimate})
    ctx.json("sigma.json", out)
    from .plotting import line_plot
    ctx.figure("sigma.png", line_plot, np.arange(1, s.N + 1), {"log sigma_n": s.log_values},
               xlabel="n", ylabel="log sigma_n", title="critical derivative growth")
    ctx.summary = {"verdict": out.get("verdict")}


@command("summability", {
    "n": Param("int", 20, "horizon", positive=True),
    "alpha": Param("float", help="summability exponent", positive=True),
    "polynomial_weight": Param("bool", False, "weight the terms by n"),
    "deltas": Param("floats", [], "exponents delta for the thresholds delta/(delta+mu_max)"),
}, help="partial sums of sigma_n^-alpha with a verdict")
def cmd_summability(ctx):
    from .orbits import summability_report
    p = ctx.params
    s = _sigma(ctx, p["n"])
    r = summability_report(s, p["alpha"], p["polynomial_weight"], p["deltas"])
    ctx.csv("summability.csv", ["n", "term", "partial_sum"],
            [(i + 1, r.terms[i], r.partial_sums[i]) for i in range(len(r.terms))])
    tail = r.total_estimate - float(r.partial_sums[-1]) if len(r.partial_sums) else 0.0
    ctx.json("summability.json", {"verdict": r.verdict, "alpha": r.alpha,
                                  "polynomial_weight": r.polynomial_weight,
                                  "total_estimate": r.total_estimate, "tail_estimate": tail,
                                  "certificate": r.certificate, "thresholds": r.thresholds})
    ctx.summary = {"verdict": r.verdict, "total_estimate": r.total_estimate}


@command("techseq", {
    "n": Param("int", 20, "horizon", positive=True),
    "alpha": Param("float", help="summability exponent", positive=True),
    "deg": Param("int", None, "degree (defaults to the map degree)"),
    "mu_max": Param("int", None, "maximal critical multiplicity"),
}, help="technical sequences alpha_n, gamma_n, delta_n")
def cmd_techseq(ctx):
    from .orbits import technical_sequences
    p = ctx.params
    s = _sigma(ctx, p["n"])
    deg = p["deg"] or (ctx.fmap.degree if ctx.fmap is not None else None)
    if deg is None:
        raise ConfigError("deg is required when no map is given")
    t = technical_sequences(s, p["alpha"], deg, p["mu_max"])
    ctx.csv("techseq.csv", ["n", "log_sigma", "alpha_n", "gamma_n", "delta_n"],
            [(i + 1, s.log_values[i], t.alpha_n[i], t.gamma_n[i], t.delta_n[i]) for i in range(s.N)])
    ctx.json("techseq.json", {"alpha": t.alpha, "beta": t.beta, "deg": t.deg, "mu_max": t.mu_max,
                              "constants": t.constants, "monotone_from": t.monotone_from,
                              "checks": t.checks})
    ctx.summary = {"checks": t.checks}


@command("family", {
    "alpha": Param("float", help="summability exponent", positive=True),
    "eps": Param("float", help="neighbourhood size of the limit Julia set", positive=True),
    "M": Param("float", help="bound on the sums", positive=True),
    "horizon": Param("int", 200, "orbit horizon", positive=True),
    "raster_level": Param("int", 9, "raster level of the limit Julia set", positive=True),
    "family": Param("str", "", "JSON file with a list of member map specs"),
    "c_values": Param("complexes", [], "parameters c of unicritical members (same degree as the map)"),
}, help="uniform summability over a finite family converging to the map")
def cmd_family(ctx):
    from .orbits import s_alpha_uniform_check
    p = ctx.params
    members = []
    if p["family"]:
        with open(p["family"]) as fh:
            members = [MapSpec.from_json(m) for m in json.load(fh)]
    if p["c_values"]:
        if ctx.fmap.kind != "unicritical":
            raise ConfigError("c_values needs a unicritical limit map")
        members += [MapSpec.unicritical(ctx.fmap.d, c) for c in p["c_values"]]
    if not members:
        raise ConfigError("the family is empty")
    r = s_alpha_uniform_check(members, ctx.fmap, p["alpha"], p["eps"], p["M"], p["horizon"],
                              raster_level=p["raster_level"])
    rows = []
    for i, (m, mem) in enumerate(zip(members, r.members)):
        for row in mem:
            rows.append((i, m.label(), *_cplx(row["critical_point"]), row["E"], row["sum"],
                         row["terms"], row["escaped"]))
    ctx.csv("family.csv", ["member", "label", "c_re", "c_im", "E", "sum", "terms", "escaped"], rows)
    ctx.json("family.json", {"verdict": r.verdict, "alpha": r.alpha, "epsilon": r.epsilon, "M": r.M,
                             "correspondence": r.correspondence, "notes": r.notes})
    ctx.summary = {"verdict": r.verdict}


# ---------------------------------------------------------------------------
# backward dynamics


@command("preimages", {
    "z": Param("complex", help="base point"),
    "depth": Param("int", 8, "depth of the preimage tree", positive=True),
    "ball_radius": Param("float", None, "radius of a ball at z whose pullbacks are measured"),
    "pullback_p": Param("floats", [0.5, 1.0, 1.5], "exponents of the pullback diameter sums"),
}, help="preimage tree, and pullback diameter sums of a ball")
def cmd_preimages(ctx):
    from .backward import ball_pullback_components, pullback_contraction, pullback_diameter_sum
    p = ctx.params
    tree = ctx.tree(p["z"], p["depth"])
    rows = []
    for k in range(tree.n + 1):
        for i, (w, ld) in enumerate(zip(tree.points[k], tree.logder[k])):
            rows.append((k, i, w.real, w.imag, ld))
    ctx.csv("preimages.csv", ["level", "index", "re", "im", "log_derivative"], rows)
    out = {"z": _cplx(p["z"]), "depth": tree.n, "count": len(rows)}
    if p["ball_radius"] is not None:
        if not p["ball_radius"] > 0:
            raise ConfigError("ball_radius must be positive")
        levels = ball_pullback_components(ctx.fmap, p["z"], p["ball_radius"], p["depth"])
        sums = {q: pullback_diameter_sum(ctx.fmap, p["z"], p["ball_radius"], q, p["depth"], levels)
                for q in p["pullback_p"]}
        con = pullback_contraction(ctx.fmap, p["z"], p["ball_radius"], p["depth"], levels)
        header = ["n", "envelope", "min_derivative"] + [f"sum_p{q:g}" for q in p["pullback_p"]]
        ctx.csv("pullback.csv", header,
                [(n, con.envelope[n], con.min_derivative[n], *[sums[q].level_sums[n] for q in sums])
                 for n in range(len(con.envelope))])
        out["pullback"] = {"radius": p["ball_radius"],
                           "ratios": {f"{q:g}": sums[q].ratio for q in sums},
                           "envelope_final": float(con.envelope[-1]),
                           "contraction_rate": con.fitted_rate}
        from .plotting import line_plot
        ctx.figure("pullback.png", line_plot, np.arange(len(con.envelope)),
                   {f"p = {q:g}": sums[q].level_sums for q in sums} | {"envelope": con.envelope},
                   xlabel="n", title="pullback diameters", logy=True)
    ctx.json("preimages.json", out)
    ctx.summary = out.get("pullback", {})


@command("blocks", {
    "z": Param("complex", help="base point"),
    "depth": Param("int", 12, "branch length", positive=True),
    "alpha": Param("float", 1 / 3, "exponent of the technical sequences", positive=True),
    "Delta": Param("float", 0.0, "univalence radius of the restricted class"),
    "branches": Param("int", 64, "number of randomly sampled branches"),
    "indices": Param("ints", [], "explicit branch indices at the deepest level"),
    "stopping": Param("bool", False, "also run the stopping-rule decomposition"),
    "koebe_samples": Param("int", 0, "random pullbacks for the distortion certification"),
    "koebe_depth": Param("int", 8, "depth of the distortion pullbacks", positive=True),
    "backward_Delta": Param("float", None, "Delta of the backward summability classes"),
}, help="block decomposition of backward branches")
def cmd_blocks(ctx):
    from .backward import (CriticalContext, koebe_check, orbit_from_points, shrinking_neighborhoods,
                           univalent_pullback_radius)
    from .blocks import (backward_summability_check, decompose_blocks, decompose_with_stopping,
                         grammar_ok, scale_constants, stopping_code_ok)
    from .orbits import sigma_sequence, technical_sequences
    p = ctx.params
    f = ctx.fmap
    rng = np.random.default_rng(ctx.seed)
    tech = technical_sequences(sigma_sequence(f, N=max(40, 2 * p["depth"])), p["alpha"], f.degree)
    sc = scale_constants(f, tech)
    tree = ctx.tree(p["z"], p["depth"])
    crit_ctx = CriticalContext.build(f, p["depth"])
    m = len(tree.points[-1])
    idx = list(p["indices"])
    if p["branches"] > 0:
        extra = rng.choice(m, size=min(p["branches"], m), replace=False)
        idx += sorted(int(i) for i in extra if int(i) not in idx)
    rows, xrows, stop_rows = [], [], []
    for i in idx:
        if not 0 <= i < m:
            raise ConfigError(f"branch index {i} out of range 0..{m - 1}")
        o = tree.orbit(tree.n, i)
        bc = decompose_blocks(f, o, p["Delta"], tech, sc, crit_ctx)
        rows.append((i, bc.code, " ".join(map(str, bc.lengths)), grammar_ok(bc.code), bc.certified,
                     "; ".join(bc.notes)))
        for b in bc.blocks:
            if b.kind != 3 or not b.radius > 0:
                continue
            sub = orbit_from_points(f, o.points[b.start:])
            hi = shrinking_neighborhoods(f, sub.points[0], b.radius * 1.0005, sub, tech.delta_n,
                                         ctx=crit_ctx)
            lo = shrinking_neighborhoods(f, sub.points[0], b.radius * 0.99, sub, tech.delta_n,
                                         ctx=crit_ctx)
            ok = hi.first_hit == b.length and (lo.first_hit is None or lo.first_hit > b.length)
            xrows.append((i, b.start, b.length, b.radius, hi.first_hit, lo.first_hit, ok))
        if p["stopping"]:
            sbc = decompose_with_stopping(f, o, tech, sc, crit_ctx)
            stop_rows.append((i, sbc.code, stopping_code_ok(sbc.code), grammar_ok(sbc.code)))
    ctx.csv("blocks.csv", ["branch", "code", "lengths", "grammar_ok", "certified", "notes"], rows)
    ctx.csv("crosscheck.csv", ["branch", "start", "length", "radius", "hit_above", "hit_below", "ok"],
            [tuple("" if v is None else v for v in r) for r in xrows])
    out = {"branches": len(rows), "grammar_ok": all(r[3] for r in rows),
           "three_blocks": len(xrows), "crosscheck_ok": all(r[-1] for r in xrows),
           "crosscheck_validated": int(sum(r[-1] for r in xrows)),
           "scales": {"R": sc.R, "R_prime": sc.R_prime, "M": sc.M, "L": sc.L, "L_second": sc.L_second,
                      "K": sc.K, "certified": sc.certified, "notes": sc.notes}}
    if p["stopping"]:
        ctx.csv("stopping.csv", ["branch", "code", "stopping_form_ok", "grammar_ok"], stop_rows)
        out["stopping_all_2"] = all(r[1] == "2" for r in stop_rows)
        out["stopping_form_ok"] = all(r[2] for r in stop_rows)
    if p["koebe_samples"] > 0:
        kt = ctx.tree(p["z"], p["koebe_depth"])
        kctx = CriticalContext.build(f, p["koebe_depth"])
        krows = []
        for j in rng.integers(len(kt.points[-1]), size=p["koebe_samples"]):
            o = kt.orbit(kt.n, int(j))
            r = univalent_pullback_radius(f, o, cap=2.0, ctx=kctx)
            good, ratio = koebe_check(f, o, r) if r > 0 else (False, float("nan"))
            krows.append((int(j), r, good))
        ctx.csv("koebe.csv", ["branch", "radius", "passed"], krows)
        out["koebe_passed"] = int(sum(r[2] for r in krows))
        out["koebe_total"] = len(krows)
    if p["backward_Delta"] is not None:
        bs = backward_summability_check(f, p["z"], p["backward_Delta"], tech.beta, tech, sc, p["depth"],
                                        tree)
        out["backward_summability"] = {"counts": bs.counts, "cumulative": bs.cumulative,
                                       "targets": bs.targets}
    ctx.json("blocks.json", out)
    ctx.summary = {k: out[k] for k in ("grammar_ok", "crosscheck_ok") if k in out}


# ---------------------------------------------------------------------------
# Poincaré series


@command("poincare", {
    "z": Param("complex", help="base point"),
    "delta": Param("float", help="exponent"),
    "depth": Param("int", 14, "preimage depth", positive=True),
    "Delta": Param("float", None, "restrict to branches with univalent Delta-pullbacks"),
}, help="partial sums of the Poincaré series and their growth law")
def cmd_poincare(ctx):
    from .poincare import divergence_type_probe, poincare_partial, restricted_poincare_partial
    p = ctx.params
    tree = ctx.tree(p["z"], p["depth"])
    if p["Delta"] is not None:
        part = restricted_poincare_partial(ctx.fmap, p["z"], p["delta"], p["Delta"], p["depth"], tree)
    else:
        part = poincare_partial(ctx.fmap, p["z"], p["delta"], p["depth"], tree)
    probe = divergence_type_probe(ctx.fmap, p["z"], p["delta"], p["depth"], tree=tree)
    ctx.csv("poincare.csv", ["n", "level_sum", "cumulative"],
            [(n, part.level_sums[n], part.cumulative[n]) for n in range(len(part.level_sums))])
    out = {"z": _cplx(p["z"]), "delta": p["delta"], "admissible": part.admissible,
           "restricted_to": part.restricted_to, "total": part.total,
           "probe": {"growth_law": probe.growth_law, "ratio": probe.ratio,
                     "growth_exponent": probe.growth_exponent,
                     "divergent_consistent": probe.divergent_consistent}}
    ctx.json("poincare.json", out)
    from .plotting import line_plot
    ctx.figure("poincare.png", line_plot, np.arange(len(part.level_sums)),
               {"S_n": part.level_sums, "partial sum": part.cumulative}, xlabel="n", logy=True,
               title=f"Poincaré series at delta = {p['delta']:g}")
    ctx.summary = {"growth_law": probe.growth_law, "divergent_consistent": probe.divergent_consistent}


@command("exponent", {
    "z": Param("complex", help="base point"),
    "depth": Param("int", 14, "preimage depth", positive=True),
    "tol": Param("float", 0.01, "bracket width", positive=True),
    "lo": Param("float", 0.0, "lower end of the search bracket"),
    "hi": Param("float", 3.0, "upper end of the search bracket"),
}, help="convergence exponent of the Poincaré series")
def cmd_exponent(ctx):
    from .poincare import estimate_poincare_exponent
    p = ctx.params
    tree = ctx.tree(p["z"], p["depth"])
    e = estimate_poincare_exponent(ctx.fmap, p["z"], p["depth"], p["tol"], p["lo"], p["hi"], tree)
    ctx.csv("exponent.csv", ["delta", "n", "level_sum"],
            [(d, n, e.level_sums[i, n]) for i, d in enumerate(e.deltas) for n in range(e.depth + 1)])
    ctx.json("exponent.json", {"z": _cplx(p["z"]), "depth": e.depth, "delta_hat": e.delta_hat,
                               "bracket": list(e.bracket), "verdict": e.verdict,
                               "diagnostics": e.diagnostics})
    ctx.summary = {"delta_hat": e.delta_hat, "verdict": e.verdict}


# ---------------------------------------------------------------------------
# measures


@command("measure", dict(MEASURE_PARAMS), help="atomic approximant of a conformal measure")
def cmd_measure(ctx):
    nu = _measure(ctx)
    ctx.json("measure.json", nu.to_json())
    part = _partition(ctx)
    out = {"atoms": len(nu.points), "p": nu.p, "depth": nu.depth, "min_level": nu.min_level}
    if part is not None:
        from .measures import bin_masses
        m = bin_masses(nu, part)
        ref = 1.0 / part.count
        err = np.abs(m / ref - 1)
        ctx.csv("bins.csv", ["cell", "mass", "reference", "relative_error"],
                [(i, m[i], ref, err[i]) for i in range(part.count)])
        out.update({"partition": ctx.params["partition"], "cells": part.count,
                    "max_relative_error": float(err.max()), "unbinned_mass": float(1 - m.sum())})
        if part.labels:
            from .plotting import histogram_plot
            edges = [lab[0] for lab in part.labels] + [part.labels[-1][1]]
            ctx.figure("bins.png", histogram_plot, edges, m * part.count, np.ones(part.count),
                       title="binned measure / uniform")
    ctx.json("measure_summary.json", out)
    ctx.summary = {k: out[k] for k in ("max_relative_error",) if k in out}


@command("conformality", MEASURE_PARAMS | {
    "partition": Param("str", "arc", "cells B of the residual", choices=("arc", "interval", "dyadic")),
    "check_p": Param("float", None, "exponent of the Jacobian (defaults to p)"),
}, help="conformality residual of an atomic measure")
def cmd_conformality(ctx):
    from .measures import conformality_residual
    p = ctx.params
    nu = _measure(ctx)
    q = p["p"] if p["check_p"] is None else p["check_p"]
    r = conformality_residual(nu, ctx.fmap, q, _partition(ctx))
    ctx.csv("conformality.csv", ["cell", "residual", "image_mass", "jacobian_mass"],
            [(i, r.residuals[i], r.image_mass[i], r.jacobian_mass[i]) for i in range(len(r.residuals))])
    ctx.json("conformality.json", {"p": q, "max_residual": r.max_residual,
                                   "mean_residual": r.mean_residual, "skipped": r.skipped})
    ctx.summary = {"max_residual": r.max_residual}


@command("gauge", MEASURE_PARAMS | {
    "q": Param("float", 1.0, "gauge exponent"),
    "eps": Param("float", 0.02, "exponent slack", positive=True),
    "samples": Param("int", 16, "sampled atoms", positive=True),
}, help="ball masses nu(B(x, r)) / r^q at sampled atoms")
def cmd_gauge(ctx):
    from .measures import gauge_check
    p = ctx.params
    nu = _measure(ctx)
    g = gauge_check(nu, p["q"], p["eps"], p["samples"], seed=ctx.seed)
    rows = []
    for i, x in enumerate(g.samples):
        for j, r in enumerate(g.radii):
            rows.append((i, x.real, x.imag, r, g.ratio_q[i, j], g.ratio_q_eps[i, j]))
    ctx.csv("gauge.csv", ["sample", "re", "im", "radius", "ratio_q", "ratio_q_eps"], rows)
    ctx.json("gauge.json", {"q": g.q, "eps": g.eps, "passed": g.passed, "skipped": g.skipped,
                            "ratio_q_range": [float(np.nanmin(g.ratio_q)), float(np.nanmax(g.ratio_q))]
                            if np.isfinite(g.ratio_q).any() else []})
    ctx.summary = {"passed": g.passed}


@command("integrability", MEASURE_PARAMS | {
    "eta": Param("float", 0.5, "singularity exponent"),
    "horizon": Param("int", 8, "critical orbit length", positive=True),
}, help="integrals of |z - F^i(c)|^-eta against an atomic measure")
def cmd_integrability(ctx):
    from .maps import forward_orbit
    from .measures import integrability_check
    p = ctx.params
    nu = _measure(ctx)
    rows, sups = [], []
    for c in critical_points(ctx.fmap):
        if c.at_infinity:
            continue
        orb = np.asarray(forward_orbit(ctx.fmap, c.location, p["horizon"]), dtype=complex)
        r = integrability_check(nu, orb, p["eta"])
        sups.append(r.sup)
        for i, (w, v) in enumerate(zip(orb, r.integrals)):
            rows.append((*_cplx(c.location), i, w.real, w.imag, v))
    ctx.csv("integrability.csv", ["c_re", "c_im", "i", "re", "im", "integral"], rows)
    sup = float(max(sups)) if sups else 0.0
    ctx.json("integrability.json", {"eta": p["eta"], "sup": sup, "finite": bool(np.isfinite(sup))})
    ctx.summary = {"sup": sup}


def _grid(p):
    if p["grid"] == "circle":
        return np.exp(2j * np.pi * (np.arange(p["m"]) + 0.3) / p["m"])
    return np.linspace(p["a"], p["b"], p["m"]) + 0j


def _oracle(name, pts):
    if name == "chebyshev":
        x = pts.real
        return 4 / (np.pi * np.sqrt(4 - x ** 2))
    if name == "uniform":
        return np.ones(len(pts))
    return None


@command("transfer", {
    "delta": Param("float", 1.0, "weight exponent"),
    "points": Param("complexes", help="evaluation points"),
    "N": Param("int", 10, "power of the operator"),
}, help="iterated transfer operator applied to 1")
def cmd_transfer(ctx):
    from .measures import transfer_apply
    p = ctx.params
    v = transfer_apply(ctx.fmap, p["delta"], p["points"], p["N"])
    ctx.csv("transfer.csv", ["re", "im", "value"], [(z.real, z.imag, x) for z, x in zip(p["points"], v)])
    ctx.json("transfer.json", {"delta": p["delta"], "N": p["N"], "values": v})


@command("density", {
    "delta": Param("float", 1.0, "weight exponent"),
    "N": Param("int", 20, "number of Cesàro terms", positive=True),
    "grid": Param("str", "real", "evaluation grid", choices=("real", "circle")),
    "a": Param("float", -1.8, "left end of the real grid"),
    "b": Param("float", 1.8, "right end of the real grid"),
    "m": Param("int", 37, "grid points", positive=True),
    "oracle": Param("str", "none", "exact density to compare with", choices=("none", "chebyshev", "uniform")),
    "rtol": Param("float", 0.05, "relative tolerance against the oracle", positive=True),
    "alpha": Param("float", None, "exponent of the technical sequences for the envelope"),
}, help="Cesàro averages of the transfer operator")
def cmd_density(ctx):
    from .measures import invariant_density_estimate
    p = ctx.params
    pts = _grid(p)
    tech = None
    if p["alpha"] is not None:
        from .orbits import sigma_sequence, technical_sequences
        tech = technical_sequences(sigma_sequence(ctx.fmap, N=40), p["alpha"], ctx.fmap.degree)
    d = invariant_density_estimate(ctx.fmap, p["delta"], pts, p["N"], tech=tech)
    ref = _oracle(p["oracle"], pts)
    err = np.abs(d.values / ref - 1) if ref is not None else np.full(len(pts), np.nan)
    env = d.envelope if d.envelope is not None else np.full(len(pts), np.nan)
    ctx.csv("density.csv", ["re", "im", "density", "oracle", "relative_error", "last_change", "envelope"],
            [(z.real, z.imag, d.values[i], ref[i] if ref is not None else None, err[i],
              d.trace_last_delta[i], env[i]) for i, z in enumerate(pts)])
    out = {"delta": p["delta"], "N": p["N"], "minimum": d.minimum, "oracle": p["oracle"]}
    if ref is not None:
        out.update({"max_relative_error": float(err.max()), "passed": bool(err.max() < p["rtol"])})
    ctx.json("density.json", out)
    from .plotting import line_plot
    x = pts.real if p["grid"] == "real" else np.angle(pts) / (2 * np.pi) % 1
    order = np.argsort(x)
    series = {"Cesàro average": d.values[order]}
    if ref is not None:
        series["oracle"] = ref[order]
    ctx.figure("density.png", line_plot, x[order], series, xlabel="x", title="invariant density")
    ctx.summary = {k: out[k] for k in ("max_relative_error", "minimum") if k in out}


@command("birkhoff", {
    "x0": Param("complex", help="starting point"),
    "n": Param("int", 10 ** 6, "orbit length", positive=True),
    "bins": Param("int", 256, "bins of the entropy estimate", positive=True),
    "coordinate": Param("str", "real", "coordinate of the histogram", choices=("real", "angle")),
    "lo": Param("float", None, "lower end of the histogram range"),
    "hi": Param("float", None, "upper end of the histogram range"),
    "oracle": Param("str", "none", "reference law for the deciles", choices=("none", "arcsine", "uniform")),
}, help="orbit histogram, entropy and Lyapunov exponent")
def cmd_birkhoff(ctx):
    from .measures import autocorrelation, birkhoff_measure, entropy_lyapunov, orbit
    p = ctx.params
    project = (lambda z: z / abs(z)) if p["coordinate"] == "angle" else None
    o, escaped = orbit(ctx.fmap, p["x0"], p["n"], project)
    if escaped:
        raise ArithmeticError("the orbit escaped")
    st = entropy_lyapunov(ctx.fmap, o, p["bins"], p["coordinate"], p["lo"], p["hi"])
    if p["oracle"] == "arcsine":
        lo, hi = (p["lo"], p["hi"]) if p["lo"] is not None else (-2.0, 2.0)
        u = np.linspace(0, 1, 11)
        edges = lo + (hi - lo) * (np.sin(np.pi * (u - 0.5)) + 1) / 2
    elif p["coordinate"] == "angle":
        edges = np.linspace(0, 1, 11)
    else:
        x = o.real
        edges = np.linspace(x.min() if p["lo"] is None else p["lo"], x.max() if p["hi"] is None else p["hi"], 11)
    b = birkhoff_measure(ctx.fmap, p["x0"], p["n"], edges, p["coordinate"], orbit_values=o)
    err = np.abs(b.masses * 10 - 1)
    ctx.csv("birkhoff.csv", ["lo", "hi", "mass", "relative_error"],
            [(edges[i], edges[i + 1], b.masses[i], err[i]) for i in range(10)])
    vals = o.real if p["coordinate"] == "real" else np.angle(o)
    ac = autocorrelation(vals, 20)
    out = {"n": b.n, "entropy": st.entropy, "lyapunov": st.lyapunov, "log2": math.log(2),
           "autocorrelation": ac.tolist()}
    if p["oracle"] != "none":
        out["max_decile_error"] = float(err.max())
    ctx.json("birkhoff.json", out)
    from .plotting import histogram_plot
    ctx.figure("birkhoff.png", histogram_plot, edges, b.masses / np.diff(edges), None,
               title="orbit histogram (deciles)")
    ctx.summary = {"entropy": st.entropy, "lyapunov": st.lyapunov}


# ---------------------------------------------------------------------------
# dimensions


DIM_PARAMS = {
    "level": Param("int", 11, "raster level", positive=True),
    "max_iter": Param("int", 500, "escape-time iterations", positive=True),
    "pad": Param("float", 0.05, "relative padding of the bounding box"),
    "tol": Param("float", 1e-3, "bisection tolerance", positive=True),
}


def _raster(ctx):
    from .raster import julia_membership_grid
    p = ctx.params
    return julia_membership_grid(ctx.fmap, julia_bbox(ctx.fmap, p["pad"]), p["level"], max_iter=p["max_iter"])


@command("dimension", DIM_PARAMS | {
    "poincare_z": Param("complex", 3.0, "base point of the Poincaré series"),
    "poincare_depth": Param("int", 14, "preimage depth of the Poincaré series", positive=True),
    "gap_tol": Param("float", 0.1, "allowed pairwise gap", positive=True),
}, help="Poincaré, Whitney and box-counting dimension estimates")
def cmd_dimension(ctx):
    from .dimensions import dimension_comparison
    p = ctx.params
    cfg = {"level": p["level"], "max_iter": p["max_iter"], "poincare_z": _cplx(p["poincare_z"]),
           "poincare_depth": p["poincare_depth"], "tol": p["tol"], "gap_tol": p["gap_tol"], "pad": p["pad"]}
    rep = dimension_comparison(ctx.fmap, cfg)
    d = rep.details
    ctx.csv("box.csv", ["level", "count"], list(zip(d["box_levels"], d["box_counts"])))
    ctx.csv("whitney.csv", ["level", "count"], list(zip(d["whitney_levels"], d["whitney_counts"])))
    ctx.pgm("raster.pgm", rep.raster.bits)
    out = {"estimates": rep.estimates(), "box_bracket": list(rep.box_bracket),
           "whitney_bracket": list(rep.whitney_bracket), "poincare_bracket": list(rep.poincare_bracket),
           "gaps": rep.gaps, "passed": rep.passed, "whitney_below_box_upper": rep.fact_upper_ok,
           "notes": rep.notes, "config": cfg}
    ctx.json("dimension.json", out)
    from .plotting import line_plot, raster_plot
    ctx.figure("raster.png", raster_plot, rep.raster.bits, rep.raster.bbox, title=ctx.fmap.label())
    ctx.figure("box.png", line_plot, d["box_levels"], {"log2 N": np.log2(d["box_counts"])},
               xlabel="level", title="box counts")
    ctx.summary = {"estimates": rep.estimates(), "passed": rep.passed}


@command("whitney", dict(DIM_PARAMS), help="Whitney cover of the complement and its exponent")
def cmd_whitney(ctx):
    from .dimensions import whitney_exponent
    r = whitney_exponent(_raster(ctx), tol=ctx.params["tol"])
    ctx.csv("whitney.csv", ["level", "count"] + [f"sum_delta{d:g}" for d in r.deltas],
            [(int(lv), int(c), *r.level_sums[:, i]) for i, (lv, c) in enumerate(zip(r.levels, r.counts))])
    ctx.json("whitney.json", {"delta": r.delta, "bracket": list(r.bracket), "verdict": r.verdict,
                              "ratio_ok": r.cover.ratio_ok(), "squares": int(len(r.cover.levels))})
    ctx.summary = {"delta": r.delta}


# ---------------------------------------------------------------------------
# interval maps


@command("interval", {
    "alpha": Param("float", help="summability exponent", positive=True),
    "n_max": Param("int", 20, "horizon of the real sigma sequence", positive=True),
    "N": Param("int", 18, "Cesàro terms", positive=True),
    "oracle": Param("str", "none", "exact density", choices=("none", "arcsine")),
    "a": Param("float", 0.05, "left end of the density grid"),
    "b": Param("float", 0.95, "right end of the density grid"),
    "m": Param("int", 91, "density grid points", positive=True),
}, help="negative Schwarzian, summability and the acim of an interval map")
def cmd_interval(ctx):
    from .real import IntervalMap, arcsine_density, interval_acim_report, real_transfer_once
    p = ctx.params
    if ctx.fmap.kind != "real-interval":
        raise ConfigError("the interval command needs a real-interval map")
    f = IntervalMap.from_mapspec(ctx.fmap)
    grid = np.linspace(p["a"], p["b"], p["m"])
    oracle = arcsine_density if p["oracle"] == "arcsine" else None
    r = interval_acim_report(f, p["alpha"], p["n_max"], grid, p["N"], oracle)
    out = {"verdict": r.verdict, "threshold": r.threshold, "alpha_below_threshold": r.alpha_below_threshold,
           "schwarzian": r.schwarzian, "periodic": r.periodic, "notes": r.notes,
           "summability_verdict": getattr(r.summability, "verdict", None)}
    if r.density is not None:
        dens = r.density
        ref = oracle(dens.grid) if oracle else np.full(len(dens.grid), np.nan)
        ctx.csv("density.csv", ["x", "density", "oracle"],
                [(x, dens.values[i], ref[i]) for i, x in enumerate(dens.grid)])
        out["oracle_error"] = dens.oracle_error
    if oracle is not None:
        once = real_transfer_once(f, oracle, grid)
        out["transfer_once_residual"] = float(np.max(np.abs(once - oracle(grid))))
    ctx.json("interval.json", out)
    ctx.summary = {"verdict": r.verdict}


# ---------------------------------------------------------------------------
# parameter rays


RAY_PARAMS = {
    "d": Param("int", 2, "degree of z^d + c", positive=True),
    "theta": Param("str", help="external angle, e.g. 1/2"),
    "G0": Param("float", 4.0, "starting potential", positive=True),
    "G_min": Param("float", 1e-6, "final potential", positive=True),
    "newton_tol": Param("float", 1e-12, "Newton step tolerance", positive=True),
    "tail": Param("int", 4, "ray points used at the landing end", positive=True),
}


def _ray(ctx):
    from .rays import default_schedule, trace_external_ray
    p = ctx.params
    return trace_external_ray(p["d"], p["theta"], default_schedule(p["G0"], p["G_min"]), p["newton_tol"])


@command("ray", RAY_PARAMS | {
    "growth_n": Param("int", 20, "iterates of the derivative fits", positive=True),
    "target": Param("complex", None, "expected landing parameter"),
}, needs_map=False, help="trace a parameter ray and fit derivative growth along it")
def cmd_ray(ctx):
    from .rays import ce_along_ray
    p = ctx.params
    ray = _ray(ctx)
    ce = ce_along_ray(p["d"], p["theta"], ray, p["growth_n"], p["tail"])
    ctx.csv("ray.csv", ["G", "re", "im", "residual"], [(q.G, q.c.real, q.c.imag, q.residual) for q in ray])
    ctx.csv("growth.csv", ["G", "K", "Lambda", "escaped_at"],
            [(g.G, g.K, g.Lambda, g.escaped_at) for g in ce.fits])
    end = ray[-1].c
    out = {"theta": p["theta"], "d": p["d"], "points": len(ray), "landing": _cplx(end),
           "final_G": ray[-1].G, "tail_min_lambda": ce.tail_min_lambda}
    if p["target"] is not None:
        out["distance_to_target"] = abs(end - p["target"])
    ctx.json("ray.json", out)
    from .plotting import plane_plot
    ctx.figure("ray.png", plane_plot, [q.c for q in ray], title=f"ray {p['theta']}", path_line=True)
    ctx.summary = {k: out[k] for k in ("landing", "tail_min_lambda", "distance_to_target") if k in out}


@command("raydim", RAY_PARAMS | {
    "level": Param("int", 10, "raster level", positive=True),
    "poincare_depth": Param("int", 14, "preimage depth", positive=True),
    "landing": Param("complex", None, "landing parameter (defaults to the last ray point)"),
}, needs_map=False, help="dimension estimates along the landing end of a ray")
def cmd_raydim(ctx):
    from .rays import dimension_along_ray
    p = ctx.params
    ray = _ray(ctx)
    rep = dimension_along_ray(p["d"], p["theta"], ray, {"level": p["level"],
                                                       "poincare_depth": p["poincare_depth"]},
                              p["tail"], p["landing"])
    ctx.csv("raydim.csv", ["G", "re", "im", "poincare", "whitney", "box", "proxy"],
            [(g, c.real, c.imag, e["poincare"], e["whitney"], e["box"], x)
             for g, c, e, x in zip(rep.G, rep.c, rep.estimates, rep.proxy)])
    ctx.json("raydim.json", {"extrapolated": rep.extrapolated, "landing": _cplx(rep.landing_c),
                             "landing_estimate": rep.landing_estimate, "landing_gap": rep.landing_gap,
                             "cauchy_ok": rep.cauchy_ok, "brackets": rep.brackets})
    ctx.summary = {"extrapolated": rep.extrapolated, "landing_gap": rep.landing_gap}


# ---------------------------------------------------------------------------
# configuration


COMMON = {"command", "map", "out", "cache", "seed", "config", "sigma_values"}


def _load_sigma_values(v, inputs):
    if v is None or v == "" or v == []:
        return None
    if isinstance(v, list):
        return [float(x) for x in v]
    s = str(v)
    if os.path.exists(s):
        inputs.append(os.path.abspath(s))
        with open(s) as fh:
            text = fh.read()
        try:
            data = json.loads(text)
            return [float(x) for x in data]
        except json.JSONDecodeError:
            lines = [ln.split(",")[-1] for ln in text.splitlines() if ln.strip()]
            return [float(x) for x in lines if _is_float(x)]
    return [float(x) for x in _split(s)]


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def resolve(config):
    """Validate a raw configuration dict and return (command, params, common, input files)."""
    if not isinstance(config, dict) or not config:
        raise ConfigError("configuration is empty")
    name = config.get("command")
    if name not in COMMANDS:
        raise ConfigError(f"unknown or missing command: {name!r}")
    cmd = COMMANDS[name]
    inputs = []
    unknown = set(config) - COMMON - set(cmd.params)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    params = {}
    for key, spec in cmd.params.items():
        raw = config.get(key, spec.default)
        if raw is REQUIRED:
            raise ConfigError(f"{name}: parameter '{key}' is required")
        if raw is None:
            params[key] = None
            continue
        try:
            val = CONVERTERS[spec.kind](raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: bad value for '{key}': {exc}") from None
        if spec.positive and not (val > 0):
            raise ConfigError(f"{name}: parameter '{key}' must be positive")
        if spec.choices and val not in spec.choices:
            raise ConfigError(f"{name}: '{key}' must be one of {list(spec.choices)}")
        params[key] = val
    try:
        sv = _load_sigma_values(config.get("sigma_values"), inputs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad sigma_values: {exc}") from None
    params["sigma_values"] = sv
    mp = config.get("map")
    fmap = None
    if cmd.needs_map or mp is not None:
        if mp is None and not (sv and name in ("sigma", "summability", "techseq")):
            raise ConfigError(f"{name}: a map is required")
        if isinstance(mp, dict):
            fmap = _parse_map(mp)
        elif mp is not None:
            path = os.path.abspath(str(mp))
            if not os.path.exists(path):
                raise ConfigError(f"map file not found: {mp}")
            try:
                with open(path) as fh:
                    fmap = _parse_map(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"map file is not JSON: {exc}") from None
            inputs.append(path)
    if name == "family" and params.get("family"):
        path = os.path.abspath(params["family"])
        if not os.path.exists(path):
            raise ConfigError(f"family file not found: {params['family']}")
        params["family"] = path
        inputs.append(path)
    try:
        seed = int(config.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("seed must be an integer") from None
    common = {"out": config.get("out") or "out", "cache": config.get("cache"), "seed": seed,
              "map": os.path.abspath(str(mp)) if isinstance(mp, str) else mp}
    return cmd, params, common, fmap, inputs


def _parse_map(obj):
    try:
        return MapSpec.from_json(obj)
    except (MapError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid map: {exc}") from None


def _resolved_config(cmd, params, common):
    cfg = {"command": cmd.name, "seed": common["seed"]}
    if common["map"] is not None:
        cfg["map"] = common["map"]
    if common["cache"]:
        cfg["cache"] = os.path.abspath(common["cache"])
    for k, v in params.items():
        if v is None:
            continue
        if k == "sigma_values":
            cfg[k] = [float(x) for x in v]
        elif isinstance(v, complex):
            cfg[k] = _cplx(v)
        elif isinstance(v, list) and v and isinstance(v[0], complex):
            cfg[k] = [_cplx(x) for x in v]
        else:
            cfg[k] = v
    return cfg


def _versions():
    import matplotlib
    import scipy
    return {"dynlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__,
            "platform": platform.platform()}


def run(config):
    """Execute one command; returns the exit status."""
    try:
        cmd, params, common, fmap, inputs = resolve(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = os.path.abspath(common["out"])
    os.makedirs(out, exist_ok=True)
    ctx = RunContext(out, params, fmap, common["seed"], common["cache"])
    cfg = _resolved_config(cmd, params, common)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        cmd.run(ctx)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        from .dimensions import DegenerateRasterError
        if isinstance(exc, ValueError) and not isinstance(exc, DegenerateRasterError):
            # library-side validation of parameter values
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        rio.write_json(os.path.join(out, "diagnostic.json"),
                       {"command": cmd.name, "error": type(exc).__name__, "message": str(exc),
                        "traceback": traceback.format_exc()})
        print(f"numerical failure: {exc} (see {os.path.join(out, 'diagnostic.json')})", file=sys.stderr)
        status = EXIT_NUMERIC
    wall = time.perf_counter() - t0
    manifest = {"command": cmd.name, "config": cfg, "status": status,
                "inputs": {p: rio.sha256_file(p) for p in sorted(set(inputs))},
                "outputs": rio.hash_tree(out, ctx.outputs), "versions": _versions(),
                "threads": os.environ.get("DYNLAB_THREADS", ""), "wall_time_s": wall}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if status == EXIT_OK and ctx.summary:
        print(rio.dumps(ctx.summary), end="")
    return status


def replay(manifest_path, out=None):
    """Re-run a recorded command and compare every output hash.

    Raises ``ConfigError`` when an input file changed since the recorded run
    and ``ReplayMismatch`` when the regenerated outputs differ.
    """
    with open(manifest_path) as fh:
        man = json.load(fh)
    for path, digest in man.get("inputs", {}).items():
        if not os.path.exists(path):
            raise ConfigError(f"input file missing: {path}")
        if rio.sha256_file(path) != digest:
            raise ConfigError(f"hash mismatch for input {path}")
    cfg = dict(man["config"])
    out = out or os.path.join(os.path.dirname(os.path.abspath(manifest_path)), "replay")
    cfg["out"] = out
    status = run(cfg)
    if status != man.get("status", EXIT_OK):
        raise ReplayMismatch(f"replay exited with {status}, recorded {man.get('status')}")
    fresh = rio.hash_tree(out, man["outputs"].keys())
    diff = sorted(k for k, v in man["outputs"].items() if fresh[k] != v)
    if diff:
        raise ReplayMismatch(f"outputs differ: {diff}")
    return out


# ---------------------------------------------------------------------------
# argument parsing


def _parser():
    ap = argparse.ArgumentParser(prog="dynlab", description=__doc__.splitlines()[0],
                                 allow_abbrev=False)
    sub = ap.add_subparsers(dest="command")
    for name, cmd in COMMANDS.items():
        sp = sub.add_parser(name, help=cmd.help, allow_abbrev=False)
        _common_flags(sp)
        for key, spec in cmd.params.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=spec.help)
    rp = sub.add_parser("replay", help="re-run a manifest and compare outputs", allow_abbrev=False)
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--out", default=None)
    return ap


def _common_flags(sp):
    sp.add_argument("--map", default=None, help="map specification (JSON file)")
    sp.add_argument("--config", default=None, help="JSON configuration file")
    sp.add_argument("--out", default=None, help="output directory")
    sp.add_argument("--cache", default=None, help="preimage-tree cache directory")
    sp.add_argument("--seed", default=None, help="random seed")
    sp.add_argument("--sigma-values", dest="sigma_values", default=None,
                    help="sigma_n values instead of a map (file or comma list)")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    # a bare --config names the command inside the file
    if argv and argv[0] == "--config":
        if len(argv) < 2:
            print("config error: --config needs a file", file=sys.stderr)
            return EXIT_CONFIG
        try:
            cfg = _read_config(argv[1])
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return run(cfg)
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.command is None:
        ap.print_help(sys.stderr)
        return EXIT_CONFIG
    if args.command == "replay":
        try:
            out = replay(args.manifest, args.out)
        except (ConfigError, OSError, KeyError, json.JSONDecodeError) as exc:
            print(f"replay error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ReplayMismatch as exc:
            print(f"replay mismatch: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"replay identical: {out}")
        return EXIT_OK
    cfg = {}
    if args.config:
        try:
            cfg = _read_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    cfg["command"] = args.command
    for k, v in vars(args).items():
        if k in ("command", "config") or v is None:
            continue
        cfg[k] = v
    return run(cfg)


def _read_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


if __name__ == "__main__":
    sys.exit(main())
