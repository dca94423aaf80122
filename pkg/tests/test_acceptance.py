"""End-to-end acceptance checks, driven through the command-line entry point.

Each criterion records one PASS/FAIL line (printed in the terminal summary)
and asserts its tolerances. Every run leaves a manifest; the determinism
criterion replays all of them at the end.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import BASILICA, CHEB, LOGISTIC, Z2, write_map
from dynlab import cli
from dynlab import plotting  # noqa: F401  (import cost is not part of the runtime bounds)

RESULTS = {}
MANIFESTS = []


def record(n, ok, detail):
    RESULTS[n] = (bool(ok), detail)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("acceptance")
    for name, f in (("z2", Z2), ("cheb", CHEB), ("basilica", BASILICA), ("logistic", LOGISTIC)):
        write_map(d, f, f"{name}.json")
    return d


def dyn(work, run, command, **cfg):
    """Run one command in-process; returns the parsed JSON files of its output directory."""
    out = work / run
    for key in ("map", "cache"):
        if key in cfg:
            cfg[key] = str(work / cfg[key])
    status = cli.run({"command": command, "out": str(out), **cfg})
    assert status == 0, f"{command} exited with {status}"
    MANIFESTS.append(out / "manifest.json")
    return {p.stem: json.loads(p.read_text()) for p in out.glob("*.json")}, out


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return {h: np.array([float(r.split(",")[i]) for r in lines[1:]]) for i, h in enumerate(header)}


def timed(fn):
    t = time.perf_counter()
    res = fn()
    return res, time.perf_counter() - t


def test_criterion_01_chebyshev_sigma(work):
    def body():
        s, out = dyn(work, "c01_sigma", "sigma", map="cheb.json", n=20)
        m, _ = dyn(work, "c01_summability", "summability", map="cheb.json", n=20, alpha=1 / 3)
        return s, out, m
    (s, out, m), dt = timed(body)
    rows = read_csv(out / "sigma.csv")
    rel = float(np.max(np.abs(rows["sigma"] / 4.0 ** rows["n"] - 1)))
    exact = 1 / (4 ** (1 / 3) - 1)
    tail_err = abs(m["summability"]["total_estimate"] - exact)
    ok = rel < 1e-9 and m["summability"]["verdict"] == "converges" and tail_err < 1e-6 and dt < 1
    record(1, ok, f"max rel err {rel:.2e}, sum error {tail_err:.2e}, {dt:.2f} s")
    assert rel < 1e-9 and tail_err < 1e-6 and m["summability"]["verdict"] == "converges" and dt < 1


def test_criterion_02_technical_sequences(work):
    geo = ",".join(repr(4.0 ** n) for n in range(1, 21))
    cube = ",".join(str(n ** 3) for n in range(1, 201))

    def body():
        a, _ = dyn(work, "c02_geometric", "techseq", sigma_values=geo, n=20, alpha=1 / 3, deg=2, mu_max=2)
        b, _ = dyn(work, "c02_cubic", "techseq", sigma_values=cube, n=200, alpha=0.5, deg=2, mu_max=2)
        return a, b
    (a, b), dt = timed(body)
    keys = ("sum_delta_ok", "sum_gamma_ok", "growth_ok", "alpha_monotone_ok")
    checks = [r["techseq"]["checks"] for r in (a, b)]
    ok = all(c[k] for c in checks for k in keys) and dt < 1
    record(2, ok, f"4^n and n^3 fixtures: {[all(c[k] for k in keys) for c in checks]}, {dt:.2f} s")
    assert ok


def test_criterion_03_poincare_exponent(work):
    lines, ok = [], True
    for name, z in (("z2", 3.0), ("cheb", [1.0, 1.0])):
        def body():
            e, _ = dyn(work, f"c03_{name}_exponent", "exponent", map=f"{name}.json", z=z, depth=14,
                       cache="cache")
            d = e["exponent"]["delta_hat"]
            at, _ = dyn(work, f"c03_{name}_at", "poincare", map=f"{name}.json", z=z, delta=d, depth=14,
                        cache="cache")
            above, _ = dyn(work, f"c03_{name}_above", "poincare", map=f"{name}.json", z=z, delta=d + 0.3,
                           depth=14, cache="cache")
            return d, at["poincare"]["probe"], above["poincare"]["probe"]
        (d, at, above), dt = timed(body)
        good = 0.9 <= d <= 1.1 and at["divergent_consistent"] and above["growth_law"] == "none" and dt < 60
        ok &= good
        lines.append(f"{name}: delta {d:.4f} ({at['growth_law']} at, {above['growth_law']} above, {dt:.1f} s)")
    record(3, ok, "; ".join(lines))
    assert ok


def test_criterion_04_dimension_comparison(work):
    est, ok = {}, True

    def body():
        for name in ("z2", "cheb", "basilica"):
            r, _ = dyn(work, f"c04_{name}", "dimension", map=f"{name}.json", level=11)
            est[name] = r["dimension"]
    _, dt = timed(body)
    for name, d in est.items():
        vals = list(d["estimates"].values())
        ok &= d["passed"] and max(d["gaps"].values()) < 0.1 and d["whitney_below_box_upper"]
        if name != "basilica":
            ok &= all(0.9 <= v <= 1.1 for v in vals)
    ok &= dt < 300
    summary = ", ".join(f"{n}: " + "/".join(f"{v:.3f}" for v in d["estimates"].values()) for n, d in est.items())
    record(4, ok, f"poincare/whitney/box {summary}, {dt:.1f} s")
    assert ok


def test_criterion_05_conformal_measure(work):
    # the p -> 1 limit is imitated by keeping the two deepest of the 12 levels
    circle = dict(map="z2.json", z=1.0, depth=12, min_level=11, partition="arc", cells=32)
    segment = dict(map="cheb.json", z=[1.0, 1.0], depth=12, min_level=11, partition="interval", cells=32,
                   a=-2.0, b=2.0)

    def body():
        res = {}
        for name, cfg in (("circle", circle), ("segment", segment)):
            m, _ = dyn(work, f"c05_{name}", "measure", p=1.0, **cfg)
            c1, _ = dyn(work, f"c05_{name}_p1", "conformality", p=1.0, **cfg)
            c15, _ = dyn(work, f"c05_{name}_p15", "conformality", p=1.5, **cfg)
            res[name] = (m["measure_summary"]["max_relative_error"], c1["conformality"]["max_residual"],
                         c15["conformality"]["max_residual"])
        return res
    res, dt = timed(body)
    ok = all(e < 0.03 and r1 < 1e-2 and r15 > 0.1 for e, r1, r15 in res.values()) and dt < 120
    record(5, ok, "; ".join(f"{n}: bins {e:.2e}, residual {r1:.2e} at p=1, {r15:.3f} at p=1.5"
                            for n, (e, r1, r15) in res.items()) + f", {dt:.1f} s")
    assert ok


def test_criterion_06_transfer_operator(work):
    def body():
        cheb, _ = dyn(work, "c06_cheb", "density", map="cheb.json", delta=1.0, N=20, grid="real", a=-1.8,
                      b=1.8, m=37, oracle="chebyshev", rtol=0.05)
        circ, _ = dyn(work, "c06_circle", "density", map="z2.json", delta=1.0, N=20, grid="circle", m=16,
                      oracle="uniform", rtol=1e-6)
        return cheb["density"], circ["density"]
    (cheb, circ), dt = timed(body)
    ok = (cheb["max_relative_error"] < 0.05 and circ["max_relative_error"] < 1e-6
          and cheb["minimum"] > 0 and circ["minimum"] > 0 and dt < 180)
    record(6, ok, f"Chebyshev max rel err {cheb['max_relative_error']:.4f} (tol 0.05), circle "
                  f"{circ['max_relative_error']:.1e}, minimum {cheb['minimum']:.3f}, {dt:.1f} s")
    assert cheb["max_relative_error"] < 0.05
    assert ok


def test_criterion_07_interval_acim(work):
    (r, _), dt = timed(lambda: dyn(work, "c07_logistic", "interval", map="logistic.json", alpha=0.3,
                                   oracle="arcsine", a=0.05, b=0.95))
    r = r["interval"]
    ok = (r["verdict"] == "pass" and r["schwarzian"]["passed"] and r["alpha_below_threshold"]
          and r["oracle_error"] < 0.05 and r["transfer_once_residual"] < 1e-3 and dt < 60)
    record(7, ok, f"verdict {r['verdict']}, density err {r['oracle_error']:.4f}, "
                  f"one-step residual {r['transfer_once_residual']:.1e}, {dt:.1f} s")
    assert ok


def test_criterion_08_ergodic_statistics(work):
    (r, _), dt = timed(lambda: dyn(work, "c08_birkhoff", "birkhoff", map="cheb.json", x0=0.1234,
                                   n=10 ** 6, oracle="arcsine", lo=-2.0, hi=2.0))
    r = r["birkhoff"]
    ok = (r["max_decile_error"] < 0.03 and abs(r["lyapunov"] - math.log(2)) < 0.02
          and abs(r["entropy"] - math.log(2)) < 0.1 and dt < 30)
    record(8, ok, f"decile err {r['max_decile_error']:.4f}, lyapunov {r['lyapunov']:.5f}, "
                  f"entropy {r['entropy']:.5f}, {dt:.1f} s")
    assert ok


def test_criterion_09_blocks(work):
    hyp, _ = dyn(work, "c09_z2", "blocks", map="z2.json", z=[0.6, 0.8], depth=10, branches=64,
                 stopping=True)
    cheb, _ = dyn(work, "c09_cheb", "blocks", map="cheb.json", z=1.9999999999, depth=12, branches=64,
                  indices=[0, 1, 4095], stopping=True, koebe_samples=1000, koebe_depth=8)
    h, c = hyp["blocks"], cheb["blocks"]
    ok = (h["grammar_ok"] and c["grammar_ok"] and h["stopping_all_2"] and c["crosscheck_validated"] >= 1
          and c["koebe_passed"] == c["koebe_total"] == 1000)
    record(9, ok, f"grammar ok: {h['grammar_ok'] and c['grammar_ok']}, z^2 stopping all '2': "
                  f"{h['stopping_all_2']}, 3-blocks cross-validated {c['crosscheck_validated']}/"
                  f"{c['three_blocks']}, Koebe {c['koebe_passed']}/{c['koebe_total']}")
    assert ok


def test_criterion_10_pullbacks(work):
    circ, _ = dyn(work, "c10_z2", "preimages", map="z2.json", z=1.0, depth=10, ball_radius=0.05,
                  pullback_p=[0.5, 1.5])
    cheb, _ = dyn(work, "c10_cheb", "preimages", map="cheb.json", z=1.7, depth=12, ball_radius=0.1)
    ratios = circ["preimages"]["pullback"]["ratios"]
    env = cheb["preimages"]["pullback"]["envelope_final"]
    ok = ratios["1.5"] < 0.9 and ratios["0.5"] > 1.1 and env < 1e-2
    record(10, ok, f"ratio {ratios['1.5']:.3f} at p=1.5, {ratios['0.5']:.3f} at p=0.5, "
                   f"envelope {env:.2e} at n=12")
    assert ok


def test_criterion_11_rays(work):
    def body():
        ray, _ = dyn(work, "c11_ray", "ray", d=2, theta="1/2", G_min=1e-6, target=-2.0)
        dim, _ = dyn(work, "c11_raydim", "raydim", d=2, theta="1/2", G_min=1e-6, level=10, landing=-2.0)
        return ray["ray"], dim["raydim"]
    (ray, dim), dt = timed(body)
    ok = (ray["distance_to_target"] < 1e-3 and ray["tail_min_lambda"] >= 2
          and abs(dim["extrapolated"] - 1.0) <= 0.05 and dim["landing_gap"] <= 0.05 and dt < 600)
    record(11, ok, f"|c + 2| = {ray['distance_to_target']:.1e}, Lambda {ray['tail_min_lambda']:.3f}, "
                   f"extrapolated dimension {dim['extrapolated']:.4f} (landing gap {dim['landing_gap']:.4f}), "
                   f"{dt:.1f} s")
    assert ok


def test_criterion_12_replay(work):
    if not MANIFESTS:
        dyn(work, "c12_sigma", "sigma", map="cheb.json", n=10)
    failed = []
    for man in MANIFESTS:
        try:
            cli.replay(str(man))
        except (cli.ConfigError, cli.ReplayMismatch) as exc:
            failed.append(f"{man.parent.name}: {exc}")
    record(12, not failed, f"{len(MANIFESTS) - len(failed)}/{len(MANIFESTS)} runs replayed byte-identical"
           + (f"; {failed}" if failed else ""))
    assert not failed
