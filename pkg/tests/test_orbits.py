import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import BASILICA, CHEB, Z2
from dynlab.maps import MapSpec
from dynlab.orbits import (InfeasibleError, SigmaSeq, alpha_envelope, chain_rule_consistent,
                           lyapunov_exponent, s_alpha_uniform_check, sigma_sequence,
                           summability_report, technical_sequences)

GEOMETRIC_TOTAL = 1 / (4 ** (1 / 3) - 1)  # sum_{n>=1} 4^(-n/3)


def _four_pow(N):
    return SigmaSeq.from_values(4.0 ** np.arange(1, N + 1))


# sigma_n ---------------------------------------------------------------------------------


def test_chebyshev_sigma_exact():
    s = sigma_sequence(CHEB, N=20)
    assert np.max(np.abs(s.values / 4.0 ** np.arange(1, 21) - 1)) < 1e-9
    assert chain_rule_consistent(CHEB, s)


def test_hyperbolic_sigma_vacuous():
    assert sigma_sequence(Z2, N=10).vacuous
    near = MapSpec.unicritical(2, 0.25 - 1e-3)
    s = sigma_sequence(near, N=10)
    assert s.vacuous and np.all(np.isinf(s.log_values))


def test_sigma_long_horizon_in_logs():
    s = sigma_sequence(CHEB, N=600)
    assert np.isfinite(s.log_values[-1])
    assert s.log_values[-1] == pytest.approx(600 * math.log(4), rel=1e-12)


# summability -----------------------------------------------------------------------------


def test_geometric_summability_tail():
    for N in (20, 50):
        r = summability_report(_four_pow(N), 1 / 3)
        assert r.verdict == "converges"
        assert abs(r.total_estimate - GEOMETRIC_TOTAL) < 1e-6


def test_polynomial_weight_closed_form():
    x = 4 ** (-1 / 3)
    exact = x / (1 - x) ** 2  # sum n x^n
    r = summability_report(_four_pow(40), 1 / 3, polynomial_weight=True)
    assert r.verdict == "converges"
    assert r.total_estimate == pytest.approx(exact, rel=1e-9)


def test_harmonic_diverges():
    r = summability_report(SigmaSeq.from_values(np.arange(1, 201, dtype=float)), 1.0)
    assert r.verdict == "diverges"


def test_vacuous_is_vacuously_summable():
    r = summability_report(SigmaSeq.vacuous_sequence(20), 0.5)
    assert r.verdict == "converges (vacuously)" and r.total_estimate == 0


def test_thresholds():
    r = summability_report(_four_pow(20), 0.3, deltas=[1.0])
    assert r.thresholds[1.0]["threshold"] == pytest.approx(1 / 3)
    assert r.thresholds[1.0]["alpha_below"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.01, 1e6), min_size=8, max_size=30),
       st.floats(0.05, 0.9), st.floats(0.01, 0.09))
def test_partial_sums_decrease_in_alpha(vals, a, da):
    s = SigmaSeq.from_values(np.array(vals))
    p1 = summability_report(s, a).partial_sums
    p2 = summability_report(s, a + da).partial_sums
    assert np.all(p2 < p1)


# technical sequences ---------------------------------------------------------------------


def test_techseq_geometric_fixture():
    t = technical_sequences(_four_pow(30), 0.5, deg=2, mu_max=2)
    assert np.allclose(t.delta_n[1:] / t.delta_n[:-1], 0.5)
    # gamma_n = C 2^(n/2) / alpha'_n
    g = t.gamma_n * alpha_envelope(30)
    assert np.allclose(g[1:] / g[:-1], math.sqrt(2))
    assert t.beta == pytest.approx(2.0)
    assert all(t.checks[k] for k in ("sum_delta_ok", "sum_gamma_ok", "growth_ok", "alpha_monotone_ok"))


def test_techseq_cubic_fixture_large_N():
    N = 10 ** 4
    s = SigmaSeq.from_values(np.arange(1, N + 1, dtype=float) ** 3, mu_max=2)
    t = technical_sequences(s, 0.5, deg=2)
    assert t.beta == pytest.approx(2.0)
    assert t.checks["sum_delta_ok"] and t.checks["sum_gamma_ok"] and t.checks["growth_ok"]


def test_techseq_vacuous():
    t = technical_sequences(SigmaSeq.vacuous_sequence(20), 0.5, deg=2)
    assert t.checks["sum_gamma_ok"] and t.checks["growth_ok"]


def test_techseq_rejects_alpha_one():
    with pytest.raises(ValueError):
        technical_sequences(_four_pow(10), 1.0, deg=2)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.2, 8.0), st.floats(0.2, 0.8), st.integers(5, 60))
def test_techseq_postconditions_hold_on_return(base, alpha, N):
    s = SigmaSeq.from_values(base ** np.arange(1, N + 1))
    try:
        t = technical_sequences(s, alpha, deg=2)
    except InfeasibleError:
        return
    c = t.checks
    assert c["sum_delta"] < 0.5
    assert c["sum_gamma_beta"] < 1 / (16 * 2 * t.mu_max)
    rhs = 2 * np.log(t.alpha_n) + t.mu_max * np.log(t.gamma_n) - np.log(t.delta_n)
    assert np.all(s.log_values >= rhs)
    assert np.all(np.diff(t.alpha_n[t.monotone_from - 1:]) >= 0)


# Lyapunov exponents ----------------------------------------------------------------------


def test_lyapunov_circle():
    r = lyapunov_exponent(Z2, np.exp(1j * math.pi * math.sqrt(2)), 10 ** 5, project=lambda z: z / abs(z))
    assert abs(r.value - math.log(2)) < 1e-3


def test_lyapunov_chebyshev():
    r = lyapunov_exponent(CHEB, 0.1234567, 10 ** 6)
    assert abs(r.value - math.log(2)) < 0.02


def test_lyapunov_critical_marker():
    r = lyapunov_exponent(BASILICA, 0j, 10)
    assert r.value == -math.inf and r.critical_hit == 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-2.0, 0.2))
def test_lyapunov_fixed_point_one_step(c):
    # the repelling fixed point p = (1 + sqrt(1 - 4c)) / 2 of z^2 + c
    f = MapSpec.unicritical(2, c)
    p = (1 + math.sqrt(1 - 4 * c)) / 2
    assume(abs(2 * p) > 1)
    assert lyapunov_exponent(f, p, 1).value == pytest.approx(math.log(abs(2 * p)), rel=1e-12)


# families --------------------------------------------------------------------------------


def test_family_toward_chebyshev():
    fam = [MapSpec.unicritical(2, c) for c in (-1.99, -1.999, -1.9999)]
    r = s_alpha_uniform_check(fam, CHEB, 1 / 3, 0.05, 10.0)
    assert r.verdict == "pass"
    assert all(row["sum"] < 10 for rows in r.members for row in rows)


def test_family_of_the_limit_alone():
    r = s_alpha_uniform_check([CHEB], CHEB, 1 / 3, 0.05, 10.0, horizon=40)
    total = r.members[0][0]["sum"]
    assert total == pytest.approx(np.sum(4.0 ** (-np.arange(1, r.members[0][0]["terms"] + 1) / 3)), rel=1e-9)


def test_family_inside_cardioid():
    fam = [MapSpec.unicritical(2, c) for c in (0.2, 0.24)]
    r = s_alpha_uniform_check(fam, MapSpec.unicritical(2, 0.25), 1 / 3, 0.05, 1.0)
    assert r.verdict == "pass"
