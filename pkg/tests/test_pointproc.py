import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubsim.attachment import ensure_phi_table
from hubsim.pointproc import (HypoexpSpec, ResourceCapError, StateCapError, forward_equations,
                              hypoexp_cdf, hypoexp_cdf_detail, martingale_path,
                              martingale_values, mdp_rate_check, sample_xi, simulate_xi,
                              tail_bound_check, tbd_bound, uniformization_logcdf,
                              wilson_interval)


def yule_tail(n, t):
    # rates 1..n: the sum is distributed as the max of n unit exponentials
    return (1 - math.exp(-t)) ** n


@pytest.mark.parametrize("n", [1, 2, 5, 20, 60])
@pytest.mark.parametrize("t", [0.3, 1.0, 4.0])
def test_hypoexp_matches_max_of_exponentials(n, t):
    spec = HypoexpSpec(tuple(float(k) for k in range(1, n + 1)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        assert hypoexp_cdf(spec, t) == pytest.approx(yule_tail(n, t), rel=1e-8, abs=1e-14)
    assert math.exp(uniformization_logcdf(np.arange(1.0, n + 1), t)) == pytest.approx(
        yule_tail(n, t), rel=1e-9)


def test_two_rates_closed_form():
    t = 1.7
    assert hypoexp_cdf(HypoexpSpec((1.0, 2.0)), t) == pytest.approx(
        1 - 2 * math.exp(-t) + math.exp(-2 * t), abs=1e-14)
    # Erlang(2, 1)
    erl = 1 - math.exp(-t) * (1 + t)
    for policy in ("auto", "perturb", "uniformization"):
        assert hypoexp_cdf(HypoexpSpec((1.0, 1.0), policy), t) == pytest.approx(erl, abs=1e-8)
    # the lattice has step t / 2^16, so the grid method is first order in that step
    assert hypoexp_cdf(HypoexpSpec((1.0, 1.0), "convolve_grid"), t) == pytest.approx(erl, abs=2e-5)
    with pytest.raises(ValueError):
        hypoexp_cdf(HypoexpSpec((1.0, 1.0), "exact_distinct"), t)


def test_cancellation_is_flagged():
    spec = HypoexpSpec(tuple(float(k) for k in range(1, 81)))
    res = hypoexp_cdf_detail(spec, 0.5)
    assert res.flagged and res.method == "uniformization"
    with pytest.warns(RuntimeWarning):
        hypoexp_cdf(spec, 0.5)
    assert res.p == pytest.approx(yule_tail(80, 0.5), rel=1e-8)


def test_spec_validation():
    with pytest.raises(ValueError):
        HypoexpSpec(())
    with pytest.raises(ValueError):
        HypoexpSpec((1.0, -1.0))
    with pytest.raises(ValueError):
        HypoexpSpec((1.0,), "magic")


def test_forward_equations_yule(pa):
    sol = forward_equations(pa, None, 1.0, 200)
    for n in range(0, 21):
        assert sol.prob_at_least(n) == pytest.approx(yule_tail(n, 1.0), abs=1e-10)
    assert sol.max_bound_ratio <= 1.0 + 1e-12


def test_forward_cap_error(pa):
    with pytest.raises(StateCapError) as err:
        forward_equations(pa, None, 5.0, 20)
    assert err.value.required_cap > 20


def test_simulate_xi_poisson(uniform):
    proc = simulate_xi(uniform, 0, 50.0, seed=3)
    assert np.all(np.diff(proc.event_times) > 0)
    assert proc.next_event > proc.clock >= proc.event_times[-1]
    with pytest.raises(ResourceCapError):
        simulate_xi(uniform, 0, 1e6, seed=3, max_events=100)


def test_sample_xi_poisson_mean(uniform):
    counts, _ = sample_xi(uniform, 0, [0.5, 2.0], 20000, seed=11)
    for j, t in enumerate((0.5, 2.0)):
        m = counts[:, j].mean()
        assert abs(m - t) < 4 * math.sqrt(t / 20000)


def test_sample_xi_thread_invariant(p3):
    a = sample_xi(p3, 2, [1.0, 3.0], 5000, seed=9, threads=1)
    b = sample_xi(p3, 2, [1.0, 3.0], 5000, seed=9, threads=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_martingale_moments(p3):
    times = [1.0, 4.0]
    counts, qv = sample_xi(p3, 0, times, 20000, seed=5)
    table = ensure_phi_table(p3, degree_needed=int(counts.max()) + 2)
    M = martingale_values(table, 0, counts, times)
    for j in range(2):
        se = M[:, j].std() / math.sqrt(len(M))
        assert abs(M[:, j].mean()) < 4 * se
        # optional stopping: Var M(t) = E [M](t)
        assert M[:, j].var() == pytest.approx(qv[:, j].mean(), rel=0.05)


def test_martingale_path_checkpoints(p3):
    path = martingale_path(p3, None, 3, 5.0, [0.0, 2.5, 5.0], seed=2)
    assert path.M[0] == 0.0 and len(path.samples) == 3


def test_wilson_interval_formula():
    k, n, z = 7, 100, 2.5758293035489004
    p = k / n
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    lo, hi = wilson_interval(k, n, 0.99)
    assert (lo, hi) == pytest.approx((c - h, c + h), rel=1e-9)


def test_tail_bound_check_runs(p3):
    table = ensure_phi_table(p3, t_needed=60)
    out = tail_bound_check(p3, table, 1.0, 50.0, 50.0, 2000, seed=1)
    assert out["analytic"] == pytest.approx(tbd_bound(table, 1.0, 50.0, 1.0))
    assert 0 <= out["wilson_lo"] <= out["empirical"] <= out["wilson_hi"] <= 1
    with pytest.raises(ValueError):
        tail_bound_check(p3, table, 1.0, 10.0, 20.0, 10, seed=1)


def test_mdp_check(p3):
    table = ensure_phi_table(p3, degree_needed=512)
    out = mdp_rate_check(p3, table, 50, 0.5)
    rates = p3.values_array(50)
    exact = hypoexp_cdf_detail(HypoexpSpec(tuple(rates), "uniformization"), out["threshold"]).p
    assert out["exact_logprob"] == pytest.approx(math.log(exact), rel=1e-9)
    assert mdp_rate_check(p3, table, 50, 0.0)["ratio"] is None


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.2, 20.0), min_size=1, max_size=12, unique=True), st.floats(0.01, 10.0))
def test_hypoexp_methods_agree(rates, t):
    spec = tuple(rates)
    a = hypoexp_cdf_detail(HypoexpSpec(spec, "auto"), t).p
    b = hypoexp_cdf_detail(HypoexpSpec(spec, "uniformization"), t).p
    assert 0 <= a <= 1
    assert a == pytest.approx(b, abs=1e-8)
