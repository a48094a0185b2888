import math
from collections import defaultdict

import numpy as np
import pytest

from hubsim.attachment import ensure_phi_table
from hubsim.ctbp import (CSV_COLUMNS, ctbp_rows, hub_index_continuous, hub_rank,
                         malthusian_diagnostic, run_ctbp, window_max_degree)
from hubsim.malthusian import solve_lambda_star
from hubsim.pointproc import ResourceCapError
from hubsim.rng import derive_stream

from oracles import exact_root_dmax_law


def test_yule_mean_and_variance(uniform):
    # f = 1 for everybody: a rate-1 Yule process, size ~ Geometric(e^-t)
    t, reps = 2.0, 6000
    sizes = np.array([run_ctbp(uniform, until_time=t, seed=derive_stream(1, r, "y")).size
                      for r in range(reps)])
    p = math.exp(-t)
    mean, var = 1 / p, (1 - p) / p ** 2
    assert abs(sizes.mean() - mean) < 4 * math.sqrt(var / reps)
    assert sizes.var() == pytest.approx(var, rel=0.1)


def test_linear_mean_growth(pa):
    # total birth rate with n individuals is 3n - 2, so E n(t) = (e^{3t} + 2) / 3
    t, reps = 1.2, 4000
    sizes = np.array([run_ctbp(pa, until_time=t, seed=derive_stream(2, r, "l")).size
                      for r in range(reps)], dtype=float)
    se = sizes.std() / math.sqrt(reps)
    assert abs(sizes.mean() - (math.exp(3 * t) + 2) / 3) < 4 * se


@pytest.mark.parametrize("kind", ["p3", "pa"])
def test_embedded_tree_law(kind, request):
    fun = request.getfixturevalue(kind)
    n, reps = 6, 20000
    law = exact_root_dmax_law(fun, n)
    seen = defaultdict(int)
    for r in range(reps):
        st = run_ctbp(fun, until_size=n + 1, seed=derive_stream(3, r, "e"))
        d = st.degrees_at(st.clock)
        seen[(int(d[0]), int(d.max()))] += 1
    for key, p in law.items():
        assert abs(seen[key] / reps - p) < 4.5 * math.sqrt(p * (1 - p) / reps) + 1e-12, key


def test_state_consistency(p3):
    st = run_ctbp(p3, until_size=500, seed=4)
    assert st.size == 500 and st.stopped_by == "size"
    assert st.birth[0] == 0 and np.all(np.diff(st.birth) >= 0)
    assert st.clock == st.birth[-1]
    assert np.all(st.parent[1:] < np.arange(1, 500))
    assert np.array_equal(st.children_at(st.clock), st.children)
    assert st.degrees_at(st.clock).sum() == 2 * (st.size - 1)
    tt = run_ctbp(p3, until_time=3.0, seed=4)
    assert tt.stopped_by == "time" and tt.clock == 3.0 and tt.birth[-1] <= 3.0


def test_seed_determinism(p3):
    a = run_ctbp(p3, until_size=300, seed=derive_stream(9, 2, "x"))
    b = run_ctbp(p3, until_size=300, seed=derive_stream(9, 2, "x"))
    assert np.array_equal(a.birth, b.birth) and np.array_equal(a.parent, b.parent)


def test_errors(p3):
    with pytest.raises(ValueError):
        run_ctbp(p3)
    with pytest.raises(ValueError):
        run_ctbp(p3, until_size=3, until_time=1.0)
    with pytest.raises(ResourceCapError) as err:
        run_ctbp(p3, until_time=50.0, max_size=2000)
    assert err.value.partial is not None and err.value.partial.size <= 2000


def test_hub_queries(pa):
    st = run_ctbp(pa, until_size=2000, seed=5)
    table = ensure_phi_table(pa, degree_needed=int(st.children.max()) + 2)
    r = hub_rank(st, st.clock, table)
    d = st.degrees_at(st.clock)
    assert d[r] == d.max() and r == int(np.argmax(d))
    h = hub_index_continuous(st, st.clock, table, convention="degree")
    assert h == st.birth[r]
    assert window_max_degree(st, 0.0, st.clock / 2, st.clock / 4, table) == 0.0
    w = window_max_degree(st, 0.0, st.clock / 2, st.clock, table, convention="degree")
    assert 0 < w <= table.phi1[d.max()]


def test_malthusian_diagnostic_uniform(uniform):
    diag = malthusian_diagnostic(uniform, 1.0, [1.0, 3.0], seed=6, reps=3000)
    m = diag.W_estimate.mean()
    assert abs(m - 1.0) < 4 * diag.W_estimate.std() / math.sqrt(3000)


def test_rows(p3):
    st = run_ctbp(p3, until_size=200, seed=7)
    lam = solve_lambda_star(p3).lambda_star
    rows = ctbp_rows(st, 0, p3, lam, [0.0, st.clock])
    assert len(rows[0]) == len(CSV_COLUMNS)
    assert rows[0][3] == 1 and rows[-1][3] == 200
    assert rows[-1][6] == pytest.approx(math.exp(-lam * st.clock) * 200)


def test_W_cauchy_convergence(p3):
    # e^{-lam t} |BP(t)| settles: consecutive-unit ratios concentrate near 1
    lam = solve_lambda_star(p3).lambda_star
    diag = malthusian_diagnostic(p3, lam, [7.0, 8.0], seed=8, reps=300)
    logr = np.log(diag.samples[:, 0] / diag.samples[:, 1])
    assert np.median(np.abs(logr)) < 0.05
