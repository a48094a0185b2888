import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubsim.attachment import AttachmentFunction
from hubsim.graphsim import (AttachmentSequence, ConfigError, bound_process_lower,
                             bound_process_upper, grow, leader_of, leader_statistics,
                             prefix_edges, race, race_path_law, race_paths, s_inverse,
                             trajectory_rows, two_clock_paths)
from hubsim.rng import derive_stream
from hubsim.summaries import tv_distance

from oracles import exact_root_dmax_law


@pytest.mark.parametrize("kind", ["p3", "pa", "uniform"])
def test_small_tree_law_matches_enumeration(kind, request):
    fun = request.getfixturevalue(kind)
    n, reps = 6, 20000
    law = exact_root_dmax_law(fun, n)
    seq = AttachmentSequence.constant(1)
    seen = defaultdict(int)
    for r in range(reps):
        row = grow(fun, seq, n, seed=derive_stream(4, r, "t")).at(n)
        seen[(int(row[5]), int(row[2]))] += 1
    for key, p in law.items():
        sd = math.sqrt(p * (1 - p) / reps)
        assert abs(seen[key] / reps - p) < 4.5 * sd + 1e-12, key
    assert set(seen) <= set(law)


def test_invariants_after_growth(p3):
    seq = AttachmentSequence("geometric", p=0.4)
    rec, gs = grow(p3, seq, 3000, checkpoints=[10, 100], seed=1, return_state=True)
    gs.check(p3)
    assert gs.n == 3001
    assert rec.at(3000)[1] == gs.k
    assert gs.leader[0] == leader_of(gs.degrees[:gs.n])
    assert gs.leader[1] == gs.degrees.max()
    assert np.all(np.diff(rec.leader_changes) >= 0)


def test_index_rebuild_stays_consistent(pa):
    # more than 2^20 sampler updates forces periodic rebuilds
    rec, gs = grow(pa, AttachmentSequence.constant(3), 200000, seed=2, return_state=True)
    gs.check(pa)
    assert rec.index_drift < 1e-6 * 2 * gs.k


def test_leader_tie_rule():
    assert leader_of(np.array([2, 5, 5, 1])) == 1
    rec = grow(AttachmentFunction.constant(1.0), AttachmentSequence.constant(1), 1,
               checkpoints=[0, 1], seed=0)
    # two vertices of degree 1: the older one leads
    assert rec.at(1)[3] == 0 and rec.at(0)[2] == 0


def test_determinism_and_rows(p3):
    seq = AttachmentSequence.constant(2)
    a = grow(p3, seq, 5000, [10, 1000], seed=derive_stream(3, 0, "g"))
    b = grow(p3, seq, 5000, [10, 1000], seed=derive_stream(3, 0, "g"))
    assert np.array_equal(a.table, b.table)
    rows = trajectory_rows(a, 7)
    assert [r[1] for r in rows] == [10, 1000, 5000] and rows[0][0] == 7
    stats = leader_statistics(a, (10, 5000))
    assert stats.change_count == a.at(5000)[4] - a.at(10)[4]


def test_sequences():
    assert np.array_equal(AttachmentSequence.constant(3).realize(4), [0, 3, 3, 3, 3])
    lp = AttachmentSequence("logpower", nu=2.0).realize(1000)
    n = np.arange(1, 1001)
    assert np.array_equal(lp[1:], np.floor(1 + np.log(n) ** 2))
    g = AttachmentSequence("geometric", p=0.25).realize(200000, derive_stream(0, 0, "m"))
    assert g[1:].mean() == pytest.approx(4.0, rel=0.02)
    z = AttachmentSequence("zipf", s=2.5, cap=50)
    zr = z.realize(200000, derive_stream(0, 0, "z"))
    assert zr[1:].max() <= 50 and zr[1:].mean() == pytest.approx(z.mean(), rel=0.03)
    for bad in (dict(kind="zipf", s=1.0), dict(kind="geometric", p=0.0),
                dict(kind="constant", m=0), dict(kind="nope")):
        with pytest.raises(ConfigError):
            AttachmentSequence(**bad)
    with pytest.raises(ConfigError):
        AttachmentSequence("zipf").realize(10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=30), st.data())
def test_s_inverse(ms, data):
    m = np.array([0] + ms)
    s = prefix_edges(m)
    k = data.draw(st.integers(0, int(s[-1]) - 1))
    n = int(s_inverse(s, k))
    assert s[n - 1] <= k < s[n]


def test_lower_bound_chain_dominated(pa, p3):
    for fun in (pa, p3):
        for seed in range(5):
            path = bound_process_lower(fun, AttachmentSequence.constant(1), 5000, seed=seed)
            assert path.dominated_below
    with pytest.raises(ConfigError):
        bound_process_lower(AttachmentFunction.power(1.2), AttachmentSequence.constant(1), 10)


def test_upper_bound_chain_dominates(pa):
    for seed in range(5):
        path = bound_process_upper(pa, 0.4, 3, 5000, seed=seed)
        assert path.dominated_above
    with pytest.raises(ConfigError, match="fails first at k="):
        bound_process_upper(pa, 0.99, 3, 100, seed=0, seq=AttachmentSequence.constant(2))


def test_race_law_exact(pa):
    law = race_path_law(pa, (1, 1), 6)
    assert law.sum() == pytest.approx(1.0, abs=1e-14)
    # first step from (1,1) is a fair coin
    assert law[0::2].sum() == pytest.approx(0.5)
    reps = 40000
    rc = np.bincount(race_paths(pa, (1, 1), 6, reps, seed=1), minlength=64) / reps
    tc = np.bincount(two_clock_paths(pa, (1, 1), 6, reps, seed=1), minlength=64) / reps
    for emp in (rc, tc):
        assert 0.5 * np.abs(emp - law).sum() < 0.03


def test_race_result_counts(p3):
    r = race(p3, (2, 2), 500, seed=3)
    assert r.path.shape == (501, 2)
    assert np.all(r.path.sum(axis=1) == 4 + np.arange(501))
    assert r.lead_changes >= 0 and r.tie_visits >= 1


def test_tv_distance_basic():
    assert tv_distance([1, 1, 2, 2], [1, 1, 2, 2]) == 0.0
    assert tv_distance([1, 1], [2, 2]) == 1.0


def test_root_growth_ratio(pa):
    from hubsim.attachment import ensure_phi_table
    from hubsim.graphsim import root_growth_ratio
    rec = grow(pa, AttachmentSequence.constant(1), 10000, [1, 100, 10000], seed=5)
    table = ensure_phi_table(pa, degree_needed=int(rec.d_max.max()) + 2)
    r = root_growth_ratio(rec, table)
    assert math.isnan(r[0])
    d0 = rec.table[1:, 5]
    assert np.allclose(r[1:], table.phi1[d0] / np.log(rec.table[1:, 1]))
