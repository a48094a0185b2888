import json
import math

import numpy as np
import pytest

from hubsim import experiments as ex
from hubsim.experiments import (FAIL, INFO, PASS, THRESHOLDS, ExperimentConfig, Row, flip_row,
                                in_window, monotone_toward, replicate_map, run_experiment,
                                within_rel, write_summary)
from hubsim.summaries import fraction_ci, mean_ci, median_ci, variance_ci


def test_verdict_helpers_are_pure():
    assert within_rel(1.1, 1.0, 0.15) == PASS
    assert within_rel(1.2, 1.0, 0.15) == FAIL
    assert within_rel(math.nan, 1.0, 0.15) == FAIL
    assert in_window(0.3, 0.15, 0.45) == PASS
    assert monotone_toward([2.5, 2.2, 1.9], 1.0) == PASS
    assert monotone_toward([2.5, 2.6, 1.9], 1.0) == FAIL
    assert flip_row("c", PASS, FAIL).verdict == PASS
    assert flip_row("c", FAIL, PASS).verdict == FAIL
    assert flip_row("c", PASS, PASS).verdict == FAIL


def test_summaries():
    est, lo, hi = fraction_ci([True] * 30 + [False] * 70)
    assert est == 0.3 and lo < 0.3 < hi
    x = np.arange(101.0)
    m, lo, hi = median_ci(x)
    assert m == 50 and lo < 50 < hi
    rng = np.random.default_rng(0)
    v, lo, hi = variance_ci(rng.normal(0, 2, 20000))
    assert lo < 4.0 < hi
    mu, lo, hi = mean_ci(rng.normal(1, 1, 1000))
    assert lo < 1 < hi


def test_config_digest_and_validation():
    a = ExperimentConfig.default("mdp_rates", master_seed=3)
    b = ExperimentConfig.default("mdp_rates", master_seed=3)
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig.default("mdp_rates", master_seed=4).digest()
    with pytest.raises(ValueError):
        ExperimentConfig.default("nope")


def test_replicate_map_thread_invariant():
    assert replicate_map(lambda r: r * r, 17, 1) == replicate_map(lambda r: r * r, 17, 4)


def test_mdp_suite_rows():
    s = run_experiment(ExperimentConfig.default("mdp_rates"))
    ratios = [s.row(f"ratio[n={n},x=0.5]").estimate for n in (50, 100, 200)]
    assert all(r > 0 for r in ratios)
    assert s.row("control_flips").verdict in (PASS, FAIL)
    assert all(r.verdict in (PASS, FAIL, INFO) for r in s.rows)


def _tiny(name, **scales):
    return ExperimentConfig.default(name, master_seed=11, replicates=6, scales=scales)


SMALL = {
    "persistence_scan": dict(n_max=2000, windows=[[100, 1000], [1000, 2000]]),
    "tree_maxdeg": dict(n_values=[100, 400], criterion_n=400),
    "uniform_tree": dict(n_values=[100, 1000]),
    "index_asymptotics": dict(n_values=[300, 1000, 3000]),
    "iid_tails": dict(n_max=2000, window=[200, 2000]),
    "slowvar": dict(n_max=2000, window=[200, 2000]),
    "embedding_equivalence": dict(n_values=[10], criterion_n=10),
    "tail_bounds": dict(triples=[[1.0, 20, 20]]),
    "race_fclt": dict(n_values=[50]),
}


@pytest.mark.parametrize("name", sorted(SMALL))
def test_suites_run_and_reproduce(name, tmp_path):
    cfg = _tiny(name, **SMALL[name])
    s1 = run_experiment(cfg, threads=1)
    s2 = run_experiment(cfg, threads=3)
    p1 = write_summary(s1, tmp_path / "a")
    p2 = write_summary(s2, tmp_path / "b")
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes(), a.name
    assert all(r.verdict in (PASS, FAIL, INFO) for r in s1.rows)
    meta = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert meta["provenance"]["master_seed"] == 11
    assert meta["thresholds"] == json.loads(json.dumps(THRESHOLDS[name]))
    head = (tmp_path / "a" / "summary.csv").read_bytes().split(b"\n")[0]
    assert head == b"metric,estimate,ci_lo,ci_hi,predicted,verdict"
    assert b"\r" not in (tmp_path / "a" / "summary.csv").read_bytes()


def test_control_rows_flip_for_persistence():
    cfg = ExperimentConfig.default("persistence_scan", master_seed=1, replicates=30,
                                   scales=dict(n_max=20000, windows=[[2000, 20000]]))
    s = run_experiment(cfg)
    ctl = s.row("control:change_fraction[2000,20000]")
    main = s.row("change_fraction[2000,20000]")
    # the linear control rarely changes leader late; it must fail the nonpersistent rule
    assert main.estimate > ctl.estimate
    assert ctl.verdict == FAIL


def test_calibrate_keeps_thresholds(tmp_path):
    before = json.dumps(THRESHOLDS, sort_keys=True)
    path = ex.calibrate(ExperimentConfig.default("mdp_rates"), tmp_path)
    doc = json.loads(path.read_text())
    assert doc["version"] == ex.ACCEPTANCE_VERSION
    assert doc["pilot_replicates"] == 1
    assert json.dumps(THRESHOLDS, sort_keys=True) == before


def test_row_defaults():
    r = Row("x", 1.0)
    assert r.verdict == INFO and ex.fmt(None) == "" and ex.fmt(0.1) == "0.1"
