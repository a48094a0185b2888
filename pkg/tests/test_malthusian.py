import math
import time

import numpy as np
import pytest

from hubsim.attachment import AttachmentFunction, ensure_phi_table
from hubsim.malthusian import (NoMalthusianRate, RegimeError, TriState, check_assumptions,
                               predict_asymptotics, rho_hat, rho_hat_bruteforce,
                               solve_lambda_star, uniform_tree_constants, w, w_inv)


@pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0, 2.0])
def test_lambda_star_linear(alpha):
    assert solve_lambda_star(AttachmentFunction.affine(alpha)).lambda_star == pytest.approx(
        2 + alpha, abs=1e-8)


@pytest.mark.parametrize("c", [1.0, 2.5])
def test_lambda_star_constant(c):
    # with constant weight c the series is geometric with ratio c/(lam+c); root at lam = c
    assert solve_lambda_star(AttachmentFunction.constant(c)).lambda_star == pytest.approx(c, abs=1e-10)


def test_rho_hat_matches_bruteforce(p3):
    for lam in (0.8, 1.5, 3.0):
        fast, _ = rho_hat(p3, lam, 1e-14, 1)
        slow = rho_hat_bruteforce(p3, lam, 200000, 1)
        assert fast == pytest.approx(slow, rel=1e-9)


def test_root_brackets_one(p3):
    res = solve_lambda_star(p3)
    assert res.rho_at_bracket[0] >= 1 >= res.rho_at_bracket[1]
    assert res.bracket[1] - res.bracket[0] <= 1e-12


def test_superlinear_has_no_root():
    with pytest.raises(NoMalthusianRate):
        solve_lambda_star(AttachmentFunction.power(1.6))


def test_assumption_report():
    lin = AttachmentFunction.power(0.8)
    rep = check_assumptions(lin, ensure_phi_table(lin, degree_needed=1 << 16))
    assert rep.c1 is TriState.FALSE
    p3 = AttachmentFunction.power(0.3)
    rep = check_assumptions(p3, ensure_phi_table(p3, degree_needed=1 << 16))
    assert rep.c1 is TriState.TRUE
    assert rep.c2 is TriState.TRUE
    assert 1 < rep.c3_estimate < 3


def test_predictions_and_regime():
    p3 = AttachmentFunction.power(0.3)
    table = ensure_phi_table(p3, t_needed=20)
    pred = predict_asymptotics(p3, table, solve_lambda_star(p3), 1e6)
    lam = pred["lambda_star"]
    assert pred["pred_log_index"] == pytest.approx(lam * lam / 2 * pred["K"])
    assert pred["applicable"]
    u = AttachmentFunction.constant(1.0)
    assert not predict_asymptotics(u, ensure_phi_table(u, t_needed=20),
                                   solve_lambda_star(u), 1e6)["applicable"]
    p8 = AttachmentFunction.power(0.8)
    with pytest.raises(RegimeError):
        predict_asymptotics(p8, ensure_phi_table(p8, t_needed=20), solve_lambda_star(p8), 1e6)


def test_uniform_tree_constants():
    c = uniform_tree_constants()
    assert c["max_slope"] == pytest.approx(1 / math.log(2), abs=1e-8)
    assert c["u_hat"] == pytest.approx(1 - 1 / (2 * math.log(2)), abs=1e-7)
    for y in (-0.01, -1.0, -7.0):
        assert w(w_inv(y)) == pytest.approx(y, abs=1e-12)


def test_solver_is_fast():
    t0 = time.perf_counter()
    for a in (0.0, 0.5, 1.0, 2.0):
        solve_lambda_star(AttachmentFunction.affine(a))
    solve_lambda_star(AttachmentFunction.constant(1.0))
    assert time.perf_counter() - t0 < 1.0
    assert np.isfinite(solve_lambda_star(AttachmentFunction.power(0.3)).tail_bound)
