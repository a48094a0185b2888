import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hubsim.attachment import (AttachmentFunction, ModelError, Phi2Status, PhiRangeError,
                               build_phi_table, ensure_phi_table, eval_f)


def test_closed_forms_evaluate(pa, p3, uniform):
    k = np.arange(6)
    assert np.array_equal(pa.values_array(6), k + 1.0)
    assert np.allclose(p3.values_array(6), (k + 1.0) ** 0.3)
    assert np.array_equal(uniform.values_array(6), np.ones(6))
    assert np.array_equal(pa.values_array(3, offset=4), [5.0, 6.0, 7.0])


def test_domain_errors():
    with pytest.raises(ModelError):
        AttachmentFunction.power(-0.1)
    with pytest.raises(ModelError):
        AttachmentFunction.constant(0.0)
    with pytest.raises(ModelError):
        AttachmentFunction.affine(-1.0)
    with pytest.raises(ModelError):
        AttachmentFunction.table([1.0, 0.0, 2.0])
    with pytest.raises(ModelError, match="monotone"):
        AttachmentFunction.table([1.0, 3.0, 2.0], monotone=True)
    with pytest.raises(ModelError, match="C_f"):
        AttachmentFunction.table([1.0, 5.0], linear_bound_Cf=1.0)
    with pytest.raises(ValueError):
        eval_f(AttachmentFunction.affine(1.0), -1)


def test_table_tail_and_composite(tmp_path):
    tail = AttachmentFunction.affine(1.0)
    f = AttachmentFunction.table([2.0, 2.0], tail=tail)
    assert np.array_equal(f.values_array(5), [2.0, 2.0, 3.0, 4.0, 5.0])
    path = tmp_path / "f.txt"
    path.write_text("1\n2\n4\n")
    g = AttachmentFunction.from_table_file(path)
    assert np.array_equal(g.values_array(3), [1.0, 2.0, 4.0])
    s = AttachmentFunction.composite("sum", [AttachmentFunction.constant(2.0), tail])
    assert np.array_equal(s.values_array(3), [3.0, 4.0, 5.0])
    p = AttachmentFunction.composite("product", [AttachmentFunction.constant(2.0), tail])
    assert np.array_equal(p.values_array(3), [2.0, 4.0, 6.0])
    assert s.f_star == 3.0


def test_f_star():
    assert AttachmentFunction.affine(0.5).f_star == 0.5
    assert AttachmentFunction.power(0.3).f_star == 1.0
    assert AttachmentFunction.table([3.0, 1.5, 4.0]).f_star == 1.5


def test_phi1_is_harmonic_for_linear(pa):
    # exact rational oracle: Phi_1(n) = H_n, Phi_2(n) = sum 1/k^2
    t = build_phi_table(pa, 64)
    for n in (1, 5, 20, 64):
        h = sum(Fraction(1, k) for k in range(1, n + 1))
        h2 = sum(Fraction(1, k * k) for k in range(1, n + 1))
        assert t.phi1[n] == pytest.approx(float(h), rel=1e-15)
        assert t.phi2[n] == pytest.approx(float(h2), rel=1e-15)


def test_uniform_K_is_identity(uniform):
    t = build_phi_table(uniform, 1000)
    x = np.array([0.0, 0.3, 7.5, 999.0])
    assert np.allclose(t.K(x), x, rtol=0, atol=1e-12)
    assert np.allclose(t.K_inv(x), x, rtol=0, atol=1e-12)


def test_phi2_classification():
    assert build_phi_table(AttachmentFunction.power(0.3), 2048).phi2_status is Phi2Status.INFINITE
    assert build_phi_table(AttachmentFunction.power(0.5), 2048).phi2_status is Phi2Status.INFINITE
    fin = build_phi_table(AttachmentFunction.power(0.8), 2048)
    assert fin.phi2_status is Phi2Status.FINITE
    lin = build_phi_table(AttachmentFunction.affine(1.0), 4096)
    assert lin.phi2_limit == pytest.approx(math.pi ** 2 / 6, rel=1e-12)
    assert build_phi_table(AttachmentFunction.table([1.0] * 20), 20).phi2_status is Phi2Status.UNKNOWN


def test_phi_range_error_reports_horizon(p3):
    t = build_phi_table(p3, 128)
    with pytest.raises(PhiRangeError) as err:
        t.Phi1_inv(t.t_max * 2)
    assert err.value.needed_horizon > 128
    big = ensure_phi_table(p3, t_needed=t.t_max * 2)
    assert big.t_max >= t.t_max * 2


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.95), st.floats(0.0, 40.0))
def test_phi1_inverse_round_trip(alpha, t):
    table = ensure_phi_table(AttachmentFunction.power(alpha), t_needed=t + 1)
    x = table.Phi1_inv(t)
    assert table.Phi(1, x) == pytest.approx(t, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.1, 30.0), st.floats(0.1, 30.0))
def test_K_monotone_and_inverse(alpha, a, b):
    table = ensure_phi_table(AttachmentFunction.power(alpha), t_needed=max(a, b) + 1)
    lo, hi = sorted((a, b))
    assert table.K(lo) <= table.K(hi)
    assert table.K_inv(table.K(hi)) == pytest.approx(hi, rel=1e-9)
