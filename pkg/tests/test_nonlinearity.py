import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.nonlinearity import (
    CoefficientSeq,
    DegreeParams,
    SingularityError,
    check_assumptions,
    coefficients_from_phase,
    eval_F,
    eval_Fn,
    eval_Fn_wirtinger,
    eval_wirtinger,
    strauss_exponent,
)


def test_strauss_values():
    assert abs(strauss_exponent(1) - (3 + math.sqrt(17)) / 2) < 1e-12
    assert abs(strauss_exponent(2) - (1 + math.sqrt(2))) < 1e-12
    assert abs(strauss_exponent(3) - 2.0) < 1e-12
    with pytest.raises(ValueError):
        strauss_exponent(4)


def test_degree_params_round_trip():
    p = DegreeParams(1, 4.0)
    assert p.alpha0 == 1.5
    assert DegreeParams.from_alpha0(1, 1.5).alpha == 4.0
    assert p.admissible and not DegreeParams(1, 3.0).admissible
    assert DegreeParams(3, 2.0).admissible and not DegreeParams(3, 2.1).admissible


@given(lam=st.floats(-5, 5), alpha=st.floats(1.5, 5), r=st.floats(1e-3, 10))
def test_gauge_invariant_on_positive_reals(lam, alpha, r):
    seq = CoefficientSeq.gauge_invariant(lam, alpha)
    assert abs(eval_F(seq, r) - lam * r**alpha) <= 1e-12 * max(1.0, abs(lam) * r**alpha)


def test_single_lambda2_value():
    seq = CoefficientSeq.single(2, 1.0, 4.0)
    # |u|^2 u^2 at u = 1 + i, computed by hand
    u = 1 + 1j
    assert abs(eval_F(seq, u) - abs(u) ** 2 * u * u) < 1e-14
    assert abs(eval_F(seq, u) - 4j) < 1e-13


def test_geometric_series_at_one():
    seq = CoefficientSeq.geometric(0.5, 4.0)
    head = sum(0.5 ** (n - 1) for n in range(1, 200))
    assert abs(eval_F(seq, 1.0) - head) < 1e-12
    u = 0.7 * np.exp(0.4j)
    closed = abs(u) ** 4 * u / (abs(u) - 0.5 * u)
    assert abs(eval_F(seq, u) - closed) < 1e-12


@given(alpha=st.floats(1.5, 5), r=st.floats(0.1, 3), t=st.floats(0, 2 * np.pi), s=st.floats(0.1, 5))
def test_homogeneity(alpha, r, t, s):
    seq = CoefficientSeq(alpha, {1: 0.3 - 0.2j, 2: 1.0, 3: 0.1j})
    u = r * np.exp(1j * t)
    assert abs(eval_F(seq, s * u) - s**alpha * eval_F(seq, u)) <= 1e-10 * s**alpha * max(1.0, abs(eval_F(seq, u)))


def _fd_wirtinger(seq, u, h=1e-6):
    fx = (eval_F(seq, u + h) - eval_F(seq, u - h)) / (2 * h)
    fy = (eval_F(seq, u + 1j * h) - eval_F(seq, u - 1j * h)) / (2 * h)
    return 0.5 * (fx - 1j * fy), 0.5 * (fx + 1j * fy)


def test_wirtinger_cubic():
    seq = CoefficientSeq.gauge_invariant(1.0, 3.0)
    dz, dzb = eval_wirtinger(seq, 1.0)
    assert abs(dz - 2) < 1e-12 and abs(dzb - 1) < 1e-12
    fz, fzb = _fd_wirtinger(seq, 1.0)
    assert abs(fz - 2) < 1e-7 and abs(fzb - 1) < 1e-7


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_wirtinger_lambda2(r):
    seq = CoefficientSeq.single(2, 1.0, 4.0)
    dz, dzb = eval_wirtinger(seq, r)
    assert abs(dz - 3 * r**3) < 1e-12 * r**3
    assert abs(dzb - r**3) < 1e-12 * r**3
    fz, fzb = _fd_wirtinger(seq, r)
    assert abs(fz - dz) < 1e-6 * max(1, r**3) and abs(fzb - dzb) < 1e-6 * max(1, r**3)


@given(n=st.integers(-3, 4), t=st.floats(0, 6.2), r=st.floats(0.3, 2))
@settings(max_examples=40)
def test_single_Fn_wirtinger_matches_series_route(n, t, r):
    seq = CoefficientSeq.single(n, 1.0, 4.5)
    u = r * np.exp(1j * t)
    a = eval_wirtinger(seq, u)
    b = eval_Fn_wirtinger(n, 4.5, u)
    assert abs(a[0] - b[0]) < 1e-10 and abs(a[1] - b[1]) < 1e-10
    assert abs(eval_F(seq, u) - eval_Fn(n, 4.5, u)) < 1e-10


def test_wirtinger_at_zero():
    for seq in (CoefficientSeq.single(2, 1.0, 4.0), CoefficientSeq.geometric(0.3, 2.5)):
        assert eval_wirtinger(seq, 0.0) == (0.0, 0.0)


def test_wirtinger_singular_h1_at_one():
    seq = CoefficientSeq.hk_series(1, 4.0)
    with pytest.raises(SingularityError):
        eval_wirtinger(seq, 1.0)


def test_coefficients_from_phase_cases():
    gi = coefficients_from_phase(lambda th: np.exp(1j * th), 8)
    for n in range(-8, 9):
        assert abs(gi.coefficient(n) - (1.0 if n == 1 else 0.0)) < 1e-12
    mod = coefficients_from_phase(lambda th: np.ones_like(th, dtype=complex), 8)
    for n in range(-8, 9):
        assert abs(mod.coefficient(n) - (1.0 if n == 0 else 0.0)) < 1e-12
    a = 0.3
    geo = coefficients_from_phase(lambda th: np.exp(1j * th) / (1 - a * np.exp(1j * th)), 12, quad_points=256)
    for n in range(-12, 13):
        want = a ** (n - 1) if n >= 1 else 0.0
        assert abs(geo.coefficient(n) - want) < 1e-10


@given(coeffs=st.dictionaries(st.integers(-5, 5), st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False), max_size=6))
def test_roundtrip_recovery(coeffs):
    seq = CoefficientSeq(4.0, coeffs)
    back = coefficients_from_phase(lambda th: seq.phase(np.exp(1j * th)), 5, alpha=4.0)
    for n in range(-5, 6):
        assert abs(back.coefficient(n) - coeffs.get(n, 0)) < 1e-10


def test_serialisation_roundtrip():
    seq = CoefficientSeq(3.5, {1: 0.5, 2: -0.25j})
    assert CoefficientSeq.from_json(seq.to_json()).coefficient(2) == -0.25j
    g = CoefficientSeq.hk_series(5, 4.0, 2.0)
    back = CoefficientSeq.from_dict(g.to_dict())
    assert abs(back.coefficient(7) - g.coefficient(7)) < 1e-15


def test_hk_closed_form_matches_series():
    for k in (1, 3, 4, 6):
        seq = CoefficientSeq.hk_series(k, 4.0)
        z = np.array([0.1, 0.5 * np.exp(1j), -0.9, 0.99j])
        ns = np.arange(1, 4000)
        coef = np.array([seq.coefficient(int(n)) for n in ns])
        series = np.array([np.sum(coef * zz ** ns) for zz in z])
        assert np.max(np.abs(seq.phase(z) - series)) < 1e-8


@pytest.mark.parametrize("k,ok", [(1, False), (2, False), (3, False), (4, True), (5, True), (8, True)])
def test_hk_assumption_threshold(k, ok):
    rep = check_assumptions(CoefficientSeq.hk_series(k, 4.0))
    assert rep.a1_pass is ok
    assert rep.a2_pass


def test_a2_fails_for_modulus_type():
    rep = check_assumptions(CoefficientSeq.single(0, 1.0, 4.0))
    assert not rep.a2_pass
    assert check_assumptions(CoefficientSeq.modulus_type(1.0, 4.0)).a2_pass is False


def test_geometric_assumption_sum():
    rep = check_assumptions(CoefficientSeq.geometric(0.5, 4.0))
    direct = sum((1 + n * n) ** 1.75 * 0.5 ** (n - 1) for n in range(1, 400))
    assert rep.a1_pass and rep.a2_pass
    assert rep.a1_sum <= direct <= rep.a1_sum + rep.a1_tail_bound + 1e-9 * direct
