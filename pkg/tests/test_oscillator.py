import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlslab.oscillator import (
    LREST2,
    HermiteBasis,
    ResolventSpec,
    TruncationError,
    apply_resolvent_direct,
    apply_resolvent_factorized,
    build_dRn_dt,
    build_Hn,
    build_Htilde,
    build_Vn,
    decade_growth,
    lrest2_bounds,
    lrest2_value,
    os_eigen_factors,
    os_operator_norm,
    resolvent_generator,
    resolvent_matrix,
    rest_derivative_bound,
    rest_derivative_norm,
    resolvent_norm_scaling,
    vn_derivative_order,
    write_lemma_csv,
)
from nlslab.oscillator import _dHn_dt
from nlslab.spectral import Field, Grid

A0 = 1.5


@pytest.fixture(scope="module")
def dense():
    return Grid(1, 256, 12.0)


def _gauss(g, shift=0.0):
    return np.exp(-0.5 * (g.x1 - shift) ** 2) * (1 + 0.2j * g.x1)


def test_hermite_basis_orthonormal(dense):
    b = HermiteBasis(dense, 64)
    assert b.size < 64  # capped by the box and the grid cutoff
    assert b.gram_error() < 1e-9
    assert HermiteBasis(Grid(1, 512, 16.0), 64).gram_error() < 1e-13
    assert np.allclose(b.eigenvalues[:3], [1, 3, 5])


def test_hamiltonians_are_hermitian(dense):
    for n, t in [(2, 0.5), (5, 1.0)]:
        assert build_Hn(dense, n, t).hermitian_defect() < 1e-10
        assert build_Htilde(dense, n, t).hermitian_defect() < 1e-10
    with pytest.raises(ValueError):
        build_Hn(dense, 1, 0.5)


def test_vn_n1_is_free_flow(dense):
    f = _gauss(dense)
    assert np.max(np.abs(build_Vn(dense, 1, 0.7)(f) - dense.propagate(f, -0.7))) < 1e-13


@pytest.mark.parametrize("n,t", [(2, 0.3), (4, 1.2)])
def test_vn_unitary(dense, n, t):
    f = _gauss(dense)
    assert abs(dense.l2(build_Vn(dense, n, t)(f)) - dense.l2(f)) < 1e-12


def test_vn_derivative_second_order():
    g = Grid(1, 512, 16.0)
    orders = vn_derivative_order(g, 3, 0.5, np.exp(-0.5 * g.r2))
    assert all(abs(o - 2.0) <= 0.2 for o in orders)


@pytest.mark.parametrize("n,t", [(2, 0.25), (3, 0.5), (10, 1.0)])
def test_direct_resolvent_inverts_generator(dense, n, t):
    spec = ResolventSpec(n, A0, t)
    f = Field(dense, _gauss(dense))
    w = apply_resolvent_direct(spec, f, check=True)
    back = resolvent_generator(dense, spec) @ w.values
    assert dense.l2(back - f.values) <= 1e-9 * dense.l2(f.values)


@pytest.mark.parametrize("kind,n", [("plain", 2), ("plain", 3), ("plain", 10), ("tilde", 2), ("tilde", 3)])
@pytest.mark.parametrize("t", [0.25, 0.5, 1.0])
def test_factorized_matches_direct(kind, n, t):
    # tilde at n=10 carries a chirp beyond the grid cutoff, so it is left out
    g = Grid(1, 1024, 16.0)
    spec = ResolventSpec(n, A0, t, kind)
    f = Field(g, np.exp(-0.5 * g.r2))
    a = apply_resolvent_direct(spec, f).values
    b = apply_resolvent_factorized(spec, f).values
    assert g.l2(a - b) <= 1e-6 * g.l2(a)


def test_power_zero_is_identity(dense):
    f = Field(dense, np.exp(-0.5 * dense.r2))
    out = apply_resolvent_factorized(ResolventSpec(3, A0, 0.5, theta=0.0), f)
    assert dense.l2(out.values - f.values) < 1e-8 * dense.l2(f.values)


def test_half_powers_compose(dense):
    f = Field(dense, np.exp(-0.5 * dense.r2))
    half = ResolventSpec(3, A0, 0.5, theta=0.5)
    twice = apply_resolvent_factorized(half, apply_resolvent_factorized(half, f))
    once = apply_resolvent_factorized(ResolventSpec(3, A0, 0.5), f)
    assert dense.l2(twice.values - once.values) < 1e-8 * dense.l2(once.values)


@pytest.mark.parametrize("n", [2, 5])
def test_ground_state_eigenvector(n):
    g = Grid(1, 512, 16.0)
    t = np.sqrt(n - 1.0)  # beta = 1
    h0 = np.pi**-0.25 * np.exp(-0.5 * g.r2)
    f = Field(g, g.propagate(h0, -t))
    mu0 = (A0 - 1 + 0.5j * np.sqrt(n - 1.0)) ** -1
    for route in (apply_resolvent_factorized, apply_resolvent_direct):
        out = route(ResolventSpec(n, A0, t), f).values
        assert g.l2(out - mu0 * f.values) < 1e-8


def test_truncation_guard():
    g = Grid(1, 64, 4.0)
    wide = Field(g, np.exp(-0.5 * (g.x1 / 3.0) ** 2) * np.cos(6 * g.x1))
    with pytest.raises(TruncationError):
        apply_resolvent_factorized(ResolventSpec(2, A0, 0.05), wide, K=8)


@pytest.mark.parametrize("n", [2, 5, 10, 100])
def test_os_norm_closed_form(n):
    closed = ((A0 - 1) ** 2 + (n - 1) / 4) ** -0.5
    assert abs(os_operator_norm("R", n, A0) - closed) <= 1e-8 * closed


def test_dense_resolvent_norm_matches_spectrum():
    g = Grid(1, 256, 12.0)
    for n, t in [(2, 0.5), (5, 1.0)]:
        meas = resolvent_matrix(g, ResolventSpec(n, A0, t)).norm()
        closed = ((A0 - 1) ** 2 + (n - 1) / 4) ** -0.5
        assert abs(meas - closed) / closed < 0.01


def test_rest_bounds_bounded():
    ns = [2, 4, 8, 16, 32, 64, 128, 256]
    rows = lrest2_bounds(ns, [0.25, 1.0], 2.0, "Rest3", A0, K=128)
    assert all(r.passed for r in rows)
    comp = [r.compensated for r in rows if r.t == 1.0]
    assert max(comp) < 2.5
    rows = lrest2_bounds(ns, [1.0], 1.0, "pcx_weight", A0, K=128)
    assert all(r.passed for r in rows)


@pytest.mark.parametrize("which", LREST2)
def test_gamma_zero_is_one(which):
    meas, _ = lrest2_value(which, 7, 0.0, A0, K=64)
    assert abs(meas - 1.0) < 1e-10


def test_gamma_range_checked():
    with pytest.raises(ValueError):
        lrest2_bounds([2], [1.0], 2.5, "Rest0")


@pytest.mark.parametrize("op", ["p2R", "x2R", "AR"])
def test_norms_increase_with_K(op):
    vals = [os_operator_norm(op, 5, A0, 1.0, K) for K in (32, 64, 128)]
    assert vals[0] <= vals[1] * (1 + 1e-12) and vals[1] <= vals[2] * (1 + 1e-12)


def test_compression_stable_in_K():
    for op in ("p2R", "AR"):
        a, b = os_operator_norm(op, 10, A0, 1.0, 128), os_operator_norm(op, 10, A0, 1.0, 256)
        assert abs(a - b) / b < 0.01


def test_derivative_norm_oscillator_vs_dense():
    g = Grid(1, 512, 14.0)
    for n, t in [(2, 0.5), (3, 1.0)]:
        dense_norm = build_dRn_dt(g, n, t, A0).norm()
        osc = rest_derivative_norm(n, t, A0)
        assert abs(dense_norm - osc) / osc < 0.02


def test_derivative_finite_difference_order(dense):
    n, t = 3, 0.5
    v = _gauss(dense)
    dR = build_dRn_dt(dense, n, t, A0).entries @ v

    def err(h):
        rp = resolvent_matrix(dense, ResolventSpec(n, A0, t + h)).entries @ v
        rm = resolvent_matrix(dense, ResolventSpec(n, A0, t - h)).entries @ v
        return dense.l2((rp - rm) / (2 * h) - dR)

    slope = np.log(err(1e-2) / err(5e-3)) / np.log(2.0)
    assert abs(slope - 2.0) <= 0.2


def test_derivative_identity(dense):
    n, t = 4, 0.75
    R = resolvent_matrix(dense, ResolventSpec(n, A0, t)).entries
    dR = build_dRn_dt(dense, n, t, A0).entries
    H = build_Hn(dense, n, t).entries
    res = dR @ ((A0 - 1) * np.eye(dense.n) + 1j * t * H) + R @ (1j * H + 1j * t * _dHn_dt(dense, n, t))
    v = _gauss(dense)
    assert dense.l2(res @ v) <= 1e-8 * dense.l2(v)


def test_k5_bound_bounded():
    rows = rest_derivative_bound([2, 4, 8, 16, 32, 64], [0.1, 0.5, 1.0], A0, K=128)
    assert all(r.passed for r in rows)
    # the t^-1 law is exact in this representation
    a = rest_derivative_norm(5, 0.1, A0, 64)
    b = rest_derivative_norm(5, 1.0, A0, 64)
    assert abs(a / b - 10.0) < 1e-10


def test_compensated_R_is_exactly_two():
    rows = resolvent_norm_scaling([2, 5, 10, 100, 1024], A0, bound_id="K2_16_1", K=64)
    assert all(abs(r.compensated - 2.0) < 1e-12 for r in rows)


def test_decade_growth():
    assert decade_growth([1, 5, 10, 100], [1.0, 1.1, 1.2, 1.0]) == pytest.approx(0.2)
    assert decade_growth([1, 100], [1.0, 5.0]) == 0.0  # more than a decade apart
    assert decade_growth([1, 2, 3], [3.0, 2.0, 1.0]) == 0.0


@given(n=st.integers(2, 500), theta=st.floats(0.0, 2.0))
@settings(max_examples=30)
def test_eigen_factor_moduli_decrease(n, theta):
    mu = np.abs(os_eigen_factors(n, A0, theta, 50))
    assert np.all(np.diff(mu) <= 1e-15)


def test_write_lemma_csv(tmp_path):
    rows = resolvent_norm_scaling([2, 5], A0, K=16)
    write_lemma_csv(rows, tmp_path / "l.csv")
    with open(tmp_path / "l.csv") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["lemma_id", "n", "t", "gamma/theta", "measured", "compensated", "pass"]
    assert len(got) == 3
