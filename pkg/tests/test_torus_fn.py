import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_fn
from gevkam.torus_fn import (DimensionError, DivergenceError, Frequency, GroupTag, TorusMatFn,
                             algebra_membership, convolve_product, derivative_omega, drop_mean,
                             evaluate, exp_of, from_records, gevrey_upper_bound, grid, to_records,
                             truncate_and_tail)

seeds = st.integers(0, 2**32 - 1)


def pointwise(f, g, th):
    return evaluate(f, th) @ evaluate(g, th)


# --- types -------------------------------------------------------------------

def test_frequency_order_and_integrality():
    m = Frequency.from_half([0.5, -1])
    assert m.doubled == (1, -2)
    assert m.order == 1.5
    assert not m.is_integral
    assert Frequency((2, -4)).is_integral


def test_group_tag_aliases_and_sp_dimension():
    assert GroupTag.parse("sl2") is GroupTag.SL_R
    assert GroupTag.parse("U(n)") is GroupTag.U
    with pytest.raises(ValueError):
        GroupTag.SP_R.check_dimension(3)
    with pytest.raises(ValueError):
        GroupTag.parse("so(3,1)")


def test_real_flag_symmetrizes():
    # projection onto real-valued functions: e^{2 i pi theta} -> cos(2 pi theta)
    f = TorusMatFn.from_modes({(1,): np.eye(2)}, real=True)
    assert np.allclose(f.coeff((-1,)), 0.5 * np.eye(2))
    assert np.allclose(f.coeff((1,)), 0.5 * np.eye(2))


# --- convolution ---------------------------------------------------------------

def test_identity_product(rng):
    g = random_fn(rng, d=2, band=3, nmodes=8)
    out = convolve_product(TorusMatFn.identity(2, 2), g)
    assert np.array_equal(out.freqs, g.freqs)
    assert np.allclose(out.coeffs, g.coeffs, rtol=0, atol=0)


def test_single_mode_product():
    E = np.array([[1, 2], [3, 4]], complex)
    Ep = np.array([[0, 1], [1, 0]], complex)
    f = TorusMatFn.from_modes({(1, 0): E})
    g = TorusMatFn.from_modes({(0, 2): Ep})
    out = convolve_product(f, g)
    assert out.nnz == 1
    assert np.allclose(out.coeff((1, 2)), E @ Ep)


def test_convolution_grid_oracle_64(rng):
    f = random_fn(rng, d=2, band=5, nmodes=12)
    g = random_fn(rng, d=2, band=5, nmodes=12)
    th = grid(2, 64)
    assert np.abs(evaluate(convolve_product(f, g), th) - pointwise(f, g, th)).max() <= 1e-12


def test_convolution_dimension_mismatch(rng):
    with pytest.raises(DimensionError):
        convolve_product(random_fn(rng, n=2), random_fn(rng, n=3))


def test_convolution_truncation_feeds_budget():
    f = TorusMatFn.from_modes({(3,): np.eye(1)})
    out = convolve_product(f, f, max_band=4)
    assert out.nnz == 0
    assert out.budget >= 1.0


@given(seeds)
def test_property_convolution_matches_pointwise(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    f = random_fn(rng, n=2, d=d, band=16, nmodes=6)
    g = random_fn(rng, n=2, d=d, band=16, nmodes=6)
    th = rng.uniform(0, 2, size=(20, d))
    scale = f.l1() * g.l1()
    assert np.abs(evaluate(convolve_product(f, g), th) - pointwise(f, g, th)).max() <= 1e-12 * max(1, scale)


# --- derivative -------------------------------------------------------------

def test_derivative_of_constant_is_zero():
    f = TorusMatFn.constant(np.eye(2), 2)
    assert derivative_omega(f, [1, 0.3]).nnz == 0


def test_derivative_direct_formula():
    f = TorusMatFn.from_modes({(1,): np.eye(1)})
    assert np.isclose(derivative_omega(f, [0.5]).coeff((1,))[0, 0], 1j * np.pi)


def test_derivative_finite_difference(rng):
    f = random_fn(rng, d=2, band=4, nmodes=10)
    w = np.array([1.0, (math.sqrt(5) - 1) / 2])
    df = derivative_omega(f, w)
    h = 1e-6
    for th in rng.uniform(0, 2, size=(10, 2)):
        fd = (evaluate(f, th + h * w) - evaluate(f, th - h * w)) / (2 * h)
        assert np.abs(fd - evaluate(df, th)).max() <= 1e-6 * max(1, f.l1())


@given(seeds)
def test_property_derivation_rule(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1, 1, size=2)
    f = random_fn(rng, d=2, band=4, nmodes=5, half=True)
    g = random_fn(rng, d=2, band=4, nmodes=5, half=True)
    lhs = derivative_omega(convolve_product(f, g), w)
    rhs = convolve_product(derivative_omega(f, w), g) + convolve_product(f, derivative_omega(g, w))
    assert (lhs - rhs).max_coeff() <= 1e-11 * (1 + lhs.l1())


# --- Gevrey surrogate -----------------------------------------------------------

def test_gevrey_identity_and_weight():
    assert gevrey_upper_bound(TorusMatFn.identity(2, 2), 0.5) == 1.0
    f = TorusMatFn.from_modes({(1, 0): np.eye(2)})
    assert np.isclose(gevrey_upper_bound(f, 1.0), math.exp(2 * math.pi))
    assert np.isclose(math.exp(2 * math.pi), 535.49, atol=5e-3)


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5])
def test_gevrey_r_out_of_range(r):
    with pytest.raises(ValueError):
        gevrey_upper_bound(TorusMatFn.identity(1, 1), r)


@given(seeds)
def test_property_gevrey_norm_axioms(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, d=2, band=5, nmodes=6, half=True)
    g = random_fn(rng, d=2, band=5, nmodes=6, half=True)
    r1, r2 = sorted(rng.uniform(0.05, 1, size=2))
    assert gevrey_upper_bound(f, r1) <= gevrey_upper_bound(f, r2)
    S = lambda h: gevrey_upper_bound(h, r2)  # noqa: E731
    assert S(f + g) <= (S(f) + S(g)) * (1 + 1e-14)
    assert S(convolve_product(f, g)) <= S(f) * S(g) * (1 + 1e-12)


# --- truncation -------------------------------------------------------------

def test_truncate_noop_and_support_filter():
    f = TorusMatFn.from_modes({(0,): np.eye(1), (1,): 2 * np.eye(1), (3,): 3 * np.eye(1)})
    g, t = truncate_and_tail(f, 5)
    assert g.nnz == 3 and t == 0
    g, t = truncate_and_tail(f, 2)
    assert sorted(int(k[0]) for k in g.freqs) == [0, 2]
    assert t == 3.0


def test_tail_of_gevrey_family_decreases():
    f = TorusMatFn.from_modes({(m,): np.exp(-2 * math.sqrt(abs(m))) * np.eye(1) for m in range(-400, 401)})
    tails = [truncate_and_tail(f, N)[1] for N in (4, 16, 64)]
    assert tails[0] > tails[1] > tails[2]
    assert tails[2] / tails[1] < tails[1] / tails[0] < 1


@given(seeds)
def test_property_budget_never_decreases(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, d=2, band=6, nmodes=8).with_(budget=rng.uniform(0, 1e-3))
    g = random_fn(rng, d=2, band=6, nmodes=8).with_(budget=rng.uniform(0, 1e-3))
    w = rng.uniform(-1, 1, size=2)
    N = float(rng.integers(0, 7))
    # products propagate the input budgets through the factor norms
    Sf, Sg = f.norms.sum(), g.norms.sum()
    inherited = Sf * g.budget + f.budget * Sg + f.budget * g.budget
    assert convolve_product(f, g, max_band=N).budget >= inherited
    wmax = np.abs(w).max()
    assert derivative_omega(f, w).budget >= 2 * np.pi * wmax * max(f.bandwidth, 1) * f.budget
    assert truncate_and_tail(f, N)[0].budget >= f.budget
    assert (f + g).budget >= f.budget
    assert f.scale(1.0).budget >= f.budget


@given(seeds)
def test_property_realness_closed(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, d=2, band=4, nmodes=6, real=True, half=True)
    g = random_fn(rng, d=2, band=4, nmodes=6, real=True, half=True)
    th = rng.uniform(0, 2, size=(8, 2))
    for h in (convolve_product(f, g), derivative_omega(f, [1, 0.6]), truncate_and_tail(f, 2)[0]):
        assert h.real
        assert np.abs(evaluate(h, th).imag).max() <= 1e-12 * (1 + h.l1())


# --- exponential --------------------------------------------------------------

def test_exp_zero_and_nilpotent():
    e = exp_of(TorusMatFn.zeros(2, 1), taylor_tol=1e-20)
    assert np.allclose(e.mean(), np.eye(2)) and e.nnz == 1
    X = TorusMatFn.constant(np.array([[0, 0.3], [0, 0]]), 1)
    assert np.allclose(exp_of(X, taylor_tol=1e-20).mean(), [[1, 0.3], [0, 1]], atol=1e-16)


def test_exp_scalar_series():
    c = 0.2 + 0.1j
    X = TorusMatFn.from_modes({(1,): c * np.eye(1)})
    E = exp_of(X, taylor_tol=1e-22)
    for k in range(6):
        assert abs(E.coeff((k,))[0, 0] - c ** k / math.factorial(k)) <= 1e-16


def test_exp_refuses_large_argument():
    with pytest.raises(DivergenceError):
        exp_of(TorusMatFn.constant(2 * np.eye(2), 1))


def test_exp_matches_scipy_pointwise(rng):
    from scipy.linalg import expm
    X = random_fn(rng, d=1, band=3, nmodes=4)
    X = X.scale(0.3 / X.l1())
    E = exp_of(X, taylor_tol=1e-20)
    for th in rng.uniform(0, 2, size=(5, 1)):
        assert np.abs(evaluate(E, th) - expm(evaluate(X, th))).max() <= 1e-14 + E.budget


# --- evaluation -------------------------------------------------------------

def test_evaluate_constant_and_half_frequency():
    M = np.array([[1, 2], [3, 4]], complex)
    assert np.allclose(evaluate(TorusMatFn.constant(M, 2), [0.3, 1.7]), M)
    f = TorusMatFn.from_modes({(0.5,): np.eye(1)})
    assert np.isclose(evaluate(f, [1.0])[0, 0], -1)


def test_parseval(rng):
    f = random_fn(rng, d=1, band=32, nmodes=20)
    th = np.arange(128)[:, None] / 128 * 2 / 2  # integer modes: one period of T^1
    vals = evaluate(f, th)
    lhs = np.mean(np.sum(np.abs(vals) ** 2, axis=(1, 2)))
    rhs = np.sum(np.abs(f.coeffs) ** 2)
    assert abs(lhs - rhs) <= 1e-10 * rhs


# --- algebra membership ----------------------------------------------------------

def test_membership_zero_and_canonical():
    z = TorusMatFn.zeros(2, 2)
    for tag in GroupTag:
        assert algebra_membership(z, tag)[0]
    R = TorusMatFn.constant(np.array([[0, 1], [-1, 0]]), 2)
    for tag in (GroupTag.O, GroupTag.SL_R, GroupTag.SP_R):
        assert algebra_membership(R, tag)[0]


def test_membership_hermitian_fails_for_u(rng):
    Z = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    H = Z + Z.conj().T
    ok, v = algebra_membership(TorusMatFn.constant(H, 1), GroupTag.U)
    assert not ok
    assert np.isclose(v, 2 * np.linalg.norm(H, 2))
    assert algebra_membership(TorusMatFn.constant(1j * H, 1), GroupTag.U)[0]


# --- serialization --------------------------------------------------------------

@given(seeds)
def test_property_records_round_trip(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, n=2, d=2, band=5, nmodes=7, half=True)
    g = from_records(to_records(f), 2, 2)
    assert np.array_equal(f.freqs, g.freqs)
    assert np.array_equal(f.coeffs, g.coeffs)


def test_drop_mean_removes_zero_mode(rng):
    f = random_fn(rng, d=2, band=2, nmodes=6) + np.eye(2)
    assert not np.any(drop_mean(f).mean())
