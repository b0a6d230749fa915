import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gevkam.arithmetic import (DiophantineData, diophantine_check, lattice_vectors,
                               spectrum_dc_check)

GOLD = (math.sqrt(5) - 1) / 2
seeds = st.integers(0, 2**32 - 1)


def brute_force(omega, kappa, tau, N):
    """Independent scan with plain Python loops."""
    bad = []
    for a in range(-N, N + 1):
        for b in range(-N, N + 1):
            o = abs(a) + abs(b)
            if 0 < o <= N and abs(a * omega[0] + b * omega[1]) < kappa / o ** tau:
                bad.append((a, b))
    return bad


def test_data_validation():
    with pytest.raises(ValueError):
        DiophantineData((1.5,), 0.1, 1.5)
    with pytest.raises(ValueError):
        DiophantineData((1.0, 0.5), 1.2, 1.5)
    with pytest.raises(ValueError):
        DiophantineData((1.0, 0.5), 0.1, 0.5)


def test_one_dimensional_pass():
    assert diophantine_check(DiophantineData((GOLD,), 0.3, 1), 100).passed


def test_golden_two_dimensional_pass():
    rep = diophantine_check(DiophantineData((1.0, GOLD), 0.2, 1), 200)
    assert rep.passed
    assert brute_force((1.0, GOLD), 0.2, 1, 60) == []


def test_rational_resonance():
    rep = diophantine_check(DiophantineData((1.0, 0.5), 0.01, 1.5), 5)
    assert not rep.passed
    found = {tuple(int(x) for x in v[0].half()) for v in rep.violations}
    assert (1, -2) in found and (-1, 2) in found


def test_violations_match_brute_force():
    omega, kappa, tau, N = (1.0, 0.37), 0.3, 1.5, 12
    rep = diophantine_check(DiophantineData(omega, kappa, tau), N)
    found = sorted(tuple(int(x) for x in v[0].half()) for v in rep.violations)
    assert found == sorted(brute_force(omega, kappa, tau, N))


def test_spectrum_zero_matrix_reduces_to_diophantine():
    dd = DiophantineData((1.0, GOLD), 0.1, 1.5)
    assert diophantine_check(dd, 30).passed
    assert spectrum_dc_check(np.zeros((1, 1)), dd, 2 * math.pi * dd.kappa, 30).passed


def test_constructed_resonance():
    dd = DiophantineData((1.0, GOLD), 0.1, 1.5)
    m0 = np.array([2, -3])
    A = np.diag([2j * math.pi * (m0 @ dd.w), 0])
    rep = spectrum_dc_check(A, dd, 1e-3, 8)
    assert not rep.passed
    found = {tuple(int(x) for x in v[0].half()) for v in rep.violations}
    assert (2, -3) in found


def test_real_spectrum_passes_with_margin():
    dd = DiophantineData((1.0, GOLD), 0.1, 2)
    rep = spectrum_dc_check(np.diag([0.0, 1.0]), dd, 1e-3, 50)
    assert rep.passed and rep.margin > 1e-3


def test_enumeration_order_shells_then_lex():
    v = lattice_vectors(2, 2, "half")
    orders = np.abs(v).sum(axis=1)
    assert np.all(np.diff(orders) >= 0)
    for o in np.unique(orders):
        shell = [tuple(x) for x in v[orders == o]]
        assert shell == sorted(shell)


@given(seeds)
def test_property_monotone(seed):
    rng = np.random.default_rng(seed)
    dd = DiophantineData((1.0, float(rng.uniform(0.1, 0.9))), 0.05, 1.5)
    A = rng.normal(size=(2, 2))
    kp = float(10 ** rng.uniform(-4, -1))
    N = int(rng.integers(2, 12))
    if spectrum_dc_check(A, dd, kp, N).passed:
        assert spectrum_dc_check(A, dd, kp * rng.uniform(0, 1), int(rng.integers(1, N + 1))).passed


@given(seeds)
def test_property_margin_reproducible(seed):
    rng = np.random.default_rng(seed)
    dd = DiophantineData((1.0, float(rng.uniform(0.1, 0.9))), 0.05, 1.5)
    A = rng.normal(size=(3, 3))
    r1 = spectrum_dc_check(A, dd, 1e-3, 10, "half")
    r2 = spectrum_dc_check(A, dd, 1e-3, 10, "half")
    assert r1.margin == r2.margin and len(r1.violations) == len(r2.violations)


@given(seeds)
def test_property_even_half_lattice_equals_integer(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 10))
    d = int(rng.integers(1, 4))
    half = lattice_vectors(d, N, "half")
    even = half[np.all(half % 2 == 0, axis=1)]
    assert np.array_equal(even, lattice_vectors(d, N, "integer"))


@given(seeds)
def test_property_violations_are_exactly_bound_failures(seed):
    rng = np.random.default_rng(seed)
    dd = DiophantineData((1.0, float(rng.uniform(0, 1))), float(rng.uniform(0.01, 0.5)), 1.5)
    rep = diophantine_check(dd, 8)
    for m, val, bound in rep.violations:
        assert val < bound
    assert len(rep.violations) == len(brute_force(dd.omega, dd.kappa, dd.tau, 8))
