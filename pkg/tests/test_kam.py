import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import reference_run
from gevkam.arithmetic import DiophantineData
from gevkam.instances import REFERENCE_A, reference_A, reference_dd, reference_perturbation
from gevkam.kam import (KamError, KamParams, calibrate_schedule_constant, double_step,
                        inductive_step, new_perturbation, nr_persistence_check, run, schedule,
                        step_sizes)
from gevkam.renorm import PeriodicityLedger
from gevkam.spectral import classify_decomposition, cluster_decomposition, trivial_decomposition
from gevkam.torus_fn import GroupTag, TorusMatFn, gevrey_upper_bound

DD = reference_dd()
seeds = st.integers(0, 2**32 - 1)


def params(**kw):
    kw.setdefault("dd", DD)
    return KamParams(**kw)


# --- step sizes and schedule ------------------------------------------------------

def test_step_sizes_faithful():
    p = params(dd=DiophantineData((0.618,), 0.1, 2), mode="faithful")
    N, _, _ = step_sizes(math.exp(-2), p, 2)
    assert N == math.ceil((4 * math.e) ** 2 * 16) == 1892
    p2 = params(dd=DiophantineData((0.618,), 0.1, 2), mode="faithful")
    _, k2, _ = step_sizes(math.exp(-2), p2, 2)
    assert k2 == pytest.approx(0.1 / (9 * 2 * 1892) ** 2)
    assert k2 == pytest.approx(8.62e-11, rel=1e-3)


def test_step_sizes_r_prime_and_errors():
    for mode in ("faithful", "practical"):
        assert step_sizes(1e-4, params(mode=mode), 2)[2] == pytest.approx(0.011789, rel=1e-4)
    assert step_sizes(1e-3, params(c_N=2), 2)[0] == math.ceil(2 * math.log(1e3) ** 4)
    with pytest.raises(ValueError):
        step_sizes(1.0, params(), 2)


def test_schedule_examples():
    rep = schedule(1e-4, gamma0=6, b0=1, Cp=1, kmax=3)
    eps = [math.exp(r.log_eps) for r in rep.rows]
    assert eps[1] == pytest.approx(1e-10) and eps[2] == pytest.approx(1e-25)
    assert rep.rows[2].gamma == 24
    # b_1 = b_0 + (ln 1e4)^4 / C'
    assert math.exp(rep.rows[1].log_b1) - 1 == pytest.approx(1 + math.log(1e4) ** 4)
    assert math.exp(rep.rows[1].log_b1) - 1 == pytest.approx(7197.19, rel=1e-5)


def test_schedule_handles_underflow():
    rep = schedule(log_eps0=-1e5, kmax=30)
    assert all(math.isfinite(r.log_eps) for r in rep.rows)
    assert rep.rows[30].log_eps == pytest.approx(-1e5 * 2.5 ** 30)


@pytest.mark.parametrize("gamma0,b0,tau", [(6, 1, 1.5), (12, 10, 2)])
def test_schedule_calibration_sharp(gamma0, b0, tau):
    logC = calibrate_schedule_constant(gamma0, b0, tau)
    log_gate = logC - 16 * gamma0 * math.log(b0 + 1)
    good = schedule(log_eps0=log_gate, gamma0=gamma0, b0=b0, tau=tau, log_C=logC)
    assert good.feasible and good.gate_ok
    bad = schedule(log_eps0=log_gate + math.log(10), gamma0=gamma0, b0=b0, tau=tau, log_C=logC)
    assert not bad.feasible and bad.infeasible_steps


def test_constants_ledger_gamma_bar():
    p = params()
    assert p.constants.gamma_bar(2) == 6
    p.constants.set("C0", 2.0 ** 20)
    assert p.constants.gamma_bar(2) == 10
    assert (2.0 ** 20) ** (1 / (2 * 10)) <= 2 + 1e-12


# --- persistence ------------------------------------------------------------------

def test_persistence_zero_mean():
    rep = nr_persistence_check(REFERENCE_A, np.zeros((2, 2)), 1e-3, 8, params())
    assert rep["direct"] and rep["margin_ratio"] >= 0.75


def test_persistence_sufficient_fails_direct_passes():
    F0 = np.array([[0.0, 1e-3], [-1e-3, 0.0]])
    rep = nr_persistence_check(REFERENCE_A, F0, 1e-3, 8, params())
    assert not rep["sufficient"] and rep["direct"]


def test_persistence_onto_resonance():
    m0 = np.array([1, -1])
    rho = math.pi * (m0 @ DD.w)
    A = np.array([[0.0, rho + 1e-2], [-(rho + 1e-2), 0.0]])
    F0 = np.array([[0.0, -1e-2], [1e-2, 0.0]])
    rep = nr_persistence_check(A, F0, 1e-3, 8, params())
    assert not rep["direct"]
    found = {tuple(int(x) for x in v[0].half()) for v in rep["direct_report"].violations}
    assert (1, -1) in found or (-1, 1) in found


# --- inductive step ----------------------------------------------------------------

def _dec(A):
    return classify_decomposition(cluster_decomposition(A, 0.0))


def test_inductive_step_zero():
    F = TorusMatFn.zeros(2, 2)
    out = inductive_step(REFERENCE_A, _dec(REFERENCE_A), F, 8, 1e-3, params())
    assert out.X.nnz == 0 and np.array_equal(out.A1, REFERENCE_A) and out.F1.nnz == 0


@pytest.mark.parametrize("seed", range(5))
def test_scalar_collapse(seed):
    rng = np.random.default_rng(seed)
    dd = DiophantineData((1.0, 0.6180339887498949), 0.1, 1.5)
    modes = {}
    for m in [(0, 0), (1, 0), (0, 1), (1, -1), (2, 1), (-1, -1)]:
        modes[m] = np.array([[1e-3 * (rng.normal() + 1j * rng.normal())]])
    F = TorusMatFn.from_modes(modes)
    A = np.array([[0.3j]])
    out = inductive_step(A, _dec(A), F, 4, 1e-3, params(dd=dd, group="gl_c"))
    assert gevrey_upper_bound(out.F1, 0.5) <= 1e-12
    assert out.A1[0, 0] == pytest.approx(A[0, 0] + modes[(0, 0)][0, 0])


def test_reference_inductive_step_decay():
    F = reference_perturbation("sl2", seed=0, size=1e-3)
    out = inductive_step(REFERENCE_A, _dec(REFERENCE_A), F, 64, 1e-6, params())
    S0, S1 = gevrey_upper_bound(F, 0.5), gevrey_upper_bound(out.F1, 0.5)
    assert S1 <= S0 ** 1.5
    ok = np.abs(out.A1 - REFERENCE_A - F.mean()).max()
    assert ok <= 1e-15


def test_new_perturbation_outside_regime():
    X = TorusMatFn.from_modes({(1, 0): np.eye(2) * 2.0})
    F = TorusMatFn.from_modes({(1, 0): np.eye(2) * 1e-3})
    with pytest.raises(KamError):
        new_perturbation(REFERENCE_A, F, X, 8, 64)


# --- double step and driver ----------------------------------------------------------

def _state(A, F, p):
    from gevkam.kam import KamState
    n, d = A.shape[0], F.d
    dec = trivial_decomposition(A)
    I = TorusMatFn.identity(n, d)
    return KamState(0, A, I, I, F, I, max(gevrey_upper_bound(F, p.r), 1e-300), p.r, p.dd.kappa, 6, 1.0,
                    PeriodicityLedger.trivial(dec, d), dec)


def test_double_step_zero_is_fixed_point():
    p = params()
    st0 = _state(REFERENCE_A, TorusMatFn.zeros(2, 2), p)
    st0.eps = 1e-3
    new, rec = double_step(st0, p)
    assert new.F.nnz == 0
    assert new.Z.nnz == 1 and np.allclose(new.Z.coeffs[0], np.eye(2))


def test_run_zero_perturbation():
    res = run(REFERENCE_A, TorusMatFn.zeros(2, 2), params())
    assert res.success and res.steps == 0
    assert np.allclose(res.Z.coeffs[0], np.eye(2)) and res.Z.nnz == 1


def test_run_rejects_non_algebra_F():
    F = TorusMatFn.from_modes({(1, 0): np.eye(2) * 1e-4}, real=True)
    with pytest.raises(KamError, match="F not in"):
        run(REFERENCE_A, F, params())


def test_run_rejects_half_integer_F():
    F = TorusMatFn.from_modes({(1, 0): np.array([[0, 1e-4], [1e-4, 0]])}, doubled=True, real=True)
    with pytest.raises(KamError, match="half-integer"):
        run(REFERENCE_A, F, params())


def test_run_smallness_gate():
    F = reference_perturbation("sl2", size=0.5)
    with pytest.raises(KamError, match="smallness"):
        run(REFERENCE_A, F, params(eps0=1e-2))


def test_reference_target_within_three_steps():
    A, F, p, res = reference_run("sl2", target=1e-9, steps=3)
    assert res.success and res.steps <= 3
    assert all(c["conjugacy_ok"] for c in res.step_checks)


def test_reference_regression_decay():
    A, F, p, res = reference_run("sl2")
    S = [r["S_Fk"] for r in res.rows]
    assert res.success and len(S) == 4
    for a, b in zip(S, S[1:]):
        assert b <= a / 10
        assert math.log(b) <= 1.5 * math.log(a)
    assert [r["k"] for r in res.rows] == [0, 1, 2, 3]
    assert np.linalg.norm(res.A_eps - REFERENCE_A, 2) <= 1e-2


def test_reference_run_columns():
    from gevkam.kam import REPORT_COLUMNS
    _, _, _, res = reference_run("sl2")
    for row in res.rows:
        assert tuple(row) == REPORT_COLUMNS


# --- driver invariants on a random ensemble --------------------------------------------

@settings(max_examples=100)
@given(seeds, st.sampled_from(["sl2", "sp2", "gl_r", "o2", "u2", "gl_c"]))
def test_property_driver_invariants(seed, group):
    rng = np.random.default_rng(seed)
    tag = GroupTag.parse(group)
    A = reference_A(tag) * float(rng.uniform(0.5, 1.5))
    F = reference_perturbation(tag, seed=int(rng.integers(0, 2**31)), size=float(10 ** rng.uniform(-4, -3)),
                               radius=1)
    p = params(group=tag, max_band=8, target_eps=1e-25, max_steps=2)
    res = run(A, F, p)
    assert res.success, res.message
    S = [r["S_Fk"] for r in res.rows]
    for a, b in zip(S, S[1:]):
        assert math.log(b) <= 1.5 * math.log(a)  # superlinear decay
    for c in res.step_checks:
        assert c["conjugacy_ok"], c  # conjugacy chain within the accumulated budget
        assert c["Z_group_ok"], c
        assert c["single_doubling"]
        if not tag.is_real:
            assert c["Z_integral"] and c["labels_integral"]
