"""The KAM iteration: inductive step, double step with renormalization, schedule, driver."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .arithmetic import DiophantineData, spectrum_dc_check
from .homological import solve_homological
from .renorm import (PeriodicityLedger, TrivialMap, build_renormalization, good_periodicity_check,
                     kappa_double_prime, merge_periodicity, trivial_conjugate)
from .spectral import cluster_decomposition, meet_decompositions, trivial_decomposition
from .torus_fn import (GroupTag, TorusMatFn, algebra_membership, convolve_product,
                       derivative_omega, drop_mean, exp_series, gevrey_upper_bound,
                       matrix_in_algebra, truncate_and_tail)


class KamError(RuntimeError):
    """A step or gate failed; ``forensics`` says which hypothesis and with what margins."""

    def __init__(self, msg: str, forensics: dict | None = None):
        super().__init__(msg)
        self.forensics = forensics or {}


# ----------------------------------------------------------------------------
# constants


@dataclass
class Constant:
    value: float
    note: str
    status: str = "default"


def _default_constants() -> dict:
    c = {
        "C0": Constant(1.0, "projection-norm bound constant; calibrate with spectral.calibrate_c0"),
        "C'": Constant(1.0, "schedule constant, required <= 1"),
        "C''": Constant(1.0, "renormalization norm bound constant"),
        "C~'": Constant(1.0, "homological estimate constant (diagnostic ratio only)"),
        "D": Constant(1.0, "truncation tail exponent"),
        "D'": Constant(1.0, "homological estimate exponent"),
        "D1": Constant(1.0, "iteration exponent"),
        "D2": Constant(1.0, "schedule exponent (integer)"),
        "D3": Constant(1.0, "smallness gate exponent"),
        "c": Constant(1.0, "spectral persistence constant"),
        "c_d": Constant(1.0, "tail constant"),
        "C_d": Constant(1.0, "truncation constant"),
        "psi_exp_hyp": Constant(1 / 96, "growth exponent on |Psi| in the double-step hypothesis"),
        "psi_exp_proof": Constant(1 / 40, "growth exponent derived for the composite"),
    }
    return c


@dataclass
class ConstantsLedger:
    entries: dict = field(default_factory=_default_constants)

    def __getitem__(self, key: str) -> float:
        return self.entries[key].value

    def set(self, key: str, value: float, note: str | None = None, status: str = "configured"):
        old = self.entries.get(key)
        self.entries[key] = Constant(float(value), note or (old.note if old else ""), status)

    def gamma_bar(self, n: int) -> int:
        """Smallest admissible gamma-bar with C0^{1/(2 gamma-bar)} <= 2, at least n(n+1)."""
        c0 = self["C0"]
        need = math.ceil(math.log2(c0) / 2) if c0 > 1 else 1
        return max(n * (n + 1), need)

    def to_dict(self) -> dict:
        return {k: {"value": v.value, "note": v.note, "status": v.status} for k, v in self.entries.items()}


# ----------------------------------------------------------------------------
# parameters and state


@dataclass
class KamParams:
    dd: DiophantineData
    group: GroupTag = GroupTag.SL_R
    mode: str = "practical"
    c_N: float = 2.0
    max_band: float = 64
    taylor_tol: float = 1e-18
    target_eps: float = 1e-9
    max_steps: int = 10
    eps0: float = 1e-2
    r: float = 0.5
    decay_factor: float = 10.0
    constants: ConstantsLedger = field(default_factory=ConstantsLedger)

    def __post_init__(self):
        self.group = GroupTag.parse(self.group)
        if self.mode not in ("practical", "faithful"):
            raise ValueError("mode must be 'practical' or 'faithful'")
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")


@dataclass
class KamState:
    k: int
    A: np.ndarray
    Psi: TorusMatFn
    Psi_inv: TorusMatFn
    F: TorusMatFn
    Z: TorusMatFn
    eps: float
    r: float
    kappa: float
    gamma: float
    b: float
    ledger: PeriodicityLedger
    decomposition: object
    residual_budget: float = 0.0
    renormalizations: int = 0


def step_sizes(eps: float, p: KamParams, n: int) -> tuple[int, float, float]:
    """(N, kappa'', r') for the current epsilon."""
    if not 0 < eps < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    L = abs(math.log(eps))
    d = p.dd.d
    if p.mode == "faithful":
        N = math.ceil((4 * math.e * d) ** 2 * L ** 4)
    else:
        N = math.ceil(p.c_N * L ** 4)
    k2 = kappa_double_prime(p.dd.kappa, n, N, p.dd.tau, "iter")
    return N, k2, 1.0 / L ** 2


# ----------------------------------------------------------------------------
# schedule arithmetic (log space)


@dataclass
class ScheduleRow:
    k: int
    log_eps: float
    gamma: float
    r: float
    log_b1: float
    log_kappa: float
    log_a: float
    epsk2: bool
    epsk1: bool


@dataclass
class ScheduleReport:
    rows: list
    gate_ok: bool | None = None
    log_gate: float | None = None
    sufficient: bool | None = None

    @property
    def feasible(self) -> bool:
        return all(r.epsk1 and r.epsk2 for r in self.rows)

    @property
    def infeasible_steps(self) -> list:
        return [r.k for r in self.rows if not (r.epsk1 and r.epsk2)]


def schedule(eps0=None, gamma0: float = 6, b0: float = 1, Cp: float = 1.0, tau: float = 1.5,
             kmax: int = 30, D2: float = 1.0, r0: float = 1.0, log_eps0: float | None = None,
             C: float | None = None, log_C: float | None = None) -> ScheduleReport:
    """Sequences of the KAM schedule and its two checks, all in log space.

    ``log_eps0`` may be given instead of ``eps0`` for values below the float range.
    When a schedule constant is given the smallness gate is evaluated as well.
    """
    if log_eps0 is None:
        if not 0 < eps0 < 1:
            raise ValueError("eps0 must lie in (0, 1)")
        log_eps0 = math.log(eps0)
    if not log_eps0 < 0:
        raise ValueError("log eps0 must be negative")
    if not 0 < Cp <= 1:
        raise ValueError("C' must lie in (0, 1]")
    logCp = math.log(Cp)
    growth = 2.5
    logs = [log_eps0 * growth ** k for k in range(kmax + 2)]
    rows = []
    log_b = math.log(b0)
    for k in range(kmax + 1):
        L = abs(logs[k])
        if k > 0:
            Lp = abs(logs[k - 1])
            # b_k = b_{k-1} + L_{k-1}^4 / C'
            log_b = np.logaddexp(log_b, 4 * math.log(Lp) - logCp)
            r_k = 1.0 / Lp ** 2
        else:
            r_k = r0
        gamma = gamma0 * 2 ** k
        log_b1 = float(np.logaddexp(log_b, 0.0))
        log_kappa = logCp - 4 * tau * math.log(L)
        log_r_next = -2 * math.log(L)
        log_a = D2 * gamma * (log_b1 - log_kappa - log_r_next) + logs[k]
        epsk2 = math.log(4) - math.log(r_k) <= 2 * math.log(L) + 1e-12
        epsk1 = log_a <= logCp
        rows.append(ScheduleRow(k, logs[k], gamma, r_k, log_b1, log_kappa, log_a, epsk2, epsk1))
    rep = ScheduleReport(rows)
    if log_C is None and C is not None:
        log_C = math.log(C)
    if log_C is not None:
        rep.log_gate = log_C - 16 * gamma0 * D2 * math.log(b0 + 1)
        rep.gate_ok = log_eps0 <= rep.log_gate
    L0 = abs(log_eps0)
    lhs = D2 * gamma0 * (math.log(5 * (1 + b0)) + 80 * tau * math.log(L0)) + log_eps0
    rep.sufficient = lhs <= (16 * D2 * gamma0 + 1) * logCp
    return rep


def calibrate_schedule_constant(gamma0: float, b0: float, tau: float, Cp: float = 1.0,
                                D2: float = 1.0, kmax: int = 30, tol: float = 1e-9) -> float:
    """log C such that the gate eps0 <= C (b0+1)^{-16 gamma0 D2} is sharp for the checks."""

    def ok(le):
        return schedule(log_eps0=le, gamma0=gamma0, b0=b0, Cp=Cp, tau=tau, kmax=kmax, D2=D2).feasible

    hi = -2.0  # a failing or boundary value
    lo = -4.0
    while not ok(lo):
        lo *= 2
        if lo < -1e300:
            raise ArithmeticError("schedule never becomes feasible")
    if ok(hi):
        threshold = hi
    else:
        while hi - lo > tol * max(1.0, abs(lo)):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        threshold = lo
    # the gate must be monotone below the threshold; probe a few smaller values
    for f in (1.01, 1.5, 2, 10, 100):
        if not ok(threshold * f):
            raise ArithmeticError("schedule feasibility is not monotone in eps0")
    return threshold + 16 * gamma0 * D2 * math.log(b0 + 1)


# ----------------------------------------------------------------------------
# persistence of the small-divisor condition


def nr_persistence_check(A_t, F0, kappa_p: float, N: float, p: KamParams,
                         lattice: str | None = None) -> dict:
    """Sufficient conditions for DC persistence under A~ -> A~ + F0, plus the direct check."""
    A_t = np.atleast_2d(np.asarray(A_t))
    F0 = np.atleast_2d(np.asarray(F0))
    n = A_t.shape[0]
    d = p.dd.d
    lattice = lattice or p.group.lattice
    eps_t = float(np.linalg.norm(F0, 2))
    C = 1.0 / (4 * math.e * d) ** 2
    c = p.constants["c"]
    rhs1 = c * (C ** p.dd.tau * kappa_p / (1 + np.linalg.norm(A_t, 2))) ** (2 * n)
    cond1 = eps_t <= rhs1
    cond2 = True if eps_t == 0 else N <= abs(math.log(eps_t)) ** 4 / C
    direct = spectrum_dc_check(A_t + F0, p.dd, 0.75 * kappa_p, N, lattice)
    before = spectrum_dc_check(A_t, p.dd, kappa_p, N, lattice)
    return {
        "eps": eps_t,
        "cond1": bool(cond1),
        "cond1_rhs": float(rhs1),
        "cond2": bool(cond2),
        "sufficient": bool(cond1 and cond2),
        "direct": direct.passed,
        "direct_report": direct,
        "margin_ratio": direct.margin / before.margin if before.margin > 0 else float("inf"),
    }


# ----------------------------------------------------------------------------
# inductive step


@dataclass
class InductiveResult:
    X: TorusMatFn
    A1: np.ndarray
    F1: TorusMatFn
    decomposition: object
    parity: dict
    info: dict


def _tail(f: TorusMatFn, N: float) -> TorusMatFn:
    keep = f.doubled_orders > 2 * N
    g = TorusMatFn.__new__(TorusMatFn)
    g.n, g.d, g.real = f.n, f.d, f.real
    g.freqs, g.coeffs, g._norms = f.freqs[keep], f.coeffs[keep], f.norms[keep]
    g.budget = 0.0
    return g


def _as_group_matrix(M: np.ndarray, tag: GroupTag) -> np.ndarray:
    return np.real(M) if tag.is_real else np.asarray(M, dtype=complex)


def new_perturbation(A_t, F_t: TorusMatFn, X: TorusMatFn, N: float, band: float,
                     rel_tol: float = 1e-18, residual_l1: float = 0.0) -> TorusMatFn:
    """F' with d_omega e^X = (A~+F~) e^X - e^X (A~ + F~(0) + F').

    Uses the rearrangement
        F' = e^{-X}(F~ - F~^N) + e^{-X} F~ (e^X - I) + (e^{-X} - I) F~(0)
             - e^{-X} sum_{k>=2} S_k / k!
    with S_1 = F~^N - F~(0) and S_{k+1} = X S_k + S_1 X^k, in which every
    term is already of second order, so nothing cancels.
    """
    hidden = F_t.budget
    F = F_t.with_(budget=0.0)
    F0 = F.mean()
    FN, _ = truncate_and_tail(F, N)
    G = drop_mean(FN)
    sX = X.l1()
    if sX >= 1:
        raise KamError("S(X) >= 1: outside the perturbative regime", {"S_X": sX})
    tol = rel_tol * max(sX, 1e-300)
    E = exp_series(X, band, tol, include_identity=False)
    Em = exp_series(X.scale(-1.0), band, tol, include_identity=False)

    def mul(f, g):
        return convolve_product(f, g, band)

    def left_inv(f):  # e^{-X} f
        return f + mul(Em, f)

    tail = _tail(F, N)
    out = left_inv(tail) if tail.nnz else TorusMatFn.zeros(F.n, F.d, real=F.real)
    out = out + left_inv(mul(F, E))
    out = out + Em.right(F0)
    # sum_{k>=2} S_k/k!
    sG = G.l1()
    S = G
    Xk = X
    acc = None
    k = 1
    while True:
        S = mul(X, S) + mul(G, Xk)
        k += 1
        term = S.scale(1.0 / math.factorial(k))
        acc = term if acc is None else acc + term
        if term.l1() <= tol * max(sG, 1e-300) or k > 60:
            break
        Xk = mul(Xk, X)
    # remainder: sum_{j>k} j sG sX^{j-1}/j! <= sG sX^k/k! e^{sX}
    rem = sG * sX ** k / math.factorial(k) * math.exp(sX)
    acc = acc.with_(budget=acc.budget + rem)
    out = out - left_inv(acc)
    # unsolved hidden part of F~ and the homological residual ride along conjugated by e^{+-X}
    extra = (hidden + residual_l1 * math.exp(sX)) * math.exp(2 * sX)
    return out.with_(budget=out.budget + extra)


def inductive_step(A_t, dec, F_t: TorusMatFn, N: float, kappa_p: float, p: KamParams,
                   parity: dict | None = None, check_persistence: bool = True) -> InductiveResult:
    """One KAM step: solve, conjugate by e^X, return (X, A', F', L')."""
    A_t = np.atleast_2d(np.asarray(A_t))
    tag = p.group
    n = A_t.shape[0]
    if parity is None:
        parity = {l: (0,) * F_t.d for l in dec.labels}
    if F_t.nnz == 0 and F_t.budget == 0:
        return InductiveResult(TorusMatFn.zeros(n, F_t.d, real=F_t.real), A_t.copy(), F_t, dec, parity,
                               {"S_X": 0.0, "residual": 0.0})
    sol = solve_homological(A_t, dec, F_t, N, p.dd, kappa_p)
    X = sol.X
    res_fn = derivative_omega(X, p.dd.w) - (X.left(A_t) - X.right(A_t)) - drop_mean(truncate_and_tail(F_t.with_(budget=0.0), N)[0])
    res_l1 = float(res_fn.norms.sum())
    sX = X.l1()
    if sX >= 1:
        raise KamError("S(X) >= 1: outside the perturbative regime", {"S_X": sX})
    F0 = F_t.mean()
    A1 = _as_group_matrix(A_t + F0, tag)
    band = p.max_band
    F1 = new_perturbation(A_t, F_t, X, N, band, p.taylor_tol, res_l1)
    info = {"S_X": sX, "residual": sol.residual_norm, "residual_l1": res_l1,
            "min_divisor": sol.min_divisor}
    if check_persistence:
        pers = nr_persistence_check(A_t, _as_group_matrix(F0, tag), kappa_p, N, p)
        info["persistence"] = {k: v for k, v in pers.items() if k != "direct_report"}
        if not pers["direct"]:
            raise KamError("spectrum lost its DC property after adding the mean",
                           {"persistence": info["persistence"],
                            "worst": pers["direct_report"].describe()})
    # blocks coupled by the mean must merge; F~ must be T^d-periodic on them
    dec1 = merge_periodicity(F_t, dec, A_t, A1, parity)
    parity1 = {s.label: parity[s.origin[0]] for s in dec1.subspaces}
    return InductiveResult(X, A1, F1, dec1, parity1, info)


# ----------------------------------------------------------------------------
# double step


def reducible_pair(Psi: TorusMatFn, Psi_inv: TorusMatFn, A: np.ndarray, F: TorusMatFn, omega,
                   tag: GroupTag) -> tuple[TorusMatFn, TorusMatFn]:
    """(A-bar, F-bar) = (d_omega Psi Psi^{-1} + Psi A Psi^{-1}, Psi F Psi^{-1})."""
    d = F.d
    if Psi.nnz == 1 and not np.any(Psi.freqs) and np.allclose(Psi.coeffs[0], np.eye(F.n), atol=0):
        Abar = TorusMatFn.constant(_as_group_matrix(A, tag), d, real=tag.is_real)
        return Abar, F
    Abar = convolve_product(derivative_omega(Psi, omega), Psi_inv) + \
        convolve_product(Psi.right(A), Psi_inv)
    Fbar = convolve_product(convolve_product(Psi, F), Psi_inv)
    if tag.is_real:
        Abar, Fbar = Abar.with_(real=True), Fbar.with_(real=True)
    return Abar, Fbar


def _is_identity_fn(f: TorusMatFn) -> bool:
    return f.nnz == 1 and not np.any(f.freqs) and np.array_equal(f.coeffs[0], np.eye(f.n))


def _S0(f: TorusMatFn) -> float:
    return f.l1()


def double_step(state: KamState, p: KamParams) -> tuple[KamState, dict]:
    """Renormalize, then two inductive steps; returns the new state and a forensic record."""
    n = state.A.shape[0]
    tag = p.group
    d = p.dd.d
    w = p.dd.w
    eps = state.eps
    N, k2, r_prime = step_sizes(eps, p, n)
    Nw = min(N, p.max_band)
    lattice = tag.lattice
    rec = {"k": state.k, "N": N, "N_work": Nw, "kappa2": k2, "r_prime": r_prime,
           "hyp_petitesse2": 4 / math.log(eps) ** 2 <= state.r}

    # the hidden error of F_k becomes part of the certified conjugacy residual
    hand = state.F.budget * _S0(state.Z) * _S0(state.Psi) * _S0(state.Psi_inv)
    residual_budget = state.residual_budget + hand
    F_k = state.F.with_(budget=0.0)

    try:
        rr = build_renormalization(state.A, p.dd, Nw, tag, kappa2=k2)
    except Exception as exc:  # noqa: BLE001 - forensic record
        raise KamError(f"renormalization failed: {exc}", rec) from exc
    phi = rr.phi
    rec["dc_margin"] = rr.report.margin
    rec["renormalized"] = not phi.is_identity
    rec["labels"] = {k: list(v) for k, v in phi.labels.items()}
    A_t = rr.A_tilde

    ledger = state.ledger
    if phi.is_identity:
        Psi1, Psi1_inv = state.Psi, state.Psi_inv
        F_t = F_k
        dec_bar = ledger.decomposition
        parity = dict(ledger.parity)
    else:
        Phi = phi.to_fn()
        Phi_inv = phi.inverse().to_fn()
        Psi1 = convolve_product(state.Psi, Phi)
        Psi1_inv = convolve_product(Phi_inv, state.Psi_inv)
        if tag.is_real:
            Psi1, Psi1_inv = Psi1.with_(real=True), Psi1_inv.with_(real=True)
        F_t = trivial_conjugate(phi, F_k, inverse=True)
        dec_bar = meet_decompositions(ledger.decomposition, phi.decomposition)
        parity = {}
        for s in dec_bar.subspaces:
            a, b = s.origin
            parity[s.label] = tuple((x + y) % 2 for x, y in zip(ledger.parity[a], phi.labels[b]))
    pmap = TrivialMap(dec_bar, parity)
    ok, _ = good_periodicity_check(F_t, pmap)
    if not ok:
        ledger = replace(ledger, single_doubling=False)
        raise KamError("F~ lost good periodicity with respect to the ledger", rec)

    try:
        s1 = inductive_step(A_t, dec_bar, F_t, Nw, k2, p, parity)
        rec["step1"] = s1.info
        s2 = inductive_step(s1.A1, s1.decomposition, s1.F1, Nw, 0.75 * k2, p, s1.parity)
        rec["step2"] = s2.info
    except KamError as exc:
        exc.forensics.update(rec)
        raise
    except Exception as exc:  # noqa: BLE001
        raise KamError(f"inductive step failed: {exc}", rec) from exc

    band = p.max_band
    tol = p.taylor_tol
    E1 = exp_series(s1.X, band, tol * max(s1.X.l1(), 1e-300), include_identity=False)
    E2 = exp_series(s2.X, band, tol * max(s2.X.l1(), 1e-300), include_identity=False)
    W_minus = E1 + E2 + convolve_product(E1, E2, band)
    if _is_identity_fn(Psi1):
        Zs_minus = W_minus
    else:
        Zs_minus = convolve_product(convolve_product(Psi1, W_minus, band), Psi1_inv, band)
    Z1 = state.Z + convolve_product(state.Z, Zs_minus, band)
    if tag.is_real:
        Z1 = Z1.with_(real=True)

    A2 = s2.A1
    F2 = s2.F1
    eps_new = gevrey_upper_bound(F2, min(r_prime, 1.0))
    rec["S_F_new"] = eps_new
    rec["A_growth_ok"] = bool(np.linalg.norm(A2, 2) <= np.linalg.norm(state.A, 2) + eps ** (11 / 12) + 8 * math.pi * N)
    rec["decay"] = eps / eps_new if eps_new > 0 else float("inf")
    if p.mode == "faithful":
        rec["faithful_bound"] = eps_new <= eps ** 2.5
        if not rec["faithful_bound"]:
            raise KamError("faithful bound S(F') <= eps^{5/2} violated", rec)
    elif eps_new > eps / p.decay_factor:
        raise KamError(f"insufficient decay: {eps:.3g} -> {eps_new:.3g}", rec)

    new_ledger = PeriodicityLedger(s2.decomposition, s2.parity, ledger.single_doubling,
                                   ledger.history + [rec["labels"]])
    L = abs(math.log(eps))
    new = KamState(
        k=state.k + 1, A=A2, Psi=Psi1, Psi_inv=Psi1_inv, F=F2, Z=Z1, eps=eps_new, r=r_prime,
        kappa=0.75 * k2, gamma=2 * state.gamma, b=state.b + L ** 4 / p.constants["C'"],
        ledger=new_ledger, decomposition=s2.decomposition, residual_budget=residual_budget,
        renormalizations=state.renormalizations + (0 if phi.is_identity else 1),
    )
    return new, rec


# ----------------------------------------------------------------------------
# driver


REPORT_COLUMNS = ("k", "eps_k", "r_k", "N_k", "kappa_k", "dc_margin", "S_Fk", "S_Zminus_id",
                  "budget", "wall_time_ms")


@dataclass
class RunResult:
    Z: TorusMatFn
    A_eps: np.ndarray
    Abar: TorusMatFn
    Fbar: TorusMatFn
    Psi: TorusMatFn
    Psi_inv: TorusMatFn
    rows: list
    records: list
    state: KamState
    success: bool
    message: str
    residual_budget: float
    step_checks: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.state.k


def _row(state: KamState, p: KamParams, wall_ms: float, dc_margin: float) -> dict:
    n = state.A.shape[0]
    r = min(state.r, 1.0)
    I = TorusMatFn.identity(n, state.F.d)
    if state.eps > 0 and state.eps < 1:
        N, k2, _ = step_sizes(state.eps, p, n)
    else:
        N, k2 = 0, float("nan")
    return {
        "k": state.k,
        "eps_k": state.eps,
        "r_k": state.r,
        "N_k": N,
        "kappa_k": k2,
        "dc_margin": dc_margin,
        "S_Fk": gevrey_upper_bound(state.F, r),
        "S_Zminus_id": gevrey_upper_bound(state.Z - I, r),
        "budget": state.residual_budget + state.Z.budget + state.F.budget,
        "wall_time_ms": wall_ms,
    }


def run_gates(A, F: TorusMatFn, p: KamParams) -> list[str]:
    """Preconditions of the driver; returns a list of failures (empty = pass)."""
    tag = p.group
    A = np.atleast_2d(np.asarray(A))
    errs = []
    try:
        tag.check_dimension(A.shape[0])
    except ValueError as exc:
        errs.append(str(exc))
    ok, v = matrix_in_algebra(A, tag)
    if not ok:
        errs.append(f"A not in {tag.algebra} (violation {v:.3g})")
    ok, v = algebra_membership(F, tag)
    if not ok:
        errs.append(f"F not in {tag.algebra} (violation {v:.3g})")
    if not F.is_integral:
        errs.append("F has half-integer frequencies: periodicity on T^d required")
    if F.d != p.dd.d:
        errs.append("torus dimension of F does not match omega")
    S = gevrey_upper_bound(F, p.r)
    if p.mode == "practical":
        if S > p.eps0:
            errs.append(f"smallness gate: S_r(F) = {S:.3g} > eps0 = {p.eps0:.3g}")
    else:
        gate = (p.constants["C''"] / (np.linalg.norm(A, 2) + 1)) ** p.constants["D3"]
        if S > gate:
            errs.append(f"smallness gate: S_r(F) = {S:.3g} > {gate:.3g}")
    return errs


def _step_checks(state: KamState, p: KamParams, A=None, F: TorusMatFn | None = None) -> dict:
    from .verify import conjugacy_residual, group_membership, residual_bound
    ok, viol = group_membership(state.Z, p.group, tol=1e-8 * (1 + state.Z.l1()), grid_size=16)
    out = {}
    if A is not None and F is not None:
        Abar, Fbar = reducible_pair(state.Psi, state.Psi_inv, state.A, state.F, p.dd.w, p.group)
        res = conjugacy_residual(A, F, state.Z, Abar + Fbar, p.dd.w, grid_size=16)
        bound = residual_bound(A, F, state.Z, Abar, Fbar, p.dd.w, state.residual_budget, p.max_band)
        out = {"conjugacy_residual": res, "conjugacy_bound": bound, "conjugacy_ok": res <= bound}
    return {
        **out,
        "k": state.k,
        "Z_group_violation": viol,
        "Z_group_ok": ok,
        "half_lattice": True,  # doubled-integer storage cannot represent finer frequencies
        "Z_integral": state.Z.is_integral,
        "F_frame_integral": state.F.is_integral,
        "single_doubling": state.ledger.single_doubling,
        "labels_integral": all(x % 2 == 0 for lab in state.ledger.history for v in lab.values() for x in v),
    }


def run(A, F: TorusMatFn, p: KamParams, timing: bool = True, check_every_step: bool = True) -> RunResult:
    """Iterate double steps until S(F_k) <= target_eps or max_steps is reached."""
    tag = p.group
    A = _as_group_matrix(np.atleast_2d(np.asarray(A)), tag)
    n = A.shape[0]
    d = p.dd.d
    errs = run_gates(A, F, p)
    if errs:
        raise KamError("gate failure: " + "; ".join(errs), {"gates": errs})
    I = TorusMatFn.identity(n, d)
    dec0 = trivial_decomposition(A)
    eps0 = gevrey_upper_bound(F, p.r)
    state = KamState(
        k=0, A=A, Psi=I, Psi_inv=I, F=F, Z=I, eps=eps0, r=p.r, kappa=p.dd.kappa,
        gamma=p.constants.gamma_bar(n), b=1.0,
        ledger=PeriodicityLedger.trivial(dec0, d), decomposition=dec0,
    )
    rows, records, checks = [], [], []
    clock = time.perf_counter
    t0 = clock()
    dc0 = float("nan")
    success, message = True, "target reached"
    while True:
        if check_every_step:
            checks.append(_step_checks(state, p, A, F))
        if state.eps <= p.target_eps:
            rows.append(_row(state, p, (clock() - t0) * 1e3 if timing else 0.0, dc0))
            break
        if state.k >= p.max_steps:
            rows.append(_row(state, p, (clock() - t0) * 1e3 if timing else 0.0, dc0))
            success, message = False, "max steps reached before target"
            break
        try:
            new, rec = double_step(state, p)
        except KamError as exc:
            rows.append(_row(state, p, (clock() - t0) * 1e3 if timing else 0.0, dc0))
            records.append({"k": state.k, "error": str(exc), **exc.forensics})
            success, message = False, f"step {state.k} failed: {exc}"
            break
        rows.append(_row(state, p, (clock() - t0) * 1e3 if timing else 0.0, rec.get("dc_margin", dc0)))
        records.append(rec)
        state = new
        t0 = clock()
    Abar, Fbar = reducible_pair(state.Psi, state.Psi_inv, state.A, state.F, p.dd.w, tag)
    return RunResult(state.Z, state.A, Abar, Fbar, state.Psi, state.Psi_inv, rows, records, state,
                     success, message, state.residual_budget, checks)
