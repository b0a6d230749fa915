"""Blockwise Fourier solver for d_omega X = [A~, X] + F^N - F(0)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arithmetic import DiophantineData
from .spectral import Decomposition, semisimple_part
from .torus_fn import TorusMatFn, derivative_omega, drop_mean, truncate_and_tail


class HomologicalError(ArithmeticError):
    pass


class InconsistencyError(HomologicalError):
    """A divisor fell far below the DC bound although the DC check had passed."""


@dataclass
class HomologicalSolution:
    X: TorusMatFn
    residual_norm: float
    per_block_divisor_margin: dict = field(default_factory=dict)
    solver: str = "direct"
    min_divisor: float = np.inf


def _sylvester_ops(TL, TR, mu):
    """Batched matrices of Y -> mu Y - TL Y + Y TR in row-major vec form."""
    k, kp = TL.shape[0], TR.shape[0]
    base = -np.kron(TL, np.eye(kp)) + np.kron(np.eye(k), TR.T)
    return mu[:, None, None] * np.eye(k * kp)[None] + base[None]


def _nilpotent_split(A_t, P_L, P_R):
    """Commuting semisimple and nilpotent parts of M -> (A~P_L) M - M (P_R A~), vectorized."""
    n = A_t.shape[0]
    L = A_t @ P_L
    R = P_R @ A_t
    I = np.eye(n)
    SL, SR = semisimple_part(L), semisimple_part(R)
    D = -np.kron(SL, I) + np.kron(I, SR.T)
    Nn = -np.kron(L - SL, I) + np.kron(I, (R - SR).T)
    return D, Nn


def _expansion_solve(D, Nn, mu, rhs):
    q = D.shape[0]
    AD = mu * np.eye(q) + D
    try:
        ADinv = np.linalg.inv(AD)
    except np.linalg.LinAlgError:
        raise HomologicalError(f"singular semisimple part at mu={mu}") from None
    # (A_D + A_N)^{-1} = A_D^{-1} sum_j (-A_N A_D^{-1})^j, finite since A_N is nilpotent
    M = -Nn @ ADinv
    term = np.eye(q, dtype=complex)
    acc = term.copy()
    for _ in range(q - 1):
        term = term @ M
        acc = acc + term
    return ADinv @ acc @ rhs


def block_resolvent(A_t, P_L, P_R, mu: complex, B, method: str = "direct") -> np.ndarray:
    """Solve mu X - (A~ P_L) X + X (P_R A~) = B in the full n^2-dimensional space."""
    A_t = np.asarray(A_t, dtype=complex)
    B = np.asarray(B, dtype=complex)
    n = A_t.shape[0]
    if not np.any(B):
        return np.zeros_like(B)
    rhs = B.reshape(-1)
    if method == "direct":
        I = np.eye(n)
        op = mu * np.eye(n * n) - np.kron(A_t @ P_L, I) + np.kron(I, (P_R @ A_t).T)
        try:
            return np.linalg.solve(op, rhs).reshape(n, n)
        except np.linalg.LinAlgError:
            raise HomologicalError(f"singular block system at mu={mu}") from None
    if method != "nilpotent":
        raise ValueError(f"unknown method {method!r}")
    D, Nn = _nilpotent_split(A_t, P_L, P_R)
    return _expansion_solve(D, Nn, mu, rhs).reshape(n, n)


def homological_residual(A_t, F: TorusMatFn, X: TorusMatFn, N: float, omega) -> float:
    """Largest coefficient of d_omega X - [A~, X] - (F^N - F(0)), in exact Fourier data."""
    FN, _ = truncate_and_tail(F, N)
    rhs = drop_mean(FN)
    lhs = derivative_omega(X, omega) - (X.left(A_t) - X.right(A_t))
    res = lhs - rhs
    return res.max_coeff()


def solve_homological(A_t, dec: Decomposition, F: TorusMatFn, N: float, dd: DiophantineData,
                      kappa_prime: float, method: str = "direct",
                      check_divisors: bool = True) -> HomologicalSolution:
    A_t = np.atleast_2d(np.asarray(A_t))
    n, d = F.n, F.d
    if A_t.shape != (n, n):
        raise ValueError("dimension mismatch between A~ and F")
    w = dd.w
    FN, _ = truncate_and_tail(F, N)
    G = drop_mean(FN)
    if G.nnz == 0:
        return HomologicalSolution(TorusMatFn.zeros(n, d, real=F.real), 0.0, {}, method)
    freqs = G.freqs
    orders = np.abs(freqs).sum(axis=1) / 2
    mu = 2j * np.pi * (freqs @ w) / 2
    coeffs = np.zeros((G.nnz, n, n), dtype=complex)
    margins = {}
    min_div = np.inf

    if method == "direct":
        subs = dec.subspaces
        S = np.hstack([s.basis for s in subs])
        Sinv = np.linalg.inv(S)
        rows = {}
        col = 0
        for s in subs:
            rows[s.label] = Sinv[col:col + s.dim]
            col += s.dim
        for s in subs:
            TL = rows[s.label] @ A_t @ s.basis
            for t in subs:
                TR = rows[t.label] @ A_t @ t.basis
                rhs = rows[s.label][None] @ G.coeffs @ t.basis[None]
                ops = _sylvester_ops(TL, TR, mu)
                k, kp = s.dim, t.dim
                try:
                    Y = np.linalg.solve(ops, rhs.reshape(len(mu), k * kp, 1)).reshape(len(mu), k, kp)
                except np.linalg.LinAlgError:
                    raise HomologicalError(f"singular block solve for blocks ({s.label},{t.label})") from None
                coeffs += s.basis[None] @ Y @ rows[t.label][None]
                # divisors |mu - (alpha - beta)| over the block's eigenvalue pairs
                dif = (np.linalg.eigvals(TL)[:, None] - np.linalg.eigvals(TR)[None, :]).ravel()
                dv = np.abs(mu[:, None] - dif[None, :]).min(axis=1)
                min_div = min(min_div, float(dv.min()))
                scaled = dv * orders ** dd.tau
                for i in range(len(mu)):
                    margins[(s.label, t.label, tuple(int(x) for x in freqs[i]))] = float(scaled[i])
                if check_divisors:
                    bad = np.flatnonzero(scaled < 0.1 * kappa_prime)
                    if bad.size:
                        i = bad[0]
                        raise InconsistencyError(
                            f"divisor {dv[i]:.3g} below 0.1 kappa'/|m|^tau at doubled m="
                            f"{tuple(int(x) for x in freqs[i])}, blocks ({s.label},{t.label})")
    elif method == "nilpotent":
        A_c = A_t.astype(complex)
        for s in dec.subspaces:
            for t in dec.subspaces:
                D, Nn = _nilpotent_split(A_c, s.projection, t.projection)
                for i in range(len(mu)):
                    B = s.projection @ G.coeffs[i] @ t.projection
                    if np.any(B):
                        coeffs[i] += _expansion_solve(D, Nn, mu[i], B.reshape(-1)).reshape(n, n)
    else:
        raise ValueError(f"unknown method {method!r}")

    # X is exactly the stored data; solve errors show up in the measured residual
    X = TorusMatFn(n, d, freqs, coeffs, real=False)
    if F.real and np.isrealobj(A_t):
        X = X.with_(real=True)
    res = homological_residual(A_t, F, X, N, w)
    return HomologicalSolution(X, res, margins, method, min_div)
