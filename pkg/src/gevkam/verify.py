"""Independent dynamical checks: RK4 cocycle integration, conjugacy residuals, group membership."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .torus_fn import (GroupTag, TorusMatFn, derivative_omega, evaluate, grid, prune,
                       symplectic_form)


class IntegrationOverflow(FloatingPointError):
    pass


@dataclass
class CocycleTrajectory:
    theta0: np.ndarray
    times: np.ndarray
    values: np.ndarray
    h: float
    integrator: str = "RK4"


def _as_fn(A, d: int) -> TorusMatFn:
    if isinstance(A, TorusMatFn):
        return A
    return TorusMatFn.constant(np.atleast_2d(np.asarray(A, dtype=complex)), d, real=False)


def integrate_cocycle(Afn, omega, theta0, T: float, h: float, prune_mass: float = 0.0) -> CocycleTrajectory:
    """Classical RK4 for dX/dt = A(theta0 + t omega) X, X(0) = I."""
    omega = np.asarray(omega, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    d = len(omega)
    Afn = _as_fn(Afn, d)
    if h <= 0:
        raise ValueError("h must be positive")
    steps = int(round(T / h))
    if abs(steps * h - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of h")
    if prune_mass > 0:
        Afn = prune(Afn, prune_mass)
    n = Afn.n
    # A on the half-step grid t_j = j h / 2
    ts = np.arange(2 * steps + 1) * (h / 2)
    Avals = evaluate(Afn, theta0[None] + ts[:, None] * omega[None])
    X = np.eye(n, dtype=complex)
    out = np.empty((steps + 1, n, n), dtype=complex)
    out[0] = X
    for j in range(steps):
        A0, Ah, A1 = Avals[2 * j], Avals[2 * j + 1], Avals[2 * j + 2]
        k1 = A0 @ X
        k2 = Ah @ (X + 0.5 * h * k1)
        k3 = Ah @ (X + 0.5 * h * k2)
        k4 = A1 @ (X + h * k3)
        X = X + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise IntegrationOverflow(f"overflow at t={(j + 1) * h:.6g}")
        out[j + 1] = X
    return CocycleTrajectory(theta0, np.arange(steps + 1) * h, out, h)


def conjugacy_residual(A, F: TorusMatFn, Z: TorusMatFn, Bbar: TorusMatFn, omega,
                       grid_size: int = 32) -> float:
    """max over a grid of || d_omega Z - (A + F) Z + Z Bbar ||."""
    d = Z.d
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    th = grid(d, grid_size)
    dZ = evaluate(derivative_omega(Z, omega), th)
    Zv = evaluate(Z, th)
    Fv = evaluate(F, th) if F is not None else 0
    Bv = evaluate(_as_fn(Bbar, d), th)
    R = dZ - (A[None] + Fv) @ Zv + Zv @ Bv
    return float(np.linalg.norm(R, 2, axis=(1, 2)).max())


def residual_bound(A, F: TorusMatFn, Z: TorusMatFn, Abar: TorusMatFn, Fbar: TorusMatFn, omega,
                   accumulated: float, max_band: float) -> float:
    """Certified-style bound on the conjugacy residual from the stored budgets.

    The hidden error of Z is differentiated, so it is scaled by the largest
    frequency it can live on (twice the working band).
    """
    A = np.atleast_2d(np.asarray(A))
    w = float(np.abs(np.asarray(omega)).max())
    band = max(2 * max_band, Z.bandwidth, 1.0)
    sAF = np.linalg.norm(A, 2) + F.l1()
    sB = Abar.l1() + Fbar.l1()
    bZ = Z.budget
    core = bZ * (1 + 2 * np.pi * w * band * len(np.asarray(omega)) + sAF + sB) + Z.l1() * (Fbar.budget + Abar.budget)
    # rounding of the grid evaluation itself
    nnz = max(Z.nnz, 1) + max(F.nnz, 1) + max(Abar.nnz + Fbar.nnz, 1)
    roundoff = 64 * np.finfo(float).eps * nnz * (1 + 2 * np.pi * w * max(Z.bandwidth, 1) + sAF + sB) * Z.l1()
    return float(accumulated * (1 + Z.l1()) + core + roundoff)


def reducibility_cross_check(A, F: TorusMatFn, Z: TorusMatFn, Abar: TorusMatFn, Fbar: TorusMatFn,
                             omega, theta0, T: float = 10.0, h: float = 1e-3) -> float:
    """max_t || X^t(theta0) - Z(theta0 + t omega) Y^t(theta0) Z(theta0)^{-1} ||."""
    omega = np.asarray(omega, dtype=float)
    theta0 = np.asarray(theta0, dtype=float)
    d = len(omega)
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    AF = _as_fn(F, d) + A
    B = _as_fn(Abar, d) + Fbar
    X = integrate_cocycle(AF, omega, theta0, T, h)
    Y = integrate_cocycle(B, omega, theta0, T, h)
    th = theta0[None] + X.times[:, None] * omega[None]
    Zt = evaluate(Z, th)
    Z0inv = np.linalg.inv(Zt[0])
    pred = Zt @ Y.values @ Z0inv[None]
    return float(np.linalg.norm(X.values - pred, 2, axis=(1, 2)).max())


def _matrix_violation(M: np.ndarray, tag: GroupTag) -> float:
    """Worst violation over a stack of matrices (shape (P, n, n))."""
    n = M.shape[-1]
    I = np.eye(n)
    v = 0.0
    if tag.is_real:
        v = max(v, float(np.abs(M.imag).max()))
    if tag is GroupTag.SL_R:
        v = max(v, float(np.abs(np.linalg.det(M) - 1).max()))
    if tag is GroupTag.SP_R:
        J = symplectic_form(n)
        v = max(v, float(np.linalg.norm(np.swapaxes(M, 1, 2) @ J @ M - J, 2, axis=(1, 2)).max()))
    if tag is GroupTag.O:
        v = max(v, float(np.linalg.norm(np.swapaxes(M, 1, 2) @ M - I, 2, axis=(1, 2)).max()))
    if tag is GroupTag.U:
        v = max(v, float(np.linalg.norm(np.conj(np.swapaxes(M, 1, 2)) @ M - I, 2, axis=(1, 2)).max()))
    if tag in (GroupTag.GL_C, GroupTag.GL_R):
        dets = np.abs(np.linalg.det(M))
        if np.any(dets == 0):
            v = max(v, float("inf"))
    return v


def group_membership(M, tag: GroupTag | str, tol: float = 1e-9, grid_size: int = 16) -> tuple[bool, float]:
    """Does M (a matrix or a function, sampled on a grid) take values in the group?"""
    tag = GroupTag.parse(tag)
    if isinstance(M, TorusMatFn):
        vals = evaluate(M, grid(M.d, grid_size))
    else:
        vals = np.atleast_2d(np.asarray(M, dtype=complex))[None]
    v = _matrix_violation(vals, tag)
    return v <= tol, v
