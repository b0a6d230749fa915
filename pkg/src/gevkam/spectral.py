"""Spectral splittings of constant matrices: clusters, generalized eigenspaces,
projections, semisimple/nilpotent parts and pairing classification."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .torus_fn import symplectic_form

UNIT_ROUNDOFF = np.finfo(float).eps / 2
COND_LIMIT = 1e12


class SpectralError(np.linalg.LinAlgError):
    pass


class IllConditionedError(SpectralError):
    def __init__(self, msg: str, cond: float):
        super().__init__(f"{msg} (condition number {cond:.3g})")
        self.cond = cond


class NonCommutingError(SpectralError):
    pass


@dataclass
class Subspace:
    basis: np.ndarray
    projection: np.ndarray
    spectrum: np.ndarray
    label: int
    origin: tuple = ()

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def center(self) -> complex:
        return complex(np.mean(self.spectrum))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.projection, 2))


@dataclass
class Decomposition:
    subspaces: list[Subspace]
    source: np.ndarray
    gap: float
    flags: dict = field(default_factory=dict)
    conjugate_pairing: dict = field(default_factory=dict)
    symplectic_pairing: dict = field(default_factory=dict)
    ambiguous: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.source.shape[0]

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.subspaces]

    @property
    def projections(self) -> np.ndarray:
        return np.array([s.projection for s in self.subspaces])

    def __len__(self) -> int:
        return len(self.subspaces)

    def __getitem__(self, label: int) -> Subspace:
        for s in self.subspaces:
            if s.label == label:
                return s
        raise KeyError(label)

    def invariant_errors(self) -> dict:
        """Worst violations of completeness, orthogonality and invariance."""
        P = self.projections
        n = self.n
        A = self.source
        comp = float(np.linalg.norm(P.sum(axis=0) - np.eye(n), 2))
        orth = 0.0
        for i in range(len(P)):
            for j in range(len(P)):
                target = P[i] if i == j else 0
                orth = max(orth, float(np.linalg.norm(P[i] @ P[j] - target, 2)))
        comm = max(float(np.linalg.norm(A @ p - p @ A, 2)) for p in P)
        return {"completeness": comp, "orthogonality": orth, "commutation": comm}

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "flags": dict(self.flags),
            "subspaces": [
                {
                    "label": s.label,
                    "spectrum_re": s.spectrum.real.tolist(),
                    "spectrum_im": s.spectrum.imag.tolist(),
                    "projection_re": s.projection.real.tolist(),
                    "projection_im": s.projection.imag.tolist(),
                }
                for s in self.subspaces
            ],
        }


# ----------------------------------------------------------------------------


def eig_tolerance(A: np.ndarray) -> float:
    """Spread expected for a defective eigenvalue after rounding (about u^{1/n})."""
    n = A.shape[0]
    scale = 1.0 + float(np.linalg.norm(A, 2))
    return scale * max(1e-9, 4 * UNIT_ROUNDOFF ** (1.0 / max(n, 1)))


def _eigvals(A: np.ndarray) -> np.ndarray:
    try:
        return sla.eigvals(A)
    except (sla.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from None


def _components(vals: np.ndarray, gap: float) -> list[list[int]]:
    """Connected components of the graph joining eigenvalues at distance <= gap."""
    k = len(vals)
    parent = list(range(k))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    dist = np.abs(vals[:, None] - vals[None, :])
    for i in range(k):
        for j in range(i + 1, k):
            if dist[i, j] <= gap:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(i)
    comps = list(groups.values())
    # deterministic order: by (real, imag) of the cluster mean
    comps.sort(key=lambda c: (round(float(np.mean(vals[c].real)), 12),
                              round(float(np.mean(vals[c].imag)), 12)))
    return comps


def _invariant_basis(A: np.ndarray, select) -> np.ndarray:
    T, Z, sdim = sla.schur(A.astype(complex), output="complex", sort=select)
    return Z[:, :sdim]


def decomposition_from_bases(A: np.ndarray, bases: Sequence[np.ndarray], gap: float,
                             origins: Sequence[tuple] | None = None) -> Decomposition:
    S = np.hstack(bases)
    if S.shape[0] != S.shape[1]:
        raise SpectralError("bases do not span the space")
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedError("block-diagonalizing similarity is singular", float(cond))
    Sinv = np.linalg.inv(S)
    subs = []
    col = 0
    for i, B in enumerate(bases):
        k = B.shape[1]
        P = B @ Sinv[col:col + k]
        block = Sinv[col:col + k] @ A @ B
        spec = np.sort_complex(_eigvals(block)) if k else np.zeros(0, complex)
        subs.append(Subspace(B, P, spec, i, tuple(origins[i]) if origins else (i,)))
        col += k
    dec = Decomposition(subs, np.asarray(A), gap)
    return classify_decomposition(dec)


def cluster_decomposition(A, kappa_prime: float) -> Decomposition:
    """The decomposition whose blocks are the kappa'-connected eigenvalue clusters."""
    A = np.atleast_2d(np.asarray(A))
    if kappa_prime < 0:
        raise ValueError("kappa' must be nonnegative")
    vals = _eigvals(A)
    gap = max(kappa_prime, eig_tolerance(A))
    comps = _components(vals, gap)
    if len(comps) == 1:
        n = A.shape[0]
        return classify_decomposition(Decomposition(
            [Subspace(np.eye(n, dtype=complex), np.eye(n, dtype=complex),
                      np.sort_complex(vals), 0, (0,))], A, kappa_prime))
    owner = np.empty(len(vals), dtype=int)
    for c, idx in enumerate(comps):
        owner[idx] = c
    bases = []
    for c, idx in enumerate(comps):
        def select(x, c=c):
            return owner[int(np.argmin(np.abs(vals - x)))] == c
        B = _invariant_basis(A, select)
        if B.shape[1] != len(idx):
            raise SpectralError("Schur reordering lost track of a cluster")
        bases.append(B)
    dec = decomposition_from_bases(A, bases, kappa_prime)
    return dec


def generalized_eigenspaces(A) -> Decomposition:
    """One block per distinct eigenvalue (distinct up to the rounding spread)."""
    A = np.atleast_2d(np.asarray(A))
    return cluster_decomposition(A, 0.0)


def semisimple_part(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A))
    dec = generalized_eigenspaces(A)
    S = sum(s.center * s.projection for s in dec.subspaces)
    if np.isrealobj(A):
        S = S.real
    return S


def nilpotent_part(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A))
    return A - semisimple_part(A)


# ----------------------------------------------------------------------------


def classify_decomposition(dec: Decomposition) -> Decomposition:
    """Fill the real/symplectic/unitary flags and the two pairings."""
    subs = dec.subspaces
    n = dec.n
    norms = [s.norm for s in subs]
    conj: dict[int, int] = {}
    for i, s in enumerate(subs):
        cP = np.conj(s.projection)
        for j, t in enumerate(subs):
            if np.linalg.norm(cP - t.projection, 2) <= 1e-8 * (1 + norms[i]):
                conj[s.label] = t.label
                break
    real = len(conj) == len(subs)

    symp: dict[int, int] = {}
    ambiguous = []
    symplectic = False
    if n % 2 == 0:
        J = symplectic_form(n)
        symplectic = True
        for i, s in enumerate(subs):
            partners = [
                t.label for j, t in enumerate(subs)
                if np.linalg.norm(s.projection.conj().T @ J @ t.projection, 2)
                > 1e-8 * norms[i] * norms[j]
            ]
            if len(partners) == 1:
                symp[s.label] = partners[0]
            else:
                symplectic = False
                if len(partners) > 1:
                    ambiguous.append((s.label, tuple(partners)))

    unitary = all(
        np.linalg.norm(s.projection.conj().T @ t.projection, 2) <= 1e-8 * norms[i] * norms[j]
        for i, s in enumerate(subs) for j, t in enumerate(subs) if i != j
    )
    return replace(dec, flags={"real": real, "symplectic": symplectic, "unitary": unitary},
                   conjugate_pairing=conj, symplectic_pairing=symp, ambiguous=ambiguous)


def meet_decompositions(d1: Decomposition, d2: Decomposition, tol: float = 1e-8) -> Decomposition:
    """Common refinement L1 ∩ L2 of two decompositions with commuting projections."""
    A = d1.source
    n = d1.n
    bases, origins = [], []
    for s in d1.subspaces:
        for t in d2.subspaces:
            P, Q = s.projection, t.projection
            scale = 1 + np.linalg.norm(P, 2) * np.linalg.norm(Q, 2)
            if np.linalg.norm(P @ Q - Q @ P, 2) > tol * scale:
                raise NonCommutingError(
                    f"projections of blocks {s.label} and {t.label} do not commute")
            M = P @ Q
            U, sv, _ = np.linalg.svd(M)
            rank = int(np.sum(sv > 1e-8 * max(1.0, sv[0] if sv.size else 0)))
            if rank:
                bases.append(U[:, :rank])
                origins.append((s.label, t.label))
    if sum(b.shape[1] for b in bases) != n:
        raise SpectralError("intersections do not span the space")
    if len(bases) == 1:
        return classify_decomposition(Decomposition(
            [Subspace(np.eye(n, dtype=complex), np.eye(n, dtype=complex),
                      np.sort_complex(_eigvals(A)), 0, origins[0])],
            A, min(d1.gap, d2.gap)))
    return decomposition_from_bases(A, bases, min(d1.gap, d2.gap), origins)


def coarsen(dec: Decomposition, groups: Sequence[Sequence[int]], source=None) -> Decomposition:
    """Merge blocks: each group of labels becomes one subspace (optionally re-anchored on ``source``)."""
    seen = sorted(l for g in groups for l in g)
    if seen != sorted(dec.labels):
        raise ValueError("groups must partition the labels")
    src = dec.source if source is None else np.asarray(source)
    subs = []
    for i, g in enumerate(sorted(groups, key=min)):
        parts = [dec[l] for l in g]
        B = np.hstack([p.basis for p in parts])
        P = sum(p.projection for p in parts)
        spec = np.sort_complex(_eigvals(np.linalg.pinv(B) @ src @ B))
        subs.append(Subspace(B, P, spec, i, tuple(sorted(g))))
    return classify_decomposition(Decomposition(subs, src, dec.gap))


def trivial_decomposition(A) -> Decomposition:
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[0]
    return classify_decomposition(Decomposition(
        [Subspace(np.eye(n, dtype=complex), np.eye(n, dtype=complex),
                  np.sort_complex(_eigvals(A)), 0, (0,))], A, 0.0))


def projection_bound(A, kappa_prime: float, c0: float = 1.0) -> float:
    """Symbolic bound C0((1 + |A_N|)/kappa')^{n(n+1)} on projection norms."""
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[0]
    nn = np.linalg.norm(nilpotent_part(A), 2)
    return c0 * ((1 + nn) / kappa_prime) ** (n * (n + 1))


def calibrate_c0(samples: Sequence[tuple[np.ndarray, float]]) -> float:
    """Largest observed ratio of ||P_L|| to the projection bound with C0 = 1."""
    worst = 0.0
    for A, kp in samples:
        dec = cluster_decomposition(A, kp)
        bound = projection_bound(A, kp)
        worst = max(worst, max(s.norm for s in dec.subspaces) / bound)
    return worst
