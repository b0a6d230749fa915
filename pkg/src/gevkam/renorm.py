"""Trivial maps, renormalization of resonant constant parts, and periodicity bookkeeping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arithmetic import DiophantineData, dc_scan, eigen_differences, lattice_vectors
from .spectral import Decomposition, cluster_decomposition, coarsen, meet_decompositions
from .torus_fn import (Frequency, GroupTag, TorusMatFn, evaluate, grid, symplectic_form)


class RenormalizationError(RuntimeError):
    def __init__(self, msg: str, worst=None):
        super().__init__(msg)
        self.worst = worst


class PeriodicityError(RuntimeError):
    def __init__(self, msg: str, block=None):
        super().__init__(msg)
        self.block = block


def kappa_double_prime(kappa: float, n: int, N: float, tau: float, convention: str = "diophanG") -> float:
    """kappa/(n (8N)^tau) for the renormalization proposition, kappa/(9nN)^tau for the iteration."""
    if convention == "diophanG":
        return kappa / (n * (8 * N) ** tau)
    if convention == "iter":
        return kappa / (9 * n * N) ** tau
    raise ValueError(f"unknown kappa'' convention {convention!r}")


@dataclass
class TrivialMap:
    """Phi = sum_L e^{2 i pi <m_L, theta>} P_L; labels map block label -> doubled frequency."""

    decomposition: Decomposition
    labels: dict

    def __post_init__(self):
        self.labels = {int(k): tuple(int(x) for x in (v.doubled if isinstance(v, Frequency) else v))
                       for k, v in self.labels.items()}

    @classmethod
    def identity(cls, dec: Decomposition, d: int) -> "TrivialMap":
        return cls(dec, {l: (0,) * d for l in dec.labels})

    @property
    def d(self) -> int:
        return len(next(iter(self.labels.values())))

    @property
    def n(self) -> int:
        return self.decomposition.n

    def label(self, l: int) -> np.ndarray:
        return np.asarray(self.labels[l], dtype=np.int64)

    @property
    def is_identity(self) -> bool:
        return all(not any(v) for v in self.labels.values())

    @property
    def is_integral(self) -> bool:
        return all(x % 2 == 0 for v in self.labels.values() for x in v)

    def inverse(self) -> "TrivialMap":
        return TrivialMap(self.decomposition, {k: tuple(-x for x in v) for k, v in self.labels.items()})

    def shift_matrix(self, omega) -> np.ndarray:
        """sum_L 2 i pi <m_L, omega> P_L, the constant part removed by the renormalization."""
        w = np.asarray(omega, dtype=float)
        out = np.zeros((self.n, self.n), dtype=complex)
        for s in self.decomposition.subspaces:
            out += 2j * np.pi * (self.label(s.label) @ w / 2) * s.projection
        return out

    def to_fn(self, real: bool | None = None) -> TorusMatFn:
        subs = self.decomposition.subspaces
        freqs = np.array([self.labels[s.label] for s in subs], dtype=np.int64)
        coeffs = np.array([s.projection for s in subs])
        f = TorusMatFn(self.n, self.d, freqs, coeffs, drop_rel=0.0)
        if real is None:
            real = self.decomposition.flags.get("real", False) and _labels_conjugate(self)
        return f.with_(real=True, drop_rel=0.0) if real else f

    def compose(self, other: "TrivialMap") -> "TrivialMap":
        """Product self * other over the common refinement (labels add)."""
        meet = meet_decompositions(self.decomposition, other.decomposition)
        labels = {}
        for s in meet.subspaces:
            a, b = s.origin
            labels[s.label] = tuple(x + y for x, y in zip(self.labels[a], other.labels[b]))
        return TrivialMap(meet, labels)

    def to_dict(self) -> dict:
        return {"labels": [{"label": k, "doubled_freq": list(v)} for k, v in sorted(self.labels.items())],
                "decomposition_ref": self.decomposition.to_dict()}


def _labels_conjugate(phi: TrivialMap) -> bool:
    for a, b in phi.decomposition.conjugate_pairing.items():
        if phi.labels[a] != tuple(-x for x in phi.labels[b]):
            return False
    return True


def symplectic_edges(dec: Decomposition) -> list[tuple[int, int]]:
    """Pairs (L, L') with ||P_L^* J P_L'|| above tolerance (sesquilinear coupling)."""
    n = dec.n
    if n % 2:
        return []
    J = symplectic_form(n)
    subs = dec.subspaces
    out = []
    for s in subs:
        for t in subs:
            if np.linalg.norm(s.projection.conj().T @ J @ t.projection, 2) > 1e-8 * s.norm * t.norm:
                out.append((s.label, t.label))
    return out


# ----------------------------------------------------------------------------
# validity


def trivial_map_validity(phi: TrivialMap, tag: GroupTag | str, grid_size: int = 8) -> tuple[bool, str]:
    tag = GroupTag.parse(tag)
    dec = phi.decomposition
    reasons = []
    if not tag.is_real and not phi.is_integral:
        reasons.append("half-integer label for a complex group")
    if tag in (GroupTag.U, GroupTag.O) and not phi.is_identity and not dec.flags.get("unitary"):
        reasons.append("projections not orthogonal for a compact group")
    if tag.is_real:
        if not dec.flags.get("real") and not phi.is_identity:
            reasons.append("decomposition not real")
        elif not _labels_conjugate(phi):
            reasons.append("conjugate pairing: m_L != -m_conj(L)")
    if tag is GroupTag.SL_R:
        tot = np.zeros(phi.d, dtype=np.int64)
        for s in dec.subspaces:
            tot += s.dim * phi.label(s.label)
        if np.any(tot):
            reasons.append("determinant: sum of dim_L m_L nonzero")
    if tag is GroupTag.SP_R:
        for a, b in symplectic_edges(dec):
            if phi.labels[a] != phi.labels[b]:
                reasons.append(f"symplectic pairing: blocks {a},{b} carry different labels")
                break
    if tag.is_real and not reasons:
        f = phi.to_fn(real=False)
        vals = evaluate(f, grid(phi.d, grid_size))
        scale = max(1.0, float(np.abs(vals).max()))
        if np.abs(vals.imag).max() > 1e-12 * scale:
            reasons.append("reconstructed values not real")
    return (not reasons), "; ".join(reasons) if reasons else "ok"


# ----------------------------------------------------------------------------
# conjugation and periodicity


def trivial_conjugate(phi: TrivialMap, f: TorusMatFn, inverse: bool = False) -> TorusMatFn:
    """Phi f Phi^{-1} (or Phi^{-1} f Phi), block (L, L') shifted by +-(m_L - m_L')."""
    if f.n != phi.n:
        raise ValueError("dimension mismatch")
    if phi.is_identity:
        return f
    sign = -1 if inverse else 1
    subs = phi.decomposition.subspaces
    fr, co = [], []
    budget = 0.0
    for s in subs:
        for t in subs:
            shift = sign * (phi.label(s.label) - phi.label(t.label))
            block = s.projection[None] @ f.coeffs @ t.projection[None]
            fr.append(f.freqs + shift[None])
            co.append(block)
            budget += s.norm * t.norm * f.budget
    real = f.real and phi.decomposition.flags.get("real", False) and _labels_conjugate(phi)
    n = f.n
    if f.nnz == 0:
        return TorusMatFn(n, f.d, budget=budget, real=real)
    return TorusMatFn(n, f.d, np.vstack(fr), np.concatenate(co), budget=budget, real=real)


def block_support(f: TorusMatFn, P: np.ndarray, Q: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Doubled frequencies where the block P f Q is numerically nonzero."""
    if f.nnz == 0:
        return np.zeros((0, f.d), dtype=np.int64)
    blocks = P[None] @ f.coeffs @ Q[None]
    norms = np.linalg.norm(blocks.reshape(len(blocks), -1), axis=1)
    cut = rel_tol * max(f.max_coeff(), 1e-300) * max(1.0, np.linalg.norm(P, 2) * np.linalg.norm(Q, 2))
    return f.freqs[norms > cut]


def good_periodicity_check(f: TorusMatFn, phi: TrivialMap) -> tuple[bool, dict]:
    """Per block: is every frequency of P_L f P_L' in Z^d + (m_L - m_L')?"""
    flags = {}
    for s in phi.decomposition.subspaces:
        for t in phi.decomposition.subspaces:
            sup = block_support(f, s.projection, t.projection)
            diff = phi.label(s.label) - phi.label(t.label)
            flags[(s.label, t.label)] = bool(np.all((sup - diff[None]) % 2 == 0))
    return all(flags.values()), flags


@dataclass
class PeriodicityLedger:
    """Label parities (doubled label mod 2) of the current block structure."""

    decomposition: Decomposition
    parity: dict
    single_doubling: bool = True
    history: list = field(default_factory=list)

    @classmethod
    def from_map(cls, phi: TrivialMap) -> "PeriodicityLedger":
        return cls(phi.decomposition, {k: tuple(x % 2 for x in v) for k, v in phi.labels.items()})

    @classmethod
    def trivial(cls, dec: Decomposition, d: int) -> "PeriodicityLedger":
        return cls(dec, {l: (0,) * d for l in dec.labels})

    def block_periodic(self, a: int, b: int) -> bool:
        return self.parity[a] == self.parity[b]

    def as_map(self) -> TrivialMap:
        return TrivialMap(self.decomposition, dict(self.parity))

    def to_dict(self) -> dict:
        return {"parity": {str(k): list(v) for k, v in self.parity.items()},
                "single_doubling": self.single_doubling}


def merge_periodicity(H: TorusMatFn, dec: Decomposition, A, A2, parity: dict | None = None,
                      rel_tol: float = 1e-12) -> Decomposition:
    """Coarsen ``dec`` along the blocks coupled by A2 - A; those blocks of H must be T^d-periodic."""
    A = np.asarray(A)
    A2 = np.asarray(A2)
    D = A2 - A
    nD = np.linalg.norm(D, 2)
    labels = dec.labels
    parent = {l: l for l in labels}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    if nD > 0:
        for s in dec.subspaces:
            for t in dec.subspaces:
                if s.label == t.label:
                    continue
                if np.linalg.norm(s.projection @ D @ t.projection, 2) > rel_tol * nD:
                    sup = block_support(H, s.projection, t.projection)
                    if np.any(sup % 2):
                        raise PeriodicityError(
                            f"block ({s.label},{t.label}) is coupled by A'-A but H has "
                            f"half-integer frequencies there", (s.label, t.label))
                    if parity is not None and parity[s.label] != parity[t.label]:
                        raise PeriodicityError(
                            f"block ({s.label},{t.label}) coupled across different label parities",
                            (s.label, t.label))
                    parent[find(s.label)] = find(t.label)
    groups: dict[int, list[int]] = {}
    for l in labels:
        groups.setdefault(find(l), []).append(l)
    out = coarsen(dec, list(groups.values()), source=A2)
    return out


# ----------------------------------------------------------------------------
# norms


def phi_gevrey_bound(phi: TrivialMap, r_prime: float, kappa2: float | None = None,
                     N: float | None = None, C: float = 1.0, C0: float = 1.0) -> tuple[float, float]:
    """Surrogate sum_L ||P_L|| e^{2 pi |m_L| r'^2} and the symbolic bound (nan if not computable)."""
    sur = 0.0
    for s in phi.decomposition.subspaces:
        order = np.abs(phi.label(s.label)).sum() / 2
        sur += s.norm * math.exp(2 * math.pi * order * r_prime ** 2)
    symb = float("nan")
    if kappa2 is not None and N is not None:
        from .spectral import nilpotent_part
        A = phi.decomposition.source
        n = phi.n
        nn = np.linalg.norm(nilpotent_part(A), 2)
        symb = n * C * C0 * ((1 + nn) / kappa2) ** (n * (n + 1)) * math.exp(4 * math.pi * r_prime ** 2 * N)
    return sur, symb


# ----------------------------------------------------------------------------
# renormalization search


@dataclass
class RenormResult:
    phi: TrivialMap
    A_tilde: np.ndarray
    kappa2: float
    report: object
    searched: int = 0


def _orbits(dec: Decomposition, tag: GroupTag) -> list[dict]:
    """Blocks linked by the label constraints of ``tag``, with relative signs.

    Conjugate partners carry opposite labels, symplectically coupled blocks
    equal ones. An orbit whose constraints clash is forced to label 0.
    """
    edges: dict[int, list[tuple[int, int]]] = {l: [] for l in dec.labels}
    if tag.is_real:
        for a, b in dec.conjugate_pairing.items():
            edges[a].append((b, -1))
            edges[b].append((a, -1))
    if tag is GroupTag.SP_R:
        for a, b in symplectic_edges(dec):
            edges[a].append((b, 1))
            edges[b].append((a, 1))
    seen: dict[int, int] = {}
    out = []
    for root in dec.labels:
        if root in seen:
            continue
        signs = {root: 1}
        forced = False
        stack = [root]
        while stack:
            x = stack.pop()
            for y, sg in edges[x]:
                want = signs[x] * sg
                if y not in signs:
                    signs[y] = want
                    stack.append(y)
                elif signs[y] != want:
                    forced = True
        seen.update(signs)
        out.append({"root": root, "signs": signs, "forced_zero": forced})
    return out


def _acceptable(vals, dd, kappa2, N, lattice):
    """DC^N of the spectrum and of the eigenvalues themselves (no cluster on a resonance)."""
    vals = np.asarray(vals, dtype=complex)
    diffs, _ = eigen_differences(vals)
    rep = dc_scan(np.concatenate([diffs, vals]), dd, kappa2, N, lattice)
    return rep


def build_renormalization(A, dd: DiophantineData, N: float, group: GroupTag | str,
                          kappa2: float | None = None, convention: str = "diophanG",
                          K: int = 32, max_label: float | None = None) -> RenormResult:
    """Trivial map Phi and A~ = A - sum 2 i pi <m_L, omega> P_L with a DC^N spectrum."""
    tag = GroupTag.parse(group)
    A = np.atleast_2d(np.asarray(A))
    n = A.shape[0]
    tag.check_dimension(n)
    if N < 2:
        raise ValueError("renormalization order N must be >= 2")
    if kappa2 is None:
        kappa2 = kappa_double_prime(dd.kappa, n, N, dd.tau, convention)
    lattice = tag.lattice
    dec = cluster_decomposition(A, kappa2)
    d = dd.d
    w = dd.w

    base = _acceptable(np.linalg.eigvals(A), dd, kappa2, N, lattice)
    if base.passed:
        phi = TrivialMap.identity(dec, d)
        return RenormResult(phi, _realify(A.copy(), tag), kappa2, base)

    orbits = _orbits(dec, tag)
    cand_pool = lattice_vectors(d, 2 * N if max_label is None else max_label, lattice)
    pool_vals = cand_pool @ w / 2
    pool_order = np.abs(cand_pool).sum(axis=1)
    # lattice vectors behind the observed resonances: shifting one block by them
    # moves a difference off the resonance without relabeling the others
    step = 1 if lattice == "half" else 2
    resonant = []
    for v in base.violations:
        m = np.asarray(v[0].doubled, dtype=np.int64)
        if np.all(m % step == 0) and np.abs(m).sum() <= 2 * (2 * N if max_label is None else max_label):
            for sm in (m, -m):
                if not any(np.array_equal(sm, x) for x in resonant):
                    resonant.append(sm)
    cand_lists = []
    for orb in orbits:
        zero = np.zeros(d, dtype=np.int64)
        if orb["forced_zero"]:
            cand_lists.append([zero])
            continue
        rho = dec[orb["root"]].center.imag / (2 * np.pi)
        score = np.abs(rho - pool_vals)
        k = min(K, len(cand_pool))
        idx = np.argpartition(score, k - 1)[:k] if len(cand_pool) > k else np.arange(len(cand_pool))
        keys = [(round(float(score[i]), 14), int(pool_order[i]), tuple(cand_pool[i])) for i in idx]
        idx = [i for _, i in sorted(zip(keys, idx))]
        extra = [cand_pool[i] for i in idx if not any(np.array_equal(cand_pool[i], x) for x in resonant)]
        cand_lists.append([zero] + resonant[:K] + extra)

    spectra = {s.label: s.spectrum for s in dec.subspaces}
    tried = 0
    best = base
    assignment: dict[int, np.ndarray] = {}

    def shifted(assign):
        out = []
        for l, m in assign.items():
            out.append(spectra[l] - 2j * np.pi * (m @ w / 2))
        return np.concatenate(out) if out else np.zeros(0, complex)

    def dfs(i):
        nonlocal tried, best
        if i == len(orbits):
            tried += 1
            rep = _acceptable(shifted(assignment), dd, kappa2, N, lattice)
            if rep.passed:
                return rep
            if rep.margin > best.margin:
                best = rep
            return None
        orb = orbits[i]
        for m in cand_lists[i]:
            for l, sg in orb["signs"].items():
                assignment[l] = sg * m
            # prune on the blocks assigned so far
            rep = _acceptable(shifted(assignment), dd, kappa2, N, lattice)
            tried += 1
            if rep.passed:
                res = dfs(i + 1)
                if res is not None:
                    return res
            elif rep.margin > best.margin:
                best = rep
            for l in orb["signs"]:
                assignment.pop(l, None)
        return None

    rep = dfs(0)
    if rep is None:
        worst = best.worst
        raise RenormalizationError(
            f"no admissible labels with |m_L| <= {2 * N} (tried {tried} assignments; "
            f"worst resonance at doubled m={worst[0].doubled if worst else None})", worst)
    phi = TrivialMap(dec, {l: tuple(int(x) for x in m) for l, m in assignment.items()})
    A_t = A - phi.shift_matrix(w)
    return RenormResult(phi, _realify(A_t, tag), kappa2, rep, tried)


def _realify(M: np.ndarray, tag: GroupTag) -> np.ndarray:
    if tag.is_real:
        return np.real_if_close(M, tol=1e8).real.astype(float) if np.iscomplexobj(M) else M.astype(float)
    return M.astype(complex)
