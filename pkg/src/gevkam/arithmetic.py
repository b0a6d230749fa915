"""Finite exhaustive Diophantine and spectral small-divisor checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .torus_fn import Frequency

LATTICES = ("integer", "half")


@dataclass(frozen=True)
class DiophantineData:
    omega: tuple
    kappa: float
    tau: float

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", tuple(float(x) for x in w))
        d = len(w)
        if d < 1:
            raise ValueError("omega must be nonempty")
        if np.abs(w).max() > 1:
            raise ValueError("need sup |omega_i| <= 1")
        if not 0 < self.kappa < 1:
            raise ValueError("kappa must lie in (0, 1)")
        # the boundary value is admitted so that tau = 1 checks remain expressible
        if not self.tau >= max(1, d - 1):
            raise ValueError(f"tau must be at least max(1, d-1) = {max(1, d - 1)}")

    @property
    def d(self) -> int:
        return len(self.omega)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.omega)


@dataclass
class ResonanceReport:
    violations: list = field(default_factory=list)
    margin: float = np.inf
    checked: int = 0
    worst: tuple | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def describe(self) -> str:
        if self.passed:
            return f"pass (margin {self.margin:.6g} over {self.checked} frequencies)"
        m, val, bound = self.violations[0][:3]
        half = tuple(float(x) for x in m.half())
        return (f"FAIL: {len(self.violations)} violation(s), first at m={half} "
                f"(value {val:.3g} < bound {bound:.3g})")

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "margin": float(self.margin),
            "checked": self.checked,
            "violations": [
                {"doubled_freq": list(v[0].doubled), "value": float(v[1]), "bound": float(v[2])}
                for v in self.violations[:50]
            ],
            "n_violations": len(self.violations),
        }


def _ball(d: int, L: int) -> np.ndarray:
    """All integer vectors with L1 norm <= L."""
    if d == 1:
        return np.arange(-L, L + 1, dtype=np.int64)[:, None]
    parts = []
    for a in range(-L, L + 1):
        rest = _ball(d - 1, L - abs(a))
        parts.append(np.hstack([np.full((rest.shape[0], 1), a, dtype=np.int64), rest]))
    return np.vstack(parts)


@lru_cache(maxsize=64)
def _lattice_cached(d: int, L: int, lattice: str) -> np.ndarray:
    if lattice == "integer":
        v = 2 * _ball(d, L // 2)
    else:
        v = _ball(d, L)
    order = np.abs(v).sum(axis=1)
    keep = order > 0
    v, order = v[keep], order[keep]
    # shells ascending, lexicographic within a shell
    idx = np.lexsort(tuple(v[:, i] for i in range(d - 1, -1, -1)) + (order,))
    out = v[idx]
    out.setflags(write=False)
    return out


def lattice_vectors(d: int, N: float, lattice: str = "integer") -> np.ndarray:
    """Doubled coordinates of every m with 0 < |m| <= N in Z^d or (1/2)Z^d."""
    if lattice not in LATTICES:
        raise ValueError(f"lattice must be one of {LATTICES}")
    return _lattice_cached(d, int(np.floor(2 * N + 1e-9)), lattice)


def diophantine_check(dd: DiophantineData, N: float) -> ResonanceReport:
    if N < 1:
        raise ValueError("N must be >= 1")
    v = lattice_vectors(dd.d, N, "integer")
    orders = np.abs(v).sum(axis=1) / 2
    vals = np.abs((v @ dd.w) / 2)
    bounds = dd.kappa / orders ** dd.tau
    scaled = vals * orders ** dd.tau
    bad = np.flatnonzero(vals < bounds)
    rep = ResonanceReport(checked=len(v))
    rep.violations = [(Frequency(tuple(int(x) for x in v[i])), float(vals[i]), float(bounds[i]))
                      for i in bad]
    i = int(np.argmin(scaled))
    rep.margin = float(scaled[i])
    rep.worst = (Frequency(tuple(int(x) for x in v[i])), float(vals[i]), float(bounds[i]))
    return rep


def dc_scan(diffs, dd: DiophantineData, kappa_prime: float, N: float,
            lattice: str = "integer", pairs=None) -> ResonanceReport:
    """Check |delta - 2 i pi <m, omega>| >= kappa'/|m|^tau for every delta in ``diffs``."""
    diffs = np.atleast_1d(np.asarray(diffs, dtype=complex))
    v = lattice_vectors(dd.d, N, lattice)
    rep = ResonanceReport(checked=len(v))
    if len(v) == 0 or diffs.size == 0:
        return rep
    orders = np.abs(v).sum(axis=1) / 2
    tw = orders ** dd.tau
    phase = 2j * np.pi * (v @ dd.w) / 2
    vals = np.abs(diffs[:, None] - phase[None, :])
    bounds = kappa_prime / tw
    scaled = vals * tw[None, :]
    bad_p, bad_k = np.nonzero(vals < bounds[None, :])
    order = np.lexsort((bad_p, bad_k))
    for t in order:
        p, k = bad_p[t], bad_k[t]
        entry = (Frequency(tuple(int(x) for x in v[k])), float(vals[p, k]), float(bounds[k]))
        if pairs is not None:
            entry = entry + (pairs[p],)
        rep.violations.append(entry)
    flat = int(np.argmin(scaled))
    p, k = divmod(flat, len(v))
    rep.margin = float(scaled[p, k])
    rep.worst = (Frequency(tuple(int(x) for x in v[k])), float(vals[p, k]), float(bounds[k]))
    return rep


def eigen_differences(vals) -> tuple[np.ndarray, list]:
    vals = np.asarray(vals, dtype=complex)
    k = len(vals)
    pairs = [(i, j) for i in range(k) for j in range(k)]
    return np.array([vals[i] - vals[j] for i, j in pairs]), pairs


def spectrum_dc_check(A, dd: DiophantineData, kappa_prime: float, N: float,
                      lattice: str = "integer", eigenvalues=None) -> ResonanceReport:
    """Exhaustive DC^N check of the spectrum of A against the lattice frequencies."""
    if not kappa_prime > 0:
        raise ValueError("kappa' must be positive")
    if eigenvalues is None:
        try:
            eigenvalues = sla.eigvals(np.atleast_2d(np.asarray(A)))
        except (sla.LinAlgError, ValueError) as exc:
            raise np.linalg.LinAlgError(f"eigensolver failed: {exc}") from None
    diffs, pairs = eigen_differences(eigenvalues)
    return dc_scan(diffs, dd, kappa_prime, N, lattice, pairs)
