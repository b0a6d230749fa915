"""Matrix-valued trigonometric polynomials on the double torus 2T^d.

Frequencies live in (1/2)Z^d and are stored as doubled integer vectors so the
half-integer arithmetic is exact. A :class:`TorusMatFn` keeps only its nonzero
Fourier coefficients (sorted by an integer key) plus ``budget``, an upper bound
on the Wiener norm (sum of coefficient operator norms) of everything the
stored data is known to miss: dropped modes, truncated series, floating-point
rounding.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

UNIT_ROUNDOFF = np.finfo(float).eps / 2
DROP_ABS = 1e-300
DROP_REL = 1e-16
_OFF = 1 << 15
_BASE = 1 << 16
# pair count above which products are chunked
_DENSE_LIMIT = 1 << 21
_CHUNK_PAIRS = 200_000


class DimensionError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Raised when a series is asked to run outside its small-argument regime."""


@dataclass(frozen=True, order=True)
class Frequency:
    """A frequency m in (1/2)Z^d stored as the integer vector 2m."""

    doubled: tuple[int, ...]

    @classmethod
    def from_half(cls, m: Iterable) -> "Frequency":
        out = []
        for x in m:
            two = 2 * Fraction(x).limit_denominator(2)
            if two.denominator != 1 or two != 2 * Fraction(x):
                raise ValueError(f"{x} is not in (1/2)Z")
            out.append(int(two))
        return cls(tuple(out))

    @property
    def d(self) -> int:
        return len(self.doubled)

    @property
    def order(self) -> Fraction:
        return Fraction(sum(abs(k) for k in self.doubled), 2)

    @property
    def is_integral(self) -> bool:
        return all(k % 2 == 0 for k in self.doubled)

    def half(self) -> np.ndarray:
        return np.asarray(self.doubled, dtype=float) / 2

    def __add__(self, other: "Frequency") -> "Frequency":
        return Frequency(tuple(a + b for a, b in zip(self.doubled, other.doubled)))

    def __sub__(self, other: "Frequency") -> "Frequency":
        return Frequency(tuple(a - b for a, b in zip(self.doubled, other.doubled)))

    def __neg__(self) -> "Frequency":
        return Frequency(tuple(-a for a in self.doubled))


class GroupTag(enum.Enum):
    """The six matrix groups handled, with their Lie algebras."""

    GL_C = "GL(n,C)"
    GL_R = "GL(n,R)"
    SL_R = "SL(n,R)"
    SP_R = "Sp(n,R)"
    O = "O(n)"
    U = "U(n)"

    @classmethod
    def parse(cls, s: "str | GroupTag") -> "GroupTag":
        if isinstance(s, GroupTag):
            return s
        key = s.strip().replace(" ", "")
        aliases = {
            "gl(n,c)": cls.GL_C, "gl_c": cls.GL_C, "glc": cls.GL_C,
            "gl(n,r)": cls.GL_R, "gl_r": cls.GL_R, "glr": cls.GL_R,
            "sl(n,r)": cls.SL_R, "sl_r": cls.SL_R, "sl": cls.SL_R,
            "sp(n,r)": cls.SP_R, "sp_r": cls.SP_R, "sp": cls.SP_R,
            "o(n)": cls.O, "o": cls.O,
            "u(n)": cls.U, "u": cls.U,
        }
        for tag in cls:
            if key == tag.value:
                return tag
        low = key.lower().rstrip("0123456789")  # "sl2", "o3", "u2"
        try:
            return aliases[key.lower()] if key.lower() in aliases else aliases[low]
        except KeyError:
            raise ValueError(f"unknown group tag {s!r}") from None

    @property
    def algebra(self) -> str:
        return {
            GroupTag.GL_C: "gl(n,C)", GroupTag.GL_R: "gl(n,R)", GroupTag.SL_R: "sl(n,R)",
            GroupTag.SP_R: "sp(n,R)", GroupTag.O: "o(n)", GroupTag.U: "u(n)",
        }[self]

    @property
    def is_real(self) -> bool:
        return self not in (GroupTag.GL_C, GroupTag.U)

    @property
    def lattice(self) -> str:
        """Label lattice for renormalizations: complex groups stay on T^d."""
        return "half" if self.is_real else "integer"

    def check_dimension(self, n: int) -> None:
        if self is GroupTag.SP_R and n % 2:
            raise DimensionError("Sp(n,R) requires even n")


def symplectic_form(n: int) -> np.ndarray:
    h = n // 2
    J = np.zeros((n, n))
    J[:h, h:] = -np.eye(h)
    J[h:, :h] = np.eye(h)
    return J


# ----------------------------------------------------------------------------
# key encoding and canonical form


def _encode(freqs: np.ndarray) -> np.ndarray:
    if freqs.shape[1] > 3:
        raise DimensionError("torus dimension d > 3 is not supported")
    if freqs.size and np.abs(freqs).max() >= _OFF:
        raise OverflowError("frequency exceeds the supported range")
    keys = np.zeros(freqs.shape[0], dtype=np.int64)
    for i in range(freqs.shape[1] - 1, -1, -1):
        keys = keys * _BASE + (freqs[:, i] + _OFF)
    return keys


def _op_norms(coeffs: np.ndarray) -> np.ndarray:
    if coeffs.shape[0] == 0:
        return np.zeros(0)
    if coeffs.shape[1] == 1:
        return np.abs(coeffs[:, 0, 0])
    return np.linalg.norm(coeffs, ord=2, axis=(1, 2))


def _canonical(n, d, freqs, coeffs, budget, real, drop_rel=DROP_REL, drop_abs=0.0):
    """Merge duplicate frequencies, symmetrize real data, drop negligible modes."""
    freqs = np.asarray(freqs, dtype=np.int64).reshape(-1, d)
    coeffs = np.asarray(coeffs, dtype=complex).reshape(-1, n, n)
    if freqs.shape[0]:
        keys = _encode(freqs)
        order = np.argsort(keys, kind="stable")
        keys, freqs, coeffs = keys[order], freqs[order], coeffs[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        if len(starts) != len(keys):
            coeffs = np.add.reduceat(coeffs, starts, axis=0)
            freqs, keys = freqs[starts], keys[starts]
        if real:
            freqs, coeffs, keys = _symmetrize(freqs, coeffs, keys)
        norms = _op_norms(coeffs)
        cutoff = max(DROP_ABS, drop_abs, drop_rel * (norms.max() if norms.size else 0.0))
        keep = norms > cutoff
        if not keep.all():
            budget = budget + float(norms[~keep].sum())
            freqs, coeffs, norms = freqs[keep], coeffs[keep], norms[keep]
    else:
        norms = np.zeros(0)
    f = TorusMatFn.__new__(TorusMatFn)
    f.n, f.d = n, d
    f.freqs, f.coeffs = freqs, coeffs
    f.budget = float(budget)
    f.real = bool(real)
    f._norms = norms
    return f


def _symmetrize(freqs, coeffs, keys):
    neg_keys = _encode(-freqs)
    missing = ~np.isin(neg_keys, keys)
    if missing.any():
        freqs = np.vstack([freqs, -freqs[missing]])
        coeffs = np.concatenate([coeffs, np.zeros_like(coeffs[missing])])
        keys = _encode(freqs)
        order = np.argsort(keys)
        keys, freqs, coeffs = keys[order], freqs[order], coeffs[order]
        neg_keys = _encode(-freqs)
    idx = np.searchsorted(keys, neg_keys)
    coeffs = 0.5 * (coeffs + np.conj(coeffs[idx]))
    return freqs, coeffs, keys


class TorusMatFn:
    """Sparse Fourier representation of f : 2T^d -> gl(n, C)."""

    __slots__ = ("n", "d", "freqs", "coeffs", "budget", "real", "_norms")

    def __init__(self, n: int, d: int, freqs=None, coeffs=None, budget: float = 0.0,
                 real: bool = False, drop_rel: float = DROP_REL):
        if n < 1 or d < 1:
            raise DimensionError("need n >= 1 and d >= 1")
        if freqs is None:
            freqs = np.zeros((0, d), dtype=np.int64)
            coeffs = np.zeros((0, n, n), dtype=complex)
        g = _canonical(n, d, freqs, coeffs, budget, real, drop_rel)
        for s in self.__slots__:
            setattr(self, s, getattr(g, s))

    # -- constructors --------------------------------------------------------
    @classmethod
    def zeros(cls, n: int, d: int, real: bool = True) -> "TorusMatFn":
        return cls(n, d, real=real)

    @classmethod
    def constant(cls, M, d: int, real: bool | None = None) -> "TorusMatFn":
        M = np.atleast_2d(np.asarray(M, dtype=complex))
        if real is None:
            real = bool(np.all(M.imag == 0))
        return cls(M.shape[0], d, np.zeros((1, d), dtype=np.int64), M[None], real=real)

    @classmethod
    def identity(cls, n: int, d: int) -> "TorusMatFn":
        return cls.constant(np.eye(n), d, real=True)

    @classmethod
    def from_modes(cls, modes: Mapping, n: int | None = None, d: int | None = None,
                   real: bool = False, doubled: bool = False) -> "TorusMatFn":
        """Build from ``{m: matrix}``; ``m`` is a half-integer tuple (or doubled ints)."""
        items = list(modes.items())
        if not items:
            if n is None or d is None:
                raise ValueError("empty mode map needs explicit n and d")
            return cls(n, d, real=real)
        fs, cs = [], []
        for m, M in items:
            if isinstance(m, Frequency):
                fs.append(m.doubled)
            elif doubled:
                fs.append(tuple(int(k) for k in m))
            else:
                fs.append(Frequency.from_half(np.atleast_1d(m)).doubled)
            cs.append(np.atleast_2d(np.asarray(M, dtype=complex)))
        n = cs[0].shape[0] if n is None else n
        d = len(fs[0]) if d is None else d
        return cls(n, d, np.array(fs, dtype=np.int64), np.array(cs), real=real)

    def with_(self, freqs=None, coeffs=None, budget=None, real=None, drop_rel=DROP_REL) -> "TorusMatFn":
        return _canonical(
            self.n, self.d,
            self.freqs if freqs is None else freqs,
            self.coeffs if coeffs is None else coeffs,
            self.budget if budget is None else budget,
            self.real if real is None else real,
            drop_rel,
        )

    # -- inspection -----------------------------------------------------------
    @property
    def nnz(self) -> int:
        return self.freqs.shape[0]

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @property
    def doubled_orders(self) -> np.ndarray:
        return np.abs(self.freqs).sum(axis=1)

    @property
    def bandwidth(self) -> float:
        return float(self.doubled_orders.max()) / 2 if self.nnz else 0.0

    @property
    def is_integral(self) -> bool:
        return bool(np.all(self.freqs % 2 == 0))

    def coeff(self, m) -> np.ndarray:
        """Coefficient at ``m`` (a Frequency or a half-integer tuple)."""
        m = m if isinstance(m, Frequency) else Frequency.from_half(np.atleast_1d(m))
        key = _encode(np.array([m.doubled], dtype=np.int64))[0]
        keys = _encode(self.freqs)
        i = np.searchsorted(keys, key)
        if i < len(keys) and keys[i] == key:
            return self.coeffs[i].copy()
        return np.zeros((self.n, self.n), dtype=complex)

    def mean(self) -> np.ndarray:
        return self.coeff(Frequency((0,) * self.d))

    def items(self):
        for k, c in zip(self.freqs, self.coeffs):
            yield Frequency(tuple(int(x) for x in k)), c

    def l1(self) -> float:
        """Wiener norm of the stored data plus the budget (the r -> 0 surrogate)."""
        return float(self._norms.sum()) + self.budget

    def l2(self) -> float:
        return float(np.sqrt((self._norms ** 2).sum()))

    def max_coeff(self) -> float:
        return float(self._norms.max()) if self.nnz else 0.0

    def __repr__(self) -> str:
        return (f"TorusMatFn(n={self.n}, d={self.d}, nnz={self.nnz}, "
                f"band={self.bandwidth}, budget={self.budget:.3g}, real={self.real})")

    # -- linear structure -----------------------------------------------------
    def _check(self, other: "TorusMatFn") -> None:
        if self.n != other.n or self.d != other.d:
            raise DimensionError(f"shape mismatch: n={self.n},d={self.d} vs n={other.n},d={other.d}")

    def __add__(self, other):
        if not isinstance(other, TorusMatFn):
            other = TorusMatFn.constant(np.broadcast_to(other, (self.n, self.n)), self.d)
        self._check(other)
        rnd = UNIT_ROUNDOFF * (self.l1() + other.l1())
        return _canonical(
            self.n, self.d, np.vstack([self.freqs, other.freqs]),
            np.concatenate([self.coeffs, other.coeffs]),
            self.budget + other.budget + rnd, self.real and other.real,
        )

    __radd__ = __add__

    def __neg__(self):
        return _canonical(self.n, self.d, self.freqs, -self.coeffs, self.budget, self.real)

    def __sub__(self, other):
        if not isinstance(other, TorusMatFn):
            other = TorusMatFn.constant(np.broadcast_to(other, (self.n, self.n)), self.d)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, c: complex) -> "TorusMatFn":
        real = self.real and complex(c).imag == 0
        return _canonical(self.n, self.d, self.freqs, self.coeffs * c,
                          abs(c) * self.budget * (1 + UNIT_ROUNDOFF), real)

    def left(self, M) -> "TorusMatFn":
        """Pointwise product M f with a constant matrix M."""
        M = np.asarray(M, dtype=complex)
        nM = np.linalg.norm(M, 2)
        real = self.real and bool(np.all(M.imag == 0))
        return _canonical(self.n, self.d, self.freqs, M[None] @ self.coeffs,
                          nM * self.budget + self.n ** 2 * UNIT_ROUNDOFF * nM * self.l1(), real)

    def right(self, M) -> "TorusMatFn":
        M = np.asarray(M, dtype=complex)
        nM = np.linalg.norm(M, 2)
        real = self.real and bool(np.all(M.imag == 0))
        return _canonical(self.n, self.d, self.freqs, self.coeffs @ M[None],
                          nM * self.budget + self.n ** 2 * UNIT_ROUNDOFF * nM * self.l1(), real)

    def shift(self, doubled_shift: Sequence[int]) -> "TorusMatFn":
        """Multiply by the character e^{2 i pi <s, theta>} (``s`` given doubled)."""
        s = np.asarray(doubled_shift, dtype=np.int64).reshape(1, self.d)
        real = self.real and not np.any(s)
        return _canonical(self.n, self.d, self.freqs + s, self.coeffs, self.budget, real)

    def adjoint(self) -> "TorusMatFn":
        """The function theta -> f(theta)^*."""
        return _canonical(self.n, self.d, -self.freqs,
                          np.conj(np.transpose(self.coeffs, (0, 2, 1))), self.budget, self.real)

    def transpose(self) -> "TorusMatFn":
        return _canonical(self.n, self.d, self.freqs,
                          np.transpose(self.coeffs, (0, 2, 1)), self.budget, self.real)

    def __matmul__(self, other: "TorusMatFn") -> "TorusMatFn":
        return convolve_product(self, other)


# ----------------------------------------------------------------------------
# operations


def convolve_product(f: TorusMatFn, g: TorusMatFn, max_band: float = math.inf,
                     drop_rel: float = DROP_REL) -> TorusMatFn:
    """Fourier coefficients of the pointwise product fg, truncated at ``max_band``.

    Everything discarded (modes beyond ``max_band``, coefficients under the drop
    floor) is added to the budget, together with the propagated input budgets
    and a standard-model bound on the rounding of the convolution sums.
    """
    f._check(g)
    n, d = f.n, f.d
    Sf, Sg = float(f._norms.sum()), float(g._norms.sum())
    inherited = Sf * g.budget + f.budget * Sg + f.budget * g.budget
    if f.nnz == 0 or g.nnz == 0:
        return _canonical(n, d, np.zeros((0, d), np.int64), np.zeros((0, n, n)),
                          inherited, f.real and g.real)
    kmin = min(f.nnz, g.nnz)
    rounding = 1.01 * n * (n * kmin + 1) * UNIT_ROUNDOFF * Sf * Sg
    lim = 2 * max_band if math.isfinite(max_band) else None

    dropped = 0.0
    a_idx = np.arange(f.nnz)
    step = max(1, _CHUNK_PAIRS // g.nnz)
    # frequency box of the product, clipped to the band
    box = np.abs(f.freqs).max(axis=0) + np.abs(g.freqs).max(axis=0)
    if lim is not None:
        box = np.minimum(box, int(math.floor(lim)))
    shape = tuple(int(2 * b + 1) for b in box)
    size = int(np.prod(shape))
    dense = size <= _DENSE_LIMIT
    if dense:
        acc = np.zeros((size, n * n), dtype=complex)
    out_f, out_c = [], []
    for s in range(0, f.nnz, step):
        ia = a_idx[s:s + step]
        keys = (f.freqs[ia, None, :] + g.freqs[None, :, :]).reshape(-1, d)
        prods = np.einsum("aij,bjk->abik", f.coeffs[ia], g.coeffs, optimize=True).reshape(-1, n * n)
        if lim is not None:
            inside = np.abs(keys).sum(axis=1) <= lim
            if not inside.all():
                # bound the lost mass by the product of factor norms
                pn = (f._norms[ia, None] * g._norms[None, :]).reshape(-1)
                dropped += float(pn[~inside].sum())
                keys, prods = keys[inside], prods[inside]
        if dense:
            idx = np.ravel_multi_index(tuple((keys + box).T), shape)
            for e in range(n * n):
                acc[:, e] += np.bincount(idx, weights=prods[:, e].real, minlength=size)
                acc[:, e] += 1j * np.bincount(idx, weights=prods[:, e].imag, minlength=size)
        else:
            out_f.append(keys)
            out_c.append(prods)
    if dense:
        nz = np.flatnonzero(np.any(acc != 0, axis=1))
        freqs = np.stack(np.unravel_index(nz, shape), axis=1).astype(np.int64) - box
        coeffs = acc[nz]
    else:
        freqs = np.vstack(out_f) if out_f else np.zeros((0, d), np.int64)
        coeffs = np.concatenate(out_c) if out_c else np.zeros((0, n * n))
    return _canonical(n, d, freqs, coeffs.reshape(-1, n, n), inherited + rounding + dropped,
                      f.real and g.real, drop_rel)


def product(*fs: TorusMatFn, max_band: float = math.inf) -> TorusMatFn:
    out = fs[0]
    for g in fs[1:]:
        out = convolve_product(out, g, max_band)
    return out


def derivative_omega(f: TorusMatFn, omega) -> TorusMatFn:
    """Directional derivative along omega: coefficient m is scaled by 2 i pi <m, omega>."""
    omega = np.asarray(omega, dtype=float)
    mult = 2j * np.pi * (f.freqs @ omega) / 2
    wmax = 2 * np.pi * float(np.abs(omega).max()) * max(f.bandwidth, 1.0)
    return _canonical(f.n, f.d, f.freqs, f.coeffs * mult[:, None, None],
                      f.budget * wmax + 4 * UNIT_ROUNDOFF * wmax * float(f._norms.sum()), f.real)


def gevrey_weights(f: TorusMatFn, r: float) -> np.ndarray:
    return np.exp(2 * np.pi * (f.doubled_orders / 2) * r * r)


def gevrey_upper_bound(f: TorusMatFn, r: float) -> float:
    """Certified surrogate S_r(f) = sum ||f(m)|| e^{2 pi |m| r^2} + budget."""
    if not (0 < r <= 1):
        raise ValueError(f"r must lie in (0, 1], got {r}")
    return float((f._norms * gevrey_weights(f, r)).sum()) + f.budget


def truncate_and_tail(f: TorusMatFn, N: float) -> tuple[TorusMatFn, float]:
    if N < 0:
        raise ValueError("N must be nonnegative")
    keep = f.doubled_orders <= 2 * N
    tail = float(f._norms[~keep].sum())
    trunc = TorusMatFn.__new__(TorusMatFn)
    trunc.n, trunc.d = f.n, f.d
    trunc.freqs, trunc.coeffs, trunc._norms = f.freqs[keep], f.coeffs[keep], f._norms[keep]
    trunc.budget, trunc.real = f.budget, f.real
    return trunc, tail


def drop_mean(f: TorusMatFn) -> TorusMatFn:
    keep = np.any(f.freqs != 0, axis=1)
    g = TorusMatFn.__new__(TorusMatFn)
    g.n, g.d = f.n, f.d
    g.freqs, g.coeffs, g._norms = f.freqs[keep], f.coeffs[keep], f._norms[keep]
    g.budget, g.real = f.budget, f.real
    return g


def exp_series(X: TorusMatFn, max_band: float = math.inf, taylor_tol: float = 1e-30,
               include_identity: bool = True, keep_powers: bool = False):
    """Taylor series of e^X (or e^X - I) by repeated convolution.

    Stops once the Wiener norm of the next term is below ``taylor_tol`` and adds
    the remainder bound S^{K+1}/(K+1)! e^S to the budget. With ``keep_powers``
    the list of X^k/k! terms is returned as well.
    """
    if taylor_tol <= 0:
        raise ValueError("taylor_tol must be positive")
    S = X.l1()
    if S > 1:
        raise DivergenceError(f"exponential refused: surrogate norm {S:.3g} > 1")
    n, d = X.n, X.d
    acc = TorusMatFn.identity(n, d) if include_identity else TorusMatFn.zeros(n, d, real=X.real)
    terms = [TorusMatFn.identity(n, d)]
    term = X
    k = 1
    while True:
        terms.append(term)
        acc = acc + term
        if term.l1() <= taylor_tol or S == 0:
            break
        k += 1
        term = convolve_product(term, X, max_band).scale(1.0 / k)
        if k > 200:
            raise DivergenceError("Taylor series did not reach tolerance in 200 terms")
    K = k
    remainder = S ** (K + 1) / math.factorial(K + 1) * math.exp(S) if S > 0 else 0.0
    acc = acc.with_(budget=acc.budget + remainder, real=X.real)
    if keep_powers:
        return acc, terms
    return acc


def exp_of(X: TorusMatFn, max_band: float = math.inf, taylor_tol: float = 1e-30) -> TorusMatFn:
    return exp_series(X, max_band, taylor_tol)


def _phases(freqs: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.pi * (theta @ freqs.T))


def evaluate(f: TorusMatFn, theta) -> np.ndarray:
    """Value(s) of f at theta (shape (d,) or (P, d)), coordinates with period 2."""
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    th = theta.reshape(-1, f.d)
    out = np.zeros((th.shape[0], f.n, f.n), dtype=complex)
    if f.nnz:
        step = max(1, 4_000_000 // max(f.nnz, 1))
        for s in range(0, th.shape[0], step):
            ph = _phases(f.freqs, th[s:s + step])
            out[s:s + step] = np.einsum("pk,kij->pij", ph, f.coeffs)
    return out[0] if single else out


def prune(f: TorusMatFn, mass: float) -> TorusMatFn:
    """Drop the smallest coefficients whose total norm stays below ``mass``."""
    if f.nnz == 0 or mass <= 0:
        return f
    order = np.argsort(f._norms)
    cum = np.cumsum(f._norms[order])
    cut = int(np.searchsorted(cum, mass, side="right"))
    if cut == 0:
        return f
    keep = np.sort(order[cut:])
    g = TorusMatFn.__new__(TorusMatFn)
    g.n, g.d = f.n, f.d
    g.freqs, g.coeffs, g._norms = f.freqs[keep], f.coeffs[keep], f._norms[keep]
    g.budget, g.real = f.budget + float(cum[cut - 1]), f.real
    return g


def grid(d: int, size: int) -> np.ndarray:
    """Uniform size^d grid on the double torus (period 2 per coordinate)."""
    axes = [2.0 * np.arange(size) / size] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def algebra_membership(f: TorusMatFn, tag: GroupTag | str, tol: float = 1e-9) -> tuple[bool, float]:
    """Whether every value of f lies in the Lie algebra of ``tag``.

    All conditions are linear in f, so they are checked on the Fourier
    coefficients: realness pairs m with -m, trace, J-skewness, skewness.
    """
    tag = GroupTag.parse(tag)
    if f.nnz == 0:
        return True, 0.0
    n = f.n
    worst = 0.0
    c = f.coeffs
    cneg = None
    if tag.is_real or tag is GroupTag.U:
        keys = _encode(f.freqs)
        nk = _encode(-f.freqs)
        idx = np.searchsorted(keys, nk)
        idx = np.clip(idx, 0, len(keys) - 1)
        present = keys[idx] == nk
        cneg = np.where(present[:, None, None], c[idx], 0)
    if tag.is_real:
        worst = max(worst, float(_op_norms(cneg - np.conj(c)).max()))
    if tag is GroupTag.SL_R:
        worst = max(worst, float(np.abs(np.trace(c, axis1=1, axis2=2)).max()))
    if tag is GroupTag.SP_R:
        tag.check_dimension(n)
        J = symplectic_form(n)
        viol = np.transpose(c, (0, 2, 1)) @ J + J @ c
        worst = max(worst, float(_op_norms(viol).max()))
    if tag is GroupTag.O:
        worst = max(worst, float(_op_norms(c + np.transpose(c, (0, 2, 1))).max()))
    if tag is GroupTag.U:
        worst = max(worst, float(_op_norms(c + np.conj(np.transpose(cneg, (0, 2, 1)))).max()))
    return worst <= tol, worst


def matrix_in_algebra(M, tag: GroupTag | str, tol: float = 1e-9) -> tuple[bool, float]:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return algebra_membership(TorusMatFn.constant(M, 1, real=False), tag, tol)


# ----------------------------------------------------------------------------
# serialization


def to_records(f: TorusMatFn) -> list[dict]:
    return [
        {"doubled_freq": [int(x) for x in k], "re": c.real.tolist(), "im": c.imag.tolist()}
        for k, c in zip(f.freqs, f.coeffs)
    ]


def from_records(records: list[dict], n: int, d: int, real: bool = False,
                 budget: float = 0.0) -> TorusMatFn:
    if not records:
        return TorusMatFn(n, d, real=real, budget=budget)
    fs, cs = [], []
    for i, rec in enumerate(records):
        try:
            k = [int(x) for x in rec["doubled_freq"]]
            re = np.asarray(rec["re"], dtype=float)
            im = np.asarray(rec.get("im", np.zeros_like(re)), dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"Fourier record {i}: {exc}") from None
        if len(k) != d or re.shape != (n, n) or im.shape != (n, n):
            raise ValueError(f"Fourier record {i}: expected d={d} frequency and {n}x{n} matrices")
        fs.append(k)
        cs.append(re + 1j * im)
    # drop_rel=0 keeps serialization lossless
    return _canonical(n, d, np.array(fs, dtype=np.int64), np.array(cs), budget, real, drop_rel=0.0)
