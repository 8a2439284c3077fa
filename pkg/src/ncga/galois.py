"""Arithmetic and linear algebra over GF(2^q).

Elements are stored as unsigned integers; addition is XOR and multiplication
is polynomial multiplication reduced by a fixed irreducible polynomial.  The
:class:`GF` object provides vectorised numpy kernels used by the rate
evaluator and the simulator.  Matrices are plain 2-D numpy arrays whose
entries are field elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, FieldMismatch, RankDeficient

#: irreducible (and primitive) reduction polynomials by field exponent
POLYNOMIALS = {4: 0x13, 8: 0x11B, 16: 0x1100B}


def _slow_mul(a: int, b: int, q: int, poly: int) -> int:
    """Shift-and-reduce multiplication, used to build tables."""
    result = 0
    top = 1 << q
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return result


class GF:
    """The field GF(2^q) with numpy-vectorised operations.

    For q <= 8 a full multiplication table is built (64 KiB for q = 8);
    larger fields multiply through log/antilog tables.
    """

    def __init__(self, q: int = 8):
        if q not in POLYNOMIALS:
            raise ValueError(f"unsupported field exponent q={q}; choose from {sorted(POLYNOMIALS)}")
        self.q = q
        self.poly = POLYNOMIALS[q]
        self.size = 1 << q
        self.order = self.size - 1
        self.dtype = np.uint8 if q <= 8 else np.uint16

        gen = self._find_generator()
        exp = np.zeros(2 * self.order, dtype=np.int64)
        log = np.zeros(self.size, dtype=np.int64)
        x = 1
        for i in range(self.order):
            exp[i] = x
            log[x] = i
            x = _slow_mul(x, gen, q, self.poly)
        exp[self.order:] = exp[: self.order]
        self.exp = exp
        self.log = log
        self.generator = gen

        inv = np.zeros(self.size, dtype=self.dtype)
        nz = np.arange(1, self.size)
        inv[1:] = exp[(self.order - log[nz]) % self.order]
        self.inv_table = inv

        self.table = None
        if q <= 8:
            a = np.arange(self.size)
            la = log[a]
            prod = exp[la[:, None] + la[None, :]]
            prod[0, :] = 0
            prod[:, 0] = 0
            self.table = prod.astype(self.dtype)

    def _find_generator(self) -> int:
        for g in range(2, self.size):
            x, k = g, 1
            while x != 1:
                x = _slow_mul(x, g, self.q, self.poly)
                k += 1
            if k == self.order:
                return g
        raise AssertionError("no primitive element found")  # pragma: no cover

    def __repr__(self) -> str:
        return f"GF(2^{self.q})"

    # -- elementwise -------------------------------------------------------
    def add(self, a, b):
        return np.bitwise_xor(a, b)

    def mul(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if self.table is not None:
            return self.table[a, b]
        la = self.log[a]
        lb = self.log[b]
        out = self.exp[la + lb].astype(self.dtype)
        return np.where((a != 0) & (b != 0), out, self.dtype(0))

    def inv(self, a):
        a = np.asarray(a)
        if np.any(a == 0):
            raise ZeroDivisionError("zero has no multiplicative inverse")
        return self.inv_table[a]

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    # -- random draws ------------------------------------------------------
    def random(self, rng: np.random.Generator, shape, nonzero: bool = False):
        low = 1 if nonzero else 0
        return rng.integers(low, self.size, size=shape, dtype=np.int64).astype(self.dtype)

    # -- linear algebra ----------------------------------------------------
    def matmul(self, a, b):
        """Matrix product over the field."""
        a = np.asarray(a, dtype=self.dtype)
        b = np.asarray(b, dtype=self.dtype)
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
        out = np.zeros((a.shape[0], b.shape[1]), dtype=self.dtype)
        for k in range(a.shape[1]):
            out ^= self.mul(a[:, k, None], b[None, k, :])
        return out

    def combine(self, coeffs, rows):
        """Linear combination ``sum_i coeffs[i] * rows[i]``."""
        rows = np.asarray(rows, dtype=self.dtype)
        if rows.shape[0] == 0:
            return np.zeros(rows.shape[1:], dtype=self.dtype)
        terms = self.mul(np.asarray(coeffs, dtype=self.dtype)[:, None], rows)
        return np.bitwise_xor.reduce(terms, axis=0)

    def rank(self, m) -> int:
        return int(self.batch_rank(np.asarray(m, dtype=self.dtype)[None])[0])

    def batch_rank(self, stack) -> np.ndarray:
        """Ranks of a stack of matrices with shape ``(n, rows, cols)``.

        Forward elimination; the pivot in each column is the first nonzero
        entry at or below the current rank row.
        """
        a = np.array(stack, dtype=self.dtype, copy=True)
        n, r, c = a.shape
        rank = np.zeros(n, dtype=np.int64)
        if r == 0 or c == 0:
            return rank
        rows = np.arange(r)
        for col in range(c):
            cand = (a[:, :, col] != 0) & (rows[None, :] >= rank[:, None])
            has = cand.any(axis=1)
            if not has.any():
                continue
            idx = np.nonzero(has)[0]
            piv = np.argmax(cand[idx], axis=1)
            k = rank[idx]
            prow = a[idx, piv].copy()
            a[idx, piv] = a[idx, k]
            prow = self.mul(self.inv(prow[:, col])[:, None], prow)
            a[idx, k] = prow
            f = np.where(rows[None, :] > k[:, None], a[idx, :, col], 0).astype(self.dtype)
            a[idx] ^= self.mul(f[:, :, None], prow[:, None, :])
            rank[idx] += 1
            if np.all(rank >= min(r, c)):
                break
        return rank

    def batch_rref(self, stack) -> np.ndarray:
        """Reduced row echelon forms of a stack ``(n, rows, cols)``.

        The RREF is unique, so two matrices span the same row space exactly
        when their reduced forms are equal.
        """
        a = np.array(stack, dtype=self.dtype, copy=True)
        n, r, c = a.shape
        rank = np.zeros(n, dtype=np.int64)
        if r == 0:
            return a
        rows = np.arange(r)
        for col in range(c):
            cand = (a[:, :, col] != 0) & (rows[None, :] >= rank[:, None])
            has = cand.any(axis=1)
            if not has.any():
                continue
            idx = np.nonzero(has)[0]
            piv = np.argmax(cand[idx], axis=1)
            k = rank[idx]
            prow = a[idx, piv].copy()
            a[idx, piv] = a[idx, k]
            prow = self.mul(self.inv(prow[:, col])[:, None], prow)
            a[idx, k] = prow
            f = np.where(rows[None, :] != k[:, None], a[idx, :, col], 0).astype(self.dtype)
            a[idx] ^= self.mul(f[:, :, None], prow[:, None, :])
            rank[idx] += 1
        return a

    def rref(self, m, ncols: int | None = None):
        """Reduced row echelon form of ``m``; pivots searched in the first
        ``ncols`` columns only.  Returns ``(reduced, pivot_columns)``."""
        a = np.array(m, dtype=self.dtype, copy=True)
        r, c = a.shape
        ncols = c if ncols is None else ncols
        pivots: list[int] = []
        row = 0
        for col in range(ncols):
            if row >= r:
                break
            nz = np.nonzero(a[row:, col])[0]
            if nz.size == 0:
                continue
            p = row + int(nz[0])
            if p != row:
                a[[row, p]] = a[[p, row]]
            a[row] = self.mul(self.inv(a[row, col]), a[row])
            f = a[:, col].copy()
            f[row] = 0
            a ^= self.mul(f[:, None], a[row][None, :])
            pivots.append(col)
            row += 1
        return a, pivots

    def solve(self, a, b):
        """Solve ``a @ x = b`` for square full-rank ``a``."""
        a = np.asarray(a, dtype=self.dtype)
        b = np.asarray(b, dtype=self.dtype)
        n = a.shape[0]
        if a.shape != (n, n) or b.shape[0] != n:
            raise DimensionMismatch(f"bad system shapes {a.shape}, {b.shape}")
        reduced, pivots = self.rref(np.hstack([a, b]), ncols=n)
        if len(pivots) < n:
            raise RankDeficient(f"coefficient matrix has rank {len(pivots)} < {n}")
        return reduced[:, n:]

    def inverse(self, a):
        n = np.asarray(a).shape[0]
        return self.solve(a, np.eye(n, dtype=self.dtype))


@lru_cache(maxsize=None)
def field(q: int = 8) -> GF:
    """Shared, immutable field instance for exponent ``q``."""
    return GF(q)


@dataclass(frozen=True)
class GfElement:
    """A single element of GF(2^q)."""

    value: int
    q: int = 8

    def __post_init__(self):
        if not 0 <= self.value < (1 << self.q):
            raise ValueError(f"{self.value} is not an element of GF(2^{self.q})")

    def _check(self, other: "GfElement"):
        if self.q != other.q:
            raise FieldMismatch(f"GF(2^{self.q}) vs GF(2^{other.q})")

    def __add__(self, other: "GfElement") -> "GfElement":
        self._check(other)
        return GfElement(self.value ^ other.value, self.q)

    __sub__ = __add__

    def __mul__(self, other: "GfElement") -> "GfElement":
        self._check(other)
        return GfElement(int(field(self.q).mul(self.value, other.value)), self.q)

    def inverse(self) -> "GfElement":
        return GfElement(int(field(self.q).inv(self.value)), self.q)


def gf_add(a: GfElement, b: GfElement) -> GfElement:
    return a + b


def gf_mul(a: GfElement, b: GfElement) -> GfElement:
    return a * b


def gf_inv(a: GfElement) -> GfElement:
    return a.inverse()


def rank(m, q: int = 8) -> int:
    """Row rank of ``m`` over GF(2^q)."""
    m = np.atleast_2d(np.asarray(m))
    if m.size == 0:
        return 0
    return field(q).rank(m)


def encode_segment(M, R, q: int = 8):
    """Coded blocks ``C = R x M``; row i of C pairs with coding vector R[i]."""
    gf = field(q)
    M = np.atleast_2d(np.asarray(M, dtype=gf.dtype))
    R = np.atleast_2d(np.asarray(R, dtype=gf.dtype))
    if R.shape[1] != M.shape[0]:
        raise DimensionMismatch(f"R is {R.shape}, M is {M.shape}")
    return gf.matmul(R, M)


def decode_segment(coded: Sequence[tuple], q: int = 8):
    """Recover the original segment from ``(coding_vector, block)`` pairs.

    Raises :class:`RankDeficient` while fewer than B independent vectors are
    available.
    """
    gf = field(q)
    if not coded:
        raise RankDeficient("no coded blocks")
    vecs = np.array([np.asarray(v, dtype=gf.dtype) for v, _ in coded])
    blocks = np.array([np.asarray(b, dtype=gf.dtype) for _, b in coded])
    if vecs.ndim != 2 or blocks.ndim != 2:
        raise DimensionMismatch("coding vectors and blocks must have consistent lengths")
    B = vecs.shape[1]
    reduced, pivots = gf.rref(np.hstack([vecs, blocks]), ncols=B)
    if len(pivots) < B:
        raise RankDeficient(f"rank {len(pivots)} < {B}")
    return reduced[:B, B:]


def is_innovative(v, held, q: int = 8) -> bool:
    """True iff ``v`` is linearly independent of the rows in ``held``."""
    v = np.asarray(v)
    if len(held) == 0:
        return bool(np.any(v != 0))
    held = np.asarray(held)
    return rank(np.vstack([held, v]), q) == rank(held, q) + 1
