"""Finite field arithmetic for the code constructions.

Supports prime fields GF(q) (plain modular arithmetic) and the binary
extension field GF(8) used by the Reed-Solomon preset.  Symbols are small
non-negative integers stored in numpy arrays.
"""

from __future__ import annotations

import numpy as np

# primitive polynomials for GF(2^m), coefficients as bitmask (x^3+x+1 -> 0b1011)
_PRIM_POLY = {2: 0b111, 3: 0b1011, 4: 0b10011, 5: 0b100101, 6: 0b1000011}

_PRIMES = {2, 3, 5, 7, 11, 13}


class Field:
    """Arithmetic in GF(q) for prime q or q = 2^m with m <= 6."""

    def __init__(self, q: int):
        if q in _PRIMES:
            self.q = q
            self.prime = True
        elif q in (4, 8, 16, 32, 64):
            self.q = q
            self.prime = False
            m = q.bit_length() - 1
            self._exp, self._log = _build_tables(m, _PRIM_POLY[m])
        else:
            raise ValueError(f"unsupported field size q={q}")

    def add(self, a, b):
        if self.prime:
            return (np.asarray(a) + np.asarray(b)) % self.q
        return np.bitwise_xor(a, b)

    def neg(self, a):
        if self.prime:
            return (-np.asarray(a)) % self.q
        return np.asarray(a)

    def mul(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if self.prime:
            return (a * b) % self.q
        out = self._exp[self._log[a] + self._log[b]]
        return np.where((a == 0) | (b == 0), 0, out)

    def inv(self, a):
        a = int(a)
        if a == 0:
            raise ZeroDivisionError("no inverse of 0")
        if self.prime:
            return pow(a, self.q - 2, self.q)
        return int(self._exp[(self.q - 1) - self._log[a]])

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Matrix product over the field; a is (..., k), b is (k, n)."""
        a = np.asarray(a)
        b = np.asarray(b)
        if self.prime:
            return (a.astype(np.int64) @ b.astype(np.int64)) % self.q
        out = np.zeros(a.shape[:-1] + (b.shape[1],), dtype=np.int64)
        for i in range(b.shape[0]):
            out ^= self.mul(a[..., i : i + 1], b[i][None, :] if a.ndim > 1 else b[i])
        return out

    def poly_mod(self, data: np.ndarray, gen: np.ndarray) -> np.ndarray:
        """Remainder of data(x) * x^deg(gen) divided by monic gen(x).

        Coefficients highest degree first; this is the systematic parity
        computation shared by CRC and cyclic-code encoders.
        """
        gen = np.asarray(gen, dtype=np.int64)
        if gen[0] != 1:
            raise ValueError("generator polynomial must be monic")
        r = len(gen) - 1
        buf = np.concatenate([np.asarray(data, dtype=np.int64), np.zeros(r, np.int64)])
        for i in range(len(data)):
            c = buf[i]
            if c:
                # subtract c * gen(x) aligned at position i
                buf[i : i + r + 1] = self.add(buf[i : i + r + 1], self.neg(self.mul(gen, c)))
        return buf[-r:]

    def rank(self, m: np.ndarray) -> int:
        """Rank of a matrix over the field (Gaussian elimination)."""
        a = np.array(m, dtype=np.int64) % self.q
        rows, cols = a.shape
        rank = 0
        for c in range(cols):
            piv = None
            for r in range(rank, rows):
                if a[r, c]:
                    piv = r
                    break
            if piv is None:
                continue
            a[[rank, piv]] = a[[piv, rank]]
            a[rank] = self.mul(a[rank], self.inv(a[rank, c]))
            for r in range(rows):
                if r != rank and a[r, c]:
                    a[r] = self.add(a[r], self.neg(self.mul(a[rank], a[r, c])))
            rank += 1
            if rank == rows:
                break
        return rank


def _build_tables(m: int, prim: int):
    size = 1 << m
    exp = np.zeros(2 * size, dtype=np.int64)
    log = np.zeros(size, dtype=np.int64)
    x = 1
    for i in range(size - 1):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & size:
            x ^= prim
    for i in range(size - 1, 2 * size):
        exp[i] = exp[i - (size - 1)]
    return exp, log
