"""Truncated-basis states and banded operators.

States are plain 1-D ``complex128`` arrays indexed by basis label.  Operators
are stored by diagonals: ``(op @ psi)[j] = sum_o data[o, j] * psi[j + o]`` for
every stored offset ``o``.  The bosonic ladder operators are single-band, the
driven mode Hamiltonian is tridiagonal, and the lattice particle couples only
``k`` and ``k +- 2K``, so the band form is what every inner loop sees.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammainc

from .errors import (DegenerateStateError, DimensionMismatchError,
                     InvalidDimensionError, TruncationError)

TAIL_LIMIT = 1e-6


class Operator:
    """Square operator on a truncated basis in diagonal-offset storage.

    Args:
        offsets: sequence of band offsets.
        data: array ``(len(offsets), dim)``; row ``i`` holds band
            ``offsets[i]`` aligned with the output index.
    """

    __slots__ = ("offsets", "data")

    def __init__(self, offsets, data):
        offsets = np.asarray(offsets, dtype=np.int64).reshape(-1)
        data = np.array(data, dtype=np.complex128, ndmin=2)
        if data.shape[0] != offsets.size:
            raise InvalidDimensionError("one data row per offset required")
        if len(set(offsets.tolist())) != offsets.size:
            raise InvalidDimensionError("duplicate band offsets")
        dim = data.shape[1]
        for o, row in zip(offsets, data):
            if abs(o) >= max(dim, 1) and np.any(row):
                raise InvalidDimensionError(f"offset {o} outside a {dim}-dim basis")
            # entries that would read outside the basis are structurally zero
            if o > 0:
                row[dim - o:] = 0.0
            elif o < 0:
                row[:-o] = 0.0
        order = np.argsort(offsets, kind="stable")
        self.offsets = offsets[order]
        self.data = data[order]
        self.offsets.setflags(write=False)
        self.data.setflags(write=False)

    @classmethod
    def from_dense(cls, matrix, atol=0.0):
        m = np.asarray(matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidDimensionError("operator matrix must be square")
        dim = m.shape[0]
        offsets, rows = [], []
        for o in range(-dim + 1, dim):
            band = np.diagonal(m, offset=o)
            if np.any(np.abs(band) > atol):
                row = np.zeros(dim, dtype=np.complex128)
                if o >= 0:
                    row[:dim - o] = band
                else:
                    row[-o:] = band
                offsets.append(o)
                rows.append(row)
        if not offsets:
            return cls.zeros(dim)
        return cls(offsets, np.array(rows))

    @classmethod
    def diagonal(cls, values):
        values = np.asarray(values, dtype=np.complex128)
        return cls([0], values[None, :])

    @classmethod
    def zeros(cls, dim):
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, dim), dtype=np.complex128))

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def sparsity(self) -> str:
        if self.offsets.size == 0 or np.array_equal(self.offsets, [0]):
            return "diagonal"
        if self.offsets.size < self.dim // 2:
            return "banded"
        return "dense"

    def apply(self, psi):
        psi = np.asarray(psi)
        if psi.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"operator dim {self.dim} does not match state dim {psi.shape[-1]}")
        out = np.zeros(psi.shape, dtype=np.result_type(psi, np.complex128))
        n = self.dim
        for o, row in zip(self.offsets, self.data):
            if o >= 0:
                out[..., :n - o] += row[:n - o] * psi[..., o:]
            else:
                out[..., -o:] += row[-o:] * psi[..., :n + o]
        return out

    def dense(self) -> np.ndarray:
        n = self.dim
        m = np.zeros((n, n), dtype=np.complex128)
        for o, row in zip(self.offsets, self.data):
            idx = np.arange(max(0, -o), min(n, n - o))
            m[idx, idx + o] = row[idx]
        return m

    def dagger(self) -> "Operator":
        return Operator.from_dense(self.dense().conj().T)

    def is_hermitian(self, atol=1e-12) -> bool:
        m = self.dense()
        return bool(np.allclose(m, m.conj().T, rtol=0.0, atol=atol))

    def __matmul__(self, other):
        if isinstance(other, Operator):
            if other.dim != self.dim:
                raise DimensionMismatchError("operator dimensions differ")
            return Operator.from_dense(self.dense() @ other.dense())
        return self.apply(other)

    def __add__(self, other):
        if not isinstance(other, Operator):
            return NotImplemented
        if other.dim != self.dim:
            raise DimensionMismatchError("operator dimensions differ")
        return Operator.from_dense(self.dense() + other.dense())

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, scalar):
        return Operator(self.offsets, self.data * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    def __repr__(self):
        return f"Operator(dim={self.dim}, offsets={self.offsets.tolist()})"


def _check_cutoff(cutoff):
    if int(cutoff) != cutoff or cutoff < 1:
        raise InvalidDimensionError(f"cutoff must be a positive integer, got {cutoff}")
    return int(cutoff)


def annihilation(cutoff: int) -> Operator:
    """Bosonic ``a`` with ``<n-1|a|n> = sqrt(n)``."""
    cutoff = _check_cutoff(cutoff)
    row = np.zeros(cutoff, dtype=np.complex128)
    row[:-1] = np.sqrt(np.arange(1, cutoff))
    return Operator([1], row[None, :])


def creation(cutoff: int) -> Operator:
    cutoff = _check_cutoff(cutoff)
    row = np.zeros(cutoff, dtype=np.complex128)
    row[1:] = np.sqrt(np.arange(1, cutoff))
    return Operator([-1], row[None, :])


def number(cutoff: int) -> Operator:
    cutoff = _check_cutoff(cutoff)
    return Operator.diagonal(np.arange(cutoff, dtype=float))


def identity(dim: int) -> Operator:
    return Operator.diagonal(np.ones(_check_cutoff(dim)))


def fock(n: int, cutoff: int) -> np.ndarray:
    cutoff = _check_cutoff(cutoff)
    if not 0 <= n < cutoff:
        raise InvalidDimensionError(f"Fock state {n} outside cutoff {cutoff}")
    psi = np.zeros(cutoff, dtype=np.complex128)
    psi[n] = 1.0
    return psi


def coherent_state(alpha: complex, cutoff: int, check: bool = True):
    """Truncated coherent state ``|alpha>`` renormalized on the basis.

    Returns:
        ``(psi, tail_weight)`` where ``tail_weight`` is the Poisson weight the
        untruncated state carries on labels ``>= cutoff``.

    Raises:
        TruncationError: if ``check`` and the tail weight is ``>= 1e-6``.
    """
    cutoff = _check_cutoff(cutoff)
    alpha = complex(alpha)
    mean = abs(alpha) ** 2
    tail = float(gammainc(cutoff, mean)) if mean > 0 else 0.0
    if check and tail >= TAIL_LIMIT:
        raise TruncationError(
            f"coherent state |{alpha}> loses weight {tail:.3g} at cutoff {cutoff}",
            tail_weight=tail)
    psi = np.zeros(cutoff, dtype=np.complex128)
    psi[0] = 1.0
    for n in range(1, cutoff):
        psi[n] = psi[n - 1] * alpha / np.sqrt(n)
    psi, _ = normalize(psi)
    return psi, tail


def expectation(op: Operator, psi) -> complex:
    psi = np.asarray(psi)
    if psi.shape[-1] != op.dim:
        raise DimensionMismatchError(
            f"operator dim {op.dim} does not match state dim {psi.shape[-1]}")
    return complex(np.vdot(psi, op.apply(psi)))


def normalize(psi):
    """Return ``(psi / ||psi||, ||psi||)``.

    Raises:
        DegenerateStateError: for a zero (or non-finite) norm.
    """
    psi = np.asarray(psi, dtype=np.complex128)
    norm = float(np.linalg.norm(psi))
    if not np.isfinite(norm) or norm == 0.0:
        raise DegenerateStateError(f"cannot normalize a state of norm {norm}")
    return psi / norm, norm


def density_matrix(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=np.complex128)
    return np.outer(psi, psi.conj())
