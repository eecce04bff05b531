"""Exact n-qubit Pauli group algebra.

Elements are stored in symplectic form (an X bit-string, a Z bit-string and a
phase exponent), so products and commutation checks are exact. Dense matrices
are derived views, used for state evolution and as a test oracle.

Qubit 1 is the leftmost letter of a Pauli string and the most significant
factor of the Kronecker product, so ``ZZI`` is ``kron(Z, Z, I)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import reduce

import numpy as np

__all__ = [
    "PauliOp",
    "pauli_mul",
    "commutes",
    "weight",
    "to_dense",
    "parse_pauli",
    "identity",
    "single_qubit",
    "signed_permutation",
]

_LETTER_TO_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_TO_LETTER = {v: k for k, v in _LETTER_TO_BITS.items()}
_PHASE_PREFIX = {0: "+", 1: "+i", 2: "-", 3: "-i"}
_PREFIX_TO_PHASE = {"": 0, "+": 0, "+i": 1, "i": 1, "-": 2, "-i": 3}
_PHASE_VALUE = (1, 1j, -1, -1j)

_SINGLE = {
    (0, 0): np.eye(2, dtype=complex),
    (1, 0): np.array([[0, 1], [1, 0]], dtype=complex),
    (1, 1): np.array([[0, -1j], [1j, 0]], dtype=complex),
    (0, 1): np.array([[1, 0], [0, -1]], dtype=complex),
}

# Exponent of i picked up when multiplying single-qubit factors a*b, indexed
# by (x_a, z_a, x_b, z_b). e.g. X*Z = -iY -> 3, Z*X = iY -> 1.
_PRODUCT_PHASE = {}
for _a, _ma in _SINGLE.items():
    for _b, _mb in _SINGLE.items():
        _prod = _ma @ _mb
        _ref = _SINGLE[(_a[0] ^ _b[0], _a[1] ^ _b[1])]
        for _k, _v in enumerate(_PHASE_VALUE):
            if np.allclose(_prod, _v * _ref):
                _PRODUCT_PHASE[_a + _b] = _k
                break


@dataclass(frozen=True)
class PauliOp:
    """An element ``i**phase * P_1 ⊗ ... ⊗ P_n`` of the n-qubit Pauli group.

    ``x`` and ``z`` are tuples of 0/1 of length ``n``; the single-qubit factor
    on qubit ``q`` decodes as (0,0)->I, (1,0)->X, (1,1)->Y, (0,1)->Z.
    ``phase`` is the exponent of ``i`` modulo 4.
    """

    x: tuple[int, ...]
    z: tuple[int, ...]
    phase: int = 0

    def __post_init__(self):
        if len(self.x) != len(self.z):
            raise ValueError("X and Z bit strings must have equal length")
        object.__setattr__(self, "x", tuple(int(b) & 1 for b in self.x))
        object.__setattr__(self, "z", tuple(int(b) & 1 for b in self.z))
        object.__setattr__(self, "phase", int(self.phase) % 4)

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def letters(self) -> str:
        return "".join(_BITS_TO_LETTER[(a, b)] for a, b in zip(self.x, self.z))

    @property
    def coefficient(self) -> complex:
        return _PHASE_VALUE[self.phase]

    @property
    def is_hermitian(self) -> bool:
        return self.phase in (0, 2)

    def phaseless(self) -> "PauliOp":
        return PauliOp(self.x, self.z, 0)

    def is_identity(self) -> bool:
        """True when the bit strings are all zero (the phase is ignored)."""
        return not any(self.x) and not any(self.z)

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        return pauli_mul(self, other)

    def __neg__(self) -> "PauliOp":
        return PauliOp(self.x, self.z, self.phase + 2)

    def __str__(self) -> str:
        prefix = _PHASE_PREFIX[self.phase]
        return (prefix if prefix != "+" else "") + self.letters

    def __repr__(self) -> str:
        return f"PauliOp('{self}')"


def parse_pauli(text: str) -> PauliOp:
    """Parse strings such as ``"ZZI"``, ``"-iYZI"`` or ``"+XII"``."""
    m = re.fullmatch(r"\s*([+-]?i?)([IXYZ]+)\s*", text)
    if m is None:
        raise ValueError(f"not a Pauli string: {text!r}")
    bits = [_LETTER_TO_BITS[c] for c in m.group(2)]
    return PauliOp(tuple(b[0] for b in bits), tuple(b[1] for b in bits),
                   _PREFIX_TO_PHASE[m.group(1)])


def identity(n: int) -> PauliOp:
    return PauliOp((0,) * n, (0,) * n)


def single_qubit(n: int, qubit: int, letter: str) -> PauliOp:
    """Weight-one Pauli ``letter`` on ``qubit`` (0-based) of an n-qubit register."""
    bx, bz = _LETTER_TO_BITS[letter]
    x = [0] * n
    z = [0] * n
    x[qubit], z[qubit] = bx, bz
    return PauliOp(tuple(x), tuple(z))


def _check_same_n(a: PauliOp, b: PauliOp) -> None:
    if a.n != b.n:
        raise ValueError(f"dimension mismatch: {a.n} vs {b.n} qubits")


def pauli_mul(a: PauliOp, b: PauliOp) -> PauliOp:
    _check_same_n(a, b)
    phase = a.phase + b.phase
    for xa, za, xb, zb in zip(a.x, a.z, b.x, b.z):
        phase += _PRODUCT_PHASE[(xa, za, xb, zb)]
    x = tuple(p ^ q for p, q in zip(a.x, b.x))
    z = tuple(p ^ q for p, q in zip(a.z, b.z))
    return PauliOp(x, z, phase)


def commutes(a: PauliOp, b: PauliOp) -> bool:
    """Symplectic inner product test; phases are irrelevant."""
    _check_same_n(a, b)
    s = sum(xa * zb + za * xb for xa, za, xb, zb in zip(a.x, a.z, b.x, b.z))
    return s % 2 == 0


def weight(a: PauliOp) -> int:
    return sum(1 for p, q in zip(a.x, a.z) if p or q)


def to_dense(a: PauliOp) -> np.ndarray:
    factors = [_SINGLE[(p, q)] for p, q in zip(a.x, a.z)]
    if not factors:
        return np.array([[a.coefficient]], dtype=complex)
    return a.coefficient * reduce(np.kron, factors)


def signed_permutation(a: PauliOp) -> tuple[np.ndarray, np.ndarray]:
    """Sparse form of ``to_dense(a)``: row ``r`` holds ``phase[r]`` at column ``perm[r]``.

    Every Pauli matrix has exactly one nonzero per row, so
    ``(P @ M)[r, :] == phase[r] * M[perm[r], :]``.
    """
    dim = 1 << a.n
    rows = np.arange(dim)
    xmask = 0
    for bit in a.x:
        xmask = (xmask << 1) | bit
    perm = rows ^ xmask
    phase = np.full(dim, a.coefficient, dtype=complex)
    for q, (bx, bz) in enumerate(zip(a.x, a.z)):
        shift = a.n - 1 - q
        col_bit = (perm >> shift) & 1
        if bz:
            phase *= np.where(col_bit == 1, -1.0, 1.0)
        if bx and bz:
            phase *= 1j
    return perm, phase
