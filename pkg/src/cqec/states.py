"""Dense density matrices and the two superoperators that drive all dynamics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pauli import PauliOp, to_dense

__all__ = [
    "DensityMatrix",
    "TraceCollapse",
    "MAX_QUBITS",
    "as_matrix",
    "expectation",
    "lindblad_D",
    "innovation_H",
    "hermitize_renormalize",
    "mixed_codespace_state",
    "pure_state",
    "maximally_mixed",
    "basis_state",
]

MAX_QUBITS = 7
IMAG_TOL = 1e-10


class TraceCollapse(ArithmeticError):
    """Raised when a state's trace is no longer positive (integrator blow-up)."""


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A ``2**n x 2**n`` complex density matrix.

    Hermiticity and unit trace are maintained by :func:`hermitize_renormalize`
    rather than checked on construction, since intermediate integrator states
    are allowed to drift by O(dt).
    """

    mat: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=complex)
        dim = mat.shape[0]
        if mat.ndim != 2 or mat.shape[1] != dim or dim & (dim - 1) or dim == 0:
            raise ValueError(f"density matrix must be square with power-of-two size, got {mat.shape}")
        if dim > 1 << MAX_QUBITS:
            raise ValueError(f"dense states are limited to {MAX_QUBITS} qubits")
        object.__setattr__(self, "mat", mat)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    @property
    def n(self) -> int:
        return self.dim.bit_length() - 1

    def trace(self) -> complex:
        return complex(np.trace(self.mat))

    def purity(self) -> float:
        return float(np.real(np.vdot(self.mat, self.mat)))

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue; used only by debug verification."""
        return float(np.linalg.eigvalsh(0.5 * (self.mat + self.mat.conj().T))[0])

    def is_valid(self, tol: float = 1e-10, positivity_tol: float = 1e-8) -> bool:
        herm = np.max(np.abs(self.mat - self.mat.conj().T)) <= tol
        unit = abs(self.trace() - 1) <= tol
        return bool(herm and unit and self.min_eigenvalue() >= -positivity_tol)


def as_matrix(x) -> np.ndarray:
    if isinstance(x, DensityMatrix):
        return x.mat
    if isinstance(x, PauliOp):
        return to_dense(x)
    return np.asarray(x, dtype=complex)


def expectation(rho, g) -> float:
    """``tr(rho g)`` for a Hermitian observable ``g`` (PauliOp or matrix)."""
    r = as_matrix(rho)
    op = as_matrix(g)
    if op.shape != r.shape:
        raise ValueError(f"dimension mismatch: state {r.shape} vs operator {op.shape}")
    val = np.einsum("ij,ji->", r, op)
    if abs(val.imag) > IMAG_TOL:
        raise ValueError(f"expectation has imaginary part {val.imag:.3g}; state is corrupted")
    return float(val.real)


def lindblad_D(c, rho) -> np.ndarray:
    """``D[c]rho = c rho c† - (c†c rho + rho c†c)/2``."""
    c = as_matrix(c)
    r = as_matrix(rho)
    cd = c.conj().T
    cdc = cd @ c
    return c @ r @ cd - 0.5 * (cdc @ r + r @ cdc)


def innovation_H(c, rho) -> np.ndarray:
    """``H[c]rho = c rho + rho c† - rho tr(c rho + rho c†)``."""
    c = as_matrix(c)
    r = as_matrix(rho)
    a = c @ r + r @ c.conj().T
    return a - r * np.trace(a)


def hermitize_renormalize(rho) -> DensityMatrix:
    r = as_matrix(rho)
    h = 0.5 * (r + r.conj().T)
    tr = np.trace(h).real
    if not np.isfinite(tr) or tr <= 0:
        raise TraceCollapse(f"trace {tr!r} is not positive")
    return DensityMatrix(h / tr)


def pure_state(psi) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex)
    return DensityMatrix(np.outer(psi, psi.conj()))


def basis_state(bits: str) -> DensityMatrix:
    """``|bits><bits|`` for a computational basis label such as ``"000"``."""
    psi = np.zeros(1 << len(bits), dtype=complex)
    psi[int(bits, 2)] = 1.0
    return pure_state(psi)


def maximally_mixed(n: int) -> DensityMatrix:
    return DensityMatrix(np.eye(1 << n, dtype=complex) / (1 << n))


def mixed_codespace_state(code) -> DensityMatrix:
    """Completely mixed state on the codespace, ``Pi_C / 2**k``."""
    return DensityMatrix(code.projector / (1 << code.k))
