"""Feedback laws mapping a conditioned state to Hamiltonian control strengths.

Each law reads a handful of expectation values ("sign inputs") and turns them
into one control strength per correction operator. :class:`FeedbackLaw`
exposes that split explicitly so the batched integrator and the reduced
coefficient model can evaluate the same law from their own representations.
The module-level functions are direct dense-matrix implementations used as
independent references.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .pauli import PauliOp, commutes, parse_pauli, pauli_mul, to_dense
from .states import as_matrix, expectation

__all__ = [
    "FeedbackSignals",
    "FeedbackLaw",
    "PauliSum",
    "LAW_KINDS",
    "sgn",
    "smooth_sign",
    "heuristic_lambdas",
    "optimal_bitflip_lambdas",
    "general_lambdas",
    "feedback_overlap_rate",
    "overlap_rate_observables",
]

LAW_KINDS = ("none", "heuristic", "optimal", "general", "smoothed")

# a Hermitian observable as (coefficient, phaseless Pauli) pairs
PauliSum = tuple[tuple[float, PauliOp], ...]

_BITFLIP_SIGN_STRINGS = (("YZI", "YIZ"), ("ZYI", "IYZ"), ("ZIY", "IZY"))


@dataclass(frozen=True)
class FeedbackSignals:
    lambdas: np.ndarray
    sign_inputs: np.ndarray


def sgn(x, zero: float = 0.0, deadband: float = 0.0):
    """Three-valued sign with a configurable value at zero and an optional dead band.

    Inputs with ``|x| < deadband`` map to 0; exact zeros map to ``zero``.
    """
    x = np.asarray(x, dtype=float)
    out = np.sign(x)
    out = np.where(x == 0, zero, out)
    if deadband > 0:
        out = np.where(np.abs(x) < deadband, 0.0, out)
    return out


def smooth_sign(x, epsilon: float):
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return np.tanh(np.asarray(x, dtype=float) / epsilon)


def _pauli_sum_expectation(rho, terms: PauliSum) -> float:
    return sum(c * expectation(rho, p) for c, p in terms)


def heuristic_lambdas(rho_c, lambda_max: float) -> FeedbackSignals:
    """Syndrome-product law for the bit-flip code: maximal when orthogonal to the codespace."""
    zzi, izz, ziz = (expectation(rho_c, parse_pauli(s)) for s in ("ZZI", "IZZ", "ZIZ"))
    lam = lambda_max / 8 * np.array([
        (1 - zzi) * (1 + izz) * (1 - ziz),
        (1 - zzi) * (1 - izz) * (1 + ziz),
        (1 + zzi) * (1 - izz) * (1 - ziz),
    ])
    return FeedbackSignals(lam, np.array([zzi, izz, ziz]))


def optimal_bitflip_lambdas(rho_c, lambda_max: float, sign_zero: float = 0.0,
                            deadband: float = 0.0) -> FeedbackSignals:
    inputs = np.array([
        sum(expectation(rho_c, parse_pauli(s)) for s in pair) for pair in _BITFLIP_SIGN_STRINGS
    ])
    return FeedbackSignals(lambda_max * sgn(inputs, sign_zero, deadband), inputs)


def general_lambdas(code, rho_c, lambda_max: float, sign_zero: float = 0.0,
                    deadband: float = 0.0) -> FeedbackSignals:
    """``lambda * sgn <-i[Pi_C, F_r]>`` for each correction, from dense commutators."""
    if not code.corrections:
        raise ValueError("code has no corrections")
    r = as_matrix(rho_c)
    pi = code.projector
    inputs = []
    for f in code.corrections:
        fm = to_dense(f)
        comm = -1j * (pi @ fm - fm @ pi)
        inputs.append(float(np.einsum("ij,ji->", r, comm).real))
    inputs = np.array(inputs)
    return FeedbackSignals(lambda_max * sgn(inputs, sign_zero, deadband), inputs)


def overlap_rate_observables(code) -> list[PauliSum]:
    """Pauli expansion of ``-i[Pi_C, F_r]`` for each correction ``F_r``.

    Only stabilizer elements anticommuting with ``F_r`` survive the commutator,
    and for those ``-i[s, F] = -2i sF``, a Hermitian Pauli.
    """
    scale = 2.0 / len(code.stabilizer_group)
    out = []
    for f in code.corrections:
        terms = []
        for s in code.stabilizer_group:
            if commutes(s, f):
                continue
            prod = pauli_mul(s, f)
            # -2i * i**phase is real for anticommuting Hermitian s, F
            coef = (-1j * prod.coefficient).real * scale
            terms.append((coef, prod.phaseless()))
        out.append(tuple(terms))
    return out


def feedback_overlap_rate(rho_c, signals: FeedbackSignals, code=None) -> float:
    """Rate of change of ``tr(rho Pi_C)`` produced by the feedback Hamiltonian alone.

    Equals ``sum_r lambda_r <-i[Pi_C, F_r]>``; for the bit-flip code this is
    ``(lambda_1/2)<YZI+YIZ> + ...``.
    """
    if code is None:
        from .codes import bitflip_code
        code = bitflip_code()
    obs = overlap_rate_observables(code)
    lam = np.asarray(signals.lambdas, dtype=float)
    return float(sum(l * _pauli_sum_expectation(rho_c, o) for l, o in zip(lam, obs)))


@dataclass(frozen=True)
class FeedbackLaw:
    """A feedback law, split into observables and a combiner.

    ``kind`` is one of ``none``, ``heuristic``, ``optimal`` (bit-flip sign
    inputs), ``general`` (``-i[Pi_C, F_r]`` sign inputs) or ``smoothed``
    (``tanh(x/epsilon)`` in place of the sign on the optimal inputs).

    ``sign_zero`` is the value taken by the sign at exactly zero. It defaults
    to +1: started from a computational-basis codeword the Y-type sign inputs
    are identically zero, and with ``sgn(0) = 0`` the feedback never switches
    on. ``deadband`` maps inputs with ``|x| < deadband`` to 0.
    """

    kind: str = "optimal"
    epsilon: float = 0.05
    deadband: float = 0.0
    sign_zero: float = 1.0

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise ValueError(f"unknown feedback law {self.kind!r}; choose from {LAW_KINDS}")
        if self.kind == "smoothed" and self.epsilon <= 0:
            raise ValueError("smoothed law needs epsilon > 0")
        if self.deadband < 0:
            raise ValueError("deadband must be non-negative")

    def observables(self, code) -> list[PauliSum]:
        if self.kind == "none":
            return []
        if self.kind == "heuristic":
            return [((1.0, m.phaseless()),) if m.phase == 0 else ((-1.0, m.phaseless()),)
                    for m in code.measured]
        if self.kind in ("optimal", "smoothed") and _is_bitflip_layout(code):
            return [tuple((1.0, parse_pauli(s)) for s in pair) for pair in _BITFLIP_SIGN_STRINGS]
        if self.kind in ("optimal", "smoothed"):
            # same sign structure as the general law, scaled to unit coefficients
            return [tuple((np.sign(c), p) for c, p in terms) for terms in overlap_rate_observables(code)]
        return overlap_rate_observables(code)

    def combine(self, code, inputs: np.ndarray, lambda_max: float) -> np.ndarray:
        """Map sign inputs of shape ``(n_inputs, ...)`` to lambdas of shape ``(R, ...)``."""
        inputs = np.asarray(inputs, dtype=float)
        n_corr = len(code.corrections)
        if self.kind == "none":
            return np.zeros((n_corr,) + inputs.shape[1:])
        if self.kind == "heuristic":
            pattern = np.array([[1.0 if commutes(f, m) else -1.0 for m in code.measured]
                                for f in code.corrections])
            out = np.ones((n_corr,) + inputs.shape[1:])
            for r in range(n_corr):
                for l in range(len(code.measured)):
                    out[r] = out[r] * (1 + pattern[r, l] * inputs[l]) / 2
            return lambda_max * out
        if self.kind == "smoothed":
            return lambda_max * smooth_sign(inputs, self.epsilon)
        return lambda_max * sgn(inputs, self.sign_zero, self.deadband)

    def signals(self, code, rho, lambda_max: float) -> FeedbackSignals:
        r = as_matrix(rho)
        inputs = np.array([np.einsum("ij,ji->", r, o).real for o in _dense_observables(self, code)])
        return FeedbackSignals(self.combine(code, inputs, lambda_max), inputs)


@lru_cache(maxsize=64)
def _dense_observables(law: FeedbackLaw, code) -> tuple[np.ndarray, ...]:
    return tuple(sum(c * to_dense(p) for c, p in terms) for terms in law.observables(code))


def _is_bitflip_layout(code) -> bool:
    return (code.n == 3 and [str(c) for c in code.corrections] == ["XII", "IXI", "IIX"]
            and {str(g) for g in code.stabilizer_group} == {"III", "ZZI", "IZZ", "ZIZ"})
