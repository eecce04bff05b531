"""Closed-form baselines for bit-flip decoherence and derived fidelity measures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pauli import parse_pauli, to_dense
from .states import as_matrix

__all__ = [
    "BaselineCurves",
    "abcd",
    "baseline_fidelities",
    "baseline_curves",
    "analytic_state",
    "codeword_fidelity",
    "correctable_overlap",
    "crossing_time",
]

IDENTITY_TOL = 1e-14


def abcd(gt):
    """Probabilities of 0, 1, 2, 3 bit flips on a given qubit triple after time ``gt`` (units of 1/gamma).

    With ``x = exp(-2 gamma t)`` each qubit is unflipped with probability
    ``(1 + x)/2``, so these are binomial weights.
    """
    gt = np.asarray(gt, dtype=float)
    if np.any(gt < 0):
        raise ValueError("time must be non-negative")
    x = np.exp(-2 * gt)
    a = (1 + 3 * x + 3 * x ** 2 + x ** 3) / 8
    b = (1 + x - x ** 2 - x ** 3) / 8
    c = (1 - x - x ** 2 + x ** 3) / 8
    d = (1 - 3 * x + 3 * x ** 2 - x ** 3) / 8
    return a, b, c, d


def baseline_fidelities(gt):
    """``(F1, F3, F3bar)``: one bare qubit, three bare qubits, and one round of discrete QEC at ``gt``."""
    gt = np.asarray(gt, dtype=float)
    x = np.exp(-2 * gt)
    f1 = (1 + x) / 2
    f3 = f1 ** 3
    f3bar = (2 + 3 * x - np.exp(-6 * gt)) / 4
    a, b, _, _ = abcd(gt)
    if np.max(np.abs(f3 - a)) > IDENTITY_TOL or np.max(np.abs(f3bar - (a + 3 * b))) > IDENTITY_TOL:
        raise AssertionError("closed-form identities F3 = a and F3bar = a + 3b failed")
    return f1, f3, f3bar


@dataclass(frozen=True)
class BaselineCurves:
    gt: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    F1: np.ndarray
    F3: np.ndarray
    F3bar: np.ndarray


def baseline_curves(gt) -> BaselineCurves:
    gt = np.asarray(gt, dtype=float)
    return BaselineCurves(gt, *abcd(gt), *baseline_fidelities(gt))


def analytic_state(rho0, gt: float) -> np.ndarray:
    """Bit-flip-decohered state at ``gt`` as the a/b/c/d mixture of flipped copies of ``rho0``."""
    r0 = as_matrix(rho0)
    a, b, c, d = (float(v) for v in abcd(gt))
    out = a * r0
    for weight_, strings in ((b, ("XII", "IXI", "IIX")), (c, ("XXI", "XIX", "IXX")), (d, ("XXX",))):
        for s in strings:
            p = to_dense(parse_pauli(s))
            out = out + weight_ * p @ r0 @ p
    return out


def codeword_fidelity(rho0, rho) -> float:
    return float(np.einsum("ij,ji->", as_matrix(rho0), as_matrix(rho)).real)


def correctable_overlap(rho, pi_corr) -> float:
    return float(np.einsum("ij,ji->", as_matrix(rho), as_matrix(pi_corr)).real)


def crossing_time(times, f, g, window: int = 10):
    """Earliest time where ``f - g`` goes from ``<= 0`` to ``> 0`` and stays positive.

    Positivity must hold for ``window`` consecutive samples starting at the
    crossing (fewer if the series ends first). The crossing is linearly
    interpolated between the bracketing samples. Returns ``None`` if there is
    no confirmed crossing; returns ``times[0]`` if ``f > g`` from the start.
    """
    t = np.asarray(times, dtype=float)
    diff = np.asarray(f, dtype=float) - np.asarray(g, dtype=float)
    pos = diff > 0
    n = len(diff)
    for i in range(n):
        if not pos[i]:
            continue
        if i > 0 and pos[i - 1]:
            continue
        if not pos[i:i + window].all():
            continue
        if i == 0:
            return float(t[0])
        d0, d1 = diff[i - 1], diff[i]
        frac = -d0 / (d1 - d0)
        return float(t[i - 1] + frac * (t[i] - t[i - 1]))
    return None
