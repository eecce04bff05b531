"""Bloch-vector form of the one-qubit protocol (codespace ``|0>``, X flips, Z measurement)."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .feedback import sgn
from .pauli import parse_pauli
from .states import DensityMatrix, expectation

__all__ = ["BlochState", "bloch_step", "bloch_from_density", "run_bloch", "write_bloch_csv"]


@dataclass(frozen=True)
class BlochState:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def length_sq(self) -> float:
        return self.x ** 2 + self.y ** 2 + self.z ** 2


def bloch_step(s: BlochState, gamma: float, kappa: float, lambda_max: float, dt: float, dW: float,
               sign_zero: float = 1.0, deadband: float = 0.0) -> BlochState:
    """Euler step of the Bloch equations with feedback ``lambda sgn<Y> X``.

    The ``-2 kappa <Y>`` damping is integrated as a rate (times dt).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    sq = math.sqrt(kappa)
    fb = lambda_max * float(sgn(s.y, sign_zero, deadband))
    dx = -2 * kappa * s.x * dt - 2 * sq * s.x * s.z * dW
    dy = (-2 * gamma * s.y * dt - 2 * kappa * s.y * dt - 2 * sq * s.y * s.z * dW
          - 2 * fb * s.z * dt)
    dz = -2 * gamma * s.z * dt + 2 * sq * (1 - s.z ** 2) * dW + 2 * fb * s.y * dt
    return BlochState(s.x + dx, s.y + dy, s.z + dz)


def bloch_from_density(rho) -> BlochState:
    r = rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho)
    if r.shape != (2, 2):
        raise ValueError(f"expected a one-qubit state, got shape {r.shape}")
    return BlochState(*(expectation(r, parse_pauli(c)) for c in "XYZ"))


def run_bloch(s0: BlochState, gamma: float, kappa: float, lambda_max: float, dt: float,
              increments, sign_zero: float = 1.0) -> np.ndarray:
    """Integrate along the given Wiener increments; returns ``(steps + 1, 3)`` array."""
    out = [s0.as_array()]
    s = s0
    for dw in increments:
        s = bloch_step(s, gamma, kappa, lambda_max, dt, float(dw), sign_zero)
        out.append(s.as_array())
    return np.array(out)


def write_bloch_csv(path, times, xyz) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z"])
        for t, (x, y, z) in zip(times, xyz):
            w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), repr(float(z))])
    return path
