"""SME evolution restricted to the Pauli coefficients ``R_g = tr(rho g) / 2**n`` for g in G.

Writing ``rho = sum_g R_g g`` and taking ``dR_M = tr(d rho M) / 2**n`` term by
term, for Hermitian Paulis:

* ``D[c]rho``      gives ``-2 R_M`` when ``c`` anticommutes with ``M``, else 0.
* ``H[s]rho``      gives ``2 c R_N - 2 <s> R_M`` where ``M s = c N`` (``c = +-1``)
  for ``s`` commuting with ``M``; anticommuting ``s`` leave only ``-2 <s> R_M``.
* ``-i[F, rho]``   gives ``-2i c R_N`` where ``M F = c N`` (``c = +-i``) for
  ``F`` anticommuting with ``M``; commuting ``F`` contribute nothing.

The nonlinear ``<s>`` in the innovation term is ``2**n R_s`` with ``s`` a
stabilizer element, which is itself in G, so the system closes whenever every
``N`` reached above lies in G. That closure is checked when the system is built.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .codes import CodeError, StabilizerCode, build_G
from .feedback import FeedbackSignals
from .pauli import PauliOp, commutes, identity, pauli_mul
from .states import as_matrix, expectation, mixed_codespace_state

__all__ = [
    "CoefficientVector",
    "ReducedSystem",
    "ClosureError",
    "coefficients_from_state",
    "reduced_step",
    "feedback_from_coefficients",
    "parameter_count",
]


class ClosureError(CodeError):
    """A coupling left G: the code violates the hypotheses of the reduction."""


@dataclass
class CoefficientVector:
    """Coefficients ``R_g`` over an ordered tuple of phaseless Paulis.

    ``values`` has shape ``(len(ops),)`` or ``(len(ops), n_traj)``.
    """

    ops: tuple[PauliOp, ...]
    values: np.ndarray

    @cached_property
    def index(self) -> dict[PauliOp, int]:
        return {p: i for i, p in enumerate(self.ops)}

    def __getitem__(self, op: PauliOp):
        return self.values[self.index[op.phaseless()]]

    def as_dict(self) -> dict[str, float]:
        return {str(p): float(v) for p, v in zip(self.ops, self.values)}


def _ordered_G(code: StabilizerCode) -> tuple[PauliOp, ...]:
    return tuple(sorted(build_G(code), key=lambda p: (p.letters.count("I") * -1, p.letters)))


def coefficients_from_state(rho, G) -> CoefficientVector:
    ops = tuple(G)
    r = as_matrix(rho)
    scale = 1.0 / r.shape[0]
    return CoefficientVector(ops, np.array([expectation(r, g) * scale for g in ops]))


class ReducedSystem:
    """An :class:`~cqec.sme.SmeModel` compiled onto the coefficients of G."""

    def __init__(self, model, G=None):
        code = model.code
        self.model = model
        self.ops = tuple(G) if G is not None else _ordered_G(code)
        self.index = {p: i for i, p in enumerate(self.ops)}
        self.dim = 1 << code.n
        size = len(self.ops)
        ident = identity(code.n)
        if ident not in self.index:
            raise ClosureError("G must contain the identity")
        self.i_ident = self.index[ident]

        damp = np.zeros(size)
        for rate, ops in ((model.gamma, model.noise_ops), (model.kappa, model.measured_ops)):
            for c in ops:
                for j, g in enumerate(self.ops):
                    if not commutes(c, g):
                        damp[j] -= 2 * rate
        self.damping = damp

        self.meas_src, self.meas_coef, self.meas_self = [], [], []
        for s in model.measured_ops:
            src, coef = self._couplings(s, commuting=True, factor=2.0)
            self.meas_src.append(src)
            self.meas_coef.append(coef.real)
            key = s.phaseless()
            if key not in self.index:
                raise ClosureError(f"measured operator {s} is not in G")
            self.meas_self.append((self.index[key], 1.0 if s.phase == 0 else -1.0))

        self.fb_src, self.fb_coef = [], []
        for f in model.corrections:
            src, coef = self._couplings(f, commuting=False, factor=-2j)
            self.fb_src.append(src)
            self.fb_coef.append(coef.real)
        self.drift = []
        for c, p in model.drift:
            src, coef = self._couplings(p, commuting=False, factor=-2j * c)
            self.drift.append((src, coef.real))

        obs = model.law.observables(code)
        self.obs = []
        for terms in obs:
            rows = []
            for c, p in terms:
                if p not in self.index:
                    raise ClosureError(f"feedback reads <{p}>, which is not in G")
                rows.append((self.index[p], c * self.dim))
            self.obs.append(rows)

    def _couplings(self, op: PauliOp, commuting: bool, factor: complex):
        """Source rows and coefficients of the ``M -> N = M op`` coupling."""
        src = np.arange(len(self.ops))
        coef = np.zeros(len(self.ops), dtype=complex)
        for j, g in enumerate(self.ops):
            if commutes(g, op) != commuting:
                continue
            prod = pauli_mul(g, op)
            key = prod.phaseless()
            if key not in self.index:
                raise ClosureError(f"{g} couples to {key} through {op}, which is outside G")
            src[j] = self.index[key]
            coef[j] = factor * prod.coefficient
        if np.max(np.abs(coef.imag), initial=0.0) > 1e-12:
            raise ClosureError(f"non-real coupling through {op}")
        return src, coef

    def pack(self, n: int = 1, rho=None) -> np.ndarray:
        """Coefficient columns for ``rho`` (default: completely mixed codespace state)."""
        rho = mixed_codespace_state(self.model.code) if rho is None else rho
        vec = coefficients_from_state(rho, self.ops).values
        return np.repeat(vec[:, None], n, axis=1)

    def expectations(self, R: np.ndarray) -> np.ndarray:
        return np.array([sign * self.dim * R[i] for i, sign in self.meas_self])

    def sign_inputs(self, R: np.ndarray) -> np.ndarray:
        if not self.obs:
            return np.zeros((0,) + R.shape[1:])
        return np.array([sum(w * R[i] for i, w in rows) for rows in self.obs])

    def lambdas(self, R: np.ndarray) -> np.ndarray:
        m = self.model
        return m.law.combine(m.code, self.sign_inputs(R), m.lambda_max)

    def step_batch(self, R: np.ndarray, dt: float, dW: np.ndarray, lam) -> tuple[np.ndarray, np.ndarray]:
        """Euler step of coefficient columns ``R`` (shape ``(|G|, N)``), renormalised."""
        m = self.model
        dR = (self.damping * dt)[:, None] * R
        sq = math.sqrt(m.kappa)
        if sq > 0:
            exp_m = self.expectations(R)
            for i in range(len(self.meas_src)):
                a = sq * dW[i]
                dR += a[None, :] * (self.meas_coef[i][:, None] * R[self.meas_src[i]] - 2 * exp_m[i][None, :] * R)
        for src, coef in self.drift:
            dR += dt * coef[:, None] * R[src]
        if lam is not None:
            for r in range(len(self.fb_src)):
                dR += (dt * lam[r])[None, :] * (self.fb_coef[r][:, None] * R[self.fb_src[r]])
        R = R + dR
        tr = self.dim * R[self.i_ident]
        bad = ~(np.isfinite(tr) & (tr > 0))
        R = R / np.where(bad, 1.0, tr)[None, :]
        return R, bad


_SYSTEMS: dict[int, ReducedSystem] = {}


def _system_for(model, ops) -> ReducedSystem:
    key = (id(model), ops)
    sys_ = _SYSTEMS.get(key)
    if sys_ is None or sys_.model is not model:
        sys_ = ReducedSystem(model, ops)
        _SYSTEMS[key] = sys_
    return sys_


def reduced_step(coeffs: CoefficientVector, model, dt: float, dW, lambdas=None) -> CoefficientVector:
    """One Euler step of the coefficient model.

    Feedback is computed from the coefficients themselves unless ``lambdas``
    is given.
    """
    system = _system_for(model, coeffs.ops)
    R = np.asarray(coeffs.values, dtype=float)
    col = R.ndim == 1
    R2 = R[:, None] if col else R
    dW2 = np.asarray(dW, dtype=float).reshape(model.m, -1)
    if lambdas is None:
        lam = system.lambdas(R2)
    else:
        lam = np.asarray(lambdas, dtype=float).reshape(len(model.corrections), -1)
    out, bad = system.step_batch(R2, dt, dW2, lam)
    if bad.any():
        raise ArithmeticError("coefficient trace collapsed")
    return CoefficientVector(coeffs.ops, out[:, 0] if col else out)


def feedback_from_coefficients(coeffs: CoefficientVector, code: StabilizerCode, lambda_max: float,
                               law=None) -> FeedbackSignals:
    """Feedback signals from ``<g> = 2**n R_g``; raises if a needed coefficient is absent."""
    from .feedback import FeedbackLaw

    law = law or FeedbackLaw()
    dim = 1 << code.n
    inputs = []
    for terms in law.observables(code):
        total = 0.0
        for c, p in terms:
            if p not in coeffs.index:
                raise KeyError(f"coefficient for {p} is missing")
            total += c * dim * coeffs.values[coeffs.index[p]]
        inputs.append(total)
    inputs = np.array(inputs)
    return FeedbackSignals(law.combine(code, inputs, lambda_max), inputs)


def parameter_count(code: StabilizerCode, blocks: int = 1) -> int:
    return blocks * (1 << (code.n - code.k)) ** 2
