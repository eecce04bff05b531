"""Conditioned stochastic master equation: models, noise streams and integrators.

Two integrators share one model description:

* :func:`euler_step` / :func:`milstein_step` / :func:`run_trajectory` work on a
  single dense state with plain matrix products. They are the reference path.
* :class:`DenseBatch` / :func:`integrate_batch` advance many trajectories at
  once. Every operator in the model is a Pauli, i.e. a signed permutation, so
  each term of the SME is a gather plus an elementwise product on states
  stored column-wise as ``(d*d, n_traj)``. All arithmetic is per column, so a
  trajectory's numbers do not depend on which batch it was run in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .codes import StabilizerCode, correctable_projector, load_code
from .feedback import FeedbackLaw, FeedbackSignals, PauliSum
from .pauli import PauliOp, commutes, single_qubit, signed_permutation, to_dense
from .states import (
    DensityMatrix,
    TraceCollapse,
    as_matrix,
    hermitize_renormalize,
    innovation_H,
    lindblad_D,
)

__all__ = [
    "SmeModel",
    "NoiseStream",
    "TrajectoryRecord",
    "BatchResult",
    "DenseBatch",
    "wiener_increments",
    "euler_step",
    "milstein_step",
    "run_trajectory",
    "integrate_batch",
    "noise_operators",
    "MAX_STEPS",
]

MAX_STEPS = 50_000_000
NOISE_BLOCK = 1024


def noise_operators(n: int, kind: str = "bitflip") -> tuple[PauliOp, ...]:
    letters = {"bitflip": "X", "dephasing": "Z", "depolarizing": "XYZ"}
    if kind not in letters:
        raise ValueError(f"unknown noise model {kind!r}")
    return tuple(single_qubit(n, q, c) for q in range(n) for c in letters[kind])


@dataclass(frozen=True, eq=False)
class SmeModel:
    """One protocol instance: rates, operators and the feedback law.

    ``measured_ops`` defaults to the code's generators plus any extra
    measured stabilizers, ``corrections`` to the code's corrections.
    ``drift`` is an optional fixed Hamiltonian given as a Pauli sum.
    """

    code: StabilizerCode
    gamma: float
    kappa: float
    lambda_max: float
    law: FeedbackLaw = field(default_factory=FeedbackLaw)
    noise_ops: tuple[PauliOp, ...] | None = None
    measured_ops: tuple[PauliOp, ...] | None = None
    corrections: tuple[PauliOp, ...] | None = None
    drift: PauliSum = ()

    def __post_init__(self):
        if min(self.gamma, self.kappa, self.lambda_max) < 0:
            raise ValueError("gamma, kappa and lambda_max must be non-negative")
        if self.noise_ops is None:
            object.__setattr__(self, "noise_ops", noise_operators(self.code.n))
        if self.measured_ops is None:
            object.__setattr__(self, "measured_ops", self.code.measured)
        if self.corrections is None:
            object.__setattr__(self, "corrections", self.code.corrections)
        n = self.code.n
        for op in self.noise_ops + self.measured_ops + self.corrections + tuple(p for _, p in self.drift):
            if op.n != n:
                raise ValueError(f"{op} does not act on {n} qubits")
        for op in self.measured_ops + self.corrections:
            if not op.is_hermitian:
                raise ValueError(f"{op} is not Hermitian")
        if self.corrections != self.code.corrections and self.law.kind != "none":
            raise ValueError("feedback laws read the code's corrections; keep them equal")

    @classmethod
    def build(cls, code="bitflip", gamma=1.0, kappa=0.0, lambda_max=0.0, law=None,
              noise="bitflip", **kw) -> "SmeModel":
        code = code if isinstance(code, StabilizerCode) else load_code(code)
        law = law or FeedbackLaw()
        if isinstance(law, str):
            law = FeedbackLaw(law)
        return cls(code=code, gamma=gamma, kappa=kappa, lambda_max=lambda_max, law=law,
                   noise_ops=noise_operators(code.n, noise), **kw)

    @property
    def n(self) -> int:
        return self.code.n

    @property
    def m(self) -> int:
        return len(self.measured_ops)

    @cached_property
    def dense(self) -> dict:
        return {
            "noise": [to_dense(c) for c in self.noise_ops],
            "measured": [to_dense(c) for c in self.measured_ops],
            "corrections": [to_dense(c) for c in self.corrections],
            "drift": sum((c * to_dense(p) for c, p in self.drift),
                         np.zeros((1 << self.n,) * 2, dtype=complex)),
        }

    def signals(self, rho) -> FeedbackSignals:
        return self.law.signals(self.code, rho, self.lambda_max)


class NoiseStream:
    """Reproducible Wiener increments for one trajectory.

    The generator is a Philox counter-based bit generator keyed by
    ``(seed, index)``; identical keys give identical increments regardless
    of how the draws are chunked.
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed)
        self.index = int(index)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.index,))
        self.rng = np.random.Generator(np.random.Philox(ss))

    def increments(self, m: int, dt: float) -> np.ndarray:
        return self.block(1, m, dt)[0]

    def block(self, steps: int, m: int, dt: float) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        return self.rng.standard_normal((steps, m)) * math.sqrt(dt)


def wiener_increments(stream: NoiseStream, m: int, dt: float) -> np.ndarray:
    return stream.increments(m, dt)


def _increment(model: SmeModel, r: np.ndarray, dt: float, dW, lambdas) -> tuple[np.ndarray, np.ndarray]:
    ops = model.dense
    drho = np.zeros_like(r)
    for c in ops["noise"]:
        drho += model.gamma * dt * lindblad_D(c, r)
    sq = math.sqrt(model.kappa)
    dq = np.empty(model.m)
    for i, c in enumerate(ops["measured"]):
        drho += model.kappa * dt * lindblad_D(c, r)
        drho += sq * dW[i] * innovation_H(c, r)
        dq[i] = 2 * model.kappa * np.einsum("ij,ji->", r, c).real * dt + sq * dW[i]
    ham = ops["drift"].copy()
    for lam, f in zip(lambdas, ops["corrections"]):
        ham += lam * f
    drho += -1j * (ham @ r - r @ ham) * dt
    return drho, dq


def euler_step(model: SmeModel, rho, dt: float, dW, lambdas=None) -> tuple[DensityMatrix, np.ndarray]:
    """One explicit Euler-Maruyama step; feedback is evaluated at the step start.

    ``lambdas`` overrides the model's feedback law (used when a separate
    controller estimate drives the feedback).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float)
    if not np.all(np.isfinite(dW)):
        raise ValueError("non-finite Wiener increment")
    r = as_matrix(rho)
    if lambdas is None:
        lambdas = model.signals(r).lambdas
    drho, dq = _increment(model, r, dt, dW, lambdas)
    return hermitize_renormalize(r + drho), dq


def _innovation_derivative(c: np.ndarray, r: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Directional derivative of ``rho -> H[c]rho`` at ``r`` along ``sigma``."""
    a = c @ r + r @ c.conj().T
    b = c @ sigma + sigma @ c.conj().T
    return b - sigma * np.trace(a) - r * np.trace(b)


def milstein_step(model: SmeModel, rho, dt: float, dW, lambdas=None) -> tuple[DensityMatrix, np.ndarray]:
    """Euler step plus the diagonal Milstein correction of each measurement channel.

    For diffusion ``b_i(rho) = sqrt(kappa) H[M_i]rho`` the added term is
    ``0.5 * kappa * DH_i(rho)[H_i rho] * (dW_i**2 - dt)``; cross-channel
    (Levy area) terms are dropped.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float)
    r = as_matrix(rho)
    if lambdas is None:
        lambdas = model.signals(r).lambdas
    drho, dq = _increment(model, r, dt, dW, lambdas)
    for i, c in enumerate(model.dense["measured"]):
        h = innovation_H(c, r)
        drho += 0.5 * model.kappa * _innovation_derivative(c, r, h) * (dW[i] ** 2 - dt)
    return hermitize_renormalize(r + drho), dq


@dataclass
class TrajectoryRecord:
    """Decimated record of one trajectory.

    ``currents[k]`` is the measurement record increment accumulated since the
    previous sample (zero at ``k = 0``). ``feedback_signals[k]`` and
    ``sign_inputs[k]`` are the values evaluated at ``times[k]``, i.e. the ones
    applied over the following step.
    """

    times: np.ndarray
    currents: np.ndarray
    measured_expectations: np.ndarray
    feedback_signals: np.ndarray
    sign_inputs: np.ndarray
    f_cw: np.ndarray
    f_corr: np.ndarray
    f_code: np.ndarray
    states: list | None = None
    controller_states: list | None = None
    final_state: DensityMatrix | None = None
    final_controller: DensityMatrix | None = None


def _safe_corr_projector(model: SmeModel, r0: np.ndarray):
    try:
        return correctable_projector(r0, code=model.code)
    except ValueError:
        return None


def run_trajectory(model: SmeModel, rho0, dt: float, t_final: float, stream: NoiseStream,
                   decimation: int = 100, controller_rho0=None, scheme: str = "euler",
                   keep_states: bool = False) -> TrajectoryRecord:
    """Integrate one trajectory with the reference stepper.

    With ``controller_rho0`` a second state, the controller's estimate, is
    co-integrated from that initial condition with the same Wiener
    increments; the feedback is computed from the controller state and
    applied to both.
    """
    steps = int(round(t_final / dt))
    if steps > MAX_STEPS:
        raise ValueError(f"{steps} steps exceeds the budget of {MAX_STEPS}")
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    stepper = {"euler": euler_step, "milstein": milstein_step}[scheme]
    r0 = as_matrix(rho0)
    rho = DensityMatrix(r0)
    ctrl = None if controller_rho0 is None else DensityMatrix(as_matrix(controller_rho0))
    pi_corr = _safe_corr_projector(model, r0)
    pi_code = model.code.projector
    meas = model.dense["measured"]

    rows: dict[str, list] = {k: [] for k in ("t", "q", "m", "lam", "inp", "cw", "corr", "code")}
    states, cstates = [], []
    q_acc = np.zeros(model.m)

    def sample(k, sig):
        r = rho.mat
        rows["t"].append(k * dt)
        rows["q"].append(q_acc.copy())
        rows["m"].append([np.einsum("ij,ji->", r, c).real for c in meas])
        rows["lam"].append(np.asarray(sig.lambdas, dtype=float))
        rows["inp"].append(np.asarray(sig.sign_inputs, dtype=float))
        rows["cw"].append(np.einsum("ij,ji->", r0, r).real)
        rows["corr"].append(np.einsum("ij,ji->", pi_corr, r).real if pi_corr is not None else np.nan)
        rows["code"].append(np.einsum("ij,ji->", pi_code, r).real)
        if keep_states:
            states.append(rho)
            if ctrl is not None:
                cstates.append(ctrl)

    for k in range(steps + 1):
        sig = model.signals(ctrl if ctrl is not None else rho)
        if k % decimation == 0:
            sample(k, sig)
            q_acc[:] = 0
        if k == steps:
            break
        dW = stream.increments(model.m, dt)
        try:
            new_rho, dq = stepper(model, rho, dt, dW, lambdas=sig.lambdas)
            if ctrl is not None:
                ctrl, _ = stepper(model, ctrl, dt, dW, lambdas=sig.lambdas)
        except TraceCollapse as exc:
            raise TraceCollapse(f"trajectory {stream.index} aborted at step {k}: {exc}") from None
        rho = new_rho
        q_acc += dq

    return TrajectoryRecord(
        times=np.array(rows["t"]),
        currents=np.array(rows["q"]).reshape(-1, model.m),
        measured_expectations=np.array(rows["m"]).reshape(-1, model.m),
        feedback_signals=np.array(rows["lam"]).reshape(len(rows["t"]), -1),
        sign_inputs=np.array(rows["inp"]).reshape(len(rows["t"]), -1),
        f_cw=np.array(rows["cw"]),
        f_corr=np.array(rows["corr"]),
        f_code=np.array(rows["code"]),
        states=states if keep_states else None,
        controller_states=cstates if keep_states and ctrl is not None else None,
        final_state=rho,
        final_controller=ctrl,
    )


# --------------------------------------------------------------------------
# batched integrator


def _left_action(p: PauliOp, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat gather for ``P @ rho``: ``(P rho)[a, b] = ph[a] * rho[perm[a], b]``."""
    perm, ph = signed_permutation(p)
    a, b = np.divmod(np.arange(d * d), d)
    return perm[a] * d + b, ph[a]


def _conj_action(p: PauliOp, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat gather for ``P @ rho @ P^dagger``."""
    perm, ph = signed_permutation(p)
    a, b = np.divmod(np.arange(d * d), d)
    return perm[a] * d + perm[b], ph[a] * np.conj(ph[b])


def _trace_action(p: PauliOp, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat entries and weights with ``tr(rho P) = sum w * rho_flat[idx]``."""
    perm, ph = signed_permutation(p)
    b = np.arange(d)
    return perm[b] * d + b, ph[b]


def _column_sum(X: np.ndarray) -> np.ndarray:
    """Sum over axis 0 in fixed row order.

    For a C-ordered ``(k, N)`` array with ``N > 1`` NumPy accumulates row by
    row, but with a single column it switches to pairwise summation, which
    would make a trajectory's rounding depend on its batch. That case is
    summed explicitly.
    """
    if X.shape[1] > 1:
        return X.sum(axis=0)
    out = X[0].copy()
    for row in X[1:]:
        out += row
    return out


class _Observables:
    """Real expectations of several Pauli sums, evaluated column-wise."""

    def __init__(self, sums: list[PauliSum], d: int):
        idx, w, starts = [], [], []
        for terms in sums:
            starts.append(sum(len(i) for i in idx))
            for coef, p in terms:
                i, ph = _trace_action(p, d)
                idx.append(i)
                w.append(coef * ph)
        self.count = len(sums)
        self.idx = np.concatenate(idx) if idx else np.zeros(0, dtype=int)
        self.w = (np.concatenate(w) if w else np.zeros(0, dtype=complex))[:, None]
        self.starts = np.array(starts, dtype=int)
        self.ends = np.append(self.starts[1:], len(self.idx))

    def __call__(self, S: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return np.zeros((0, S.shape[1]))
        g = self.w * S[self.idx]
        return np.stack([_column_sum(g[a:b]) for a, b in zip(self.starts, self.ends)]).real


class DenseBatch:
    """A :class:`SmeModel` compiled into gather/multiply kernels on ``(d*d, N)`` states.

    Each step computes ``K`` with ``drho = K + K^dagger``:
    ``K = sum rate dt (c rho c^dag - rho)/2 + sum sqrt(kappa) dW_i (M_i - <M_i>) rho
    - i dt (H_drift + sum lambda_r F_r) rho``.
    """

    def __init__(self, model: SmeModel):
        self.model = model
        d = 1 << model.n
        self.d = d
        self.dim2 = d * d
        a, b = np.divmod(np.arange(d * d), d)
        self.transpose = b * d + a
        self.diag = np.arange(d) * (d + 1)

        lin: dict[bytes, list] = {}

        def add(groups, idx, w):
            key = idx.tobytes()
            if key in groups:
                groups[key][1] = groups[key][1] + w
            else:
                groups[key] = [idx, w.astype(complex)]

        ident = np.arange(d * d)
        dissipators = [(model.gamma, c) for c in model.noise_ops] + [(model.kappa, c) for c in model.measured_ops]
        for rate, c in dissipators:
            if rate == 0:
                continue
            idx, w = _conj_action(c, d)
            add(lin, idx, 0.5 * rate * w)
            add(lin, ident, np.full(d * d, -0.5 * rate, dtype=complex))
        for coef, p in model.drift:
            idx, w = _left_action(p, d)
            add(lin, idx, -1j * coef * w)
        self.lin = [(i, w[:, None]) for i, w in lin.values()]

        meas: dict[bytes, list] = {}
        for j, c in enumerate(model.measured_ops):
            idx, w = _left_action(c, d)
            key = idx.tobytes()
            meas.setdefault(key, [idx, []])[1].append((j, w))
        self.meas = [(i, [(j, w[:, None]) for j, w in terms]) for i, terms in meas.values()]
        self.meas_obs = _Observables([((1.0, c.phaseless()),) if c.phase == 0 else ((-1.0, c.phaseless()),)
                                      for c in model.measured_ops], d)

        self.fb = [_left_action(f, d) for f in model.corrections]
        self.fb = [(i, w[:, None]) for i, w in self.fb]
        self.law_obs = _Observables(model.law.observables(model.code), d)
        self.use_feedback = model.law.kind != "none" and model.lambda_max > 0 and bool(self.fb)

    def pack(self, rho, n: int) -> np.ndarray:
        flat = as_matrix(rho).reshape(-1)
        return np.repeat(flat[:, None], n, axis=1)

    def unpack(self, S: np.ndarray, j: int) -> DensityMatrix:
        return DensityMatrix(S[:, j].reshape(self.d, self.d))

    def sign_inputs(self, S: np.ndarray) -> np.ndarray:
        return self.law_obs(S)

    def lambdas(self, S: np.ndarray) -> np.ndarray:
        n_corr = len(self.fb)
        if not self.use_feedback:
            return np.zeros((n_corr, S.shape[1]))
        return self.model.law.combine(self.model.code, self.sign_inputs(S), self.model.lambda_max)

    def trace(self, S: np.ndarray) -> np.ndarray:
        return _column_sum(S[self.diag].real)

    def step(self, S: np.ndarray, dt: float, dW: np.ndarray, lam: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance all columns one step.

        ``dW`` has shape ``(m, N)``. Returns the new states, the measurement
        increments ``dQ`` (``(m, N)``) and a boolean mask of columns whose
        trace collapsed (those columns are left unnormalised).
        """
        model = self.model
        K = np.zeros_like(S)
        for idx, w in self.lin:
            K += dt * w * S[idx]
        exp_m = self.meas_obs(S)
        sq = math.sqrt(model.kappa)
        if sq > 0:
            a = sq * dW
            scalar = -_column_sum(exp_m * a)
            K += scalar[None, :] * S
            for idx, terms in self.meas:
                coef = np.zeros_like(S)
                for j, w in terms:
                    coef += w * a[j][None, :]
                K += coef * S[idx]
        if lam is not None and self.use_feedback:
            for (idx, w), l in zip(self.fb, lam):
                K += (w * (-1j * dt * l)[None, :]) * S[idx]
        S_new = S + K + K[self.transpose].conj()
        tr = self.trace(S_new)
        bad = ~(np.isfinite(tr) & (tr > 0))
        if bad.any():
            tr = np.where(bad, 1.0, tr)
        S_new /= tr[None, :]
        dq = 2 * model.kappa * exp_m * dt + sq * dW
        return S_new, dq, bad


@dataclass
class BatchResult:
    """Per-trajectory decimated series from :func:`integrate_batch` (rows = trajectories)."""

    times: np.ndarray
    f_cw: np.ndarray
    f_corr: np.ndarray
    f_code: np.ndarray
    aborted: np.ndarray
    lambdas: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)


def integrate_batch(model: SmeModel, rho0, dt: float, steps: int, streams: list[NoiseStream],
                    decimation: int = 100, controller=None, snapshot_steps=(),
                    record_lambdas: bool = False) -> BatchResult:
    """Integrate ``len(streams)`` trajectories of ``model`` from ``rho0`` in lock step.

    ``controller`` selects where the feedback is computed: ``None`` (the true
    state), a density matrix (a co-integrated dense estimate started there),
    or a :class:`~cqec.reduced.ReducedSystem` (Pauli coefficients on G,
    started from the completely mixed codespace state).
    """
    if steps > MAX_STEPS:
        raise ValueError(f"{steps} steps exceeds the budget of {MAX_STEPS}")
    n = len(streams)
    kernel = DenseBatch(model)
    r0 = as_matrix(rho0)
    S = kernel.pack(r0, n)
    reset = S[:, :1].copy()

    dense_ctrl = reduced = None
    if controller is not None and hasattr(controller, "step_batch"):
        reduced = controller
        R = reduced.pack(n)
    elif controller is not None:
        dense_ctrl = kernel.pack(controller, n)
        ctrl_reset = dense_ctrl[:, :1].copy()

    pi_corr = _safe_corr_projector(model, r0)
    w_cw = r0.T.reshape(-1)[:, None]
    w_code = model.code.projector.T.reshape(-1)[:, None]
    w_corr = None if pi_corr is None else pi_corr.T.reshape(-1)[:, None]

    n_samples = steps // decimation + 1
    times = np.arange(n_samples) * decimation * dt
    f_cw = np.empty((n, n_samples))
    f_corr = np.full((n, n_samples), np.nan)
    f_code = np.empty((n, n_samples))
    lam_rec = np.empty((n_samples, len(model.corrections), n)) if record_lambdas else None
    aborted = np.zeros(n, dtype=bool)
    snaps = {}
    snapshot_steps = set(int(s) for s in snapshot_steps)

    def lambdas_now():
        if not kernel.use_feedback:
            return None
        if reduced is not None:
            return reduced.lambdas(R)
        return kernel.lambdas(dense_ctrl if dense_ctrl is not None else S)

    noise = None
    for k in range(steps + 1):
        lam = lambdas_now()
        if k % decimation == 0:
            s = k // decimation
            f_cw[:, s] = _column_sum(w_cw * S).real
            f_code[:, s] = _column_sum(w_code * S).real
            if w_corr is not None:
                f_corr[:, s] = _column_sum(w_corr * S).real
            if record_lambdas:
                lam_rec[s] = 0 if lam is None else lam
        if k in snapshot_steps:
            snaps[k] = S.copy()
        if k == steps:
            break
        j = k % NOISE_BLOCK
        if j == 0:
            count = min(NOISE_BLOCK, steps - k)
            noise = np.stack([st.block(count, model.m, dt) for st in streams], axis=2)
        dW = noise[j]
        # blown-up columns are detected and reset below; their NaNs are expected
        with np.errstate(invalid="ignore", over="ignore"):
            S, _, bad = kernel.step(S, dt, dW, lam)
            if dense_ctrl is not None:
                dense_ctrl, _, bad_c = kernel.step(dense_ctrl, dt, dW, lam)
                bad |= bad_c
            if reduced is not None:
                R, bad_r = reduced.step_batch(R, dt, dW, lam)
                bad |= bad_r
        if bad.any():
            aborted |= bad
            S[:, bad] = reset
            if dense_ctrl is not None:
                dense_ctrl[:, bad] = ctrl_reset
            if reduced is not None:
                R[:, bad] = reduced.pack(1)
    return BatchResult(times, f_cw, f_corr, f_code, aborted,
                       None if lam_rec is None else np.moveaxis(lam_rec, 2, 0), snaps)
