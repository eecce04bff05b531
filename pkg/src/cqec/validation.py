"""Fast invariant checks run by ``cqec validate``."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .analytics import abcd, analytic_state, baseline_fidelities, correctable_overlap, crossing_time
from .codes import bitflip_code, correctable_projector, discrete_qec
from .feedback import FeedbackSignals, feedback_overlap_rate, optimal_bitflip_lambdas
from .pauli import PauliOp, commutes, pauli_mul, to_dense
from .reduced import ReducedSystem, parameter_count
from .sme import NoiseStream, SmeModel, integrate_batch
from .states import basis_state, mixed_codespace_state

__all__ = ["CheckResult", "run_invariant_suite"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _pauli_algebra() -> CheckResult:
    ops = [PauliOp(x, z, 0) for x in itertools.product((0, 1), repeat=3) for z in itertools.product((0, 1), repeat=3)]
    dense = {p: to_dense(p) for p in ops}
    bad = 0
    for a, b in itertools.product(ops, ops):
        prod = dense[a] @ dense[b]
        bad += not np.allclose(to_dense(pauli_mul(a, b)), prod)
        bad += commutes(a, b) != np.allclose(prod, dense[b] @ dense[a])
    return CheckResult("pauli algebra on 64x64 phaseless pairs", bad == 0, f"{bad} mismatches")


def _baselines() -> CheckResult:
    gt = np.linspace(0, 2, 1000)
    a, b, c, d = abcd(gt)
    f1, f3, f3bar = baseline_fidelities(gt)
    err = max(np.max(np.abs(a + 3 * b + 3 * c + d - 1)), np.max(np.abs(f3 - a)),
              np.max(np.abs(f3bar - a - 3 * b)))
    mono = all(np.all(np.diff(f) <= 1e-15) for f in (f1, f3, f3bar)) and np.all(f3bar >= f3)
    return CheckResult("closed-form baselines", err < 1e-14 and mono, f"identity error {err:.1e}")


def _discrete_recovery() -> CheckResult:
    code = bitflip_code()
    rho0 = basis_state("000")
    pi_corr = correctable_projector(rho0)
    worst = 0.0
    for gt in (0.05, 0.2, 0.7):
        rho = analytic_state(rho0, gt)
        f3bar = float(baseline_fidelities(gt)[2])
        worst = max(worst, abs(correctable_overlap(rho, pi_corr) - f3bar),
                    abs(np.trace(rho0.mat @ discrete_qec(code, rho).mat).real - f3bar))
    return CheckResult("discrete recovery reproduces F3bar", worst < 1e-12, f"max deviation {worst:.1e}")


def _deterministic_limit() -> CheckResult:
    model = SmeModel.build("bitflip", gamma=1.0, kappa=0.0, lambda_max=0.0, law="none")
    res = integrate_batch(model, basis_state("000"), 1e-5, 20000, [NoiseStream(0, 0)], decimation=1000)
    err = float(np.max(np.abs(res.f_cw[0] - abcd(res.times)[0])))
    return CheckResult("kappa = lambda = 0 gives a(t)", err < 2e-4, f"max |F_cw - a| = {err:.1e}")


def _state_validity() -> CheckResult:
    model = SmeModel.build("bitflip", gamma=1.0, kappa=64.0, lambda_max=128.0)
    streams = [NoiseStream(7, i) for i in range(16)]
    res = integrate_batch(model, basis_state("000"), 1e-5, 3000, streams, decimation=3000,
                          snapshot_steps=(3000,))
    S = res.snapshots[3000]
    worst_eig, worst_tr, worst_herm = 0.0, 0.0, 0.0
    for j in range(S.shape[1]):
        r = S[:, j].reshape(8, 8)
        worst_herm = max(worst_herm, float(np.max(np.abs(r - r.conj().T))))
        worst_tr = max(worst_tr, abs(np.trace(r).real - 1))
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(r).min()))
    ok = worst_herm < 1e-12 and worst_tr < 1e-12 and worst_eig > -1e-6 and not res.aborted.any()
    return CheckResult("conditioned states stay valid", ok,
                       f"trace error {worst_tr:.1e}, min eigenvalue {worst_eig:.1e}")


def _reduction() -> CheckResult:
    model = SmeModel.build("bitflip", gamma=1.0, kappa=64.0, lambda_max=128.0)
    system = ReducedSystem(model)

    def run(controller):
        streams = [NoiseStream(3, i) for i in range(4)]
        return integrate_batch(model, basis_state("000"), 1e-5, 2000, streams, decimation=1,
                               record_lambdas=True, controller=controller)

    a, b = run(mixed_codespace_state(model.code)), run(system)
    err = float(np.max(np.abs(a.lambdas - b.lambdas)))
    ok = err == 0 and parameter_count(model.code) == 16
    return CheckResult("reduced controller matches dense controller", ok,
                       f"max feedback difference {err:.1e}, parameter count {parameter_count(model.code)}")


def _optimality() -> CheckResult:
    rng = np.random.default_rng(11)
    code = bitflip_code()
    worse = 0
    for _ in range(20):
        g = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        rho = g @ g.conj().T
        rho /= np.trace(rho).real
        best = feedback_overlap_rate(rho, optimal_bitflip_lambdas(rho, 1.0), code)
        for _ in range(50):
            lam = rng.uniform(-1, 1, 3)
            worse += feedback_overlap_rate(rho, FeedbackSignals(lam, np.zeros(3)), code) > best + 1e-12
    return CheckResult("sign law maximises the overlap rate", worse == 0, f"{worse} counterexamples")


def _crossing() -> CheckResult:
    t = np.linspace(0, 1, 101)
    tau = crossing_time(t, t - 0.333, np.zeros_like(t))
    ok = tau is not None and abs(tau - 0.333) < 1e-9 and crossing_time(t, t, t) is None
    return CheckResult("crossing detector", ok, f"tau = {tau}")


CHECKS = (_pauli_algebra, _baselines, _discrete_recovery, _crossing, _deterministic_limit,
          _state_validity, _reduction, _optimality)


def run_invariant_suite() -> list[CheckResult]:
    out = []
    for check in CHECKS:
        try:
            out.append(check())
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(check.__name__.strip("_"), False, f"raised {exc!r}"))
    return out
