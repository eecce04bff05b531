import numpy as np
import pytest

from cqec.analytics import abcd
from cqec.codes import bitflip_code
from cqec.feedback import FeedbackLaw
from cqec.pauli import parse_pauli
from cqec.sme import (
    MAX_STEPS,
    DenseBatch,
    NoiseStream,
    SmeModel,
    _increment,
    euler_step,
    integrate_batch,
    milstein_step,
    run_trajectory,
    wiener_increments,
)
from cqec.states import as_matrix, basis_state, expectation, mixed_codespace_state, pure_state

from conftest import random_density

P = parse_pauli


def protocol(**kw):
    args = dict(gamma=1.0, kappa=64.0, lambda_max=128.0)
    args.update(kw)
    return SmeModel.build("bitflip", **args)


# ---- noise ----------------------------------------------------------------------

def test_wiener_statistics():
    dt = 1e-5
    draws = NoiseStream(99, 0).block(1_000_000, 1, dt)[:, 0]
    assert abs(draws.mean()) < 4 * np.sqrt(dt / 1e6)
    assert abs(draws.var() / dt - 1) < 0.01


def test_streams_are_reproducible_and_chunking_invariant():
    a = NoiseStream(5, 3).block(2000, 3, 1e-4)
    b = NoiseStream(5, 3)
    pieces = np.concatenate([wiener_increments(b, 3, 1e-4)[None] for _ in range(500)]
                            + [b.block(1500, 3, 1e-4)])
    np.testing.assert_array_equal(a, pieces)
    assert not np.array_equal(a, NoiseStream(5, 4).block(2000, 3, 1e-4))


def test_nonpositive_dt_rejected():
    with pytest.raises(ValueError):
        NoiseStream(0).increments(3, 0.0)
    with pytest.raises(ValueError):
        euler_step(protocol(), basis_state("000"), -1.0, np.zeros(3))


# ---- single steps ---------------------------------------------------------------

def test_deterministic_step_damps_parity():
    model = protocol(kappa=0.0, lambda_max=0.0, law="none")
    dt = 1e-4
    rho, _ = euler_step(model, basis_state("000"), dt, np.array([0.3, -1.0, 2.0]))
    assert expectation(rho, P("ZZI")) == pytest.approx(1 - 4 * dt, abs=1e-12)


def test_zero_rates_leave_state_unchanged(rng):
    model = protocol(gamma=0.0, kappa=0.0, lambda_max=0.0)
    rho = random_density(rng)
    out, _ = euler_step(model, rho, 1e-3, rng.normal(size=3))
    np.testing.assert_allclose(out.mat, rho, atol=1e-15)


def test_codespace_state_step():
    model = protocol(law=FeedbackLaw("optimal", sign_zero=0.0))
    rho_e = mixed_codespace_state(bitflip_code())
    sig = model.signals(rho_e)
    np.testing.assert_array_equal(sig.sign_inputs, 0)
    np.testing.assert_array_equal(sig.lambdas, 0)
    dt, dW = 1e-5, np.array([1e-3, -2e-3, 5e-4])
    _, dq = euler_step(model, rho_e, dt, dW)
    np.testing.assert_allclose(dq, 2 * 64.0 * dt + 8.0 * dW, rtol=1e-13)


def test_drho_is_traceless_before_renormalisation(rng):
    model = protocol()
    for _ in range(10):
        rho = random_density(rng)
        drho, _ = _increment(model, rho, 1e-5, rng.normal(size=3) * 3e-3, model.signals(rho).lambdas)
        assert abs(np.trace(drho)) < 1e-15


def test_measurement_record_reconstructs_noise(rng):
    model = protocol()
    rho = random_density(rng)
    dt = 1e-5
    dW = NoiseStream(1).increments(3, dt)
    _, dq = euler_step(model, rho, dt, dW)
    m = np.array([expectation(rho, P(s)) for s in ("ZZI", "IZZ", "ZIZ")])
    np.testing.assert_allclose((dq - 2 * model.kappa * m * dt) / np.sqrt(model.kappa), dW, atol=1e-17)


def test_non_finite_increment_rejected():
    with pytest.raises(ValueError):
        euler_step(protocol(), basis_state("000"), 1e-5, np.array([np.nan, 0, 0]))


def test_milstein_reduces_to_euler(rng):
    rho = random_density(rng)
    dt = 1e-4
    dW = np.full(3, np.sqrt(dt))
    model = protocol()
    np.testing.assert_allclose(milstein_step(model, rho, dt, dW)[0].mat, euler_step(model, rho, dt, dW)[0].mat,
                               atol=1e-15)
    det = protocol(kappa=0.0)
    dW = rng.normal(size=3) * 0.01
    np.testing.assert_array_equal(milstein_step(det, rho, dt, dW)[0].mat, euler_step(det, rho, dt, dW)[0].mat)


def test_milstein_has_smaller_strong_error():
    model = SmeModel.build("spin_up", gamma=1.0, kappa=50.0, lambda_max=0.0, law="none")
    rho0 = pure_state(np.array([np.cos(0.6), np.sin(0.6)]))
    dt, sub, steps = 1e-4, 8, 1000  # gamma t in [0, 0.1]
    rng = np.random.default_rng(2)
    errors = {euler_step: [], milstein_step: []}
    for _ in range(6):
        fine = rng.normal(size=(steps * sub, 1)) * np.sqrt(dt / sub)
        ref = rho0
        for w in fine:
            ref, _ = milstein_step(model, ref, dt / sub, w, lambdas=[0.0])
        coarse = fine.reshape(steps, sub, 1).sum(axis=1)
        for stepper in errors:
            q = rho0
            for w in coarse:
                q, _ = stepper(model, q, dt, w, lambdas=[0.0])
            errors[stepper].append(np.abs(q.mat - ref.mat).max())
    assert np.mean(errors[milstein_step]) < np.mean(errors[euler_step])


# ---- trajectories -----------------------------------------------------------------

def test_deterministic_trajectory_follows_a():
    model = protocol(kappa=0.0, lambda_max=0.0, law="none")
    dt = 1e-4
    rec = run_trajectory(model, basis_state("000"), dt, 0.5, NoiseStream(0), decimation=500)
    np.testing.assert_allclose(rec.f_cw, abcd(rec.times)[0], atol=10 * dt)


def test_zero_duration_gives_single_sample():
    rec = run_trajectory(protocol(), basis_state("000"), 1e-5, 0.0, NoiseStream(0))
    assert len(rec.times) == 1 and rec.f_cw[0] == 1.0
    assert rec.currents.shape == (1, 3)


def test_record_lengths_consistent():
    rec = run_trajectory(protocol(), basis_state("000"), 1e-5, 0.01, NoiseStream(0), decimation=7, keep_states=True)
    n = 1000 // 7 + 1
    for series in (rec.times, rec.currents, rec.measured_expectations, rec.feedback_signals, rec.sign_inputs,
                   rec.f_cw, rec.f_corr, rec.f_code, rec.states):
        assert len(series) == n


def test_trajectories_are_bit_reproducible():
    a = run_trajectory(protocol(), basis_state("000"), 1e-5, 0.01, NoiseStream(8, 2), decimation=10)
    b = run_trajectory(protocol(), basis_state("000"), 1e-5, 0.01, NoiseStream(8, 2), decimation=10)
    for field in ("f_cw", "currents", "feedback_signals"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))


def test_mixed_controller_reproduces_true_state_signals():
    model = protocol()
    dt = 1e-6
    a = run_trajectory(model, basis_state("000"), dt, 0.005, NoiseStream(3, 1), decimation=1,
                       controller_rho0=mixed_codespace_state(model.code))
    b = run_trajectory(model, basis_state("000"), dt, 0.005, NoiseStream(3, 1), decimation=1,
                       controller_rho0=basis_state("000"))
    np.testing.assert_allclose(a.feedback_signals, b.feedback_signals, atol=1e-9)


def test_step_budget_enforced():
    with pytest.raises(ValueError):
        run_trajectory(protocol(), basis_state("000"), 1e-9, 1.0, NoiseStream(0))
    assert MAX_STEPS < 1e9


def test_model_rejects_inconsistent_operators():
    with pytest.raises(ValueError):
        SmeModel(code=bitflip_code(), gamma=-1.0, kappa=0.0, lambda_max=0.0)
    with pytest.raises(ValueError):
        SmeModel(code=bitflip_code(), gamma=1.0, kappa=0.0, lambda_max=0.0, noise_ops=(P("XI"),))


# ---- batched engine ------------------------------------------------------------------

def test_batch_matches_reference_integrator():
    model = protocol()
    dt, steps = 1e-5, 1000
    batch = integrate_batch(model, basis_state("000"), dt, steps, [NoiseStream(6, i) for i in range(3)],
                            decimation=100)
    for i in range(3):
        rec = run_trajectory(model, basis_state("000"), dt, steps * dt, NoiseStream(6, i), decimation=100)
        np.testing.assert_allclose(batch.f_cw[i], rec.f_cw, atol=1e-12)
        np.testing.assert_allclose(batch.f_corr[i], rec.f_corr, atol=1e-12)


def test_batch_results_do_not_depend_on_batch_composition():
    model = protocol()
    alone = integrate_batch(model, basis_state("000"), 1e-5, 1500, [NoiseStream(1, 4)], decimation=50)
    group = integrate_batch(model, basis_state("000"), 1e-5, 1500, [NoiseStream(1, i) for i in range(2, 7)],
                            decimation=50)
    np.testing.assert_array_equal(alone.f_cw[0], group.f_cw[2])
    wide = integrate_batch(model, basis_state("000"), 1e-5, 1500, [NoiseStream(1, i) for i in range(300)],
                           decimation=50)
    np.testing.assert_array_equal(alone.f_cw[0], wide.f_cw[4])


def test_batch_step_keeps_states_hermitian_unit_trace():
    model = protocol()
    kernel = DenseBatch(model)
    S = kernel.pack(basis_state("000"), 4)
    stream = [NoiseStream(2, i) for i in range(4)]
    for _ in range(200):
        dW = np.stack([s.increments(3, 1e-5) for s in stream], axis=1)
        S, _, bad = kernel.step(S, 1e-5, dW, kernel.lambdas(S))
        assert not bad.any()
    for j in range(4):
        r = kernel.unpack(S, j).mat
        assert abs(np.trace(r) - 1) < 1e-13
        np.testing.assert_allclose(r, r.conj().T, atol=1e-15)


class _PoisonedStream(NoiseStream):
    def block(self, steps, m, dt):
        out = super().block(steps, m, dt)
        out[min(10, steps - 1)] = np.inf
        return out


def test_blown_up_trajectories_are_flagged_and_reset():
    model = protocol()
    streams = [NoiseStream(0, 0), _PoisonedStream(0, 1), NoiseStream(0, 2)]
    res = integrate_batch(model, basis_state("000"), 1e-5, 100, streams, decimation=10)
    np.testing.assert_array_equal(res.aborted, [False, True, False])
    assert np.all(np.isfinite(res.f_cw))


def test_martingale_mean_tracks_master_equation_quickly():
    """Small version of the unravelling check: lambda = 0, 400 trajectories, gamma t = 0.05."""
    from scipy.linalg import expm

    from cqec.pauli import to_dense

    model = protocol(lambda_max=0.0, law="none")
    dt, steps = 1e-5, 5000
    res = integrate_batch(model, basis_state("000"), dt, steps, [NoiseStream(21, i) for i in range(400)],
                          decimation=steps, snapshot_steps=(steps,))
    S = res.snapshots[steps]
    mean = S.mean(axis=1)
    sem = np.abs(S.real.std(axis=1, ddof=1)) / np.sqrt(S.shape[1])
    eye = np.eye(8)
    L = np.zeros((64, 64), dtype=complex)
    for rate, ops in ((model.gamma, model.noise_ops), (model.kappa, model.measured_ops)):
        for c in ops:
            cm = to_dense(c)
            L += rate * (np.kron(cm, cm.conj()) - np.kron(eye, eye))
    exact = expm(L * steps * dt) @ as_matrix(basis_state("000")).reshape(-1)
    assert np.all(np.abs(mean.real - exact.real) <= 4 * sem + 1e-12)
