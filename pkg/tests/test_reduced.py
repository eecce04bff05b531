import numpy as np
import pytest

from cqec.codes import bitflip_code, encode_bitflip, five_qubit_code
from cqec.feedback import FeedbackLaw, optimal_bitflip_lambdas
from cqec.pauli import parse_pauli
from cqec.reduced import (
    ClosureError,
    CoefficientVector,
    ReducedSystem,
    _ordered_G,
    coefficients_from_state,
    feedback_from_coefficients,
    parameter_count,
    reduced_step,
)
from cqec.sme import DenseBatch, NoiseStream, SmeModel
from cqec.states import basis_state, mixed_codespace_state

from conftest import random_density

P = parse_pauli
G = _ordered_G(bitflip_code())


def test_coefficients_of_mixed_codespace_state():
    c = coefficients_from_state(mixed_codespace_state(bitflip_code()), G)
    assert c[P("ZZI")] == pytest.approx(1 / 8)
    assert c[P("YZI")] == 0
    assert c[P("III")] == pytest.approx(1 / 8)


def test_identity_coefficient_is_fixed(rng):
    for _ in range(5):
        assert coefficients_from_state(random_density(rng), G)[P("III")] == pytest.approx(1 / 8, abs=1e-15)


def test_codespace_states_share_coefficients(rng):
    ref = coefficients_from_state(encode_bitflip(1, 0), G).values
    for _ in range(20):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        a /= np.linalg.norm(a)
        vals = coefficients_from_state(encode_bitflip(*a), G).values
        np.testing.assert_allclose(vals, ref, atol=1e-12)


def test_decay_of_parity_coefficient():
    model = SmeModel.build("bitflip", gamma=1.0, kappa=0.0, lambda_max=0.0, law="none")
    c = coefficients_from_state(basis_state("000"), G)
    dt, steps = 1e-4, 1000
    for _ in range(steps):
        c = reduced_step(c, model, dt, np.zeros(3))
    assert c[P("ZZI")] == pytest.approx(np.exp(-4 * steps * dt) / 8, abs=10 * dt)


def test_zero_rates_leave_coefficients_unchanged(rng):
    model = SmeModel.build("bitflip", gamma=0.0, kappa=0.0, lambda_max=0.0)
    c = coefficients_from_state(random_density(rng), G)
    out = reduced_step(c, model, 1e-3, rng.normal(size=3))
    np.testing.assert_allclose(out.values, c.values, atol=1e-17)


def test_reduced_and_dense_coefficients_agree_per_step():
    model = SmeModel.build("bitflip", gamma=1.0, kappa=64.0, lambda_max=128.0)
    system = ReducedSystem(model)
    kernel = DenseBatch(model)
    rho0 = basis_state("000")
    S, R = kernel.pack(rho0, 1), system.pack(1, rho0)
    stream, dt = NoiseStream(5), 1e-6
    for k in range(5000):
        dW = stream.increments(3, dt)[:, None]
        lam = kernel.lambdas(S)
        np.testing.assert_array_equal(lam, system.lambdas(R))
        S, _, _ = kernel.step(S, dt, dW, lam)
        R, _ = system.step_batch(R, dt, dW, lam)
        if k % 250 == 0:
            dense = coefficients_from_state(kernel.unpack(S, 0), system.ops).values
            assert np.max(np.abs(dense - R[:, 0])) < 1e-8


def test_feedback_from_coefficients_matches_reference(rng):
    code = bitflip_code()
    law = FeedbackLaw("optimal", sign_zero=0.0)
    for _ in range(100):
        rho = random_density(rng)
        sig = feedback_from_coefficients(coefficients_from_state(rho, G), code, 128.0, law)
        ref = optimal_bitflip_lambdas(rho, 128.0)
        np.testing.assert_array_equal(sig.lambdas, ref.lambdas)
        np.testing.assert_allclose(sig.sign_inputs, ref.sign_inputs, atol=1e-12)


def test_feedback_from_mixed_codespace_coefficients_is_zero():
    code = bitflip_code()
    c = coefficients_from_state(mixed_codespace_state(code), G)
    sig = feedback_from_coefficients(c, code, 128.0, FeedbackLaw("optimal", sign_zero=0.0))
    np.testing.assert_array_equal(sig.sign_inputs, 0)
    np.testing.assert_array_equal(sig.lambdas, 0)


def test_positive_y_coefficients_select_plus_lambda():
    code = bitflip_code()
    values = np.zeros(len(G))
    c = CoefficientVector(G, values)
    values[c.index[P("III")]] = 1 / 8
    values[c.index[P("YZI")]] = 0.01
    values[c.index[P("YIZ")]] = 0.02
    values[c.index[P("ZYI")]] = -0.01
    assert list(feedback_from_coefficients(c, code, 5.0).lambdas) == [5.0, -5.0, 5.0]


def test_missing_coefficient_reported():
    ops = tuple(g for g in G if str(g) != "YZI")
    c = CoefficientVector(ops, np.zeros(len(ops)))
    with pytest.raises(KeyError):
        feedback_from_coefficients(c, bitflip_code(), 1.0)


def test_truncated_G_fails_closure():
    model = SmeModel.build("bitflip", gamma=1.0, kappa=1.0, lambda_max=1.0)
    with pytest.raises(ClosureError):
        ReducedSystem(model, G=tuple(g for g in G if str(g) != "YZI"))


def test_parameter_counts():
    assert parameter_count(bitflip_code()) == 16
    assert parameter_count(five_qubit_code()) == 256
    assert parameter_count(bitflip_code(), blocks=3) == 48
