import itertools
import json

import numpy as np
import pytest

from cqec.analytics import analytic_state, baseline_fidelities
from cqec.codes import (
    CodeError,
    StabilizerCode,
    bitflip_code,
    build_G,
    check_theorem_hypothesis,
    codespace_projector,
    correctable_projector,
    discrete_qec,
    encode_bitflip,
    five_qubit_code,
    load_code,
    spin_up_code,
)
from cqec.pauli import PauliOp, commutes, parse_pauli, pauli_mul, to_dense, weight
from cqec.states import basis_state, mixed_codespace_state

from conftest import random_density

P = parse_pauli


def _pauli_sum(*texts):
    return sum(to_dense(P(t)) for t in texts)


def test_bitflip_projector_formula():
    pi = codespace_projector(bitflip_code())
    np.testing.assert_allclose(pi, _pauli_sum("III", "ZZI", "ZIZ", "IZZ") / 4, atol=1e-15)
    assert np.linalg.matrix_rank(pi) == 2


def test_trivial_code_projector_is_identity():
    code = StabilizerCode(n=1, k=1, d=1, generators=())
    np.testing.assert_array_equal(codespace_projector(code), np.eye(2))


def test_spin_up_projector():
    np.testing.assert_array_equal(codespace_projector(spin_up_code()), np.diag([1, 0]))


@pytest.mark.parametrize("factory", [bitflip_code, spin_up_code, five_qubit_code])
def test_projector_idempotent_hermitian_with_integer_trace(factory):
    code = factory()
    pi = code.projector
    np.testing.assert_allclose(pi @ pi, pi, atol=1e-12)
    np.testing.assert_allclose(pi, pi.conj().T, atol=1e-12)
    assert round(np.trace(pi).real) == 2 ** code.k
    assert abs(np.trace(pi).real - 2 ** code.k) < 1e-12


def test_generators_must_commute():
    with pytest.raises(CodeError):
        StabilizerCode(n=2, k=0, d=1, generators=(P("ZI"), P("XI")))


def test_generators_must_be_independent():
    with pytest.raises(CodeError):
        StabilizerCode(n=3, k=1, d=3, generators=(P("ZZI"), P("IZZ"), P("ZIZ")))


def test_extra_measured_must_be_in_group():
    with pytest.raises(CodeError):
        StabilizerCode(n=3, k=1, d=3, generators=(P("ZZI"), P("IZZ")), extra_measured=(P("ZII"),))


def test_correction_weight_bounded_by_distance():
    with pytest.raises(CodeError):
        StabilizerCode(n=3, k=1, d=1, generators=(P("ZZI"), P("IZZ")), corrections=(P("XXI"),))


def test_encode_bitflip_examples():
    np.testing.assert_array_equal(encode_bitflip(1, 0).mat, basis_state("000").mat)
    np.testing.assert_array_equal(encode_bitflip(0, 1).mat, basis_state("111").mat)
    s = 1 / np.sqrt(2)
    psi = np.zeros(8)
    psi[0] = psi[7] = s
    np.testing.assert_allclose(encode_bitflip(s, s).mat, np.outer(psi, psi), atol=1e-15)
    with pytest.raises(ValueError):
        encode_bitflip(1, 1)


def test_correctable_projector_span():
    pi = correctable_projector(basis_state("000"))
    expected = np.diag([1, 1, 1, 0, 1, 0, 0, 0]).astype(complex)  # |000>,|001>,|010>,|100>
    np.testing.assert_array_equal(pi, expected)
    rho0 = basis_state("000").mat
    assert np.trace(pi @ rho0).real == 1
    xx = to_dense(P("XXI"))
    assert np.trace(pi @ xx @ rho0 @ xx).real == 0


def test_correctable_projector_rejects_non_codewords():
    with pytest.raises(ValueError):
        correctable_projector(basis_state("100"))


def test_discrete_qec_examples():
    code = bitflip_code()
    x = to_dense(P("XII"))
    rho0 = basis_state("000").mat
    np.testing.assert_allclose(discrete_qec(code, x @ rho0 @ x).mat, rho0, atol=1e-15)
    cw = encode_bitflip(0.6, 0.8j).mat
    np.testing.assert_allclose(discrete_qec(code, cw).mat, cw, atol=1e-15)


@pytest.mark.parametrize("gt", [0.1, 0.2, 0.5])
def test_discrete_qec_on_analytic_state_gives_f3bar(gt):
    rho0 = basis_state("000")
    out = discrete_qec(bitflip_code(), analytic_state(rho0, gt))
    assert abs(np.trace(rho0.mat @ out.mat).real - baseline_fidelities(gt)[2]) < 1e-10


def test_discrete_qec_trace_preserving(rng):
    code = bitflip_code()
    for _ in range(20):
        rho = random_density(rng)
        assert abs(np.trace(discrete_qec(code, rho).mat).real - 1) < 1e-12


def test_mixed_codespace_state_fixed_by_discrete_qec():
    code = bitflip_code()
    rho_e = mixed_codespace_state(code).mat
    np.testing.assert_allclose(discrete_qec(code, rho_e).mat, rho_e, atol=1e-15)


def test_G_contents_for_bitflip():
    G = {str(g) for g in build_G(bitflip_code())}
    assert {"YZI", "YIZ", "ZYI", "IYZ", "ZIY", "IZY"} <= G
    assert {"III", "ZZI", "IZZ", "ZIZ"} <= G
    assert "XXX" not in G


def test_G_size_regression():
    # brute force: 64 phaseless Paulis x 4 stabilizer elements under the membership predicate
    assert len(build_G(bitflip_code())) == 28


def test_G_predicate_brute_force():
    code = bitflip_code()
    expected = set()
    for x in itertools.product((0, 1), repeat=3):
        for z in itertools.product((0, 1), repeat=3):
            alpha = PauliOp(x, z)
            for s in code.stabilizer_group:
                if commutes(s, alpha) == (weight(alpha) % 2 == 0):
                    expected.add(pauli_mul(alpha, s).phaseless())
    assert build_G(code) == frozenset(expected)


def test_G_decomposition_consistency():
    code = bitflip_code()
    group = code.stabilizer_group
    for x in itertools.product((0, 1), repeat=3):
        for z in itertools.product((0, 1), repeat=3):
            alpha = PauliOp(x, z)
            for s in group:
                if commutes(s, alpha) != (weight(alpha) % 2 == 0):
                    continue
                for s2 in group:
                    alpha2 = pauli_mul(alpha, s2).phaseless()  # alpha = alpha2 * s2 up to phase
                    s_new = pauli_mul(s2, s)
                    assert commutes(s_new, alpha2) == (weight(alpha2) % 2 == 0)


def test_G_enumeration_cap():
    with pytest.raises(CodeError):
        build_G(five_qubit_code(), cap=4)


def test_theorem_hypothesis():
    assert check_theorem_hypothesis(bitflip_code())
    assert not check_theorem_hypothesis(spin_up_code())
    assert check_theorem_hypothesis(StabilizerCode(n=1, k=1, d=1, generators=()))


def test_load_code_from_builtin_yaml_and_json(tmp_path):
    assert load_code("bitflip").generators == bitflip_code().generators
    doc = {"n": 3, "k": 1, "d": 3, "generators": ["ZZI", "IZZ"], "extra_measured": ["ZIZ"],
           "corrections": ["XII", "IXI", "IIX"], "logicals": ["XXX", "ZZZ"]}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    (tmp_path / "c.yaml").write_text("n: 3\nk: 1\nd: 3\ngenerators: [ZZI, IZZ]\ncorrections: [XII, IXI, IIX]\n")
    assert load_code(tmp_path / "c.json").measured == bitflip_code().measured
    assert load_code(tmp_path / "c.yaml").corrections == bitflip_code().corrections
    with pytest.raises(CodeError):
        load_code({"n": 3, "generators": ["ZZI"]})


def test_syndromes_distinguish_single_flips():
    code = bitflip_code()
    syndromes = {code.syndrome(f) for f in code.corrections}
    assert len(syndromes) == 3 and (1, 1) not in syndromes
