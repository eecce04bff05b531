"""Stabilizer codes, discrete recovery, and the feedback-closure set G."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .pauli import PauliOp, commutes, identity, parse_pauli, pauli_mul, to_dense, weight
from .states import DensityMatrix, as_matrix, pure_state

__all__ = [
    "StabilizerCode",
    "CodeError",
    "bitflip_code",
    "spin_up_code",
    "five_qubit_code",
    "load_code",
    "code_from_dict",
    "codespace_projector",
    "encode_bitflip",
    "correctable_projector",
    "discrete_qec",
    "build_G",
    "check_theorem_hypothesis",
    "G_ENUMERATION_CAP",
]

G_ENUMERATION_CAP = 7


class CodeError(ValueError):
    pass


def _gf2_rank(rows: list[list[int]]) -> int:
    m = np.array(rows, dtype=np.uint8) if rows else np.zeros((0, 0), dtype=np.uint8)
    rank = 0
    for col in range(m.shape[1] if m.size else 0):
        pivot = next((r for r in range(rank, m.shape[0]) if m[r, col]), None)
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(m.shape[0]):
            if r != rank and m[r, col]:
                m[r] ^= m[rank]
        rank += 1
    return rank


@dataclass(frozen=True, eq=False)
class StabilizerCode:
    """An ``[[n, k, d]]`` stabilizer code.

    ``extra_measured`` lists stabilizer elements weakly measured in addition
    to the generators (``ZIZ`` for the bit-flip code). ``corrections`` are the
    Pauli feedback Hamiltonians ``F_r`` and ``logicals`` are representatives of
    the encoded operations used by :func:`check_theorem_hypothesis`.
    """

    n: int
    k: int
    d: int
    generators: tuple[PauliOp, ...]
    corrections: tuple[PauliOp, ...] = ()
    extra_measured: tuple[PauliOp, ...] = ()
    logicals: tuple[PauliOp, ...] = ()
    name: str = "code"
    codewords: tuple[np.ndarray, ...] = field(default=(), repr=False)

    def __post_init__(self):
        ops = self.generators + self.corrections + self.extra_measured + self.logicals
        for op in ops:
            if op.n != self.n:
                raise CodeError(f"{op} acts on {op.n} qubits, code has n={self.n}")
        if len(self.generators) != self.n - self.k:
            raise CodeError(f"expected {self.n - self.k} generators, got {len(self.generators)}")
        for a, b in itertools.combinations(self.generators, 2):
            if not commutes(a, b):
                raise CodeError(f"generators {a} and {b} do not commute")
        if any(not g.is_hermitian for g in self.generators):
            raise CodeError("generators must be Hermitian (phase +1 or -1)")
        rows = [list(g.x) + list(g.z) for g in self.generators]
        if _gf2_rank(rows) != len(rows):
            raise CodeError("generators are not independent")
        group = {s.phaseless(): s for s in self.stabilizer_group}
        for e in self.extra_measured:
            if e.phaseless() not in group or group[e.phaseless()].phase != e.phase:
                raise CodeError(f"{e} is not an element of the stabilizer group")
        for f in self.corrections:
            if weight(f) > self.d:
                raise CodeError(f"correction {f} has weight above d={self.d}")

    @property
    def measured(self) -> tuple[PauliOp, ...]:
        return self.generators + self.extra_measured

    @cached_property
    def stabilizer_group(self) -> tuple[PauliOp, ...]:
        """All ``2**(n-k)`` products of generator subsets, identity first."""
        elems = [identity(self.n)]
        for g in self.generators:
            elems = elems + [pauli_mul(e, g) for e in elems]
        return tuple(elems)

    @cached_property
    def projector(self) -> np.ndarray:
        return codespace_projector(self)

    def syndrome(self, error: PauliOp) -> tuple[int, ...]:
        return tuple(1 if commutes(error, g) else -1 for g in self.generators)


def codespace_projector(code: StabilizerCode) -> np.ndarray:
    """``2**-(n-k) * prod_l (I + M_l)``."""
    dim = 1 << code.n
    proj = np.eye(dim, dtype=complex)
    for g in code.generators:
        proj = proj @ (np.eye(dim) + to_dense(g)) / 2
    return proj


def bitflip_code() -> StabilizerCode:
    P = parse_pauli
    zero = np.zeros(8, dtype=complex)
    one = np.zeros(8, dtype=complex)
    zero[0] = one[7] = 1.0
    return StabilizerCode(
        n=3, k=1, d=3,
        generators=(P("ZZI"), P("IZZ")),
        extra_measured=(P("ZIZ"),),
        corrections=(P("XII"), P("IXI"), P("IIX")),
        logicals=(P("XXX"), P("ZZZ")),
        name="bitflip",
        codewords=(zero, one),
    )


def spin_up_code() -> StabilizerCode:
    """One-qubit "code" whose codespace is ``|0>``; protects against X flips."""
    return StabilizerCode(
        n=1, k=0, d=1,
        generators=(parse_pauli("Z"),),
        corrections=(parse_pauli("X"),),
        logicals=(parse_pauli("X"),),
        name="spin_up",
        codewords=(np.array([1.0, 0.0], dtype=complex),),
    )


def five_qubit_code() -> StabilizerCode:
    P = parse_pauli
    gens = tuple(P(s) for s in ("XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"))
    corr = tuple(
        P("I" * q + letter + "I" * (4 - q)) for q in range(5) for letter in "XYZ"
    )
    return StabilizerCode(
        n=5, k=1, d=3, generators=gens, corrections=corr,
        logicals=(P("XXXXX"), P("ZZZZZ")), name="five_qubit",
    )


def code_from_dict(doc: dict) -> StabilizerCode:
    """Build a code from a mapping with Pauli-string lists.

    Keys: ``n``, ``k``, ``d``, ``generators``, and optionally
    ``extra_measured``, ``corrections``, ``logicals``, ``name``.
    """
    try:
        plist = lambda key: tuple(parse_pauli(s) for s in doc.get(key) or ())  # noqa: E731
        return StabilizerCode(
            n=int(doc["n"]), k=int(doc["k"]), d=int(doc["d"]),
            generators=plist("generators"),
            extra_measured=plist("extra_measured"),
            corrections=plist("corrections"),
            logicals=plist("logicals"),
            name=str(doc.get("name", "code")),
        )
    except KeyError as exc:
        raise CodeError(f"code definition is missing key {exc}") from None


def load_code(source) -> StabilizerCode:
    """Load a code by builtin name (``bitflip``, ``spin_up``, ``five_qubit``) or from a YAML/JSON file."""
    builtin = {"bitflip": bitflip_code, "spin_up": spin_up_code, "five_qubit": five_qubit_code}
    if isinstance(source, dict):
        return code_from_dict(source)
    if str(source) in builtin:
        return builtin[str(source)]()
    path = Path(source)
    text = path.read_text()
    doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return code_from_dict(doc)


def encode_bitflip(amp0: complex, amp1: complex) -> DensityMatrix:
    norm = abs(amp0) ** 2 + abs(amp1) ** 2
    if abs(norm - 1) > 1e-12:
        raise ValueError(f"amplitudes are not normalized (|a|^2+|b|^2 = {norm})")
    psi = np.zeros(8, dtype=complex)
    psi[0], psi[7] = amp0, amp1
    return pure_state(psi)


def correctable_projector(rho0, corrections=None, code: StabilizerCode | None = None) -> np.ndarray:
    """``rho0 + sum_r F_r rho0 F_r``: states discrete QEC maps back to the codeword.

    Defaults to the bit-flip code's single-flip corrections.
    """
    code = code or bitflip_code()
    corrections = code.corrections if corrections is None else corrections
    r0 = as_matrix(rho0)
    if abs(np.trace(r0 @ code.projector).real - 1) > 1e-9:
        raise ValueError("rho0 is not a codeword")
    if abs(np.trace(r0 @ r0).real - 1) > 1e-9:
        raise ValueError("rho0 must be a pure codeword")
    out = r0.copy()
    for f in corrections:
        fm = to_dense(f)
        out = out + fm @ r0 @ fm.conj().T
    return out


def discrete_qec(code: StabilizerCode, rho) -> DensityMatrix:
    """One round of projective syndrome measurement plus recovery, averaged over syndromes."""
    r = as_matrix(rho)
    dim = r.shape[0]
    eye = np.eye(dim)
    recovery = {code.syndrome(f): to_dense(f) for f in code.corrections}
    out = np.zeros_like(r)
    for signs in itertools.product((1, -1), repeat=len(code.generators)):
        proj = eye.astype(complex)
        for s, g in zip(signs, code.generators):
            proj = proj @ (eye + s * to_dense(g)) / 2
        branch = proj @ r @ proj
        u = recovery.get(signs, eye)
        out = out + u @ branch @ u.conj().T
    return DensityMatrix(out)


def _all_phaseless(n: int):
    for bits in itertools.product(range(4), repeat=n):
        x = tuple(b & 1 for b in bits)
        z = tuple(b >> 1 for b in bits)
        yield PauliOp(x, z)


def build_G(code: StabilizerCode, cap: int = G_ENUMERATION_CAP) -> frozenset[PauliOp]:
    """Phaseless ``alpha*s`` with ``s`` in S(C) and ``[s, alpha] = 0`` exactly when ``|alpha|`` is even."""
    if code.n > cap:
        raise CodeError(f"refusing to enumerate 4**{code.n} Paulis (cap n <= {cap})")
    out = set()
    for alpha in _all_phaseless(code.n):
        even = weight(alpha) % 2 == 0
        for s in code.stabilizer_group:
            if commutes(s, alpha) == even:
                out.add(pauli_mul(alpha, s).phaseless())
    return frozenset(out)


def check_theorem_hypothesis(code: StabilizerCode) -> bool:
    """Even-weight stabilizer, odd-weight encoded operations (checked on logicals times S)."""
    group = code.stabilizer_group
    if any(weight(s) % 2 for s in group):
        return False
    return all(weight(pauli_mul(lg, s)) % 2 == 1 for lg in code.logicals for s in group)
