"""CNOT cost model for Jordan-Wigner excitation exponentials.

A generator ``T`` is expanded exactly into Pauli strings and every string of
weight ``w`` is charged a ``2(w - 1)`` CNOT staircase.  Disjoint one-body
generators give 2 strings and disjoint two-body generators 8; generators with
a shared index collapse to fewer strings.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .statevector import ExcitationGenerator

CONVENTION = "jw-staircase"


def _ladder_paulis(mode: int, dagger: bool) -> list[tuple[int, int, complex]]:
    """``a`` or ``a^+`` as ``coef * X^x Z^z`` with per-qubit order X then Z."""
    below = (1 << mode) - 1
    x = 1 << mode
    sign = 1.0 if dagger else -1.0
    return [(x, below, 0.5), (x, below | x, sign * 0.5)]


def _multiply(a, b):
    x1, z1, c1 = a
    x2, z2, c2 = b
    # moving Z^z1 past X^x2 picks up (-1) per shared qubit
    phase = -1.0 if bin(z1 & x2).count("1") % 2 else 1.0
    return x1 ^ x2, z1 ^ z2, c1 * c2 * phase


@lru_cache(maxsize=None)
def pauli_strings(indices: tuple) -> tuple:
    """``((x, z, coef), ...)`` with ``T = sum coef * X^x Z^z`` for ``T = i(G - G^+)``."""
    gen = ExcitationGenerator(indices)
    terms = {(0, 0): 1.0 + 0j}
    for mode, dagger in gen.ops():
        nxt: dict = {}
        for (x, z), c in terms.items():
            for p in _ladder_paulis(mode, dagger):
                x2, z2, c2 = _multiply((x, z, c), p)
                nxt[(x2, z2)] = nxt.get((x2, z2), 0) + c2
        terms = nxt
    out = []
    for (x, z), c in sorted(terms.items()):
        # X^x Z^z is Hermitian up to the factor (-i)^{|x & z|}; fold it in first
        k = bin(x & z).count("1")
        herm = c * (-1j) ** k  # XZ = -iY
        coef = -2.0 * herm.imag  # i (c - conj c)
        if abs(coef) > 1e-12:
            out.append((x, z, coef))
    return tuple(out)


def string_weight(x: int, z: int) -> int:
    return bin(x | z).count("1")


@lru_cache(maxsize=None)
def _cost(indices: tuple) -> int:
    return sum(2 * (string_weight(x, z) - 1) for x, z, _ in pauli_strings(indices))


def generator_cnots(gen: ExcitationGenerator) -> int:
    return _cost(gen.indices)


def circuit_cnots(circuit) -> int:
    return sum(generator_cnots(g) for g in circuit.operators)


def max_circuit_cnots(state) -> int:
    """Largest count over the simulated circuits of a plain or forged state."""
    circuits = getattr(state, "circuits", None)
    if circuits is None:
        return circuit_cnots(state)
    return max((circuit_cnots(c) for c in circuits.values()), default=0)


def pauli_matrix(x: int, z: int, n: int) -> np.ndarray:
    """Dense little-endian matrix of the Hermitian string for ``(x, z)``; test helper."""
    mats = []
    for q in reversed(range(n)):
        xb, zb = (x >> q) & 1, (z >> q) & 1
        if xb and zb:
            mats.append(np.array([[0, -1j], [1j, 0]]))
        elif xb:
            mats.append(np.array([[0, 1], [1, 0]], dtype=complex))
        elif zb:
            mats.append(np.diag([1, -1]).astype(complex))
        else:
            mats.append(np.eye(2, dtype=complex))
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out
