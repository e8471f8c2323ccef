"""Statevectors, excitation exponentials and mode permutations.

A statevector is a plain complex ``numpy`` array.  On the full register it
has length ``2**n`` and entry ``k`` is the amplitude of the determinant with
bitmask ``k`` (mode i <-> bit i).  Every kernel also accepts a
:class:`~forgevqe.basis.SectorBasis`, in which case the array is the
compressed vector over that basis.

Ladder operators follow the Jordan-Wigner rule
``a_i |D> = (-1)^{#occupied modes below i} |D - i>``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .basis import SectorBasis, bitmask, popcount

NORM_TOL = 1e-12


def _as_state(state) -> np.ndarray:
    return np.asarray(state, dtype=complex)


def _basis_for(state: np.ndarray, basis: SectorBasis | None) -> SectorBasis:
    if basis is not None:
        if state.shape != (basis.dim,):
            raise ValueError(f"state length {state.shape} does not match basis dimension {basis.dim}")
        return basis
    n = state.size.bit_length() - 1
    if state.ndim != 1 or state.size != 1 << n:
        raise ValueError("a full-register state must have length 2**n")
    return _full_basis(n)


_FULL: dict[int, SectorBasis] = {}


def _full_basis(n: int) -> SectorBasis:
    if n not in _FULL:
        _FULL[n] = SectorBasis.full(n)
    return _FULL[n]


def n_qubits(state) -> int:
    size = np.asarray(state).size
    n = size.bit_length() - 1
    if size != 1 << n:
        raise ValueError("a full-register state must have length 2**n")
    return n


def ladder(idx: np.ndarray, ops: Sequence[tuple[int, bool]]):
    """Apply a product of ladder operators to many determinants at once.

    ``ops`` lists ``(mode, is_creation)`` from left to right as written; the
    rightmost acts first.  Returns ``(new_idx, sign, alive)``.
    """
    cur = np.array(idx, dtype=np.int64, copy=True)
    sign = np.ones(cur.size, dtype=np.int64)
    alive = np.ones(cur.size, dtype=bool)
    for mode, dagger in reversed(ops):
        bit = np.int64(1) << np.int64(mode)
        occ = (cur & bit) != 0
        alive &= ~occ if dagger else occ
        below = popcount(cur & (bit - 1))
        sign *= 1 - 2 * (below & 1)
        cur ^= bit
    return cur, sign, alive


@dataclass(frozen=True)
class ExcitationGenerator:
    """Hermitian hopping generator ``T = i (G - G^dagger)``.

    ``indices`` is ``(r, s)`` for ``G = a_r^+ a_s`` or ``(p, q, r, s)`` for
    ``G = a_p^+ a_q^+ a_r a_s``.  The ansatz factor is ``exp(i theta T)``.
    """

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if any(i < 0 for i in idx):
            raise ValueError(f"negative mode index in generator {idx}")
        if len(idx) == 2:
            if idx[0] == idx[1]:
                raise ValueError(f"one-body generator {idx} is a number operator")
        elif len(idx) == 4:
            p, q, r, s = idx
            if p == q:
                raise ValueError(f"repeated creation index in generator {idx}")
            if r == s:
                raise ValueError(f"repeated annihilation index in generator {idx}")
            if {p, q} == {r, s}:
                raise ValueError(f"generator {idx} is diagonal")
        else:
            raise ValueError(f"generator needs 2 or 4 indices, got {idx}")

    @property
    def kind(self) -> str:
        return "one-body" if len(self.indices) == 2 else "two-body"

    @property
    def modes(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.indices)))

    @property
    def label(self) -> str:
        return "-".join(str(i) for i in self.indices)

    @classmethod
    def parse(cls, label: str) -> "ExcitationGenerator":
        return cls(tuple(int(x) for x in label.split("-")))

    def ops(self) -> list[tuple[int, bool]]:
        n = len(self.indices) // 2
        return [(m, k < n) for k, m in enumerate(self.indices)]

    def shifted(self, offset: int) -> "ExcitationGenerator":
        return ExcitationGenerator(tuple(i + offset for i in self.indices))

    def relabeled(self, mapping) -> "ExcitationGenerator":
        return ExcitationGenerator(tuple(int(mapping[i]) for i in self.indices))


def pair_table(basis: SectorBasis, gen: ExcitationGenerator):
    """Source positions, target positions and signs with ``G|src> = sign |tgt>``.

    Cached on the basis.  Raises if ``G`` leaves the basis.
    """
    key = ("pairs", gen.indices)
    hit = basis._cache.get(key)
    if hit is not None:
        return hit
    if max(gen.indices) >= basis.n_modes:
        raise ValueError(f"generator {gen.label} acts outside a {basis.n_modes}-mode register")
    new, sign, alive = ladder(basis.indices, gen.ops())
    src = np.nonzero(alive)[0]
    try:
        tgt = basis.position(new[alive])
    except KeyError:
        raise ValueError(f"generator {gen.label} does not preserve the basis") from None
    out = (src, tgt, sign[alive].astype(float))
    basis._cache[key] = out
    return out


def apply_excitation(state, gen: ExcitationGenerator, theta: float,
                     basis: SectorBasis | None = None) -> np.ndarray:
    """Return ``exp(i theta T) |state>`` as a new array."""
    psi = _as_state(state)
    b = _basis_for(psi, basis)
    src, tgt, sg = pair_table(b, gen)
    c, s = np.cos(theta), np.sin(theta)
    out = psi.copy()
    a, d = psi[src], psi[tgt]
    out[src] = c * a + sg * s * d
    out[tgt] = c * d - sg * s * a
    return out


def apply_generator_k(state, gen: ExcitationGenerator,
                      basis: SectorBasis | None = None) -> np.ndarray:
    """``K |state>`` with ``K = iT = G^dagger - G`` (the derivative of the rotation)."""
    psi = _as_state(state)
    b = _basis_for(psi, basis)
    src, tgt, sg = pair_table(b, gen)
    out = np.zeros_like(psi)
    out[src] = sg * psi[tgt]
    out[tgt] = -sg * psi[src]
    return out


def k_overlap(w, psi, gen: ExcitationGenerator, basis: SectorBasis) -> float:
    """``Re <w|K|psi>`` without forming ``K psi``."""
    src, tgt, sg = pair_table(basis, gen)
    val = np.sum(sg * (np.conj(w[src]) * psi[tgt] - np.conj(w[tgt]) * psi[src]))
    return float(val.real)


def from_slater(occupied: Iterable[int], n_qubits: int) -> np.ndarray:
    occ = [int(i) for i in occupied]
    if len(set(occ)) != len(occ):
        raise ValueError(f"duplicate mode in determinant {occ}")
    if any(i < 0 or i >= n_qubits for i in occ):
        raise ValueError(f"mode index out of range for {n_qubits} qubits: {occ}")
    psi = np.zeros(1 << n_qubits, dtype=complex)
    psi[bitmask(occ)] = 1.0
    return psi


def inner(a, b) -> complex:
    a, b = _as_state(a), _as_state(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def norm(state) -> float:
    return float(np.linalg.norm(state))


def particle_number(state, basis: SectorBasis | None = None, tol: float = 1e-14) -> int:
    """Hamming weight of the state's support; raises if it is mixed."""
    psi = _as_state(state)
    b = _basis_for(psi, basis)
    counts = np.unique(popcount(b.indices[np.abs(psi) > tol]))
    if counts.size == 0:
        raise ValueError("zero state has no particle number")
    if counts.size > 1:
        raise ValueError(f"state mixes particle numbers {counts.tolist()}")
    return int(counts[0])


def tensor_embed(factors: Sequence[tuple[np.ndarray, Sequence[int]]]) -> np.ndarray:
    """Product state over disjoint qubit blocks.

    Each factor is a full register over its block; local qubit ``k`` of a
    factor is global qubit ``block[k]``.  Factors must have definite particle
    number.  The product is ``(creators of factor 0)(creators of factor 1)...|0>``
    reordered to canonical ascending order, so contiguous blocks listed in
    ascending order carry no sign.
    """
    blocks = [tuple(int(q) for q in blk) for _, blk in factors]
    flat = [q for blk in blocks for q in blk]
    if len(set(flat)) != len(flat):
        raise ValueError("tensor_embed blocks overlap")
    n = len(flat)
    if sorted(flat) != list(range(n)):
        raise ValueError("tensor_embed blocks must cover qubits 0..n-1")
    idx = np.zeros(1, dtype=np.int64)
    amp = np.ones(1, dtype=complex)
    for (vec, _), blk in zip(factors, blocks):
        vec = _as_state(vec)
        if vec.size != 1 << len(blk):
            raise ValueError(f"factor of length {vec.size} does not fit block of {len(blk)} qubits")
        particle_number(vec)
        nz = np.nonzero(vec)[0]
        glob = np.zeros(nz.size, dtype=np.int64)
        crossings = np.zeros((idx.size, nz.size), dtype=np.int64)
        for k, q in enumerate(blk):
            bit = ((nz >> k) & 1).astype(np.int64)
            glob |= bit << q
            # earlier factors' creators sitting above q must be passed
            above = popcount(idx >> (q + 1))
            crossings += above[:, None] * bit[None, :]
        sign = 1 - 2 * (crossings & 1)
        idx = (idx[:, None] | glob[None, :]).ravel()
        amp = (amp[:, None] * vec[nz][None, :] * sign).ravel()
    out = np.zeros(1 << n, dtype=complex)
    out[idx] = amp
    return out


@dataclass(frozen=True)
class ModePermutation:
    """Mode map ``a_i^+ -> phase[i] a_{target[i]}^+``."""

    target: tuple
    phase: tuple

    def __init__(self, target: Sequence[int], phase: Sequence[complex] | None = None):
        target = tuple(int(t) for t in target)
        if sorted(target) != list(range(len(target))):
            raise ValueError(f"mode permutation {target} is not a bijection")
        phase = tuple(complex(p) for p in (phase if phase is not None else [1.0] * len(target)))
        if len(phase) != len(target):
            raise ValueError("phase list length differs from target length")
        if any(abs(abs(p) - 1.0) > 1e-12 for p in phase):
            raise ValueError("mode phases must have unit modulus")
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "phase", phase)

    @property
    def n_modes(self) -> int:
        return len(self.target)

    @classmethod
    def identity(cls, n: int) -> "ModePermutation":
        return cls(range(n))

    def compose(self, other: "ModePermutation") -> "ModePermutation":
        """``self`` after ``other``."""
        tgt = [self.target[other.target[i]] for i in range(self.n_modes)]
        ph = [other.phase[i] * self.phase[other.target[i]] for i in range(self.n_modes)]
        return ModePermutation(tgt, ph)

    def act(self, idx: np.ndarray):
        """Image determinants and factors ``P|D> = factor |D'>`` for many ``D``."""
        idx = np.asarray(idx, dtype=np.int64)
        n = self.n_modes
        target = np.array(self.target, dtype=np.int64)
        phase = np.array(self.phase, dtype=complex)
        bits = ((idx[:, None] >> np.arange(n)) & 1).astype(bool)
        new = np.zeros(idx.size, dtype=np.int64)
        fac = np.ones(idx.size, dtype=complex)
        inversions = np.zeros(idx.size, dtype=np.int64)
        for i in range(n):
            occ = bits[:, i]
            new |= occ.astype(np.int64) << target[i]
            fac = np.where(occ, fac * phase[i], fac)
            for j in range(i + 1, n):
                if target[i] > target[j]:
                    inversions += occ & bits[:, j]
        fac *= 1 - 2 * (inversions & 1)
        return new, fac

    def table(self, basis: SectorBasis):
        """Positions and factors of ``P`` on a basis that it maps to itself."""
        key = ("perm", self.target, self.phase)
        hit = basis._cache.get(key)
        if hit is None:
            new, fac = self.act(basis.indices)
            try:
                pos = basis.position(new)
            except KeyError:
                raise ValueError("mode permutation does not map the basis to itself") from None
            hit = (pos, fac)
            basis._cache[key] = hit
        return hit


def permute_modes(state, perm: ModePermutation, basis: SectorBasis | None = None) -> np.ndarray:
    psi = _as_state(state)
    b = _basis_for(psi, basis)
    if perm.n_modes != b.n_modes:
        raise ValueError(f"permutation on {perm.n_modes} modes applied to {b.n_modes}-mode state")
    pos, fac = perm.table(b)
    out = np.zeros_like(psi)
    out[pos] = fac * psi
    return out
