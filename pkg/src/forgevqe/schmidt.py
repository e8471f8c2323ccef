"""Schmidt decompositions of statevectors across a qubit bipartition.

The amplitude matrix has rows indexed by the local configuration of block
``a`` and columns by that of block ``b``; local bit ``k`` of a block is its
``k``-th qubit in ascending global order.  Only configurations that occur in
the state's support are kept, so large registers with small sectors stay
cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import SectorBasis

NORM_TOL = 1e-8
DEGENERACY_RTOL = 1e-6


@dataclass(frozen=True)
class Bipartition:
    a: tuple
    b: tuple

    def __init__(self, a: Sequence[int], b: Sequence[int]):
        a = tuple(sorted(int(q) for q in a))
        b = tuple(sorted(int(q) for q in b))
        if set(a) & set(b):
            raise ValueError("bipartition blocks overlap")
        if sorted(a + b) != list(range(len(a) + len(b))):
            raise ValueError("bipartition blocks must cover qubits 0..n-1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def halves(cls, n: int) -> "Bipartition":
        return cls(range(n // 2), range(n // 2, n))

    @property
    def n_qubits(self) -> int:
        return len(self.a) + len(self.b)


def local_config(idx: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape, dtype=np.int64)
    for k, q in enumerate(qubits):
        out |= ((idx >> q) & 1) << k
    return out


@dataclass
class SchmidtDecomposition:
    """Singular values with their factor vectors.

    ``left[:, i]`` is the amplitude of Schmidt vector ``i`` on the local
    configurations ``a_configs``; likewise ``right`` over ``b_configs``.
    ``labels[i]`` is the symmetry label of block ``a`` when the
    decomposition was resolved by sector, else ``None``.
    """

    values: np.ndarray
    left: np.ndarray
    right: np.ndarray
    a_configs: np.ndarray
    b_configs: np.ndarray
    cut: Bipartition
    labels: list = field(default_factory=list)

    @property
    def rank(self) -> int:
        return int(np.sum(self.values > 1e-12))

    def left_vector(self, i: int) -> np.ndarray:
        out = np.zeros(1 << len(self.cut.a), dtype=complex)
        out[self.a_configs] = self.left[:, i]
        return out

    def right_vector(self, i: int) -> np.ndarray:
        out = np.zeros(1 << len(self.cut.b), dtype=complex)
        out[self.b_configs] = self.right[:, i]
        return out

    def reconstruct(self, n_terms: int | None = None) -> np.ndarray:
        """Full-register state from the leading ``n_terms`` products."""
        k = self.values.size if n_terms is None else n_terms
        mat = (self.left[:, :k] * self.values[:k]) @ self.right[:, :k].T
        ga = _scatter(self.a_configs, self.cut.a)
        gb = _scatter(self.b_configs, self.cut.b)
        out = np.zeros(1 << self.cut.n_qubits, dtype=complex)
        out[(ga[:, None] | gb[None, :]).ravel()] = mat.ravel()
        return out


def _scatter(local: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    out = np.zeros(local.shape, dtype=np.int64)
    for k, q in enumerate(qubits):
        out |= ((local >> k) & 1) << q
    return out


def decompose(
    state: np.ndarray,
    cut: Bipartition,
    basis: SectorBasis | None = None,
    sector_of: Callable[[np.ndarray], list] | None = None,
) -> SchmidtDecomposition:
    """Schmidt decomposition of a normalized state.

    ``sector_of`` maps block-``a`` local configurations to hashable labels of
    a conserved quantity.  When given, the amplitude matrix is split into
    blocks of equal label and each block is decomposed on its own, so every
    Schmidt vector carries a definite label.
    """
    psi = np.asarray(state, dtype=complex)
    if basis is None:
        idx = np.arange(psi.size, dtype=np.int64)
        if psi.size != 1 << cut.n_qubits:
            raise ValueError(f"state length {psi.size} does not match a {cut.n_qubits}-qubit cut")
    else:
        idx = basis.indices
        if basis.n_modes != cut.n_qubits or psi.size != basis.dim:
            raise ValueError("state, basis and cut sizes disagree")
    nrm = float(np.linalg.norm(psi))
    if abs(nrm - 1.0) > NORM_TOL:
        raise ValueError(f"decompose needs a normalized state (norm {nrm:.3e})")
    keep = np.abs(psi) > 0
    idx, amp = idx[keep], psi[keep]
    la, lb = local_config(idx, cut.a), local_config(idx, cut.b)
    a_cfg, ra = np.unique(la, return_inverse=True)
    b_cfg, rb = np.unique(lb, return_inverse=True)
    mat = np.zeros((a_cfg.size, b_cfg.size), dtype=complex)
    mat[ra, rb] = amp

    if sector_of is None:
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        return SchmidtDecomposition(s, u, vh.T, a_cfg, b_cfg, cut, [None] * s.size)

    labels = list(sector_of(a_cfg))
    keys = list(dict.fromkeys(labels))
    vals, lefts, rights, labs = [], [], [], []
    for key in keys:
        rows = np.array([i for i, lab in enumerate(labels) if lab == key])
        cols = np.nonzero(np.any(mat[rows] != 0, axis=0))[0]
        if cols.size == 0:
            continue
        u, s, vh = np.linalg.svd(mat[np.ix_(rows, cols)], full_matrices=False)
        for k in range(s.size):
            lv = np.zeros(a_cfg.size, dtype=complex)
            rv = np.zeros(b_cfg.size, dtype=complex)
            lv[rows] = u[:, k]
            rv[cols] = vh[k]
            vals.append(s[k])
            lefts.append(lv)
            rights.append(rv)
            labs.append(key)
    order = sorted(range(len(vals)), key=lambda i: -vals[i])
    return SchmidtDecomposition(
        np.array([vals[i] for i in order]),
        np.array([lefts[i] for i in order]).T,
        np.array([rights[i] for i in order]).T,
        a_cfg, b_cfg, cut, [labs[i] for i in order],
    )


def entropy(sd: SchmidtDecomposition) -> float:
    """Von Neumann entropy in bits."""
    p = sd.values ** 2
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def max_entropy(cut: Bipartition) -> float:
    """Largest entropy (bits) the cut admits."""
    return float(min(len(cut.a), len(cut.b)))


def truncation_infidelity(sd: SchmidtDecomposition, n: int) -> float:
    if n < 1:
        raise ValueError("truncation needs n >= 1")
    return float(max(0.0, 1.0 - np.sum(sd.values[:n] ** 2)))


def degenerate_groups(values: Sequence[float], rtol: float = DEGENERACY_RTOL, floor: float = 1e-12) -> list[list[int]]:
    """Cluster consecutive (descending) values whose relative gap is below ``rtol``."""
    groups: list[list[int]] = []
    for i, v in enumerate(values):
        if v <= floor:
            break
        if groups and abs(values[groups[-1][-1]] - v) <= rtol * max(abs(v), floor):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups
