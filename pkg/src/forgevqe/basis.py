"""Sorted sets of Slater determinants used as working bases.

A determinant is an occupation bitmask: mode ``i`` is occupied iff bit ``i``
is set (little-endian, mode i <-> qubit i).  Every vector in the package is
either a full ``2**n`` register or a compressed vector over one of these
bases, in which case entry ``k`` is the amplitude of ``basis.indices[k]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def popcount(idx: np.ndarray) -> np.ndarray:
    return np.bitwise_count(np.asarray(idx, dtype=np.int64)).astype(np.int64)


def occupied(mask: int) -> list[int]:
    out, i = [], 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def bitmask(modes: Sequence[int]) -> int:
    m = 0
    for i in modes:
        m |= 1 << int(i)
    return m


@dataclass(eq=False)
class SectorBasis:
    """Ordered determinant list for a fixed-symmetry sector.

    ``groups`` holds ``(modes, count)`` particle-number constraints and
    ``weight`` an optional ``(per-mode integer weights, total)`` constraint,
    e.g. ``2m`` values and ``2M``.  Instances are compared by identity and
    carry a private cache for operator tables built on them.
    """

    n_modes: int
    indices: np.ndarray
    groups: tuple = ()
    weight: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1:
            raise ValueError("basis indices must be one-dimensional")
        if self.indices.size > 1 and np.any(np.diff(self.indices) <= 0):
            raise ValueError("basis indices must be strictly increasing")

    @classmethod
    def full(cls, n_modes: int) -> "SectorBasis":
        return cls(n_modes, np.arange(1 << n_modes, dtype=np.int64))

    @classmethod
    def from_constraints(
        cls,
        n_modes: int,
        groups: Sequence[tuple[Sequence[int], int]],
        weight: tuple[Sequence[int], int] | None = None,
    ) -> "SectorBasis":
        """Enumerate every determinant satisfying all constraints.

        The mode groups must partition ``range(n_modes)``.
        """
        seen = sorted(m for modes, _ in groups for m in modes)
        if seen != list(range(n_modes)):
            raise ValueError("constraint groups must partition the modes exactly once")
        w = None if weight is None else np.asarray(weight[0], dtype=np.int64)
        masks = np.zeros(1, dtype=np.int64)
        weights = np.zeros(1, dtype=np.int64)
        for modes, count in groups:
            modes = [int(m) for m in modes]
            if not 0 <= count <= len(modes):
                raise ValueError(f"cannot place {count} particles in {len(modes)} modes")
            combos = list(itertools.combinations(modes, count))
            gm = np.array([bitmask(c) for c in combos], dtype=np.int64)
            gw = np.array([int(w[list(c)].sum()) if w is not None else 0 for c in combos],
                          dtype=np.int64)
            masks = (masks[:, None] | gm[None, :]).ravel()
            weights = (weights[:, None] + gw[None, :]).ravel()
        if weight is not None:
            masks = masks[weights == int(weight[1])]
        if masks.size == 0:
            raise ValueError("empty sector: no determinant satisfies the constraints")
        groups = tuple((tuple(int(m) for m in modes), int(c)) for modes, c in groups)
        wt = None if weight is None else (tuple(int(x) for x in weight[0]), int(weight[1]))
        return cls(n_modes, np.sort(masks), groups, wt)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def dim(self) -> int:
        return len(self)

    def contains(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        pos = np.searchsorted(self.indices, idx)
        pos = np.minimum(pos, self.indices.size - 1)
        return self.indices[pos] == idx

    def position(self, idx) -> np.ndarray:
        """Positions of the given determinants; raises if any is missing."""
        idx = np.asarray(idx, dtype=np.int64)
        pos = np.searchsorted(self.indices, idx)
        ok = pos < self.indices.size
        ok[ok] = self.indices[pos[ok]] == idx[ok]
        if not np.all(ok):
            raise KeyError("determinant outside the basis")
        return pos

    def embed(self, vec: np.ndarray) -> np.ndarray:
        """Scatter a compressed vector into the full ``2**n`` register."""
        out = np.zeros(1 << self.n_modes, dtype=complex)
        out[self.indices] = vec
        return out

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full, dtype=complex)[self.indices]

    def is_full(self) -> bool:
        return self.indices.size == 1 << self.n_modes
