"""Brute-force Kronecker-product Jordan-Wigner operators for cross-checks.

Independent of the package's bitmask machinery: everything is built from
2x2 Pauli matrices, so agreement with it is a meaningful check.
"""
from __future__ import annotations

from functools import reduce

import numpy as np

_I = np.eye(2)
_Z = np.diag([1.0, -1.0])
# lowers |1> (occupied) to |0>
_LOWER = np.array([[0.0, 1.0], [0.0, 0.0]])


def annihilator(mode: int, n_modes: int) -> np.ndarray:
    """a_mode on a little-endian register (mode i <-> bit i)."""
    # kron order: most significant qubit first
    factors = []
    for q in reversed(range(n_modes)):
        if q == mode:
            factors.append(_LOWER)
        elif q < mode:
            factors.append(_Z)
        else:
            factors.append(_I)
    return reduce(np.kron, factors)


def operators(n_modes: int) -> list[np.ndarray]:
    return [annihilator(i, n_modes) for i in range(n_modes)]


def fh_matrix(n_sites: int, t: float, t_m: float, u: float) -> np.ndarray:
    n = 2 * n_sites
    a = operators(n)
    h = np.zeros((2**n, 2**n))
    mid = n_sites // 2 - 1  # 0-based left site of the central bond
    for i in range(n_sites - 1):
        hop = t_m if i == mid else t
        for s in range(2):
            p, q = 2 * i + s, 2 * (i + 1) + s
            h -= hop * (a[p].T @ a[q] + a[q].T @ a[p])
    for i in range(n_sites):
        h += u * (a[2 * i].T @ a[2 * i]) @ (a[2 * i + 1].T @ a[2 * i + 1])
    return h


def one_body_generator(r: int, s: int, n_modes: int) -> np.ndarray:
    a = operators(n_modes)
    return 1j * (a[r].T @ a[s] - a[s].T @ a[r])


def two_body_generator(p: int, q: int, r: int, s: int, n_modes: int) -> np.ndarray:
    a = operators(n_modes)
    g = a[p].T @ a[q].T @ a[r] @ a[s]
    return 1j * (g - g.conj().T)


def shell_matrix(n_modes, spe, tbme) -> np.ndarray:
    """sum eps n_i + 1/4 sum vbar_ijkl a+_i a+_j a_l a_k over a full tensor."""
    a = operators(n_modes)
    h = np.zeros((2**n_modes, 2**n_modes))
    for i, e in enumerate(spe):
        h += e * a[i].T @ a[i]
    for (i, j, k, l), v in tbme.items():
        h += 0.25 * v * a[i].T @ a[j].T @ a[l] @ a[k]
    return h


def sector_mask(n_modes: int, groups: list[tuple[list[int], int]]) -> np.ndarray:
    idx = np.arange(2**n_modes)
    keep = np.ones(idx.size, dtype=bool)
    for modes, count in groups:
        occ = sum(((idx >> m) & 1) for m in modes)
        keep &= occ == count
    return keep


def ground(h: np.ndarray, mask: np.ndarray) -> tuple[float, np.ndarray]:
    sub = h[np.ix_(mask, mask)]
    w, v = np.linalg.eigh(sub)
    psi = np.zeros(h.shape[0], dtype=complex)
    psi[mask] = v[:, 0]
    return float(w[0]), psi
