"""Exact ground states by diagonalization inside a symmetry sector."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .basis import SectorBasis
from .fermion import Hamiltonian, Model, ModeTable, Sector, sector_groups

DENSE_LIMIT = 4000
RESIDUAL_TOL = 1e-9
DEGENERACY_TOL = 1e-9


class EigensolverError(RuntimeError):
    pass


def sector_basis(table: ModeTable, sector: Sector) -> SectorBasis:
    groups, weight = sector_groups(table, sector)
    return SectorBasis.from_constraints(table.n_modes, groups, weight)


@dataclass
class GroundState:
    """Lowest eigenpair in compressed sector coordinates.

    ``eigenspace`` holds an orthonormal basis (columns) of every eigenvector
    within ``DEGENERACY_TOL`` of the ground energy.
    """

    energy: float
    vector: np.ndarray
    basis: SectorBasis
    residual: float
    eigenspace: np.ndarray
    n_iter: int = 0

    @property
    def degenerate(self) -> bool:
        return self.eigenspace.shape[1] > 1

    def embed(self) -> np.ndarray:
        return self.basis.embed(self.vector)

    def fidelity(self, psi: np.ndarray) -> float:
        """Weight of ``psi`` (compressed, normalized) on the ground eigenspace."""
        amp = self.eigenspace.conj().T @ psi
        return float(np.vdot(amp, amp).real / np.vdot(psi, psi).real)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def ground_state(H: Hamiltonian, basis: SectorBasis, n_eig: int = 6, maxiter: int | None = None) -> GroundState:
    mat = H.matrix(basis)
    dim = basis.dim
    n_iter = 0
    if dim <= DENSE_LIMIT:
        w, v = np.linalg.eigh(mat.toarray())
    else:
        k = min(n_eig, dim - 2)
        v0 = np.ones(dim) / np.sqrt(dim) + 1e-3 * np.cos(np.arange(dim))
        budget = maxiter or 20 * dim
        try:
            w, v = spla.eigsh(mat, k=k, which="SA", v0=v0, tol=1e-13, maxiter=budget)
        except spla.ArpackNoConvergence as exc:
            raise EigensolverError(f"Lanczos did not converge within {budget} iterations") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        n_iter = budget
    e0 = float(w[0])
    near = np.nonzero(w - e0 < DEGENERACY_TOL)[0]
    if near.size == w.size and w.size < dim:
        raise EigensolverError("ground multiplet exceeds the number of computed eigenpairs")
    space = v[:, near].astype(complex)
    psi = _fix_sign(v[:, 0].astype(complex))
    psi /= np.linalg.norm(psi)
    res = float(np.linalg.norm(mat @ psi - e0 * psi))
    if res > RESIDUAL_TOL:
        raise EigensolverError(f"ground-state residual {res:.2e} exceeds {RESIDUAL_TOL:.0e}")
    return GroundState(e0, psi, basis, res, space, n_iter)


def solve(model: Model) -> GroundState:
    return ground_state(model.hamiltonian, model.basis())
