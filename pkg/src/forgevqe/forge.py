"""Entropy-driven entanglement forging on top of the adaptive loop.

A forged state is a weighted sum of product terms over contiguous mode blocks
(``leaves``), each factor prepared by a small circuit on its own block:

    Psi = sum_t c_t  chi_{t,1} (x) chi_{t,2} (x) ...

Factors are either simulated (a circuit applied to one of its references) or
derived: the image of a simulated factor under a symmetry mode permutation.
Circuits holding several references apply the same unitary to each of them,
which keeps same-sector terms orthogonal.

Coefficients are ``c_t = lambda_g * prod(trig(alpha)) * sign_t`` with
``lambda_g`` fixed from the exact Schmidt spectrum (or one variational angle),
``alpha`` the second-layer mixing angles, and ``sign_t`` fixed once at
iteration 0 against the exact state.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .adapt import (
    AnsatzCircuit,
    LoopOptions,
    adaptive_loop,
    circuit_from_dict,
    circuit_to_dict,
    lowest_determinant,
    summary_row,
)
from .basis import SectorBasis
from .fermion import (
    Hamiltonian,
    Model,
    ModeTable,
    Sector,
    build_pool,
    determinant_charges,
    fh_mirror,
    fh_spin_flip,
    nsm_parity,
    sector_groups,
)
from .oracle import GroundState, solve
from .schmidt import Bipartition, decompose, degenerate_groups, truncation_infidelity
from .statevector import ExcitationGenerator, ModePermutation, k_overlap, permute_modes

NORM_TOL = 1e-6


class ForgingError(ValueError):
    pass


@dataclass
class Leaf:
    """One factor of a term.

    ``pos``/``fac`` map the circuit's local basis onto ``indices``:
    ``chi[i] = fac[i] * circuit_state[pos[i]]``.  Both are ``None`` for a
    simulated factor, whose indices are the circuit basis itself.
    """

    circuit: str
    reference: int
    indices: np.ndarray
    pos: np.ndarray | None = None
    fac: np.ndarray | None = None
    transform: str = ""


@dataclass
class Term:
    leaves: list
    group: str
    orbit: str
    trig: tuple = ()
    sign: float = 1.0
    source: int | None = None
    transform: str = ""
    structural: float = 1.0
    label: str = ""

    @property
    def derived(self) -> bool:
        return self.source is not None


@dataclass
class SecondLayerTerm:
    distribution: tuple
    b: float


def expand_second_layer(n_particles: int, block_sizes: tuple[int, int], kind: str,
                        alpha: float = 0.0, lam: float = 1.0) -> list[SecondLayerTerm]:
    """Two-term split of a factor over a bottom/top sub-block pair.

    ``kind='tilde'`` pairs the bottom-heavy filling with the top-heavy one;
    ``kind='degenerate'`` pairs it with one particle promoted to the top.
    Coefficients are ``b1 = sqrt(lam) cos(alpha)``, ``b2 = sqrt(lam) sin(alpha)``.
    """
    first, second = distributions(n_particles, block_sizes, kind)
    r = math.sqrt(lam)
    return [SecondLayerTerm(first, r * math.cos(alpha)), SecondLayerTerm(second, r * math.sin(alpha))]


def distributions(n_particles: int, block_sizes: tuple[int, int], kind: str):
    nb_size, nt_size = block_sizes
    if not 0 <= n_particles <= nb_size + nt_size:
        raise ForgingError(f"{n_particles} particles do not fit sub-blocks of size {block_sizes}")
    low = min(n_particles, nb_size)
    first = (low, n_particles - low)
    if kind == "tilde":
        high = min(n_particles, nt_size)
        second = (n_particles - high, high)
    elif kind == "degenerate":
        second = (first[0] - 1, first[1] + 1)
    else:
        raise ValueError(f"unknown expansion kind {kind!r}")
    if second[0] < 0 or second[1] > nt_size or second == first:
        raise ForgingError(f"no second distribution for {n_particles} particles in {block_sizes}")
    return first, second


def symmetry_transform(factor: np.ndarray, transform: ModePermutation,
                       basis: SectorBasis | None = None) -> np.ndarray:
    return permute_modes(factor, transform, basis)


class ForgedState:
    """Variational forged state; implements the adaptive-loop protocol."""

    def __init__(self, model: Model, blocks: Sequence[Sequence[int]], layers: int):
        self.model = model
        self.layers = layers
        self.blocks = [tuple(int(m) for m in b) for b in blocks]
        for b in self.blocks:
            if list(b) != list(range(b[0], b[0] + len(b))):
                raise ForgingError(f"leaf block {b} is not a contiguous run of modes")
        order = sorted(self.blocks)
        if order != self.blocks:
            raise ForgingError("leaf blocks must be listed in ascending mode order")
        self.basis = model.basis()
        self.circuits: dict[str, AnsatzCircuit] = {}
        self.terms: list[Term] = []
        self.lam: dict[str, float] = {}
        self.lam_mult: dict[str, int] = {}
        self.lam_mode = "fixed"
        self.beta = 0.0
        self.alphas: dict[str, float] = {}
        self.bound = None
        self.fixed_states: dict | None = None
        self.etas: dict = {}
        self._positions: list[np.ndarray] = []
        self._last_circuit: str | None = None

    # ------------------------------------------------------------ structure

    def add_circuit(self, circuit: AnsatzCircuit) -> None:
        if circuit.name in self.circuits:
            raise ForgingError(f"duplicate circuit name {circuit.name}")
        self.circuits[circuit.name] = circuit

    def simulated_leaf(self, name: str, ref: int) -> Leaf:
        return Leaf(name, ref, self.circuits[name].basis.indices)

    def add_term(self, term: Term) -> int:
        if len(term.leaves) != len(self.blocks):
            raise ForgingError("term needs one leaf per block")
        glob = np.zeros(1, dtype=np.int64)
        for leaf, blk in zip(term.leaves, self.blocks):
            glob = (glob[:, None] | (leaf.indices[None, :] << blk[0])).ravel()
        try:
            pos = self.basis.position(glob)
        except KeyError:
            raise ForgingError(f"term {term.label} leaves the target sector") from None
        self.terms.append(term)
        self._positions.append(pos)
        return len(self.terms) - 1

    def derive(self, source: int, perm: ModePermutation, name: str, label: str = "") -> Term | None:
        """Image of a simulated term under a global mode permutation.

        Returns ``None`` when the permutation does not map leaf blocks onto
        leaf blocks.
        """
        src = self.terms[source]
        leaves = [None] * len(self.blocks)
        for leaf, blk in zip(src.leaves, self.blocks):
            image = [perm.target[m] for m in blk]
            dest = [j for j, b in enumerate(self.blocks) if set(b) == set(image)]
            if len(dest) != 1:
                return None
            tb = self.blocks[dest[0]]
            local = ModePermutation([tb.index(t) for t in image], [perm.phase[m] for m in blk])
            circ = self.circuits[leaf.circuit]
            new, fac = local.act(circ.basis.indices)
            order = np.argsort(new)
            leaves[dest[0]] = Leaf(leaf.circuit, leaf.reference, new[order], order, fac[order], name)
        # sign of the global permutation beyond the per-leaf factors
        ref_glob, ref_loc = 0, 1.0 + 0j
        img_glob = 0
        for leaf, dleaf, blk in zip(src.leaves, leaves, self.blocks):
            circ = self.circuits[leaf.circuit]
            det = circ.references[leaf.reference]
            ref_glob |= det << blk[0]
        new_glob, f_glob = perm.act(np.array([ref_glob]))
        for j, dleaf in enumerate(leaves):
            circ = self.circuits[dleaf.circuit]
            rpos = circ._ref_pos[dleaf.reference]
            k = int(np.nonzero(dleaf.pos == rpos)[0][0])
            img_glob |= int(dleaf.indices[k]) << self.blocks[j][0]
            ref_loc *= dleaf.fac[k]
        if int(new_glob[0]) != img_glob:
            raise ForgingError("leaf maps disagree with the global permutation")
        s = f_glob[0] / ref_loc
        if abs(abs(s) - 1) > 1e-12:
            raise ForgingError("non-unimodular structural factor")
        return Term(leaves, src.group, src.orbit, src.trig, 1.0, source, name, complex(s).real, label)

    # ------------------------------------------------------------ parameters

    @property
    def tying_groups(self) -> dict:
        """Term labels per shared coefficient."""
        out: dict = {}
        for t in self.terms:
            out.setdefault(t.group, []).append(t.label)
        return out

    @property
    def circuit_names(self) -> list[str]:
        return list(self.circuits)

    @property
    def params(self) -> np.ndarray:
        parts = [c.params for c in self.circuits.values()]
        parts.append(np.array(list(self.alphas.values()), dtype=float))
        if self.lam_mode == "variational":
            parts.append(np.array([self.beta]))
        return np.concatenate(parts) if parts else np.zeros(0)

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        out, k = {}, 0
        for name, c in self.circuits.items():
            out[name] = x[k:k + c.n_params]
            k += c.n_params
        alphas = dict(zip(self.alphas, x[k:k + len(self.alphas)]))
        k += len(self.alphas)
        beta = x[k] if self.lam_mode == "variational" else self.beta
        return out, alphas, beta

    def set_params(self, x) -> None:
        thetas, alphas, beta = self._split(x)
        for name, c in self.circuits.items():
            c.params = np.array(thetas[name], dtype=float)
        self.alphas = {k: float(v) for k, v in alphas.items()}
        self.beta = float(beta)

    def lam_values(self, beta=None) -> dict:
        if self.lam_mode != "variational":
            return dict(self.lam)
        b = self.beta if beta is None else beta
        return {"lam0": math.cos(b), "lam1": math.sin(b) / math.sqrt(self.lam_mult["lam1"])}

    def coefficients(self, alphas=None, beta=None) -> np.ndarray:
        alphas = self.alphas if alphas is None else alphas
        lam = self.lam_values(beta)
        out = []
        for t in self.terms:
            c = lam[t.group] * t.sign
            for name, fn in t.trig:
                c *= math.cos(alphas[name]) if fn == "cos" else math.sin(alphas[name])
            out.append(c)
        return np.array(out)

    def _coef_derivs(self, alphas, beta):
        """d c_t / d alpha_a (dict of arrays) and d c_t / d beta."""
        lam = self.lam_values(beta)
        d_alpha = {a: np.zeros(len(self.terms)) for a in self.alphas}
        for i, t in enumerate(self.terms):
            for j, (name, fn) in enumerate(t.trig):
                val = lam[t.group] * t.sign
                for k, (n2, f2) in enumerate(t.trig):
                    a = alphas[n2]
                    if k == j:
                        val *= -math.sin(a) if f2 == "cos" else math.cos(a)
                    else:
                        val *= math.cos(a) if f2 == "cos" else math.sin(a)
                d_alpha[name][i] += val
        d_beta = np.zeros(len(self.terms))
        if self.lam_mode == "variational":
            m = math.sqrt(self.lam_mult["lam1"])
            dl = {"lam0": -math.sin(beta), "lam1": math.cos(beta) / m}
            for i, t in enumerate(self.terms):
                c = dl[t.group] * t.sign
                for name, fn in t.trig:
                    c *= math.cos(alphas[name]) if fn == "cos" else math.sin(alphas[name])
                d_beta[i] = c
        return d_alpha, d_beta

    # ------------------------------------------------------------ evaluation

    def _circuit_states(self, thetas=None):
        if self.fixed_states is not None:
            return {name: [np.asarray(v, dtype=complex) for v in vs]
                    for name, vs in self.fixed_states.items()}
        return {
            name: c.states(None if thetas is None else thetas[name])
            for name, c in self.circuits.items()
        }

    def _leaf_vector(self, leaf: Leaf, states) -> np.ndarray:
        v = states[leaf.circuit][leaf.reference]
        return v if leaf.pos is None else leaf.fac * v[leaf.pos]

    def _products(self, states):
        out = []
        for t in self.terms:
            vecs = [self._leaf_vector(l, states) for l in t.leaves]
            prod = vecs[0]
            for v in vecs[1:]:
                prod = np.multiply.outer(prod, v)
            out.append((vecs, prod.ravel()))
        return out

    def vector(self, x=None, normalize: bool = True) -> np.ndarray:
        """Assembled state over the model's sector basis."""
        if x is None:
            thetas, alphas, beta = None, None, None
        else:
            thetas, alphas, beta = self._split(x)
        states = self._circuit_states(thetas)
        coef = self.coefficients(alphas, beta)
        psi = np.zeros(self.basis.dim, dtype=complex)
        for c, pos, (_, prod) in zip(coef, self._positions, self._products(states)):
            psi[pos] += c * prod
        if normalize:
            nrm = np.linalg.norm(psi)
            if nrm == 0:
                raise ForgingError("assembled state vanishes")
            psi = psi / nrm
        return psi

    def energy_grad(self, H: Hamiltonian, x=None):
        x = self.params if x is None else np.asarray(x, dtype=float)
        thetas, alphas, beta = self._split(x)
        e, w, states, prods, coef = self._evaluate(H, thetas, alphas, beta)
        cov = self._covectors(w, states, prods, coef)
        grads = []
        for name, c in self.circuits.items():
            g = np.zeros(c.n_params)
            for r, lam in cov[name].items():
                if c.n_params:
                    g += c.backprop(states[name][r], lam, thetas[name])
            grads.append(g)
        overlaps = np.array([
            2.0 * np.vdot(w[pos], prod).real for pos, (_, prod) in zip(self._positions, prods)
        ])
        d_alpha, d_beta = self._coef_derivs(alphas, beta)
        grads.append(np.array([overlaps @ d_alpha[a] for a in self.alphas], dtype=float))
        if self.lam_mode == "variational":
            grads.append(np.array([overlaps @ d_beta]))
        return e, np.concatenate(grads)

    def _evaluate(self, H, thetas, alphas, beta):
        states = self._circuit_states(thetas)
        coef = self.coefficients(alphas, beta)
        prods = self._products(states)
        psi = np.zeros(self.basis.dim, dtype=complex)
        for c, pos, (_, prod) in zip(coef, self._positions, prods):
            psi[pos] += c * prod
        nrm = float(np.vdot(psi, psi).real)
        if nrm < 1e-300:
            raise ForgingError("assembled state vanishes")
        hpsi = H.matrix(self.basis) @ psi
        e = float(np.vdot(psi, hpsi).real) / nrm
        w = (hpsi - e * psi) / nrm
        return e, w, states, prods, coef

    def _covectors(self, w, states, prods, coef):
        """Per (circuit, reference) vectors ``lam`` with ``dE = 2 Re <lam|d state>``."""
        cov = {name: {} for name in self.circuits}
        for t, c, pos, (vecs, _) in zip(self.terms, coef, self._positions, prods):
            if c == 0.0:
                continue
            tens = w[pos].reshape([v.size for v in vecs])
            for j, leaf in enumerate(t.leaves):
                red = _contract(tens, vecs, j)
                loc = c * red
                circ = self.circuits[leaf.circuit]
                if leaf.pos is not None:
                    pulled = np.zeros(circ.basis.dim, dtype=complex)
                    np.add.at(pulled, leaf.pos, loc * np.conj(leaf.fac))
                    loc = pulled
                slot = cov[leaf.circuit]
                slot[leaf.reference] = slot.get(leaf.reference, 0) + loc
        return cov

    def scan(self, H: Hamiltonian):
        thetas, alphas, beta = self._split(self.params)
        e, w, states, prods, coef = self._evaluate(H, thetas, alphas, beta)
        cov = self._covectors(w, states, prods, coef)
        out = []
        for name, c in self.circuits.items():
            for g in c.pool:
                val = 0.0
                for r, lam in cov[name].items():
                    val += 2.0 * k_overlap(lam, states[name][r], g, c.basis)
                out.append((name, g, val))
        return out

    def append(self, name: str, gen: ExcitationGenerator) -> None:
        if name not in self.circuits:
            raise ForgingError(f"{name} is not a simulated circuit")
        self.circuits[name].append(gen)
        self._last_circuit = name

    def lazy_active(self) -> list[int]:
        k = 0
        for name, c in self.circuits.items():
            k += c.n_params
            if name == self._last_circuit:
                return [k - 1]
        return []

    def term_overlaps(self) -> np.ndarray:
        """Gram matrix of the (unweighted) product terms."""
        states = self._circuit_states()
        vecs = []
        for pos, (_, prod) in zip(self._positions, self._products(states)):
            v = np.zeros(self.basis.dim, dtype=complex)
            v[pos] = prod
            vecs.append(v)
        m = np.array(vecs)
        return m.conj() @ m.T

    # ------------------------------------------------------------ persistence

    def to_dict(self) -> dict:
        return {
            "circuits": {n: circuit_to_dict(c) for n, c in self.circuits.items()},
            "alphas": {k: float(v) for k, v in self.alphas.items()},
            "beta": float(self.beta),
            "lam": {k: float(v) for k, v in self.lam.items()},
            "lam_mode": self.lam_mode,
            "signs": [float(t.sign) for t in self.terms],
            "last_circuit": self._last_circuit,
        }

    def load_dict(self, data: dict) -> None:
        if set(data["circuits"]) != set(self.circuits):
            raise ValueError("checkpoint circuits do not match the configuration")
        if len(data["signs"]) != len(self.terms):
            raise ValueError("checkpoint term count does not match the configuration")
        for name, c in self.circuits.items():
            circuit_from_dict(c, data["circuits"][name])
        self.alphas = {k: float(data["alphas"][k]) for k in self.alphas}
        self.beta = float(data["beta"])
        self.lam = {k: float(v) for k, v in data["lam"].items()}
        self.lam_mode = data["lam_mode"]
        for t, s in zip(self.terms, data["signs"]):
            t.sign = float(s)
        self._last_circuit = data.get("last_circuit")


def _contract(tens: np.ndarray, vecs: list, keep: int) -> np.ndarray:
    """Contract every axis but ``keep`` with the conjugated leaf vectors."""
    out = tens
    for k in range(len(vecs) - 1, -1, -1):
        if k == keep:
            continue
        out = np.tensordot(out, np.conj(vecs[k]), axes=([k], [0]))
    return out


# ---------------------------------------------------------------- assembly API


def assemble(forged: ForgedState, full: bool = False) -> np.ndarray:
    psi = forged.vector(normalize=False)
    nrm = float(np.linalg.norm(psi))
    if abs(nrm - 1.0) > NORM_TOL:
        raise ForgingError(f"forged state norm {nrm:.9f} deviates from 1; terms are not orthogonal")
    return forged.basis.embed(psi) if full else psi


def forged_gradient(forged: ForgedState, H: Hamiltonian, candidate: tuple) -> float:
    gen, name = candidate
    if name not in forged.circuits:
        raise ForgingError(f"{name} is not a simulated circuit; derived factors take no operators")
    if gen not in forged.circuits[name].pool:
        raise ForgingError(f"generator {gen.label} is outside the pool of circuit {name}")
    for cname, g, val in forged.scan(H):
        if cname == name and g == gen:
            return val
    raise AssertionError("candidate missing from scan")


# ---------------------------------------------------------------- builders


@dataclass
class ForgeOptions:
    layers: int = 1
    lam_mode: str = "fixed"
    multiplet: int | None = None  # J of the tied multiplet; None detects it
    chi_cut: int | None = None


def _leaf_circuit(model: Model, name: str, block: Sequence[int], counts: dict,
                  two_m: int | None, n_refs: int = 1) -> AnsatzCircuit:
    table = model.table.sub(block)
    sector = Sector(tuple(sorted(counts.items())), two_m)
    groups, weight = sector_groups(table, sector)
    try:
        basis = SectorBasis.from_constraints(len(block), groups, weight)
    except ValueError as exc:
        raise ForgingError(f"circuit {name}: {exc}") from None
    if basis.dim < n_refs:
        raise ForgingError(f"circuit {name}: sector of dimension {basis.dim} cannot hold {n_refs} references")
    h_loc = model.hamiltonian.restrict(block)
    refs: list[int] = []
    for _ in range(n_refs):
        refs.append(lowest_determinant(h_loc, basis, exclude=refs))
    pool = build_pool(table, sector, basis=basis)
    return AnsatzCircuit(name, basis, refs, pool, tuple(block))


def _sector_labels(table: ModeTable, block: Sequence[int]):
    sub = table.sub(block)

    def label(cfg):
        return [tuple(int(v) for v in row) for row in determinant_charges(sub, cfg)]

    return label


def schmidt_of(model: Model, ground: GroundState, block_a: Sequence[int]):
    n = model.n_modes
    cut = Bipartition(block_a, [m for m in range(n) if m not in set(block_a)])
    return decompose(ground.vector, cut, ground.basis, _sector_labels(model.table, cut.a))


def schmidt_factor_states(fs: ForgedState, ground: GroundState) -> dict:
    """Circuit outputs replaced by the exact Schmidt vectors of each simulated term.

    Only single-cut states are supported.  The ``k``-th simulated term in a
    sector takes the ``k``-th Schmidt pair of that sector.
    """
    if len(fs.blocks) != 2:
        raise ForgingError("Schmidt factors are defined for a single cut")
    block_a = fs.blocks[0]
    sd = schmidt_of(fs.model, ground, block_a)
    label_of = _sector_labels(fs.model.table, block_a)
    out = {name: [None] * len(c.references) for name, c in fs.circuits.items()}
    seen: dict = {}
    for t in fs.terms:
        if t.derived:
            continue
        la, lb = t.leaves
        ca, cb = fs.circuits[la.circuit], fs.circuits[lb.circuit]
        lab = label_of(np.array([ca.references[la.reference]]))[0]
        rank = seen.get(lab, 0)
        seen[lab] = rank + 1
        hits = [i for i, x in enumerate(sd.labels) if x == lab]
        if rank < len(hits):
            i = hits[rank]
            out[la.circuit][la.reference] = sd.left_vector(i)[ca.basis.indices]
            out[lb.circuit][lb.reference] = sd.right_vector(i)[cb.basis.indices]
    for name, c in fs.circuits.items():
        for r, v in enumerate(out[name]):
            if v is None:
                # sector absent from the exact state: keep the circuit output
                out[name][r] = c.state(r)
    return out


def _top(sd, label, rank=0) -> float:
    """``rank``-th Schmidt value inside one symmetry sector; 0 if absent."""
    vals = [v for v, lab in zip(sd.values, sd.labels) if lab == label]
    return float(vals[rank]) if len(vals) > rank else 0.0


def detect_multiplet(sd) -> int:
    """``J`` of the degenerate group following the dominant Schmidt value.

    Zero when the second value vanishes; an even-sized group is an error.
    """
    groups = degenerate_groups(sd.values)
    if len(groups) < 2:
        return 0
    size = len(groups[1])
    if size % 2 == 0:
        raise ForgingError(f"second Schmidt group has even size {size}; not a J multiplet")
    return (size - 1) // 2


def _eta(ground: GroundState, perm: ModePermutation) -> complex:
    return complex(np.vdot(ground.vector, permute_modes(ground.vector, perm, ground.basis)))


def calibrate(fs: ForgedState, ground: GroundState) -> None:
    """Fix derived-term and orbit signs against the exact state."""
    _calibrate(fs, ground, fs.etas)


def _calibrate(fs: ForgedState, ground: GroundState, etas: dict) -> None:
    fallback = [n for n, e in etas.items() if abs(abs(e) - 1.0) > 1e-6]
    if fallback:
        warnings.warn(
            f"ground state is not an eigenvector of {fallback}; derived signs calibrated per term",
            stacklevel=3,
        )
    for t in fs.terms:
        if not t.derived:
            t.sign = 1.0
    for t in fs.terms:
        if t.derived:
            eta = etas[t.transform]
            t.sign = t.structural * (np.sign(eta.real) if t.transform not in fallback else 1.0)
    orbit_names = list(dict.fromkeys(t.orbit for t in fs.terms))
    base = [t.sign for t in fs.terms]

    def fidelity():
        return ground.fidelity(fs.vector())

    if fallback:
        for i, t in enumerate(fs.terms):
            if t.derived and t.transform in fallback:
                best = None
                for s in (1.0, -1.0):
                    t.sign = base[i] * s
                    f = fidelity()
                    if best is None or f > best[0] + 1e-12:
                        best = (f, t.sign)
                t.sign = best[1]
        base = [t.sign for t in fs.terms]
    best = None
    for flips in itertools.product((1.0, -1.0), repeat=len(orbit_names) - 1):
        signs = dict(zip(orbit_names, (1.0,) + flips))
        for t, b in zip(fs.terms, base):
            t.sign = b * signs[t.orbit]
        f = fidelity()
        if best is None or f > best[0] + 1e-12:
            best = (f, [t.sign for t in fs.terms])
    for t, s in zip(fs.terms, best[1]):
        t.sign = s


def _finish(fs: ForgedState, ground: GroundState, lam0: float, lam1: float, mult: int,
            etas: dict, opts: ForgeOptions, bound: float) -> ForgedState:
    norm = math.sqrt(lam0 ** 2 + mult * lam1 ** 2)
    fs.lam = {"lam0": lam0 / norm, "lam1": lam1 / norm}
    fs.lam_mult = {"lam0": 1, "lam1": mult}
    fs.bound = bound
    fs.etas = etas
    if opts.lam_mode == "variational":
        fs.lam_mode = "variational"
        fs.beta = math.atan2(math.sqrt(mult) * fs.lam["lam1"], fs.lam["lam0"])
    elif opts.lam_mode != "fixed":
        raise ValueError(f"lam_mode must be 'fixed' or 'variational', got {opts.lam_mode!r}")
    _calibrate(fs, ground, etas)
    gram = fs.term_overlaps()
    off = gram - np.diag(np.diag(gram))
    if np.max(np.abs(off), initial=0.0) > 1e-10:
        raise ForgingError("forged terms are not mutually orthogonal")
    return fs


def build_fh_forged(model: Model, ground: GroundState, opts: ForgeOptions) -> ForgedState:
    ns = model.params["n_sites"]
    n_up, n_dn = model.sector.count("u"), model.sector.count("d")
    if n_up != n_dn or n_up % 2:
        raise ForgingError("Fermi-Hubbard forging needs equal, even spin populations")
    n = m = n_up // 2
    left, right = tuple(range(ns)), tuple(range(ns, 2 * ns))
    fs = ForgedState(model, [left, right], 1)
    for name, blk, cnt in (
        (f"L.u{n}d{m}", left, (n, m)),
        (f"R.u{n}d{m}", right, (n, m)),
        (f"L.u{n + 1}d{m}", left, (n + 1, m)),
        (f"R.u{n - 1}d{m}", right, (n - 1, m)),
    ):
        fs.add_circuit(_leaf_circuit(model, name, blk, {"u": cnt[0], "d": cnt[1]}, None))
    fs.add_term(Term([fs.simulated_leaf(f"L.u{n}d{m}", 0), fs.simulated_leaf(f"R.u{n}d{m}", 0)],
                     "lam0", "0", label="l0r0"))
    src = fs.add_term(Term([fs.simulated_leaf(f"L.u{n + 1}d{m}", 0), fs.simulated_leaf(f"R.u{n - 1}d{m}", 0)],
                           "lam1", "1", label="l+r-"))
    mirror, spin = fh_mirror(ns), fh_spin_flip(ns)
    perms = {"mirror": mirror, "spin": spin, "spin.mirror": spin.compose(mirror)}
    for name, perm in perms.items():
        t = fs.derive(src, perm, name, label=f"{name}(l+r-)")
        if t is None:
            raise ForgingError(f"{name} does not map the left/right blocks onto each other")
        fs.add_term(t)
    sd = schmidt_of(model, ground, left)
    lam0 = _top(sd, (n, m))
    if lam0 == 0.0:
        raise ForgingError("exact state has no weight in the dominant sector")
    lam1 = float(np.mean([_top(sd, lab) for lab in ((n + 1, m), (n - 1, m), (m, n + 1), (m, n - 1))]))
    chi = opts.chi_cut or 5
    bound = truncation_infidelity(sd, chi)
    etas = {k: _eta(ground, p) for k, p in perms.items()}
    return _finish(fs, ground, lam0, lam1, 4, etas, opts, bound)


def _nsm_blocks(table: ModeTable, layers: int):
    a, b = table.block(1, "A"), table.block(1, "B")
    for blk, sp in ((a, "p"), (b, "n")):
        if any(table.species[m] != sp for m in blk):
            raise ForgingError("layer-1 blocks must separate protons (A) from neutrons (B)")
    if layers == 1:
        return [a, b]
    leaves = []
    for blk in (a, b):
        bot = [m for m in blk if table.layer2[m] == "A"]
        top = [m for m in blk if table.layer2[m] == "B"]
        if not bot or not top:
            raise ForgingError("layer-2 partition leaves an empty sub-block")
        leaves += [bot, top]
    return leaves


def _species_two_m_range(table: ModeTable, modes: Sequence[int], count: int) -> set:
    tm = sorted((table.two_m[m] for m in modes))
    if count > len(tm):
        return set()
    lo, hi = sum(tm[:count]), sum(tm[len(tm) - count:])
    return set(range(lo, hi + 1, 2))


def build_nsm_forged(model: Model, ground: GroundState, opts: ForgeOptions) -> ForgedState:
    table = model.table
    z, nn = model.sector.count("p"), model.sector.count("n")
    if z % 2 or nn % 2:
        raise ForgingError("shell-model forging needs even proton and neutron numbers")
    if model.sector.two_m != 0:
        raise ForgingError("shell-model forging targets total 2M = 0")
    leaves = _nsm_blocks(table, opts.layers)
    pa, nb = table.block(1, "A"), table.block(1, "B")
    sd = schmidt_of(model, ground, pa)
    jm = detect_multiplet(sd) if opts.multiplet is None else opts.multiplet
    pm = _species_two_m_range(table, pa, z)
    nm = _species_two_m_range(table, nb, nn)
    for M in range(-jm, jm + 1):
        if 2 * M not in pm or -2 * M not in nm:
            raise ForgingError(f"sector M_p={M} is not reachable for the requested multiplet")
    parity = nsm_parity(table)

    # leaf block order by mode position
    blocks = sorted(leaves, key=min)
    fs = ForgedState(model, blocks, opts.layers)

    # first-layer factor specs: (orbit, lineage, M_p, kind)
    specs = [("tilde", "tilde", 0)] + [("0", "degenerate", 0)] + [
        (f"{abs(M)}", "degenerate", M) for M in range(-jm, 0)
    ]

    if opts.layers == 1:
        _build_nsm_layer1(fs, model, pa, nb, specs)
    else:
        _build_nsm_layer2(fs, model, leaves, specs)

    # derived partners for M_p > 0
    derived_any = False
    for i in range(len(fs.terms)):
        t = fs.terms[i]
        if t.orbit in ("tilde", "0") or t.derived:
            continue
        d = fs.derive(i, parity, "parity", label=f"R({t.label})")
        if d is None:
            raise ForgingError("parity transform does not preserve the leaf blocks")
        fs.add_term(d)
        derived_any = True
    lab = lambda M: (z, 0, 2 * M)
    lam0 = _top(sd, lab(0))
    lam1_vals = [_top(sd, lab(0), 1)] + [_top(sd, lab(M)) for M in range(-jm, jm + 1) if M != 0]
    lam1 = float(np.mean(lam1_vals))
    chi = opts.chi_cut or (2 * jm + 2)
    bound = truncation_infidelity(sd, chi)
    etas = {"parity": _eta(ground, parity)} if derived_any else {}
    return _finish(fs, ground, lam0, lam1, 2 * jm + 1, etas, opts, bound)


def _build_nsm_layer1(fs, model, pa, nb, specs):
    z, nn = model.sector.count("p"), model.sector.count("n")
    fs.add_circuit(_leaf_circuit(model, "p.M0", pa, {"p": z}, 0, n_refs=2))
    fs.add_circuit(_leaf_circuit(model, "n.M0", nb, {"n": nn}, 0, n_refs=2))
    for orbit, lineage, M in specs:
        if M == 0:
            ref = 0 if lineage == "tilde" else 1
            pl, nl = fs.simulated_leaf("p.M0", ref), fs.simulated_leaf("n.M0", ref)
        else:
            fs.add_circuit(_leaf_circuit(model, f"p.M{M}", pa, {"p": z}, 2 * M))
            fs.add_circuit(_leaf_circuit(model, f"n.M{-M}", nb, {"n": nn}, -2 * M))
            pl, nl = fs.simulated_leaf(f"p.M{M}", 0), fs.simulated_leaf(f"n.M{-M}", 0)
        ordered = [pl, nl] if min(pa) < min(nb) else [nl, pl]
        group = "lam0" if lineage == "tilde" else "lam1"
        fs.add_term(Term(ordered, group, orbit, label=f"p{M}n{-M}" + ("~" if lineage == "tilde" else "")))


def _best_split(model: Model, bot, top, nb_count: int, nt_count: int, two_m: int, species: str):
    """``(2M_bottom, 2M_top)`` minimizing the summed lowest diagonal energies."""
    table = model.table
    best = None
    for mb in sorted(_species_two_m_range(table, bot, nb_count), key=lambda v: (abs(v), v)):
        mt = two_m - mb
        if mt not in _species_two_m_range(table, top, nt_count):
            continue
        e = 0.0
        for blk, cnt, tm in ((bot, nb_count, mb), (top, nt_count, mt)):
            sub = table.sub(blk)
            groups, weight = sector_groups(sub, Sector(((species, cnt),), tm))
            basis = SectorBasis.from_constraints(len(blk), groups, weight)
            e += float(np.min(model.hamiltonian.restrict(blk).diagonal(basis.indices)))
        if best is None or e < best[0] - 1e-12:
            best = (e, mb, mt)
    if best is None:
        raise ForgingError(f"no 2M split of {two_m} over {species} sub-blocks with ({nb_count},{nt_count})")
    return best[1], best[2]


def _build_nsm_layer2(fs: ForgedState, model: Model, leaves, specs):
    pb, pt, nb_, nt = leaves
    z, nn = model.sector.count("p"), model.sector.count("n")
    needed = {}  # (block, count, two_m) -> lineages using it
    plan = []
    for orbit, lineage, M in specs:
        kind = "tilde" if lineage == "tilde" else "degenerate"
        pd = distributions(z, (len(pb), len(pt)), kind)
        nd = distributions(nn, (len(nb_), len(nt)), kind)
        pparts = [(d, _best_split(model, pb, pt, d[0], d[1], 2 * M, "p")) for d in pd]
        nparts = [(d, _best_split(model, nb_, nt, d[0], d[1], -2 * M, "n")) for d in nd]
        plan.append((orbit, lineage, M, pparts, nparts))
        for parts, (b, t), sp in ((pparts, (pb, pt), "p"), (nparts, (nb_, nt), "n")):
            for d, split in parts:
                for blk, cnt, tm in ((b, d[0], split[0]), (t, d[1], split[1])):
                    needed.setdefault((tuple(blk), cnt, tm, sp), []).append(lineage)
    names = {}
    for (blk, cnt, tm, sp), lineages in needed.items():
        tag = {tuple(pb): "pb", tuple(pt): "pt", tuple(nb_): "nb", tuple(nt): "nt"}[blk]
        name = f"{tag}.N{cnt}M{tm}"
        both = len(set(lineages)) > 1
        try:
            circ = _leaf_circuit(model, name, blk, {sp: cnt}, tm, n_refs=2 if both else 1)
        except ForgingError:
            circ = _leaf_circuit(model, name, blk, {sp: cnt}, tm, n_refs=1)
        fs.add_circuit(circ)
        names[(blk, cnt, tm, sp)] = name
    for orbit, lineage, M, pparts, nparts in plan:
        for ip, (pd, psplit) in enumerate(pparts):
            for in_, (nd, nsplit) in enumerate(nparts):
                leaves_by_block = {}
                for blk, cnt, tm, sp in (
                    (pb, pd[0], psplit[0], "p"), (pt, pd[1], psplit[1], "p"),
                    (nb_, nd[0], nsplit[0], "n"), (nt, nd[1], nsplit[1], "n"),
                ):
                    name = names[(tuple(blk), cnt, tm, sp)]
                    circ = fs.circuits[name]
                    ref = 1 if (lineage != "tilde" and len(circ.references) == 2) else 0
                    leaves_by_block[tuple(blk)] = fs.simulated_leaf(name, ref)
                ordered = [leaves_by_block[b] for b in fs.blocks]
                trig = ((f"a{orbit}.p", "cos" if ip == 0 else "sin"),
                        (f"a{orbit}.n", "cos" if in_ == 0 else "sin"))
                for a, _ in trig:
                    fs.alphas.setdefault(a, 0.0)
                group = "lam0" if lineage == "tilde" else "lam1"
                fs.add_term(Term(ordered, group, orbit, trig,
                                 label=f"p{M}{pd}n{-M}{nd}" + ("~" if lineage == "tilde" else "")))


def build_reference(model: Model, ground: GroundState | None = None, layers: int = 1,
                    options: ForgeOptions | None = None) -> ForgedState:
    opts = options or ForgeOptions(layers=layers)
    opts.layers = layers
    ground = ground or solve(model)
    if layers not in (1, 2):
        raise ForgingError(f"layers must be 1 or 2, got {layers}")
    if model.name == "fh":
        if layers != 1:
            raise ForgingError("Fermi-Hubbard forging uses a single layer")
        return build_fh_forged(model, ground, opts)
    return build_nsm_forged(model, ground, opts)


def run_edef(model: Model, layers: int = 1, options: LoopOptions | None = None,
             forge_options: ForgeOptions | None = None, ground: GroundState | None = None,
             fs: ForgedState | None = None, records=None, on_record=None):
    """Adaptive loop over a forged state.  Returns ``(records, forged state)``."""
    ground = ground or solve(model)
    fs = fs or build_reference(model, ground, layers, forge_options)
    opts = options or LoopOptions(infidelity_tol=0.0)
    if opts.bound is None:
        opts = LoopOptions(**{**opts.__dict__, "bound": fs.bound})
    return adaptive_loop(fs, model.hamiltonian, ground, opts, records, on_record), fs


class EntanglementForgedVQE(BaseEstimator):
    """Estimator wrapper around :func:`run_edef`."""

    def __init__(self, layers: int = 1, max_iter: int = 100, gradient_tol: float = 1e-6,
                 lazy_period: int = 1, exclusion_period: int = 0, lam_mode: str = "fixed",
                 multiplet: int | None = None, bound_rtol: float = 0.05):
        self.layers = layers
        self.max_iter = max_iter
        self.gradient_tol = gradient_tol
        self.lazy_period = lazy_period
        self.exclusion_period = exclusion_period
        self.lam_mode = lam_mode
        self.multiplet = multiplet
        self.bound_rtol = bound_rtol

    def fit(self, model: Model, y=None):
        from ._validation import check_choice, check_positive_float, check_positive_int

        check_choice(self.layers, "layers", {1, 2})
        check_choice(self.lam_mode, "lam_mode", {"fixed", "variational"})
        opts = LoopOptions(
            max_iter=check_positive_int(self.max_iter, "max_iter", allow_zero=True),
            infidelity_tol=0.0,
            gradient_tol=check_positive_float(self.gradient_tol, "gradient_tol"),
            lazy_period=check_positive_int(self.lazy_period, "lazy_period"),
            exclusion_period=check_positive_int(self.exclusion_period, "exclusion_period", allow_zero=True),
            bound_rtol=check_positive_float(self.bound_rtol, "bound_rtol", allow_zero=True),
        )
        multiplet = None if self.multiplet is None else check_positive_int(self.multiplet, "multiplet", allow_zero=True)
        fopts = ForgeOptions(self.layers, self.lam_mode, multiplet)
        self.ground_ = solve(model)
        self.records_, self.state_ = run_edef(model, self.layers, opts, fopts, self.ground_)
        last = self.records_[-1]
        self.energy_ = last.energy
        self.infidelity_ = last.infidelity
        self.n_iter_ = last.iteration
        self.bound_ = self.state_.bound
        return self

    def summary(self) -> dict:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "records_")
        n_q = max(len(b) for b in self.state_.blocks)
        return summary_row(self.records_, cuts=self.layers, n_qubits=n_q)
