"""Fermi-Hubbard and shell-model Hamiltonians, mode tables and operator pools.

Hamiltonians are stored as

    H = sum_{p<=q} c_pq (a_p^+ a_q + h.c.)            (diagonal when p == q)
      + 1/4 sum_{ijkl} vbar_ijkl a_i^+ a_j^+ a_l a_k

with ``vbar`` fully antisymmetrized.  Only the ``i<j, k<l`` part is applied,
which is the same operator.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .basis import SectorBasis
from .statevector import ExcitationGenerator, ModePermutation, ladder, _as_state, _basis_for


class InteractionFileError(ValueError):
    """Malformed or inconsistent interaction file."""


@dataclass(frozen=True)
class ModeTable:
    """Per-mode metadata.

    ``species`` is ``'u'``/``'d'`` (spin up/down) for Fermi-Hubbard modes and
    ``'p'``/``'n'`` for shell-model modes.  ``layer1``/``layer2`` hold the
    ``'A'``/``'B'`` side of the first and second cuts.
    """

    kind: str
    species: tuple
    spe: tuple
    layer1: tuple
    layer2: tuple | None = None
    site: tuple | None = None
    two_j: tuple | None = None
    two_m: tuple | None = None
    two_tz: tuple | None = None
    labels: tuple | None = None

    @property
    def n_modes(self) -> int:
        return len(self.species)

    @property
    def species_names(self) -> tuple[str, ...]:
        return ("u", "d") if self.kind == "fh" else ("p", "n")

    def modes_of(self, species: str, within: Iterable[int] | None = None) -> list[int]:
        pool = range(self.n_modes) if within is None else within
        return [m for m in pool if self.species[m] == species]

    def charges(self) -> np.ndarray:
        """Integer conserved charges per mode: species indicators, plus 2m for shell models."""
        cols = [[int(s == name) for s in self.species] for name in self.species_names]
        if self.kind == "nsm":
            cols.append(list(self.two_m))
        return np.array(cols, dtype=np.int64).T

    def block(self, layer: int, side: str) -> list[int]:
        tags = self.layer1 if layer == 1 else self.layer2
        if tags is None:
            raise ValueError(f"no layer-{layer} partition defined")
        return [m for m, s in enumerate(tags) if s == side]

    def sub(self, modes: Sequence[int]) -> "ModeTable":
        """Table restricted to ``modes``, relabelled 0..len-1 in the given order."""
        pick = lambda col: None if col is None else tuple(col[m] for m in modes)
        return ModeTable(
            self.kind, pick(self.species), pick(self.spe), pick(self.layer1), pick(self.layer2),
            pick(self.site), pick(self.two_j), pick(self.two_m), pick(self.two_tz), pick(self.labels),
        )

    def name(self, m: int) -> str:
        if self.kind == "fh":
            return f"{self.site[m]}{'u' if self.species[m] == 'u' else 'd'}"
        return self.labels[m]


_TOKENS = iter(range(1, 1 << 62))


@dataclass(frozen=True)
class Hamiltonian:
    one_body: tuple
    two_body: tuple
    mode_table: ModeTable
    _token: int = field(default_factory=lambda: next(_TOKENS), compare=False, repr=False)

    @property
    def n_modes(self) -> int:
        return self.mode_table.n_modes

    def tbme(self) -> dict:
        return {(i, j, k, l): v for i, j, k, l, v in self.two_body}

    def terms(self):
        """Operator strings ``(coefficient, [(mode, is_creation), ...])``."""
        for p, q, c in self.one_body:
            if p == q:
                yield c, [(p, True), (p, False)]
            else:
                yield c, [(p, True), (q, False)]
                yield c, [(q, True), (p, False)]
        for i, j, k, l, v in self.two_body:
            if i < j and k < l:
                yield v, [(i, True), (j, True), (l, False), (k, False)]

    def matrix(self, basis: SectorBasis) -> sp.csr_matrix:
        """Sparse matrix on a basis closed under ``H``; cached on the basis."""
        key = ("ham", self._token)
        hit = basis._cache.get(key)
        if hit is not None:
            return hit
        if basis.n_modes != self.n_modes:
            raise ValueError(f"basis has {basis.n_modes} modes, Hamiltonian {self.n_modes}")
        rows, cols, vals = [], [], []
        for coef, ops in self.terms():
            new, sign, alive = ladder(basis.indices, ops)
            if not np.any(alive):
                continue
            src = np.nonzero(alive)[0]
            tgt_idx = new[alive]
            inside = basis.contains(tgt_idx)
            if not np.all(inside):
                raise ValueError("basis is not closed under the Hamiltonian")
            rows.append(basis.position(tgt_idx))
            cols.append(src)
            vals.append(coef * sign[alive])
        dim = basis.dim
        if rows:
            mat = sp.coo_matrix(
                (np.concatenate(vals).astype(float), (np.concatenate(rows), np.concatenate(cols))),
                shape=(dim, dim),
            ).tocsr()
        else:
            mat = sp.csr_matrix((dim, dim))
        mat.sum_duplicates()
        basis._cache[key] = mat
        return mat

    def restrict(self, modes: Sequence[int]) -> "Hamiltonian":
        """Terms acting only inside ``modes``, relabelled to local indices."""
        local = {m: k for k, m in enumerate(modes)}
        ob = tuple((local[p], local[q], c) for p, q, c in self.one_body if p in local and q in local)
        tb = tuple(
            (local[i], local[j], local[k], local[l], v)
            for i, j, k, l, v in self.two_body
            if i in local and j in local and k in local and l in local
        )
        return Hamiltonian(ob, tb, self.mode_table.sub(modes))

    def diagonal(self, idx: np.ndarray) -> np.ndarray:
        """Diagonal matrix elements ``<D|H|D>`` for arbitrary determinants."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros(idx.size)
        for p, q, c in self.one_body:
            if p == q:
                out += c * ((idx >> p) & 1)
        for i, j, k, l, v in self.two_body:
            if i < j and (k, l) == (i, j):
                out += v * ((idx >> i) & 1) * ((idx >> j) & 1)
        return out


def apply_hamiltonian(H: Hamiltonian, state, basis: SectorBasis | None = None) -> np.ndarray:
    psi = _as_state(state)
    b = _basis_for(psi, basis)
    return H.matrix(b) @ psi


def expectation(H: Hamiltonian, state, basis: SectorBasis | None = None) -> float:
    psi = _as_state(state)
    nrm = float(np.vdot(psi, psi).real)
    if nrm < 1e-300:
        raise ValueError("expectation value of a zero state")
    return float(np.vdot(psi, apply_hamiltonian(H, psi, basis)).real) / nrm


# ---------------------------------------------------------------- builders


def fh_mode_table(n_sites: int) -> ModeTable:
    n = 2 * n_sites
    half = n_sites // 2
    return ModeTable(
        kind="fh",
        species=tuple("u" if m % 2 == 0 else "d" for m in range(n)),
        spe=tuple(0.0 for _ in range(n)),
        layer1=tuple("A" if m // 2 < half else "B" for m in range(n)),
        site=tuple(m // 2 for m in range(n)),
    )


def build_fh(n_sites: int, t: float = 1.0, t_m: float | None = None, u: float = 1.0) -> Hamiltonian:
    """Open Fermi-Hubbard chain with a tunable central bond.

    Mode ``2i`` is site ``i`` spin up and ``2i+1`` spin down.  The central bond
    joins sites ``n_sites/2 - 1`` and ``n_sites/2`` and carries hopping ``t_m``.
    """
    if n_sites < 2 or n_sites % 2:
        raise ValueError(f"n_sites must be even and >= 2, got {n_sites}")
    t_m = t if t_m is None else t_m
    mid = n_sites // 2 - 1
    one = []
    for i in range(n_sites - 1):
        hop = t_m if i == mid else t
        for s in range(2):
            if hop != 0:
                one.append((2 * i + s, 2 * (i + 1) + s, -float(hop)))
    tb = {}
    if u != 0:
        for i in range(n_sites):
            _antisym_fill(tb, (2 * i, 2 * i + 1, 2 * i, 2 * i + 1), float(u))
    return Hamiltonian(tuple(sorted(one)), _tb_tuple(tb), fh_mode_table(n_sites))


def fh_spin_flip(n_sites: int) -> ModePermutation:
    return ModePermutation([m ^ 1 for m in range(2 * n_sites)])


def fh_mirror(n_sites: int) -> ModePermutation:
    return ModePermutation([2 * (n_sites - 1 - m // 2) + m % 2 for m in range(2 * n_sites)])


def nsm_parity(table: ModeTable) -> ModePermutation:
    """``a_{jm}^+ -> (-1)^{j-m} a_{j,-m}^+`` within each (species, orbital)."""
    target, phase = [], []
    for m in range(table.n_modes):
        partner = [
            k for k in range(table.n_modes)
            if table.species[k] == table.species[m]
            and table.two_j[k] == table.two_j[m]
            and table.labels[k] == table.labels[m]
            and table.two_m[k] == -table.two_m[m]
        ]
        if len(partner) != 1:
            raise ValueError(f"mode {m} has no unique m -> -m partner")
        target.append(partner[0])
        phase.append((-1) ** ((table.two_j[m] - table.two_m[m]) // 2))
    return ModePermutation(target, phase)


def _canonical_tb(key):
    """Canonical representative (i<j, k<l, (i,j)<=(k,l)) and sign."""
    i, j, k, l = key
    sign = 1.0
    if i > j:
        i, j, sign = j, i, -sign
    if k > l:
        k, l, sign = l, k, -sign
    if (i, j) > (k, l):
        i, j, k, l = k, l, i, j
    return (i, j, k, l), sign


def _antisym_fill(tb: dict, key, v: float) -> None:
    i, j, k, l = key
    for a, b, c, d in ((i, j, k, l), (k, l, i, j)):
        tb[(a, b, c, d)] = v
        tb[(b, a, c, d)] = -v
        tb[(a, b, d, c)] = -v
        tb[(b, a, d, c)] = v


def _tb_tuple(tb: dict) -> tuple:
    return tuple((i, j, k, l, v) for (i, j, k, l), v in sorted(tb.items()) if v != 0.0)


@dataclass
class InteractionSpec:
    table: ModeTable
    tbme: dict
    warnings: list


def parse_interaction(text: str) -> InteractionSpec:
    """Parse the line-oriented interaction format.

    Directives (``#`` starts a comment)::

        MODE <index> <2j> <2m> <2tz> <label>
        SPE <index> <energy>
        TBME <i> <j> <k> <l> <value>
        PARTITION <1|2> <index> <A|B>
    """
    modes: dict[int, tuple] = {}
    spe: dict[int, float] = {}
    raw: dict[tuple, tuple[float, int]] = {}
    parts: dict[int, dict[int, str]] = {1: {}, 2: {}}
    notes: list[str] = []

    def fail(lineno, msg):
        raise InteractionFileError(f"line {lineno}: {msg}")

    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        head = tok[0].upper()
        try:
            if head == "MODE":
                if len(tok) != 6:
                    fail(lineno, "MODE needs <index> <2j> <2m> <2tz> <label>")
                idx, tj, tm, tz = (int(x) for x in tok[1:5])
                if idx in modes:
                    fail(lineno, f"mode {idx} declared twice")
                if tj <= 0 or tj % 2 == 0:
                    fail(lineno, f"2j must be a positive odd integer, got {tj}")
                if abs(tm) > tj or (tj - tm) % 2:
                    fail(lineno, f"inconsistent quantum numbers 2j={tj}, 2m={tm}")
                if tz not in (-1, 1):
                    fail(lineno, f"2tz must be -1 (proton) or +1 (neutron), got {tz}")
                modes[idx] = (tj, tm, tz, tok[5])
            elif head == "SPE":
                if len(tok) != 3:
                    fail(lineno, "SPE needs <index> <energy>")
                spe[int(tok[1])] = float(tok[2])
            elif head == "TBME":
                if len(tok) != 6:
                    fail(lineno, "TBME needs <i> <j> <k> <l> <value>")
                key = tuple(int(x) for x in tok[1:5])
                if key in raw:
                    notes.append(f"line {lineno}: duplicate TBME {key}, keeping the last value")
                raw[key] = (float(tok[5]), lineno)
            elif head == "PARTITION":
                if len(tok) != 4 or tok[1] not in ("1", "2") or tok[3].upper() not in ("A", "B"):
                    fail(lineno, "PARTITION needs <1|2> <index> <A|B>")
                parts[int(tok[1])][int(tok[2])] = tok[3].upper()
            else:
                hint = ""
                if tok[0].lstrip("+-").replace(".", "", 1).isdigit():
                    hint = " (numeric records look like a JT-coupled file; convert to m-scheme TBME lines)"
                fail(lineno, f"unknown directive {tok[0]!r}{hint}")
        except ValueError as exc:
            if isinstance(exc, InteractionFileError):
                raise
            fail(lineno, f"cannot parse {body!r}: {exc}")

    if not modes:
        raise InteractionFileError("no MODE lines")
    n = len(modes)
    if sorted(modes) != list(range(n)):
        raise InteractionFileError(f"mode indices must be 0..{n - 1} without gaps")
    for idx in list(spe) + [m for p in parts.values() for m in p]:
        if idx not in modes:
            raise InteractionFileError(f"reference to undeclared mode {idx}")

    tb: dict = {}
    grouped: dict = {}
    for key, (v, lineno) in raw.items():
        if any(m not in modes for m in key):
            raise InteractionFileError(f"line {lineno}: TBME {key} references an undeclared mode")
        i, j, k, l = key
        if i == j or k == l:
            if v != 0.0:
                notes.append(f"line {lineno}: TBME {key} vanishes under antisymmetry; dropped")
            continue
        canon, sign = _canonical_tb(key)
        grouped.setdefault(canon, []).append((sign * v, lineno))
    for canon, vals in grouped.items():
        vs = [v for v, _ in vals]
        if max(vs) - min(vs) > 1e-12:
            lines = ", ".join(str(ln) for _, ln in vals)
            notes.append(f"TBME {canon} not antisymmetric/hermitian across lines {lines}; averaged")
        _antisym_fill(tb, canon, float(np.mean(vs)))

    for msg in notes:
        warnings.warn(msg, stacklevel=3)

    table = _nsm_table(modes, spe, parts)
    return InteractionSpec(table, tb, notes)


def _nsm_table(modes, spe, parts) -> ModeTable:
    n = len(modes)
    species = tuple("p" if modes[m][2] == -1 else "n" for m in range(n))
    energies = tuple(float(spe.get(m, 0.0)) for m in range(n))
    layer1 = tuple(parts[1].get(m, "A" if species[m] == "p" else "B") for m in range(n))
    default2 = {}
    for side in ("A", "B"):
        block = [m for m in range(n) if layer1[m] == side]
        order = sorted(block, key=lambda m: (energies[m], m))
        for rank, m in enumerate(order):
            default2[m] = "A" if rank < len(block) // 2 else "B"
    layer2 = tuple(parts[2].get(m, default2[m]) for m in range(n))
    return ModeTable(
        kind="nsm",
        species=species,
        spe=energies,
        layer1=layer1,
        layer2=layer2,
        two_j=tuple(modes[m][0] for m in range(n)),
        two_m=tuple(modes[m][1] for m in range(n)),
        two_tz=tuple(modes[m][2] for m in range(n)),
        labels=tuple(modes[m][3] for m in range(n)),
    )


def build_nsm(text: str) -> Hamiltonian:
    spec = parse_interaction(text)
    one = tuple((m, m, e) for m, e in enumerate(spec.table.spe) if e != 0.0)
    return Hamiltonian(one, _tb_tuple(spec.tbme), spec.table)


# ---------------------------------------------------------------- sectors


@dataclass(frozen=True)
class Sector:
    """Particle numbers per species and optionally total ``2M``."""

    counts: tuple
    two_m: int | None = None

    def count(self, species: str) -> int:
        return dict(self.counts)[species]


def sector_groups(table: ModeTable, sector: Sector, modes: Sequence[int] | None = None):
    """Constraint groups over local indices of ``modes`` (all modes by default)."""
    modes = list(range(table.n_modes)) if modes is None else list(modes)
    groups = []
    for name in table.species_names:
        local = [k for k, m in enumerate(modes) if table.species[m] == name]
        cnt = dict(sector.counts).get(name, 0)
        if local or cnt:
            groups.append((local, cnt))
    weight = None
    if sector.two_m is not None:
        weight = ([table.two_m[m] for m in modes], sector.two_m)
    return groups, weight


def determinant_charges(table: ModeTable, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    bits = ((idx[:, None] >> np.arange(table.n_modes)) & 1).astype(np.int64)
    return bits @ table.charges()


# ---------------------------------------------------------------- pools


def build_pool(
    table: ModeTable,
    sector: Sector | None = None,
    allowed_modes: Sequence[int] | None = None,
    basis: SectorBasis | None = None,
) -> list[ExcitationGenerator]:
    """Symmetry-conserving excitation generators in canonical order.

    Fermi-Hubbard pools hold one-body ``(r, s)`` with ``r < s`` followed by
    two-body ``(p, q, r, s)`` with ``p < q``, ``r < s`` and ``(p, q) < (r, s)``;
    shell-model pools are two-body only.  Each group is sorted
    lexicographically.  Index sets may overlap but never coincide.  Indices
    are those of ``table``; ``allowed_modes`` restricts which modes may appear.
    When ``basis`` is given, generators acting as zero on it are dropped.
    ``sector`` is accepted for interface symmetry; conservation is checked per
    generator from the mode charges, which already fixes the sector.
    """
    modes = list(range(table.n_modes)) if allowed_modes is None else sorted(int(m) for m in allowed_modes)
    if not modes:
        raise ValueError("empty allowed_modes")
    if any(m < 0 or m >= table.n_modes for m in modes):
        raise ValueError("allowed_modes outside the mode table")
    q = table.charges()
    gens = []
    if table.kind == "fh":
        for r, s in itertools.combinations(modes, 2):
            if np.array_equal(q[r], q[s]):
                gens.append(ExcitationGenerator((r, s)))
    pairs = list(itertools.combinations(modes, 2))
    for (p, qq), (r, s) in itertools.combinations(pairs, 2):
        if np.array_equal(q[p] + q[qq], q[r] + q[s]):
            gens.append(ExcitationGenerator((p, qq, r, s)))
    if basis is not None:
        from .statevector import pair_table

        gens = [g for g in gens if pair_table(basis, g)[0].size]
    return gens


# ---------------------------------------------------------------- models


@dataclass
class Model:
    """A Hamiltonian together with its target symmetry sector."""

    name: str
    hamiltonian: Hamiltonian
    sector: Sector
    params: dict = field(default_factory=dict)

    @property
    def table(self) -> ModeTable:
        return self.hamiltonian.mode_table

    @property
    def n_modes(self) -> int:
        return self.hamiltonian.n_modes

    def basis(self) -> SectorBasis:
        if not hasattr(self, "_basis"):
            groups, weight = sector_groups(self.table, self.sector)
            self._basis = SectorBasis.from_constraints(self.n_modes, groups, weight)
        return self._basis

    def pool(self) -> list[ExcitationGenerator]:
        return build_pool(self.table, self.sector, basis=self.basis())


def fermi_hubbard(n_sites: int, t: float = 1.0, t_m: float | None = None, u: float = 1.0,
                  n_up: int | None = None, n_down: int | None = None) -> Model:
    """Half filling by default."""
    n_up = n_sites // 2 if n_up is None else n_up
    n_down = n_sites // 2 if n_down is None else n_down
    if not (0 <= n_up <= n_sites and 0 <= n_down <= n_sites):
        raise ValueError("spin populations must lie in [0, n_sites]")
    H = build_fh(n_sites, t, t_m, u)
    return Model("fh", H, Sector((("u", n_up), ("d", n_down))),
                 dict(n_sites=n_sites, t=t, t_m=t if t_m is None else t_m, u=u))


def shell_model(text: str, n_protons: int, n_neutrons: int, two_m: int = 0) -> Model:
    H = build_nsm(text)
    tab = H.mode_table
    if n_protons > len(tab.modes_of("p")) or n_neutrons > len(tab.modes_of("n")):
        raise ValueError("more valence particles than modes")
    return Model("nsm", H, Sector((("p", n_protons), ("n", n_neutrons)), two_m),
                 dict(z=n_protons, n=n_neutrons))


def slater_energy(H: Hamiltonian, occupied: Sequence[int]) -> float:
    """``<D|H|D>`` from the closed form sum eps + sum_{pairs} vbar."""
    occ = sorted(occupied)
    tb = H.tbme()
    e = sum(c for p, q, c in H.one_body if p == q and p in occ)
    for a, b in itertools.combinations(occ, 2):
        e += tb.get((a, b, a, b), 0.0)
    return float(e)

