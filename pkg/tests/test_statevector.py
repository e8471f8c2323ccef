import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from dense_oracle import annihilator, one_body_generator, two_body_generator
from forgevqe.basis import SectorBasis, bitmask, occupied
from forgevqe.fermion import fh_spin_flip
from forgevqe.statevector import (
    ExcitationGenerator,
    ModePermutation,
    apply_excitation,
    apply_generator_k,
    from_slater,
    inner,
    k_overlap,
    ladder,
    norm,
    particle_number,
    permute_modes,
    tensor_embed,
)


def random_state(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def dense_generator(gen, n):
    if gen.kind == "one-body":
        return one_body_generator(*gen.indices, n)
    return two_body_generator(*gen.indices, n)


def all_generators(n):
    out = [ExcitationGenerator((r, s)) for r in range(n) for s in range(n) if r != s]
    for p, q, r, s in itertools.product(range(n), repeat=4):
        if p != q and r != s and {p, q} != {r, s}:
            out.append(ExcitationGenerator((p, q, r, s)))
    return out


# ------------------------------------------------------------------ basis


def test_sector_basis_counts():
    b = SectorBasis.from_constraints(8, [((0, 2, 4, 6), 2), ((1, 3, 5, 7), 2)])
    assert b.dim == comb(4, 2) ** 2 == 36
    assert np.all(np.diff(b.indices) > 0)
    assert SectorBasis.from_constraints(1, [((0,), 1)]).dim == 1


def test_sector_basis_position_and_embedding():
    b = SectorBasis.from_constraints(4, [((0, 1, 2, 3), 2)])
    rng = np.random.default_rng(0)
    v = random_state(rng, b.dim)
    full = b.embed(v)
    assert full.size == 16
    assert np.allclose(b.restrict(full), v)
    with pytest.raises(KeyError):
        b.position(np.array([0b0001]))


def test_sector_basis_rejects_empty_sector():
    with pytest.raises(ValueError):
        SectorBasis.from_constraints(2, [((0, 1), 3)])


def test_bitmask_helpers():
    assert bitmask([0, 3]) == 9
    assert occupied(9) == [0, 3]


# ------------------------------------------------------------------ determinants


def test_from_slater_examples():
    assert from_slater([], 4)[0] == 1
    psi = from_slater([0, 3], 4)
    assert psi[9] == 1 and norm(psi) == 1
    assert from_slater([1], 2)[2] == 1
    with pytest.raises(ValueError):
        from_slater([0, 0], 2)
    with pytest.raises(ValueError):
        from_slater([4], 4)


def test_inner_examples():
    a = from_slater([0], 2)
    assert inner(a, a) == 1
    assert inner(a, from_slater([1], 2)) == 0
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1 / np.sqrt(2)
    assert inner(from_slater([], 2), bell) == pytest.approx(1 / np.sqrt(2))
    with pytest.raises(ValueError):
        inner(np.ones(2), np.ones(4))


def test_particle_number():
    assert particle_number(from_slater([0, 2], 3)) == 2
    with pytest.raises(ValueError):
        particle_number((from_slater([0], 2) + from_slater([0, 1], 2)) / np.sqrt(2))


def test_ladder_matches_dense_operators():
    n = 5
    ops = [annihilator(i, n) for i in range(n)]
    idx = np.arange(1 << n)
    for seq in [((1, True), (3, False)), ((0, True), (4, True), (2, False), (1, False)), ((2, False),)]:
        new, sign, alive = ladder(idx, seq)
        mat = np.eye(1 << n)
        for mode, dag in seq:
            mat = mat @ (ops[mode].T if dag else ops[mode])
        for k in idx:
            col = mat[:, k]
            if alive[k]:
                assert col[new[k]] == sign[k]
                assert np.count_nonzero(col) == 1
            else:
                assert not np.any(col)


# ------------------------------------------------------------------ generators


def test_generator_validation():
    with pytest.raises(ValueError):
        ExcitationGenerator((0, 0))
    with pytest.raises(ValueError):
        ExcitationGenerator((0, 1, 1, 0))
    with pytest.raises(ValueError):
        ExcitationGenerator((0, 0, 1, 2))
    with pytest.raises(ValueError):
        ExcitationGenerator((0, 1, 2))
    g = ExcitationGenerator((0, 1, 2, 3))
    assert ExcitationGenerator.parse(g.label) == g


def test_two_determinant_rotation():
    theta = 0.3
    gen = ExcitationGenerator((0, 1))
    out = apply_excitation(from_slater([1], 2), gen, theta)
    expect = np.cos(theta) * from_slater([1], 2) - np.sin(theta) * from_slater([0], 2)
    assert np.allclose(out, expect, atol=1e-14)


def test_theta_zero_is_identity():
    rng = np.random.default_rng(1)
    psi = random_state(rng, 16)
    for gen in all_generators(4)[:30]:
        assert np.array_equal(apply_excitation(psi, gen, 0.0), psi)


@pytest.mark.parametrize("n", [3, 4])
def test_exponential_matches_dense_expm(n):
    rng = np.random.default_rng(n)
    psi = random_state(rng, 1 << n)
    for gen in all_generators(n):
        theta = rng.uniform(-np.pi, np.pi)
        dense = expm(1j * theta * dense_generator(gen, n)) @ psi
        assert np.allclose(apply_excitation(psi, gen, theta), dense, atol=1e-12), gen.label
        k_dense = 1j * dense_generator(gen, n) @ psi
        assert np.allclose(apply_generator_k(psi, gen), k_dense, atol=1e-12), gen.label


def test_sector_basis_kernel_agrees_with_full_register():
    b = SectorBasis.from_constraints(6, [((0, 2, 4), 2), ((1, 3, 5), 1)])
    rng = np.random.default_rng(3)
    v = random_state(rng, b.dim)
    for gen in [ExcitationGenerator((0, 2)), ExcitationGenerator((0, 1, 2, 3)), ExcitationGenerator((4, 5, 2, 1))]:
        out = apply_excitation(v, gen, 0.7, b)
        assert np.allclose(b.embed(out), apply_excitation(b.embed(v), gen, 0.7))


def test_generator_leaving_sector_is_rejected():
    b = SectorBasis.from_constraints(4, [((0, 2), 1), ((1, 3), 1)])
    with pytest.raises(ValueError):
        apply_excitation(np.ones(b.dim) / 2, ExcitationGenerator((0, 1)), 0.1, b)


def test_k_overlap_matches_dense():
    rng = np.random.default_rng(5)
    w, psi = random_state(rng, 16), random_state(rng, 16)
    full = SectorBasis.full(4)
    for gen in all_generators(4)[:40]:
        expect = np.vdot(w, 1j * dense_generator(gen, 4) @ psi).real
        assert k_overlap(w, psi, gen, full) == pytest.approx(expect, abs=1e-12)


gen_strategy = st.sampled_from(all_generators(4))
angle = st.floats(-6.3, 6.3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(gen_strategy, angle, angle, st.integers(0, 2**32 - 1))
def test_rotation_properties(gen, a, b, seed):
    psi = random_state(np.random.default_rng(seed), 16)
    ab = apply_excitation(apply_excitation(psi, gen, a), gen, b)
    assert np.allclose(ab, apply_excitation(psi, gen, a + b), atol=1e-12)
    assert abs(norm(apply_excitation(psi, gen, a)) - 1) < 1e-12
    assert np.allclose(apply_excitation(apply_excitation(psi, gen, a), gen, -a), psi, atol=1e-12)


# ------------------------------------------------------------------ tensor products


def creators(modes, n):
    out = np.eye(1 << n)
    for m in modes:
        out = out @ annihilator(m, n).T
    return out


def dense_product(factors, n):
    vac = np.zeros(1 << n)
    vac[0] = 1
    total = np.zeros(1 << n, dtype=complex)
    local = [list(zip(*[(k, v) for k, v in enumerate(vec) if v != 0])) for vec, _ in factors]
    for combo in itertools.product(*[list(zip(*l)) for l in local]):
        amp = 1.0 + 0j
        op = np.eye(1 << n)
        for (cfg, v), (_, blk) in zip(combo, factors):
            amp *= v
            op = op @ creators([blk[k] for k in range(len(blk)) if (cfg >> k) & 1], n)
        total += amp * (op @ vac)
    return total


def test_tensor_embed_examples():
    vac = from_slater([], 2)
    assert np.array_equal(tensor_embed([(vac, (0, 1)), (vac, (2, 3))]), from_slater([], 4))
    out = tensor_embed([(from_slater([0], 2), (0, 1)), (from_slater([0], 2), (2, 3))])
    assert np.array_equal(out, from_slater([0, 2], 4))


@pytest.mark.parametrize("blocks", [((0, 1, 2), (3, 4, 5)), ((0, 2, 4), (1, 3, 5)), ((3, 4, 5), (0, 1, 2)), ((1, 5), (0, 2, 3, 4))])
def test_tensor_embed_matches_dense_creation_strings(blocks):
    rng = np.random.default_rng(len(blocks[0]))
    factors = []
    for blk, npart in zip(blocks, (1, 2)):
        b = SectorBasis.from_constraints(len(blk), [(tuple(range(len(blk))), npart)])
        factors.append((b.embed(random_state(rng, b.dim)), blk))
    out = tensor_embed(factors)
    assert np.allclose(out, dense_product(factors, 6), atol=1e-12)
    assert abs(norm(out) - 1) < 1e-12


def test_tensor_embed_rejects_bad_blocks():
    v = from_slater([0], 2)
    with pytest.raises(ValueError):
        tensor_embed([(v, (0, 1)), (v, (1, 2))])
    with pytest.raises(ValueError):
        tensor_embed([(v, (0, 1)), (v, (3, 4))])


# ------------------------------------------------------------------ permutations


def dense_permuted(det_modes, perm, n):
    vac = np.zeros(1 << n)
    vac[0] = 1
    amp = np.prod([perm.phase[m] for m in det_modes]) if det_modes else 1.0
    return amp * (creators([perm.target[m] for m in sorted(det_modes)], n) @ vac)


def test_permutation_examples():
    psi = from_slater([0, 1], 3)
    assert np.array_equal(permute_modes(psi, ModePermutation.identity(3)), psi)
    swap = ModePermutation([1, 0, 2])
    assert np.allclose(permute_modes(psi, swap), -psi)
    spin = fh_spin_flip(2)
    rng = np.random.default_rng(2)
    v = random_state(rng, 16)
    assert np.allclose(permute_modes(permute_modes(v, spin), spin), v)


def test_permutation_validation():
    with pytest.raises(ValueError):
        ModePermutation([0, 0])
    with pytest.raises(ValueError):
        ModePermutation([1, 0], [1.0, 2.0])


@settings(max_examples=40, deadline=None)
@given(st.permutations(range(5)), st.lists(st.sampled_from([1, -1, 1j, -1j]), min_size=5, max_size=5),
       st.integers(0, 31))
def test_permutation_matches_dense_creation_strings(target, phase, det):
    perm = ModePermutation(target, phase)
    modes = occupied(det)
    out = permute_modes(from_slater(modes, 5), perm)
    assert np.allclose(out, dense_permuted(modes, perm, 5), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(4)), st.permutations(range(4)), st.integers(0, 2**32 - 1))
def test_permutation_composition_and_norm(p, q, seed):
    P = ModePermutation(p, [1, -1, 1j, 1])
    Q = ModePermutation(q, [-1, 1, 1, -1j])
    psi = random_state(np.random.default_rng(seed), 16)
    assert np.allclose(permute_modes(psi, P.compose(Q)), permute_modes(permute_modes(psi, Q), P))
    assert abs(norm(permute_modes(psi, P)) - 1) < 1e-12


def test_permutation_conjugates_generators():
    # P exp(iθT) P^-1 = exp(iθT') with T' the relabeled generator, up to the phases (unit here)
    perm = ModePermutation([2, 0, 3, 1])
    rng = np.random.default_rng(4)
    psi = random_state(rng, 16)
    for gen in all_generators(4)[:25]:
        lhs = permute_modes(apply_excitation(psi, gen, 0.4), perm)
        rhs = apply_excitation(permute_modes(psi, perm), gen.relabeled(perm.target), 0.4)
        assert np.allclose(lhs, rhs, atol=1e-12)
