import copy
import math

import numpy as np
import pytest

import toy_nsm
from forgevqe.adapt import LoopOptions
from forgevqe.fermion import fermi_hubbard, fh_spin_flip, shell_model
from forgevqe.forge import (
    ForgedState,
    ForgingError,
    assemble,
    build_reference,
    calibrate,
    detect_multiplet,
    distributions,
    expand_second_layer,
    forged_gradient,
    run_edef,
    schmidt_factor_states,
    schmidt_of,
    symmetry_transform,
)
from forgevqe.oracle import solve
from forgevqe.schmidt import truncation_infidelity
from forgevqe.statevector import ExcitationGenerator


def fh(tm=1.0, u=1.0):
    model = fermi_hubbard(4, 1.0, tm, u)
    return model, solve(model)


def nsm(text, z, n):
    model = shell_model(text, z, n)
    return model, solve(model)


CASES = {
    "fh(1,1)": lambda: fh(1.0, 1.0),
    "fh(0.25,3)": lambda: fh(0.25, 3.0),
    "single_j": lambda: nsm(toy_nsm.single_j(qq=1.0), 2, 4),
    "two_orbital": lambda: nsm(toy_nsm.two_orbital(qq=1.0), 2, 2),
}


@pytest.fixture(scope="module", params=sorted(CASES))
def case(request):
    model, ground = CASES[request.param]()
    return model, ground, build_reference(model, ground)


def test_reference_is_normalized_and_orthogonal(case):
    model, ground, fs = case
    gram = fs.term_overlaps()
    assert np.allclose(gram, np.eye(len(fs.terms)), atol=1e-10)
    psi = assemble(fs)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    assert assemble(fs, full=True).size == 1 << model.n_modes


def test_schmidt_factors_reach_the_truncation_bound(case):
    model, ground, fs = case
    exact = copy.deepcopy(fs)
    exact.fixed_states = schmidt_factor_states(exact, ground)
    calibrate(exact, ground)
    fid = ground.fidelity(exact.vector())
    assert fid == pytest.approx(1.0 - exact.bound, abs=1e-10)


def test_calibrated_signs_are_locally_optimal(case):
    model, ground, fs = case
    exact = copy.deepcopy(fs)
    exact.fixed_states = schmidt_factor_states(exact, ground)
    calibrate(exact, ground)
    best = ground.fidelity(exact.vector())
    for orbit in {t.orbit for t in exact.terms}:
        trial = copy.deepcopy(exact)
        for t in trial.terms:
            if t.orbit == orbit:
                t.sign = -t.sign
        assert ground.fidelity(trial.vector()) <= best + 1e-12


def test_fh_tying_groups():
    model, ground = fh()
    groups = build_reference(model, ground).tying_groups
    assert groups["lam0"] == ["l0r0"]
    assert len(groups["lam1"]) == 4


def test_fh_bound_is_five_term_truncation():
    model, ground = fh()
    fs = build_reference(model, ground)
    sd = schmidt_of(model, ground, fs.blocks[0])
    assert fs.bound == pytest.approx(truncation_infidelity(sd, 5))
    assert fs.lam["lam0"] ** 2 + 4 * fs.lam["lam1"] ** 2 == pytest.approx(1.0)


def test_multiplet_detection():
    model, ground = nsm(toy_nsm.single_j(qq=1.0), 2, 4)
    sd = schmidt_of(model, ground, model.table.block(1, "A"))
    assert detect_multiplet(sd) == 2
    fs = build_reference(model, ground)
    assert len(fs.tying_groups["lam1"]) == 5
    free = nsm(toy_nsm.single_j(qq=0.0), 2, 4)
    fs0 = build_reference(*free)
    assert len(fs0.tying_groups["lam1"]) == 1


def test_derived_factors_take_no_operators():
    model, ground = fh()
    fs = build_reference(model, ground)
    gen = fs.circuits[fs.circuit_names[0]].pool[0]
    with pytest.raises(ForgingError):
        forged_gradient(fs, model.hamiltonian, (gen, "mirror"))
    with pytest.raises(ForgingError):
        fs.append("mirror", gen)
    with pytest.raises(ForgingError):
        forged_gradient(fs, model.hamiltonian, (ExcitationGenerator((0, 7)), fs.circuit_names[0]))


def test_spin_flip_twice_is_identity():
    model, ground = fh()
    spin = fh_spin_flip(4)
    twice = symmetry_transform(symmetry_transform(ground.vector, spin, ground.basis), spin, ground.basis)
    assert np.allclose(twice, ground.vector)
    once = symmetry_transform(ground.vector, spin, ground.basis)
    assert abs(abs(np.vdot(ground.vector, once)) - 1) < 1e-10


def test_fh_layout_requirements():
    with pytest.raises(ForgingError):
        build_reference(fermi_hubbard(4, 1.0, 1.0, 1.0, n_up=3, n_down=3))
    with pytest.raises(ForgingError):
        build_reference(fermi_hubbard(4), layers=2)
    with pytest.raises(ForgingError):
        ForgedState(fermi_hubbard(2), [(0, 2), (1, 3)], 1)
    with pytest.raises(ForgingError):
        ForgedState(fermi_hubbard(2), [(2, 3), (0, 1)], 1)


def test_second_layer_expansion():
    terms = expand_second_layer(2, (6, 2), "tilde", alpha=0.0, lam=0.81)
    assert terms[0].b == pytest.approx(0.9) and terms[1].b == 0.0
    assert [t.distribution for t in terms] == [(2, 0), (0, 2)]
    mixed = expand_second_layer(2, (6, 2), "degenerate", alpha=0.4, lam=0.5)
    assert [t.distribution for t in mixed] == [(2, 0), (1, 1)]
    assert sum(t.b ** 2 for t in mixed) == pytest.approx(0.5)
    assert distributions(4, (2, 4), "tilde") == ((2, 2), (0, 4))
    with pytest.raises(ForgingError):
        distributions(7, (2, 4), "tilde")
    with pytest.raises(ForgingError):
        distributions(0, (2, 4), "degenerate")
    with pytest.raises(ValueError):
        distributions(2, (2, 4), "other")


@pytest.mark.parametrize("model_fn,layers", [
    (lambda: fermi_hubbard(4, 1.0, 0.0, 1.0), 1),
    (lambda: shell_model(toy_nsm.single_j(qq=0.0), 2, 4), 1),
    (lambda: shell_model(toy_nsm.two_orbital(qq=0.0), 2, 2), 1),
    (lambda: shell_model(toy_nsm.two_orbital(qq=0.0), 2, 2), 2),
])
def test_uncoupled_limits_are_exact(model_fn, layers):
    records, fs = run_edef(model_fn(), layers)
    assert fs.bound == pytest.approx(0.0, abs=1e-12)
    assert records[-1].infidelity < 1e-8


def test_two_layer_state_structure():
    model, ground = nsm(toy_nsm.two_orbital(qq=1.0), 2, 2)
    fs = build_reference(model, ground, layers=2)
    assert len(fs.blocks) == 4
    assert set(fs.alphas) >= {"atilde.p", "atilde.n"}
    assert np.allclose(fs.term_overlaps(), np.eye(len(fs.terms)), atol=1e-10)
    with pytest.raises(ForgingError):
        schmidt_factor_states(fs, ground)


def test_variational_weights_have_consistent_gradient():
    model, ground = fh()
    from forgevqe.forge import ForgeOptions

    fs = build_reference(model, ground, 1, ForgeOptions(lam_mode="variational"))
    x = fs.params
    assert x.size == 1
    e, g = fs.energy_grad(model.hamiltonian, x)
    h = 1e-5
    num = (fs.energy_grad(model.hamiltonian, x + h)[0] - fs.energy_grad(model.hamiltonian, x - h)[0]) / (2 * h)
    assert g[0] == pytest.approx(num, abs=1e-7)
    lam = fs.lam_values()
    assert lam["lam0"] ** 2 + 4 * lam["lam1"] ** 2 == pytest.approx(1.0)


def test_state_dict_round_trip():
    model, ground = fh()
    records, fs = run_edef(model, options=LoopOptions(max_iter=4, infidelity_tol=0.0))
    fresh = build_reference(model, ground)
    fresh.load_dict(fs.to_dict())
    assert np.allclose(fresh.vector(), fs.vector(), atol=1e-14)
    bad = fs.to_dict()
    bad["signs"] = bad["signs"][:-1]
    with pytest.raises(ValueError):
        fresh.load_dict(bad)


def test_edef_fh_converges_near_bound():
    model, ground = fh()
    records, fs = run_edef(model)
    last = records[-1]
    assert last.infidelity <= fs.bound * 1.1
    assert last.iteration <= 20
    assert math.isfinite(last.energy)
