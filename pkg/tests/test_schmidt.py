import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgevqe.fermion import fermi_hubbard
from forgevqe.forge import schmidt_of
from forgevqe.oracle import solve
from forgevqe.schmidt import (
    Bipartition,
    decompose,
    degenerate_groups,
    entropy,
    max_entropy,
    truncation_infidelity,
)
from forgevqe.statevector import from_slater


def bell():
    v = np.zeros(4, dtype=complex)
    v[0] = v[3] = 1 / np.sqrt(2)
    return v


def test_product_state():
    sd = decompose(from_slater([0, 3], 4), Bipartition.halves(4))
    assert np.allclose(sd.values, [1.0])
    assert entropy(sd) == pytest.approx(0.0, abs=1e-12)
    assert truncation_infidelity(sd, 1) == pytest.approx(0.0, abs=1e-12)


def test_bell_state():
    sd = decompose(bell(), Bipartition([0], [1]))
    assert np.allclose(sd.values, [1 / np.sqrt(2)] * 2)
    assert entropy(sd) == pytest.approx(1.0)
    assert max_entropy(sd.cut) == 1.0


def test_rejects_unnormalized_and_bad_cuts():
    with pytest.raises(ValueError):
        decompose(2 * bell(), Bipartition([0], [1]))
    with pytest.raises(ValueError):
        Bipartition([0, 1], [1, 2])
    with pytest.raises(ValueError):
        Bipartition([0], [2])
    with pytest.raises(ValueError):
        truncation_infidelity(decompose(bell(), Bipartition([0], [1])), 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.data())
def test_reconstruction_and_bounds(n, seed, data):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    v /= np.linalg.norm(v)
    a = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=n - 1, unique=True))
    cut = Bipartition(a, [q for q in range(n) if q not in a])
    sd = decompose(v, cut)
    assert np.sum(sd.values ** 2) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sd.reconstruct(), v, atol=1e-12)
    assert sd.rank <= 2 ** min(len(cut.a), len(cut.b))
    assert 2 ** entropy(sd) <= sd.rank + 1e-9
    assert np.all(np.diff(sd.values) <= 1e-15)


def test_sector_resolved_matches_plain():
    model = fermi_hubbard(4, 1.0, 1.0, 1.0)
    g = solve(model)
    resolved = schmidt_of(model, g, model.table.block(1, "A"))
    plain = decompose(g.vector, resolved.cut, g.basis)
    assert np.allclose(resolved.values, plain.values[: resolved.values.size], atol=1e-12)
    assert np.allclose(resolved.reconstruct(), g.embed(), atol=1e-12)


def fh_sd(tm, u):
    model = fermi_hubbard(4, 1.0, tm, u)
    return schmidt_of(model, solve(model), model.table.block(1, "A"))


@pytest.mark.parametrize("tm", [0.25, 1.0, 2.0])
@pytest.mark.parametrize("u", [1.0, 3.0])
def test_fh_four_fold_degeneracy(tm, u):
    sd = fh_sd(tm, u)
    assert np.ptp(sd.values[1:5]) < 1e-8
    assert sd.values[5] < sd.values[4] * (1 - 1e-3)
    groups = degenerate_groups(sd.values)
    assert groups[0] == [0] and groups[1] == [1, 2, 3, 4]


def test_fh_entropy_values():
    sd0 = fh_sd(0.0, 1.0)
    assert entropy(sd0) == pytest.approx(0.0, abs=1e-10)
    assert entropy(fh_sd(2.0, 1.0)) / 4 == pytest.approx(0.60, abs=0.01)
    assert entropy(fh_sd(100.0, 1.0)) / 4 == pytest.approx(0.75, abs=0.01)


def test_fh_truncation_at_t_m_equal_t():
    sd = fh_sd(1.0, 1.0)
    # exact value of the five-term truncation for this geometry
    assert truncation_infidelity(sd, 5) == pytest.approx(0.01844, abs=5e-5)
