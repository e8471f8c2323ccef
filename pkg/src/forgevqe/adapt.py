"""Adaptive ansatz construction (ADAPT-VQE) on a statevector simulator.

The loop works on any *variational state* exposing

    params / set_params(x)       flat parameter vector
    energy_grad(H, x)            Rayleigh quotient and its gradient
    scan(H)                      [(circuit name, generator, dE/dtheta at 0), ...]
    append(circuit, generator)   grow one circuit by exp(i theta T), theta = 0
    vector()                     normalized state over the model's sector basis
    circuits                     {name: AnsatzCircuit} of simulated circuits

:class:`PlainState` is the single-register ansatz; the forged state in
:mod:`forgevqe.forge` implements the same protocol.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator

from .basis import SectorBasis
from .fermion import Hamiltonian, Model, apply_hamiltonian
from .oracle import GroundState, solve
from .statevector import ExcitationGenerator, apply_excitation, k_overlap
from . import resources


class OptimizerDivergence(RuntimeError):
    pass


@dataclass
class AnsatzCircuit:
    """``exp(i theta_k T_k) ... exp(i theta_1 T_1)`` applied to one or more references.

    Generators use indices local to ``modes``; ``basis`` is the local sector
    basis and every reference is a determinant in it.  Several references
    share the same operators and parameters, which keeps mutually orthogonal
    references orthogonal.
    """

    name: str
    basis: SectorBasis
    references: list
    pool: list
    modes: tuple = ()
    operators: list = field(default_factory=list)
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        self.references = [int(r) for r in self.references]
        pos = self.basis.position(np.array(self.references, dtype=np.int64))
        self._ref_pos = [int(p) for p in pos]
        if not self.modes:
            self.modes = tuple(range(self.basis.n_modes))

    @property
    def n_params(self) -> int:
        return len(self.operators)

    def reference_vector(self, r: int = 0) -> np.ndarray:
        v = np.zeros(self.basis.dim, dtype=complex)
        v[self._ref_pos[r]] = 1.0
        return v

    def state(self, r: int = 0, params=None) -> np.ndarray:
        theta = self.params if params is None else params
        v = self.reference_vector(r)
        for gen, t in zip(self.operators, theta):
            v = apply_excitation(v, gen, t, self.basis)
        return v

    def states(self, params=None) -> list[np.ndarray]:
        return [self.state(r, params) for r in range(len(self.references))]

    def backprop(self, final: np.ndarray, covector: np.ndarray, params=None) -> np.ndarray:
        """Gradient ``2 Re <covector| d final / d theta_k>`` for every k."""
        theta = self.params if params is None else params
        grads = np.zeros(len(self.operators))
        phi, lam = final, covector
        for k in range(len(self.operators) - 1, -1, -1):
            gen = self.operators[k]
            grads[k] = 2.0 * k_overlap(lam, phi, gen, self.basis)
            if k:
                phi = apply_excitation(phi, gen, -theta[k], self.basis)
                lam = apply_excitation(lam, gen, -theta[k], self.basis)
        return grads

    def append(self, gen: ExcitationGenerator) -> None:
        if gen not in self.pool:
            raise ValueError(f"generator {gen.label} is not in the pool of circuit {self.name}")
        self.operators.append(gen)
        self.params = np.append(self.params, 0.0)

    def cnots(self) -> int:
        return resources.circuit_cnots(self)


def candidate_gradient(psi: np.ndarray, H: Hamiltonian, gen: ExcitationGenerator,
                       basis: SectorBasis | None = None) -> float:
    """``dE/dtheta`` at 0 for ``exp(i theta T)|psi>``, E the Rayleigh quotient."""
    psi = np.asarray(psi, dtype=complex)
    if basis is None:
        basis = SectorBasis.full(H.n_modes)
        if psi.size != basis.dim:
            raise ValueError(f"state of length {psi.size} does not fit {H.n_modes} modes")
    hpsi = apply_hamiltonian(H, psi, basis)
    nrm = float(np.vdot(psi, psi).real)
    e = float(np.vdot(psi, hpsi).real) / nrm
    return 2.0 * k_overlap((hpsi - e * psi) / nrm, psi, gen, basis)


class PlainState:
    """Single circuit over the whole sector basis."""

    def __init__(self, circuit: AnsatzCircuit):
        self.circuit = circuit
        self.circuits = {circuit.name: circuit}

    @property
    def params(self) -> np.ndarray:
        return self.circuit.params.copy()

    def set_params(self, x) -> None:
        self.circuit.params = np.asarray(x, dtype=float).copy()

    def vector(self) -> np.ndarray:
        return self.circuit.state()

    def energy_grad(self, H: Hamiltonian, x=None):
        x = self.circuit.params if x is None else np.asarray(x, dtype=float)
        b = self.circuit.basis
        psi = self.circuit.state(0, x)
        hpsi = H.matrix(b) @ psi
        nrm = float(np.vdot(psi, psi).real)
        e = float(np.vdot(psi, hpsi).real) / nrm
        w = (hpsi - e * psi) / nrm
        return e, self.circuit.backprop(psi, w, x)

    def scan(self, H: Hamiltonian):
        c = self.circuit
        psi = c.state()
        hpsi = H.matrix(c.basis) @ psi
        e = float(np.vdot(psi, hpsi).real)
        w = hpsi - e * psi
        return [(c.name, g, 2.0 * k_overlap(w, psi, g, c.basis)) for g in c.pool]

    def append(self, name: str, gen: ExcitationGenerator) -> None:
        self.circuit.append(gen)

    def lazy_active(self) -> list[int]:
        return [self.circuit.n_params - 1]

    def to_dict(self) -> dict:
        return {"circuits": {self.circuit.name: circuit_to_dict(self.circuit)}}

    def load_dict(self, data: dict) -> None:
        circuit_from_dict(self.circuit, data["circuits"][self.circuit.name])


def circuit_to_dict(c: AnsatzCircuit) -> dict:
    return {
        "references": list(c.references),
        "operators": [g.label for g in c.operators],
        "params": [float(t) for t in c.params],
    }


def circuit_from_dict(c: AnsatzCircuit, data: dict) -> None:
    if [int(r) for r in data["references"]] != c.references:
        raise ValueError(f"checkpoint references for circuit {c.name} do not match the configuration")
    c.operators = [ExcitationGenerator.parse(s) for s in data["operators"]]
    for g in c.operators:
        if g not in c.pool:
            raise ValueError(f"checkpoint operator {g.label} is not in the pool of {c.name}")
    c.params = np.array(data["params"], dtype=float)
    if c.params.size != len(c.operators):
        raise ValueError(f"checkpoint circuit {c.name} has mismatched parameter count")


# ---------------------------------------------------------------- metrics


@dataclass
class IterationRecord:
    iteration: int
    energy: float
    eps_e: float
    infidelity: float
    max_gradient: float
    circuit_id: str
    generator_id: str
    cnot_max: int
    cnot_per_circuit: dict
    wall_ms: float = 0.0


def infidelity(psi: np.ndarray, ground: GroundState) -> float:
    """``1 - |<psi|exact>|^2``; the ground eigenspace projector replaces the
    exact state when the ground level is degenerate."""
    return float(max(0.0, 1.0 - ground.fidelity(psi)))


def relative_error(energy: float, exact: float) -> float:
    if exact == 0:
        raise ValueError("relative energy error needs a nonzero exact energy")
    return abs(energy - exact) / abs(exact)


def convergence_rate(i_conv: float, n_it: int) -> float:
    """``r = -ln(I_conv) / N_it``."""
    if n_it <= 0:
        return float("nan")
    return -math.log(i_conv) / n_it if i_conv > 0 else float("inf")


def metrics(psi_or_energy, ground: GroundState, n_it: int, hamiltonian: Hamiltonian | None = None):
    """``(I, eps_E, r)`` for a state over ``ground.basis``.

    Given only an energy, ``I`` (and so ``r``) is NaN.  Given a state, its
    energy is evaluated with ``hamiltonian``.
    """
    if np.ndim(psi_or_energy) == 0:
        return float("nan"), relative_error(float(psi_or_energy), ground.energy), float("nan")
    psi = np.asarray(psi_or_energy, dtype=complex)
    if hamiltonian is None:
        raise ValueError("metrics on a state need the Hamiltonian")
    e = float(np.vdot(psi, hamiltonian.matrix(ground.basis) @ psi).real / np.vdot(psi, psi).real)
    inf = infidelity(psi, ground)
    return inf, relative_error(e, ground.energy), convergence_rate(inf, n_it)


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerOptions:
    gtol: float = 1e-8
    ftol_rel: float = 1e-12
    maxiter: int = 200
    divergence_tol: float = 1e-9


def optimize_parameters(vs, H: Hamiltonian, options: OptimizerOptions | None = None,
                        active: Sequence[int] | None = None):
    """Quasi-Newton (BFGS) minimization warm-started from ``vs.params``.

    ``active`` restricts the free parameters; the rest stay frozen.
    Returns ``(energy, n_inner_iterations)``.
    """
    opt = options or OptimizerOptions()
    x0 = vs.params
    if x0.size == 0:
        return vs.energy_grad(H)[0], 0
    idx = np.arange(x0.size) if active is None else np.asarray(active, dtype=int)
    e0 = vs.energy_grad(H, x0)[0]

    def fun(y):
        x = x0.copy()
        x[idx] = y
        e, g = vs.energy_grad(H, x)
        return e, g[idx]

    last = [e0]

    def stop(intermediate_result):
        e = float(intermediate_result.fun)
        if abs(last[0] - e) <= opt.ftol_rel * max(abs(e), 1e-300):
            raise StopIteration
        last[0] = e

    res = minimize(fun, x0[idx], jac=True, method="BFGS", callback=stop,
                   options={"gtol": opt.gtol, "maxiter": opt.maxiter})
    x = x0.copy()
    x[idx] = res.x
    e = vs.energy_grad(H, x)[0]
    if e > e0 + opt.divergence_tol:
        raise OptimizerDivergence(f"energy rose from {e0:.12g} to {e:.12g} during optimization")
    vs.set_params(x)
    return e, int(res.nit)


# ---------------------------------------------------------------- loop


@dataclass
class LoopOptions:
    max_iter: int = 100
    infidelity_tol: float = 1e-5
    gradient_tol: float = 1e-6
    tie_tol: float = 1e-10
    lazy_period: int = 1
    exclusion_period: int = 0
    bound: float | None = None
    bound_rtol: float = 0.05
    bound_atol: float = 1e-9
    timing: bool = False
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)


def cnot_counts(vs) -> dict:
    return {name: c.cnots() for name, c in vs.circuits.items()}


def _record(vs, H, ground, k, scan, choice, t0, opts) -> IterationRecord:
    psi = vs.vector()
    e = float(np.vdot(psi, H.matrix(ground.basis) @ psi).real / np.vdot(psi, psi).real)
    counts = cnot_counts(vs)
    return IterationRecord(
        iteration=k,
        energy=e,
        eps_e=relative_error(e, ground.energy),
        infidelity=infidelity(psi, ground),
        max_gradient=max((abs(g) for *_, g in scan), default=0.0),
        circuit_id=choice[0] if choice else "",
        generator_id=choice[1].label if choice else "",
        cnot_max=max(counts.values(), default=0),
        cnot_per_circuit=counts,
        wall_ms=(time.perf_counter() - t0) * 1e3 if opts.timing else 0.0,
    )


def _select(scan, excluded: set, tie_tol: float):
    best, best_abs = None, -1.0
    for name, gen, g in scan:
        if name in excluded:
            continue
        if abs(g) > best_abs + tie_tol:
            best, best_abs = (name, gen), abs(g)
    return best


def deepest_circuit(vs) -> str | None:
    counts = cnot_counts(vs)
    if not counts:
        return None
    return max(counts, key=lambda n: (counts[n], vs.circuits[n].n_params))


def stop_reason(rec: IterationRecord, opts: LoopOptions) -> str | None:
    if rec.infidelity < opts.infidelity_tol:
        return "infidelity"
    if opts.bound is not None and rec.infidelity <= opts.bound * (1 + opts.bound_rtol) + opts.bound_atol:
        return "bound"
    if rec.max_gradient < opts.gradient_tol:
        return "gradient"
    if rec.iteration >= opts.max_iter:
        return "max_iter"
    return None


def adaptive_loop(vs, H: Hamiltonian, ground: GroundState, opts: LoopOptions | None = None,
                  records: list | None = None,
                  on_record: Callable | None = None) -> list[IterationRecord]:
    """Grow ``vs`` until a stopping rule fires; resumable from ``records``."""
    opts = opts or LoopOptions()
    records = list(records or [])
    t0 = time.perf_counter()
    scan = vs.scan(H)
    if not records:
        records.append(_record(vs, H, ground, 0, scan, None, t0, opts))
        if on_record:
            on_record(vs, records)
    while stop_reason(records[-1], opts) is None:
        k = records[-1].iteration + 1
        t0 = time.perf_counter()
        excluded = set()
        if opts.exclusion_period and k % opts.exclusion_period == 0 and len(vs.circuits) > 1:
            excluded.add(deepest_circuit(vs))
        choice = _select(scan, excluded, opts.tie_tol)
        if choice is None:
            break
        vs.append(*choice)
        full = opts.lazy_period <= 1 or k % opts.lazy_period == 0
        active = None if full else vs.lazy_active()
        optimize_parameters(vs, H, opts.optimizer, active)
        scan = vs.scan(H)
        records.append(_record(vs, H, ground, k, scan, choice, t0, opts))
        if on_record:
            on_record(vs, records)
    return records


def lowest_determinant(H: Hamiltonian, basis: SectorBasis, exclude: Sequence[int] = ()) -> int:
    """Lowest diagonal energy determinant; ties go to the smallest bitmask."""
    diag = H.diagonal(basis.indices)
    order = np.lexsort((basis.indices, np.round(diag, 12)))
    for pos in order:
        if int(basis.indices[pos]) not in exclude:
            return int(basis.indices[pos])
    raise ValueError("no admissible reference determinant")


def plain_state(model: Model) -> PlainState:
    b = model.basis()
    ref = lowest_determinant(model.hamiltonian, b)
    return PlainState(AnsatzCircuit("full", b, [ref], model.pool()))


def run_adapt(model: Model, options: LoopOptions | None = None, ground: GroundState | None = None,
              vs: PlainState | None = None, records=None, on_record=None):
    """Standard single-register ADAPT-VQE.  Returns ``(records, state)``."""
    ground = ground or solve(model)
    vs = vs or plain_state(model)
    return adaptive_loop(vs, model.hamiltonian, ground, options, records, on_record), vs


class AdaptVQE(BaseEstimator):
    """Estimator wrapper around :func:`run_adapt`.

    ``fit(model)`` runs the loop and exposes ``records_``, ``energy_``,
    ``infidelity_``, ``n_iter_`` and ``state_``.
    """

    def __init__(self, max_iter: int = 100, infidelity_tol: float = 1e-5, gradient_tol: float = 1e-6,
                 lazy_period: int = 1, tie_tol: float = 1e-10):
        self.max_iter = max_iter
        self.infidelity_tol = infidelity_tol
        self.gradient_tol = gradient_tol
        self.lazy_period = lazy_period
        self.tie_tol = tie_tol

    def _options(self) -> LoopOptions:
        from ._validation import check_positive_int, check_positive_float

        return LoopOptions(
            max_iter=check_positive_int(self.max_iter, "max_iter", allow_zero=True),
            infidelity_tol=check_positive_float(self.infidelity_tol, "infidelity_tol"),
            gradient_tol=check_positive_float(self.gradient_tol, "gradient_tol"),
            lazy_period=check_positive_int(self.lazy_period, "lazy_period"),
            tie_tol=check_positive_float(self.tie_tol, "tie_tol"),
        )

    def fit(self, model: Model, y=None):
        opts = self._options()
        self.ground_ = solve(model)
        self.records_, self.state_ = run_adapt(model, opts, self.ground_)
        last = self.records_[-1]
        self.energy_ = last.energy
        self.infidelity_ = last.infidelity
        self.n_iter_ = last.iteration
        return self

    def summary(self) -> dict:
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "records_")
        return summary_row(self.records_, cuts=0, n_qubits=self.state_.circuit.basis.n_modes)


def summary_row(records: list, cuts: int, n_qubits: int) -> dict:
    last = records[-1]
    return {
        "cuts": cuts,
        "N_q": n_qubits,
        "N_it": last.iteration,
        "eps_E": last.eps_e,
        "I_conv": last.infidelity,
        "r": convergence_rate(last.infidelity, last.iteration),
    }
