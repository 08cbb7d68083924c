import numpy as np
import pytest
from hypothesis import given, strategies as st

from krotovlab.core import SIGMA_X, SIGMA_Z, ArgumentError, ControlField, ControlSystem, TimeGrid
from krotovlab.costs import (BGATE, CNOT, CPHASE, GATES, QFT, DegenerateShapeError,
                             DensityProblem, DensityTerminant, GateTerminant,
                             LocalInvariantsTerminant, ObjectiveSpec, ObservableTerminant,
                             OverlapTerminant, ShapeFn, StateProblem, Terminant,
                             density_distance_residual, fluence, gamma_penalty, h1_penalty,
                             local_invariants, state_penalty, terminant_density, terminant_gate,
                             terminant_local_invariants, terminant_observable, terminant_overlap,
                             terminant_unitary_observable, total_objective)
from krotovlab.dynamics import Ensemble

from conftest import (INVARIANTS, oracle_invariants, random_hermitian, random_state,
                      random_unitary)


@pytest.mark.parametrize("name", sorted(INVARIANTS))
def test_local_invariants_golden_values(name):
    gate = np.eye(4) if name == "I" else GATES[name]
    np.testing.assert_allclose(local_invariants(gate), INVARIANTS[name], atol=1e-12)
    np.testing.assert_allclose(oracle_invariants(gate), INVARIANTS[name], atol=1e-12)


@given(st.integers(0, 10_000))
def test_local_invariants_under_local_dressing(seed):
    rng = np.random.default_rng(seed)
    gate = random_unitary(rng, 4)
    dressed = (np.kron(random_unitary(rng, 2), random_unitary(rng, 2)) @ gate
               @ np.kron(random_unitary(rng, 2), random_unitary(rng, 2)))
    np.testing.assert_allclose(local_invariants(dressed), local_invariants(gate), atol=1e-9)
    np.testing.assert_allclose(local_invariants(gate), oracle_invariants(gate), atol=1e-12)


def test_gates_are_unitary():
    for gate in (CNOT, CPHASE, QFT, BGATE):
        np.testing.assert_allclose(gate.conj().T @ gate, np.eye(4), atol=1e-14)


def test_scalar_terminants():
    assert terminant_overlap([1, 0], [1, 0]) == 0.0
    assert terminant_overlap([1, 0], [0, 1]) == 1.0
    assert terminant_overlap([1j, 0], [1, 0], "real_part") == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        terminant_overlap([1, 0], [1, 0], "bogus")
    assert terminant_observable([0, 1], SIGMA_Z) == 1.0
    assert terminant_gate(CNOT, CNOT) == pytest.approx(-1.0)
    assert terminant_gate(np.exp(0.3j) * CNOT, CNOT) == pytest.approx(-1.0)
    rho = np.diag([0.3, 0.7])
    assert terminant_density(rho, np.diag([1.0, 0.0])) == pytest.approx(-0.3)
    assert terminant_unitary_observable(SIGMA_X, SIGMA_Z, np.diag([1.0, 0.0])) == 1.0
    with pytest.raises(ArgumentError):
        terminant_unitary_observable(SIGMA_X, SIGMA_Z, np.eye(2), "bogus")


@given(st.integers(0, 10_000))
def test_density_distance_identity(seed):
    rng = np.random.default_rng(seed)
    psi, phi = random_state(rng, 3), random_state(rng, 3)
    rho0 = np.outer(psi, psi.conj())
    u = random_unitary(rng, 3)
    target = np.outer(phi, phi.conj())
    assert density_distance_residual(u @ rho0 @ u.conj().T, target, rho0) < 1e-12


@pytest.mark.parametrize("variant", ["squared", "real_part"])
def test_overlap_costate_matches_finite_differences(variant, rng):
    targets = np.stack([random_state(rng, 3), random_state(rng, 3)])
    finals = np.stack([random_state(rng, 3), random_state(rng, 3)])
    term = OverlapTerminant(targets, variant)
    np.testing.assert_allclose(term.costate(finals), Terminant.costate(term, finals), atol=1e-8)


def test_observable_and_gate_costates_match_finite_differences(rng):
    obs = random_hermitian(rng, 3)
    obs = obs @ obs
    finals = np.stack([random_state(rng, 3)])
    term = ObservableTerminant(obs, offset=2.0)
    assert term.concave
    assert not ObservableTerminant(-obs).concave
    np.testing.assert_allclose(term.costate(finals), Terminant.costate(term, finals), atol=1e-8)
    inputs = np.eye(4, dtype=complex)
    gate_term = GateTerminant(CNOT, inputs)
    finals = random_unitary(rng, 4).T
    np.testing.assert_allclose(gate_term.costate(finals), Terminant.costate(gate_term, finals),
                               atol=1e-8)
    assert gate_term.value(CNOT.T) == pytest.approx(-1.0)


def test_local_invariants_terminant_vanishes_on_locally_equivalent_gate(rng):
    dressed = np.kron(random_unitary(rng, 2), random_unitary(rng, 2)) @ CNOT
    assert terminant_local_invariants(dressed.T, CNOT) < 1e-12
    assert terminant_local_invariants(np.eye(4), CNOT) > 1.0
    term = LocalInvariantsTerminant(CNOT, np.eye(4))
    assert term.value(dressed.T) < 1e-12
    with pytest.raises(ArgumentError):
        terminant_local_invariants(np.eye(4)[:3], CNOT)


def test_local_invariants_terminant_on_subspace():
    embedded = np.zeros((4, 6), dtype=complex)
    embedded[:, :4] = CNOT.T
    projector = np.diag([1, 1, 1, 1, 0, 0])
    assert terminant_local_invariants(embedded, CNOT, projector) < 1e-12


def test_shapes():
    grid = TimeGrid(1.0, 4)
    np.testing.assert_allclose(ShapeFn().on_intervals(grid), 1.0)
    sine = ShapeFn("sine_squared")
    assert sine(0.0, 1.0) == 0.0 and sine(0.5, 1.0) == pytest.approx(1.0)
    assert ShapeFn("gaussian_palao")(0.5, 1.0) == pytest.approx(1.0)
    with pytest.raises(ArgumentError):
        ShapeFn("bogus")


def test_running_costs():
    grid = TimeGrid(2.0, 4)
    control = ControlField(grid, [[1.0, 2.0, 0.0, -1.0]])
    assert fluence(control, ShapeFn(), 0.5) == pytest.approx(0.5 * 0.5 * 6.0)
    assert h1_penalty(control, 1.0) == pytest.approx(0.5 * (4 + 16 + 4))
    zero = ControlField.constant(grid, 0.0)
    assert gamma_penalty(control, zero, ShapeFn(), 0.5) == pytest.approx(1.5)
    assert fluence(zero, ShapeFn("sine_squared"), 1.0) == 0.0
    spiky = ControlField(TimeGrid(1.0, 1), [[1.0]])
    assert fluence(spiky, ShapeFn("sine_squared"), 1.0) == pytest.approx(1.0)
    samples = np.array([[1, 0], [0, 1], [1, 0]], dtype=complex)
    assert state_penalty(samples, np.diag([1.0, 0.0]), -2.0, 0.5) == pytest.approx(-1.0)


def test_degenerate_shape_detection():
    grid = TimeGrid(1.0, 3)
    control = ControlField(grid, [[0.0, 1.0, 0.0]])

    class Vanishing(ShapeFn):
        def __call__(self, t, horizon):
            return np.zeros_like(np.asarray(t, dtype=float))

    with pytest.raises(DegenerateShapeError):
        fluence(control, Vanishing(), 1.0)


def test_objective_validation():
    term = OverlapTerminant([0, 1])
    with pytest.raises(ArgumentError):
        ObjectiveSpec(term, lambda_u=-1.0)
    with pytest.raises(ArgumentError):
        ObjectiveSpec(term, lambda_state=-1.0)
    with pytest.raises(ArgumentError):
        ObjectiveSpec(term, gamma_u=0.0)
    with pytest.raises(ArgumentError):
        ObjectiveSpec(term, lambda_state=-1.0, state_operator=np.array([[0, 1], [0, 0]]))


def test_total_objective_components():
    system = ControlSystem(SIGMA_Z, (SIGMA_X,))
    grid = TimeGrid(1.0, 10)
    control = ControlField.constant(grid, 0.3)
    objective = ObjectiveSpec(OverlapTerminant([0, 1]), lambda_u=0.5, lambda_du=0.1,
                              lambda_state=-0.2, state_operator=np.eye(2))
    problem = StateProblem(system, Ensemble([1, 0]), objective)
    ev = total_objective(problem, control)
    assert ev.fluence == pytest.approx(0.5 * 0.09)
    assert ev.h1 == 0.0
    assert ev.state_penalty == pytest.approx(-0.2)
    assert ev.J == pytest.approx(ev.terminant + ev.fluence + ev.state_penalty)
    rho_problem = DensityProblem(system, np.diag([1.0, 0.0]),
                                 ObjectiveSpec(DensityTerminant(np.diag([0.0, 1.0]))))
    rho_ev = total_objective(rho_problem, control)
    assert rho_ev.terminant == pytest.approx(ev.terminant - 1.0)
