import numpy as np
import pytest

from krotovlab.controllability import projective_controllability_verdict
from krotovlab.core import ArgumentError, ControlField
from krotovlab.costs import total_objective
from krotovlab.dynamics import propagate_state
from krotovlab.gpe import gp_residual, linear_eigenstates
from krotovlab.problems import (ROTOR_J_MIN, ROTOR_SIZE, ProblemCatalogEntry, catalog, entry,
                                rotor_system)

IDS = [e.id for e in catalog()]


def test_catalog_covers_the_model_problems():
    assert len(IDS) >= 7
    assert {"P1", "P2", "P3", "P4", "P5", "P6", "P7"} <= set(IDS)
    assert len(set(IDS)) == len(IDS)
    with pytest.raises(ArgumentError):
        entry("P99")


@pytest.mark.parametrize("problem_id", IDS)
def test_config_round_trip(problem_id):
    e = entry(problem_id)
    sections = e.to_config()
    back = ProblemCatalogEntry.from_config(sections)
    assert back.params == e.params
    assert back.to_config() == sections


@pytest.mark.parametrize("problem_id", IDS)
def test_guess_lies_on_the_declared_grid_and_box(problem_id):
    e = entry(problem_id)
    built = e.build()
    assert built.guess.grid == e.grid
    assert np.all(built.guess.values >= built.guess.lower[:, None])
    assert np.all(built.guess.values <= built.guess.upper[:, None])


@pytest.mark.parametrize("problem_id", [e.id for e in catalog() if e.kind == "state"])
def test_expected_controllability_verdicts(problem_id):
    e = entry(problem_id)
    assert projective_controllability_verdict(e.build().system).verdict == e.expected_verdict


def test_with_params_validation():
    e = entry("P1")
    assert e.with_params(intervals="40").params["intervals"] == 40
    with pytest.raises(ArgumentError):
        e.with_params(bogus=1)
    with pytest.raises(ArgumentError):
        e.with_params(intervals="forty")
    with pytest.raises(ArgumentError):
        entry("P5").with_params(gate="NOPE").build()
    with pytest.raises(ArgumentError):
        entry("P4").with_params(target_component=23).build()


def test_p1_is_a_two_level_transfer():
    built = entry("P1").build()
    assert built.system.dim == 2
    assert built.guess.grid.horizon == pytest.approx(np.pi)


def test_p2_undriven_transfer_is_small():
    built = entry("P2").build()
    zero = ControlField.constant(built.guess.grid, 0.0)
    final = propagate_state(built.system, zero, built.problem.ensemble.initial[0]).final
    assert abs(final[1]) ** 2 < 0.1


def test_p4_rotor_conventions():
    system = rotor_system()
    j = np.arange(ROTOR_SIZE) + ROTOR_J_MIN
    assert (j[0], j[-1]) == (-10, 11)
    np.testing.assert_allclose(np.diag(system.drift).real, j**2)
    cosine = system.controls[0]
    np.testing.assert_allclose(np.diag(cosine, 1), 0.5)
    np.testing.assert_allclose(cosine, cosine.T)
    built = entry("P4").build()
    psi0 = built.problem.ensemble.initial[0]
    assert np.argmax(np.abs(psi0)) == 1
    ev = total_objective(built.problem, built.guess.with_values(np.zeros((1, 800))))
    # with u = 0 the drift is diagonal, so z_2 stays full
    assert ev.terminant == pytest.approx(1.0, abs=1e-12)
    assert built.guess.upper[0] == pytest.approx(1 / 3)


def test_p5_targets_cnot_columns():
    built = entry("P5").build()
    targets = built.problem.ensemble.targets
    np.testing.assert_allclose(np.abs(targets[2]), [0, 0, 0, 1])
    np.testing.assert_allclose(np.abs(targets[3]), [0, 0, 1, 0])


def test_p6_states_are_ground_states():
    built = entry("P6").build()
    problem = built.problem
    grid = problem.grid
    for u, psi in ((0.0, problem.psi0), (1.0, problem.target)):
        _, residual = gp_residual(grid, psi, problem.potential.value(grid.x, u), problem.kappa)
        assert residual <= 1e-6
    # the goal is split: little density at the centre compared with the start
    centre = np.argmin(np.abs(grid.x))
    assert abs(problem.target[centre]) < 0.5 * abs(problem.psi0[centre])


def test_p7_single_minimum_and_bound_excited_state():
    built = entry("P7").build()
    problem = built.problem
    grid = problem.grid
    trap = problem.potential.value(grid.x, 0.0)
    slope = np.diff(trap)
    assert np.count_nonzero(np.diff(np.sign(slope)) != 0) == 1
    energies, _ = linear_eigenstates(grid, trap, 2)
    assert energies[1] < 0.1 * min(trap[0], trap[-1])
    # first excited state is odd about the trap centre
    np.testing.assert_allclose(grid.reflect(problem.target), -problem.target, atol=1e-8)
    assert abs(grid.inner(problem.target, problem.psi0)) < 1e-8
