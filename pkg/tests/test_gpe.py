import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from krotovlab.core import ArgumentError, ControlField, NumericError, TimeGrid
from krotovlab.gpe import (GpeProblem, GpeState, Polynomial, ShiftedHarmonic, SpatialGrid,
                           SplitWell, TrapLattice, _Splitter, gp_residual, gpe_ground_state,
                           gpe_propagate, krotov_gpe, linear_eigenstates)
from krotovlab.krotov import SigmaSpec
from krotovlab.problems import entry

GRID = SpatialGrid(-8.0, 8.0, 128)


def _problem(kappa, potential=ShiftedHarmonic(1.0)):
    psi0 = gpe_ground_state(GRID, potential.value(GRID.x, 0.0), kappa).field
    return GpeProblem(GRID, potential, kappa, psi0, psi0)


def _ramp(intervals, horizon=1.0):
    grid = TimeGrid(horizon, intervals)
    return ControlField(grid, (0.8 * np.sin(np.pi * grid.midpoints / horizon))[None, :])


def test_linear_split_step_matches_dense_exponential():
    problem = _problem(0.0)
    control = _ramp(400)
    split = gpe_propagate(problem, control)[-1]
    h0 = GRID.kinetic_matrix()
    psi = problem.psi0.copy()
    for j, t in enumerate(control.grid.midpoints):
        h = h0 + np.diag(problem.potential_at(control.values[0, j], t, 1.0))
        psi = scipy.linalg.expm(-1j * control.grid.dt * h) @ psi
    assert GRID.norm(split - psi) <= 1e-6


def test_strang_second_order():
    problem = _problem(2.0)

    def final(n):
        return gpe_propagate(problem, _ramp(n))[-1]

    reference = final(400)
    ratio = GRID.norm(final(50) - reference) / GRID.norm(final(100) - reference)
    assert 3.5 <= ratio <= 4.5


@pytest.mark.parametrize("kappa", [0.0, 1.0, 10.0])
def test_norm_is_conserved(kappa):
    problem = _problem(kappa)
    states = gpe_propagate(problem, _ramp(100))
    drift = np.abs(np.array([GRID.norm(s) for s in states]) - 1.0)
    assert np.max(drift) <= 1e-8


def test_non_finite_propagation_raises():
    problem = _problem(1.0)
    with pytest.raises(NumericError):
        gpe_propagate(problem, _ramp(10), psi0=problem.psi0 + np.nan)


@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_adjoint_step_is_transpose_of_linearization(seed, kappa):
    rng = np.random.default_rng(seed)
    splitter = _Splitter(GRID, 0.01)
    psi = GRID.normalize(rng.normal(size=GRID.points) + 1j * rng.normal(size=GRID.points))
    chi = rng.normal(size=GRID.points) + 1j * rng.normal(size=GRID.points)
    delta = rng.normal(size=GRID.points) + 1j * rng.normal(size=GRID.points)
    potential = 0.5 * GRID.x**2
    eps = 1e-6
    linear = (splitter.step(psi + eps * delta, potential, kappa)
              - splitter.step(psi - eps * delta, potential, kappa)) / (2 * eps)
    lhs = np.vdot(chi, linear).real
    rhs = np.vdot(splitter.adjoint(chi, psi, potential, kappa), delta).real
    assert lhs == pytest.approx(rhs, rel=1e-6, abs=1e-6)


@pytest.mark.parametrize("kappa", [0.0, 1.0, 25.0, 100.0])
def test_ground_state_residual(kappa):
    potential = 0.5 * GRID.x**2
    state = gpe_ground_state(GRID, potential, kappa)
    _, residual = gp_residual(GRID, state.field, potential, kappa)
    assert residual <= 1e-6


def test_linear_ground_state_energy_of_harmonic_trap():
    energies, states = linear_eigenstates(GRID, 0.5 * GRID.x**2, 2)
    np.testing.assert_allclose(energies, [0.5, 1.5], atol=1e-8)
    assert abs(GRID.inner(states[0], states[1])) < 1e-10


@pytest.mark.parametrize("u", [0.0, 0.3, 1.0, 1.7])
def test_split_well_continuity(u):
    well = SplitWell(4.0)
    edge = u * 4.0 / 4
    below, above = edge - 1e-9, edge + 1e-9
    assert well.value(np.array([below]), u)[0] == pytest.approx(
        well.value(np.array([above]), u)[0], abs=1e-8)
    h = 1e-5
    for x0 in (below - h, above + h):
        left = well.value(np.array([x0 - h]), u)[0]
        right = well.value(np.array([x0 + h]), u)[0]
        slope = (right - left) / (2 * h)
        assert slope == pytest.approx(-x0 if abs(x0) < edge else np.sign(x0) *
                                      (abs(x0) - u * 2.0), abs=1e-6)


@pytest.mark.parametrize("potential", [SplitWell(4.0), Polynomial(0.5, 0.05, 0.002),
                                       ShiftedHarmonic(1.5), TrapLattice(2.0, 1.0)])
def test_potential_derivative_in_control(potential):
    x = np.linspace(-6, 6, 41)
    h = 1e-6
    for u in (0.2, 0.9):
        fd = (potential.value(x, u + h, 0.5, 1.0) - potential.value(x, u - h, 0.5, 1.0)) / (2 * h)
        np.testing.assert_allclose(potential.derivative(x, u, 0.5, 1.0), fd, atol=1e-5)


def test_grid_and_state_validation():
    with pytest.raises(ArgumentError):
        SpatialGrid(-1.0, 1.0, 100)
    with pytest.raises(ArgumentError):
        GpeState(np.ones(GRID.points), GRID)
    with pytest.raises(ArgumentError):
        SplitWell(0.0)


def test_krotov_gpe_short_run_is_monotone():
    built = entry("P7").with_params(intervals=100).build()
    trace = krotov_gpe(built.problem, built.guess, max_iters=5,
                       sigma=SigmaSpec("exponential", -1e-3, -1e-3, 0.1))
    assert trace.is_monotone(1e-10)
    assert trace.J[-1] < trace.J[0]


def test_krotov_gpe_simplified_update_is_monotone():
    built = entry("P6").with_params(intervals=100).build()
    trace = krotov_gpe(built.problem, built.guess, update="simplified", max_iters=4,
                       sigma=SigmaSpec("exponential", -1e-3, -1e-3, 0.1))
    assert trace.is_monotone(1e-10)
    with pytest.raises(ArgumentError):
        krotov_gpe(built.problem, built.guess, update="bogus")
