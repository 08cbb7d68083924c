import numpy as np
import pytest
from hypothesis import given, strategies as st

from krotovlab.alt_methods import (CrabBasis, MadayTuriniciParams, UnitaryProblem,
                                   band_filter, crab, crab_expand, golden_section, grape,
                                   grape_gradient, maday_turinici, maday_turinici_unitary,
                                   nelder_mead, smooth_control, steepest_descent, zhu_rabitz)
from krotovlab.core import (SIGMA_X, SIGMA_Z, ArgumentError, ConfigurationError, ControlField,
                            ControlSystem, TimeGrid)
from krotovlab.costs import (DensityProblem, DensityTerminant, ObjectiveSpec,
                             OverlapTerminant, StateProblem, total_objective)
from krotovlab.dynamics import propagate_unitary
from krotovlab.krotov import KrotovOptions, krotov1_schrodinger
from krotovlab.problems import entry

LAMBDA = 0.05


def _p1(**changes):
    changes.setdefault("lambda_u", LAMBDA)
    changes.setdefault("intervals", 60)
    return entry("P1").with_params(**changes).build()


# -------------------------------------------------------- Maday-Turinici


def test_mt_one_zero_is_krotov_lambda_form():
    built = _p1()
    mt = maday_turinici(built.problem, built.guess, MadayTuriniciParams(1.0, 0.0), max_iters=10)
    kr = krotov1_schrodinger(built.problem, built.guess,
                             KrotovOptions(form="lambda_u_form", max_iters=10))
    np.testing.assert_allclose(mt.J, kr.J, atol=1e-12)
    np.testing.assert_allclose(mt.control.values, kr.control.values, atol=1e-12)


def test_mt_one_one_is_zhu_rabitz():
    built = _p1()
    mt = maday_turinici(built.problem, built.guess, MadayTuriniciParams(1.0, 1.0), max_iters=10)
    zr = zhu_rabitz(built.problem, built.guess, max_iters=10)
    np.testing.assert_allclose(mt.J, zr.J, atol=1e-12)
    np.testing.assert_allclose(mt.control.values, zr.control.values, atol=1e-12)


@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0, 1.5, 2.0])
@pytest.mark.parametrize("eta", [0.0, 0.5, 1.0, 1.5, 2.0])
def test_mt_grid_is_monotone(delta, eta):
    built = _p1(intervals=40)
    trace = maday_turinici(built.problem, built.guess, MadayTuriniciParams(delta, eta),
                           max_iters=8)
    assert trace.is_monotone(1e-10)


def test_mt_delta_zero_eta_zero_is_stationary():
    built = _p1(intervals=40)
    trace = maday_turinici(built.problem, built.guess, MadayTuriniciParams(0.0, 0.0),
                           max_iters=5)
    np.testing.assert_array_equal(trace.control.values, built.guess.values)


def test_zhu_rabitz_converges():
    built = _p1()
    trace = zhu_rabitz(built.problem, built.guess, max_iters=80)
    assert trace.is_monotone(1e-10)
    assert trace.records[-1].terminant < 0.05


def test_row_methods_validate():
    with pytest.raises(ArgumentError):
        MadayTuriniciParams(2.5, 0.0)
    with pytest.raises(ConfigurationError):
        zhu_rabitz(_p1(lambda_u=0.0).problem, _p1().guess)
    bounded = ControlField.constant(TimeGrid(np.pi, 60), 0.1, ((-1.0, 1.0),))
    with pytest.raises(ConfigurationError):
        maday_turinici(_p1().problem, bounded)


def test_mt_unitary_monotone_and_value():
    system = ControlSystem(SIGMA_Z, (SIGMA_X,))
    observable = np.diag([0.0, 1.0]).astype(complex)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    problem = UnitaryProblem.scaled_identity(system, observable, rho0, 0.3, LAMBDA)
    guess = ControlField.constant(TimeGrid(np.pi, 60), 0.1)
    trace = maday_turinici_unitary(problem, guess, max_iters=20)
    assert trace.is_monotone(1e-10)
    u = propagate_unitary(system, trace.control).final
    # -Tr(U^dagger kappa I U) is the constant -kappa n
    expected = -np.trace(observable @ u @ rho0 @ u.conj().T).real - 0.3 * 2
    assert trace.records[-1].terminant == pytest.approx(expected, abs=1e-10)
    assert trace.records[-1].terminant < -0.6 - 0.9
    with pytest.raises(ArgumentError):
        UnitaryProblem(system, -observable, rho0, np.eye(2), LAMBDA)


# ------------------------------------------------------------------ GRAPE


def _fd_gradient(problem, control, h=1e-6):
    out = np.zeros_like(control.values)
    for idx in np.ndindex(*control.values.shape):
        plus, minus = control.values.copy(), control.values.copy()
        plus[idx] += h
        minus[idx] -= h
        out[idx] = (total_objective(problem, control.with_values(plus)).J
                    - total_objective(problem, control.with_values(minus)).J) / (2 * h)
    return out


@pytest.mark.parametrize("problem_id", ["P1", "P3", "P5"])
def test_grape_gradient_matches_finite_differences(problem_id):
    built = entry(problem_id).with_params(intervals=12).build()
    rng = np.random.default_rng(7)
    control = built.guess.with_values(built.guess.values
                                      + 0.1 * rng.normal(size=built.guess.values.shape))
    J, grad = grape_gradient(built.problem, control)
    assert J == pytest.approx(total_objective(built.problem, control).J)
    np.testing.assert_allclose(grad, _fd_gradient(built.problem, control), atol=1e-8)


def test_grape_gradient_density_matches_finite_differences():
    system = ControlSystem(SIGMA_Z, (SIGMA_X,))
    problem = DensityProblem(system, np.diag([0.8, 0.2]).astype(complex),
                             ObjectiveSpec(DensityTerminant(np.diag([0.0, 1.0])),
                                           lambda_u=0.1))
    control = ControlField(TimeGrid(1.0, 10), np.linspace(-0.5, 0.5, 10)[None, :])
    _, grad = grape_gradient(problem, control)
    np.testing.assert_allclose(grad, _fd_gradient(problem, control), atol=1e-8)


@pytest.mark.parametrize("optimizer", ["lbfgs", "fixed"])
def test_grape_reduces_objective(optimizer):
    built = entry("P1").with_params(intervals=60).build()
    # per-sample gradients scale with dt, so the fixed step is of order 1/dt
    step = 0.5 / built.guess.grid.dt
    trace = grape(built.problem, built.guess, optimizer=optimizer, iters=60, step=step)
    assert trace.is_monotone(1e-10)
    assert trace.J[-1] < 1e-3
    with pytest.raises(ArgumentError):
        grape(built.problem, built.guess, optimizer="newton")


# ------------------------------------------------------- steepest descent


def test_steepest_descent_monotone_and_converges():
    built = entry("P1").with_params(intervals=60).build()
    trace = steepest_descent(built.problem, built.guess, max_iters=60)
    assert trace.is_monotone(1e-12)
    assert trace.J[-1] < 1e-6


def test_steepest_descent_band_limited_increments():
    built = entry("P1").with_params(intervals=64).build()
    band = (0.0, 4.0)
    trace = steepest_descent(built.problem, built.guess, band=band, max_iters=10)
    assert trace.is_monotone(1e-12)
    increment = trace.control.values - built.guess.values
    np.testing.assert_allclose(band_filter(increment, built.guess.grid.dt, band), increment,
                               atol=1e-10)


def test_band_filter_keeps_in_band_and_removes_out_of_band():
    grid = TimeGrid(2 * np.pi, 128)
    t = grid.midpoints
    low, high = np.cos(2 * t), np.cos(20 * t)
    out = band_filter(low + high, grid.dt, (0.0, 5.0))
    np.testing.assert_allclose(out[0], low, atol=1e-10)


@given(st.floats(0.05, 0.95), st.floats(0.5, 3.0))
def test_golden_section_finds_parabola_minimum(frac, width):
    upper = 2.0
    center = frac * upper
    point, value = golden_section(lambda x: width * (x - center) ** 2, upper, 60)
    assert point == pytest.approx(center, abs=1e-6)
    assert value <= width * 1e-12


def test_smooth_control_limits():
    grid = TimeGrid(2 * np.pi, 128)
    t = grid.midpoints
    u = ControlField(grid, (np.cos(t) + np.cos(30 * t))[None, :])
    np.testing.assert_allclose(smooth_control(u, 0.0, 5.0).values, u.values, atol=1e-12)
    np.testing.assert_allclose(smooth_control(u, 1.0, 5.0).values[0], np.cos(t), atol=1e-10)
    with pytest.raises(ArgumentError):
        smooth_control(u, 1.5, 5.0)


# ------------------------------------------------------------------- CRAB


def test_nelder_mead_rosenbrock():
    def rosen(x):
        return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2

    result = nelder_mead(rosen, [-1.0, 1.0], iters=2000)
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-5)
    assert all(b <= a + 1e-15 for a, b in zip(result.history, result.history[1:]))


def test_crab_basis_validation_and_expansion():
    guess = ControlField.constant(TimeGrid(1.0, 20), 0.5)
    with pytest.raises(ArgumentError):
        CrabBasis(np.zeros((1, 2)), np.zeros((1, 2)), [0.1, 0.7], guess)
    basis = CrabBasis.random(guess, 3, seed=5)
    assert np.all(np.abs(basis.r) <= 0.5)
    np.testing.assert_allclose(crab_expand(basis).values, guess.values)
    again = CrabBasis.random(guess, 3, seed=5)
    np.testing.assert_array_equal(basis.r, again.r)


def test_crab_deterministic_and_improving():
    built = entry("P1").with_params(intervals=40).build()
    runs = []
    for _ in range(2):
        basis = CrabBasis.random(built.guess, 4, seed=11)
        runs.append(crab(built.problem, basis, iters=150, step=0.5))
    np.testing.assert_array_equal(runs[0].J, runs[1].J)
    assert runs[0].J[-1] < runs[0].J[0]
    assert np.all(np.diff(runs[0].J) <= 1e-15)
