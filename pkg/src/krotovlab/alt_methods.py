"""Companion optimizers: Zhu-Rabitz, Maday-Turinici, GRAPE, steepest descent, CRAB."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .core import (
    ArgumentError,
    ConfigurationError,
    ControlField,
    TimeGrid,
    expm_frechet_hermitian,
    hamiltonian_at,
    hermitian_expm,
)
from .costs import (
    DensityProblem,
    Evaluation,
    GateTerminant,
    ObservableTerminant,
    OverlapTerminant,
    ShapeFn,
    StateProblem,
    fluence,
    total_objective,
)
from .dynamics import propagate_costate_density, propagate_state, step_propagators
from .krotov import (
    SweepStats,
    _state_costates,
    channel_view,
    ensemble_gain,
    run_monotone,
    solve_node,
)
from .trace import OptimizationTrace, record_from


@dataclass(frozen=True)
class MadayTuriniciParams:
    delta: float = 1.0
    eta: float = 0.0

    def __post_init__(self):
        for name in ("delta", "eta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 2.0:
                raise ArgumentError(f"{name} must lie in [0, 2], got {value}")


# ------------------------------------------------------------ shared sweeps


@dataclass(frozen=True, eq=False)
class _RowProblem:
    """Rows propagated by one control: ensemble members or unitary columns."""

    system: object
    initial: np.ndarray
    value: Callable[[np.ndarray], float]
    costate: Callable[[np.ndarray], np.ndarray]
    lambda_u: float
    shape: ShapeFn


def _evaluate_rows(rows: _RowProblem, control: ControlField) -> Evaluation:
    props = step_propagators(rows.system, control)
    states = np.stack([propagate_state(rows.system, control, psi, props).samples
                       for psi in rows.initial])
    term = rows.value(states[:, -1, :])
    flu = fluence(control, rows.shape, rows.lambda_u)
    return Evaluation(J=term + flu, terminant=term, fluence=flu, state_penalty=0.0, h1=0.0,
                      states=states, propagators=props)


def _relaxed(weight: float, lam: float, anchor: float):
    def rule(s):
        return (1.0 - weight) * anchor + weight * (s / (2 * lam))
    return rule


def _stationary(lam: float):
    def rule(s):
        return s / (2 * lam)
    return rule


def _quadratic(lam: float):
    return lambda x: lam * x * x


def _backward_sweep(rows: _RowProblem, control: ControlField, states: np.ndarray,
                    rule_for, stats: SweepStats):
    """Costates under a self-consistent control chosen while sweeping backward.

    ``rule_for(b)`` gives the scalar rule around the current value ``b``.
    Returns the backward controls and the costates at every node.
    """
    system = rows.system
    grid = control.grid
    dt = grid.dt
    costates = np.empty_like(states)
    costates[:, -1] = rows.costate(states[:, -1, :])
    values = np.empty_like(control.values)
    lam = rows.lambda_u
    for j in range(grid.intervals - 1, -1, -1):
        u = control.values[:, j].copy()
        if rule_for is not None:
            phi_vec = ensemble_gain(system, dt, costates[:, j + 1], states[:, j])
            phi_cur = phi_vec(u)
            for l in range(system.n_controls):
                x, phi_cur = solve_node(channel_view(phi_vec, u, l), u[l], phi_cur,
                                        rule_for(u[l]), _quadratic(lam), -np.inf, np.inf,
                                        dt, stats)
                u[l] = x
        values[:, j] = u
        v = hermitian_expm(hamiltonian_at(system, u), dt)
        for e in range(states.shape[0]):
            costates[e, j] = v.conj().T @ costates[e, j + 1]
    stats.cauchy += states.shape[0]
    return values, costates


def _forward_sweep(rows: _RowProblem, control: ControlField, anchor: np.ndarray,
                   costates: np.ndarray, rule_for, stats: SweepStats) -> ControlField:
    system = rows.system
    grid = control.grid
    dt = grid.dt
    psi = rows.initial.copy()
    values = np.empty_like(control.values)
    lam = rows.lambda_u
    for j in range(grid.intervals):
        u = anchor[:, j].copy()
        phi_vec = ensemble_gain(system, dt, costates[:, j + 1], psi)
        phi_cur = phi_vec(u)
        for l in range(system.n_controls):
            x, phi_cur = solve_node(channel_view(phi_vec, u, l), u[l], phi_cur,
                                    rule_for(u[l]), _quadratic(lam), -np.inf, np.inf, dt, stats)
            u[l] = x
        values[:, j] = u
        psi = psi @ hermitian_expm(hamiltonian_at(system, u), dt).T
    stats.cauchy += psi.shape[0]
    return control.with_values(values)


def _rows_from_state(problem: StateProblem, control: ControlField) -> _RowProblem:
    objective = problem.objective
    terminant = objective.terminant
    quadratic = (isinstance(terminant, (ObservableTerminant, GateTerminant)) or
                 (isinstance(terminant, OverlapTerminant) and terminant.variant == "squared"))
    if not quadratic or not terminant.concave:
        raise ConfigurationError("needs a terminant -<psi, O psi> with O >= 0")
    if objective.lambda_u <= 0:
        raise ConfigurationError("needs lambda_u > 0")
    if objective.lambda_state or objective.lambda_du:
        raise ConfigurationError("state and derivative penalties are not supported")
    if objective.shape.kind != "constant":
        raise ConfigurationError("needs a constant shape function")
    if np.any(np.isfinite(control.lower)) or np.any(np.isfinite(control.upper)):
        raise ConfigurationError("needs an unbounded control box")
    return _RowProblem(problem.system, problem.ensemble.initial, terminant.value,
                       terminant.costate, float(objective.lambda_u), objective.shape)


def _run_rows(method: str, rows: _RowProblem, u0: ControlField, backward_rule, forward_rule,
              max_iters: int, tol_dJ: float) -> OptimizationTrace:
    def evaluate(control):
        return _evaluate_rows(rows, control)

    def prepare(control, evaluation):
        stats = SweepStats()
        anchor, costates = _backward_sweep(rows, control, evaluation.states, backward_rule,
                                           stats)

        def sweep(_spec):
            local = SweepStats(stats.fallbacks, stats.unconverged, 0, stats.cauchy)
            proposal = _forward_sweep(rows, control, anchor, costates, forward_rule, local)
            return proposal, local, {}

        return sweep

    return run_monotone(method, u0, evaluate, prepare, lambda new, old: 0.0, max_iters,
                        tol_dJ, None, initial_cost=rows.initial.shape[0])


def _mt_rules(params: MadayTuriniciParams, lam: float):
    backward = None
    if params.eta != 0:
        def backward(b):
            return _relaxed(params.eta, lam, b)

    def forward(a):
        return _relaxed(params.delta, lam, a)

    return backward, forward


def zhu_rabitz(problem: StateProblem, u0: ControlField, max_iters: int = 1000,
               tol_dJ: float = 1e-8) -> OptimizationTrace:
    """Self-consistent backward and forward sweeps with the stationary control law."""
    rows = _rows_from_state(problem, u0)
    lam = rows.lambda_u
    return _run_rows("zhu_rabitz", rows, u0, lambda b: _stationary(lam),
                     lambda a: _stationary(lam), max_iters, tol_dJ)


def maday_turinici(problem: StateProblem, u0: ControlField,
                   params: MadayTuriniciParams = MadayTuriniciParams(),
                   max_iters: int = 1000, tol_dJ: float = 1e-8) -> OptimizationTrace:
    rows = _rows_from_state(problem, u0)
    backward, forward = _mt_rules(params, rows.lambda_u)
    return _run_rows(f"maday_turinici({params.delta:g},{params.eta:g})", rows, u0, backward,
                     forward, max_iters, tol_dJ)


@dataclass(frozen=True, eq=False)
class UnitaryProblem:
    """Gate dynamics with ``-Tr(O U rho0 U^dagger) - Tr(U^dagger M U) + lambda_u int u^2``."""

    system: object
    observable: np.ndarray
    rho0: np.ndarray
    regularizer: np.ndarray
    lambda_u: float

    def __post_init__(self):
        n = self.system.dim
        for name in ("observable", "rho0", "regularizer"):
            mat = np.asarray(getattr(self, name), dtype=complex)
            if mat.shape != (n, n) or np.max(np.abs(mat - mat.conj().T)) > 1e-12:
                raise ArgumentError(f"{name} must be a Hermitian {n}x{n} matrix")
            if np.linalg.eigvalsh(mat)[0] < -1e-12:
                raise ArgumentError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, mat)
        if self.lambda_u <= 0:
            raise ArgumentError("lambda_u must be positive")

    @classmethod
    def scaled_identity(cls, system, observable, rho0, kappa: float, lambda_u: float):
        return cls(system, observable, rho0, kappa * np.eye(system.dim), lambda_u)


def maday_turinici_unitary(problem: UnitaryProblem, u0: ControlField,
                           params: MadayTuriniciParams = MadayTuriniciParams(),
                           max_iters: int = 1000, tol_dJ: float = 1e-8) -> OptimizationTrace:
    """Maday-Turinici on the propagator; the columns of ``U`` are swept together."""
    if np.any(np.isfinite(u0.lower)) or np.any(np.isfinite(u0.upper)):
        raise ConfigurationError("needs an unbounded control box")
    obs, rho0, reg = problem.observable, problem.rho0, problem.regularizer

    def value(rows):
        u = rows.T
        return float(-np.trace(obs @ u @ rho0 @ u.conj().T).real
                     - np.trace(u.conj().T @ reg @ u).real)

    def costate(rows):
        u = rows.T
        return (obs @ u @ rho0 + reg @ u).T

    n = problem.system.dim
    rows = _RowProblem(problem.system, np.eye(n, dtype=complex), value, costate,
                       float(problem.lambda_u), ShapeFn())
    backward, forward = _mt_rules(params, rows.lambda_u)
    return _run_rows("maday_turinici_unitary", rows, u0, backward, forward, max_iters, tol_dJ)


# ------------------------------------------------------------------- GRAPE


def grape_gradient(problem, control: ControlField) -> tuple[float, np.ndarray]:
    """Objective and its exact gradient with respect to every control sample."""
    system = problem.system
    objective = problem.objective
    grid = control.grid
    dt = grid.dt
    evaluation = total_objective(problem, control)
    grad = np.zeros_like(control.values)
    if isinstance(problem, DensityProblem):
        states = evaluation.states
        source = None
        if objective.lambda_state:
            op = np.asarray(objective.state_operator, dtype=complex)
            source = objective.lambda_state * (op if op.ndim == 3 else
                                               np.broadcast_to(op, states.shape))
        sigma = propagate_costate_density(system, control,
                                          objective.terminant.costate(states[-1]), source,
                                          evaluation.propagators).samples
        for j in range(grid.intervals):
            h = hamiltonian_at(system, control.values[:, j])
            for l, op in enumerate(system.controls):
                v, dv = expm_frechet_hermitian(h, op, dt)
                moved = dv @ states[j] @ v.conj().T
                grad[l, j] = -2.0 * np.einsum("ij,ji->", sigma[j + 1], moved).real
    else:
        states = evaluation.states
        costates = _state_costates(problem, control, evaluation)
        for j in range(grid.intervals):
            h = hamiltonian_at(system, control.values[:, j])
            for l, op in enumerate(system.controls):
                _, dv = expm_frechet_hermitian(h, op, dt)
                moved = states[:, j] @ dv.T
                grad[l, j] = -2.0 * np.sum((costates[:, j + 1].conj() * moved).real)
    shape = objective.shape.on_intervals(grid)
    if objective.lambda_u:
        grad += 2.0 * objective.lambda_u * dt * control.values / shape
    if objective.lambda_du:
        diffs = np.diff(control.values, axis=1)
        pad = np.zeros((control.n_channels, 1))
        grad += 2.0 * objective.lambda_du / dt * (np.hstack([pad, diffs])
                                                  - np.hstack([diffs, pad]))
    return evaluation.J, grad


def _finite_box(control: ControlField):
    return [(None if np.isinf(a) else a, None if np.isinf(b) else b)
            for a, b in control.bounds for _ in range(control.grid.intervals)]


def grape(problem, u0: ControlField, optimizer: str = "lbfgs", iters: int = 200,
          step: float = 1.0, tol_dJ: float = 1e-12) -> OptimizationTrace:
    """Piecewise-constant gradient optimization with exact adjoint gradients.

    ``optimizer="lbfgs"`` uses a limited-memory quasi-Newton update with box
    constraints; ``"fixed"`` takes gradient steps of size ``step`` and halves
    it whenever J would increase.
    """
    n_rows = 1 if isinstance(problem, DensityProblem) else problem.ensemble.size
    shape = u0.values.shape
    evaluations = {"count": 0}

    def fun(flat):
        evaluations["count"] += 1
        J, grad = grape_gradient(problem, u0.with_values(flat.reshape(shape)))
        return J, grad.ravel()

    first = total_objective(problem, u0)
    records = [record_from(0, first, J_regularized=float(first.J), cauchy=n_rows)]
    history = [u0.values.copy()]
    status = "max_iters"
    if optimizer == "lbfgs":
        def callback(xk):
            control = u0.with_values(np.clip(xk.reshape(shape), u0.lower[:, None],
                                             u0.upper[:, None]))
            ev = total_objective(problem, control)
            records.append(record_from(len(records), ev, J_regularized=float(ev.J),
                                       max_du=float(np.max(np.abs(control.values - history[-1]))),
                                       cauchy=n_rows + 2 * n_rows * evaluations["count"]))
            history.append(control.values.copy())

        _, g0 = fun(u0.values.ravel())
        if np.max(np.abs(g0)) < 1e-12:
            return OptimizationTrace("grape", records, u0, "converged", first.states, history,
                                     {"gradient_evaluations": 1})
        result = scipy.optimize.minimize(fun, u0.values.ravel(), jac=True, method="L-BFGS-B",
                                         bounds=_finite_box(u0), callback=callback,
                                         options={"maxiter": iters, "ftol": tol_dJ,
                                                  "gtol": 1e-12, "maxcor": 20})
        if result.success:
            status = "converged"
        elif result.nit >= iters:
            status = "max_iters"
        else:
            status = "stalled"
        control = u0.with_values(history[-1])
    elif optimizer == "fixed":
        control = u0
        J = first.J
        for k in range(1, iters + 1):
            _, grad = fun(control.values.ravel())
            if np.max(np.abs(grad)) < 1e-12:
                status = "converged"
                break
            trial_step = step
            while True:
                trial = control.with_values(control.values - trial_step * grad.reshape(shape),
                                            clip=True)
                ev = total_objective(problem, trial)
                if ev.J < J:
                    break
                trial_step *= 0.5
                if trial_step < 1e-14 * step:
                    ev = None
                    break
            if ev is None:
                status = "stalled"
                break
            records.append(record_from(k, ev, J_regularized=float(ev.J),
                                       max_du=float(np.max(np.abs(trial.values
                                                                  - control.values))),
                                       cauchy=n_rows + 2 * n_rows * evaluations["count"]))
            history.append(trial.values.copy())
            dJ = J - ev.J
            control, J = trial, ev.J
            if dJ < tol_dJ:
                status = "converged"
                break
    else:
        raise ArgumentError(f"unknown optimizer {optimizer!r}")
    final = total_objective(problem, control)
    return OptimizationTrace("grape", records, control, status, final.states, history,
                             {"gradient_evaluations": evaluations["count"]})


# -------------------------------------------------------- steepest descent


def _band_mask(n: int, dt: float, band) -> np.ndarray:
    omega = 2 * np.pi * np.fft.rfftfreq(n, dt)
    low, high = band
    return (omega >= low) & (omega <= high)


def band_filter(values: np.ndarray, dt: float, band) -> np.ndarray:
    """Keep only the DFT bins with angular frequency inside ``band``."""
    values = np.atleast_2d(values)
    mask = _band_mask(values.shape[1], dt, band)
    if np.all(mask):
        return values.copy()
    spectrum = np.fft.rfft(values, axis=1) * mask
    return np.fft.irfft(spectrum, n=values.shape[1], axis=1)


def golden_section(func: Callable[[float], float], upper: float, evaluations: int = 40):
    """Minimize ``func`` on ``[0, upper]``; returns the best point seen and its value."""
    ratio = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = 0.0, upper
    c = b - ratio * (b - a)
    d = a + ratio * (b - a)
    fc, fd = func(c), func(d)
    seen = [(fc, c), (fd, d)]
    for _ in range(evaluations - 2):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = func(c)
            seen.append((fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = func(d)
            seen.append((fd, d))
    value, point = min(seen)
    return point, value


def steepest_descent(problem, u0: ControlField, band=None, max_iters: int = 200,
                     tol_dJ: float = 1e-10, evaluations: int = 40) -> OptimizationTrace:
    """Gradient steps with golden-section line search, optionally band filtered."""
    n_rows = 1 if isinstance(problem, DensityProblem) else problem.ensemble.size
    control = u0
    first = total_objective(problem, control)
    J = first.J
    cauchy = n_rows
    records = [record_from(0, first, J_regularized=float(J), cauchy=cauchy)]
    history = [control.values.copy()]
    status = "max_iters"
    dt = control.grid.dt
    for k in range(1, max_iters + 1):
        _, grad = grape_gradient(problem, control)
        cauchy += 2 * n_rows
        direction = -grad / dt
        if band is not None:
            direction = band_filter(direction, dt, band)
        scale = float(np.max(np.abs(direction)))
        if scale == 0.0:
            status = "converged"
            break

        def along(beta):
            trial = control.with_values(control.values + beta * direction, clip=True)
            return total_objective(problem, trial).J

        # shrink the bracket when the search misses the descent region near zero
        upper = 10.0 / scale
        for _ in range(8):
            beta, value = golden_section(along, upper, evaluations)
            cauchy += evaluations * n_rows
            if value < J:
                break
            upper *= 0.1
        if not value < J:
            status = "stalled"
            break
        trial = control.with_values(control.values + beta * direction, clip=True)
        ev = total_objective(problem, trial)
        records.append(record_from(k, ev, J_regularized=float(ev.J), cauchy=cauchy,
                                   max_du=float(np.max(np.abs(trial.values - control.values))),
                                   extra={"beta": beta}))
        history.append(trial.values.copy())
        dJ = J - ev.J
        control, J = trial, ev.J
        if dJ < tol_dJ:
            status = "converged"
            break
    final = total_objective(problem, control)
    return OptimizationTrace("steepest_descent", records, control, status, final.states,
                             history, {"band": band})


def smooth_control(u: ControlField, alpha: float, cutoff: float) -> ControlField:
    """``(1 - alpha) u + alpha F(u)`` with ``F`` an ideal DFT low-pass at ``cutoff``."""
    if not 0.0 <= alpha <= 1.0:
        raise ArgumentError("alpha must lie in [0, 1]")
    filtered = band_filter(u.values, u.grid.dt, (0.0, cutoff))
    return u.with_values((1.0 - alpha) * u.values + alpha * filtered, clip=True)


# -------------------------------------------------------------------- CRAB


@dataclass(frozen=True, eq=False)
class CrabBasis:
    """Randomized Fourier basis multiplying a guess pulse."""

    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    u_guess: ControlField
    shape: ShapeFn = field(default_factory=ShapeFn)
    seed: int | None = None

    def __post_init__(self):
        m = self.u_guess.n_channels
        r = np.asarray(self.r, dtype=float).ravel()
        a = np.asarray(self.a, dtype=float).reshape(m, -1)
        b = np.asarray(self.b, dtype=float).reshape(m, -1)
        if a.shape != b.shape or a.shape[1] != r.size:
            raise ArgumentError("coefficients must be (channels, n_terms) matching r")
        if np.any(np.abs(r) > 0.5):
            raise ArgumentError("frequency jitter r_j must lie in [-0.5, 0.5]")
        for name, value in (("a", a), ("b", b), ("r", r)):
            object.__setattr__(self, name, value)

    @property
    def n_terms(self) -> int:
        return self.r.size

    @property
    def frequencies(self) -> np.ndarray:
        j = np.arange(1, self.n_terms + 1)
        return 2 * np.pi * j * (1 + self.r) / self.u_guess.grid.horizon

    @classmethod
    def random(cls, u_guess: ControlField, n_terms: int, seed: int,
               shape: ShapeFn = ShapeFn()) -> "CrabBasis":
        rng = np.random.default_rng(seed)
        r = rng.uniform(-0.5, 0.5, n_terms)
        zeros = np.zeros((u_guess.n_channels, n_terms))
        return cls(zeros, zeros, r, u_guess, shape, seed)

    def with_coefficients(self, flat) -> "CrabBasis":
        flat = np.asarray(flat, dtype=float)
        half = flat.size // 2
        return CrabBasis(flat[:half], flat[half:], self.r, self.u_guess, self.shape, self.seed)

    @property
    def coefficients(self) -> np.ndarray:
        return np.concatenate([self.a.ravel(), self.b.ravel()])


def crab_expand(basis: CrabBasis, grid: TimeGrid | None = None) -> ControlField:
    guess = basis.u_guess
    grid = guess.grid if grid is None else grid
    if grid != guess.grid:
        raise ArgumentError("the guess pulse must live on the requested grid")
    t = grid.midpoints
    phases = np.outer(basis.frequencies, t)
    series = basis.a @ np.sin(phases) + basis.b @ np.cos(phases)
    shape = basis.shape(t, grid.horizon)
    return guess.with_values(guess.values * (1.0 + shape * series), clip=True)


@dataclass
class NelderMeadResult:
    x: np.ndarray
    value: float
    history: list[float]
    iterations: int
    simplex: np.ndarray


def nelder_mead(objective: Callable[[np.ndarray], float], x0, iters: int = 200,
                initial_simplex=None, step: float = 0.1, xatol: float = 1e-10,
                fatol: float = 1e-14) -> NelderMeadResult:
    """Derivative-free simplex search (reflection 1, expansion 2, contraction and shrink 0.5)."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.size < 1:
        raise ArgumentError("need at least one parameter")
    if initial_simplex is None:
        initial_simplex = np.vstack([x0, x0 + step * np.eye(x0.size)])
    history: list[float] = []

    def callback(xk):
        history.append(float(objective(xk)))

    result = scipy.optimize.minimize(objective, x0, method="Nelder-Mead", callback=callback,
                                     options={"initial_simplex": initial_simplex,
                                              "maxiter": iters, "xatol": xatol,
                                              "fatol": fatol, "adaptive": False})
    return NelderMeadResult(np.asarray(result.x), float(result.fun), history, int(result.nit),
                            np.asarray(result.final_simplex[0]))


def crab(problem, basis: CrabBasis, iters: int = 300, step: float = 0.1) -> OptimizationTrace:
    """CRAB: Nelder-Mead over the basis coefficients."""
    n_rows = 1 if isinstance(problem, DensityProblem) else problem.ensemble.size
    count = {"n": 0}

    def cost(flat):
        count["n"] += 1
        return total_objective(problem, crab_expand(basis.with_coefficients(flat))).J

    start = crab_expand(basis)
    first = total_objective(problem, start)
    records = [record_from(0, first, J_regularized=float(first.J), cauchy=n_rows)]
    history = [start.values.copy()]

    x = basis.coefficients
    simplex = np.vstack([x, x + step * np.eye(x.size)])

    def callback(xk):
        control = crab_expand(basis.with_coefficients(xk))
        ev = total_objective(problem, control)
        records.append(record_from(len(records), ev, J_regularized=float(ev.J),
                                   cauchy=n_rows * count["n"],
                                   max_du=float(np.max(np.abs(control.values - history[-1])))))
        history.append(control.values.copy())

    result = scipy.optimize.minimize(cost, x, method="Nelder-Mead", callback=callback,
                                     options={"initial_simplex": simplex, "maxiter": iters,
                                              "xatol": 1e-10, "fatol": 1e-14})
    final_basis = basis.with_coefficients(result.x)
    control = crab_expand(final_basis)
    final = total_objective(problem, control)
    return OptimizationTrace("crab", records, control,
                             "converged" if result.success else "max_iters", final.states,
                             history, {"seed": basis.seed, "coefficients": result.x,
                                       "frequencies": final_basis.frequencies})
