"""Monotone Krotov iterations.

All variants share one discrete scheme. The backward sweep stores costates
along the current process; the forward sweep then picks the new control on
interval ``j`` from the already updated state at ``t_j`` and propagates one
interval with it.

The per-interval choice is an exact discrete version of the pointwise
maximization. With ``Phi(u)`` the value of the next-node test function after
one step from the new state, and ``s(u) = (Phi(u) - Phi(a)) / (dt (u - a))``
its secant slope from the reference value ``a``, the new control solves the
scalar fixed point ``u = clip(rule(s(u)))``. For the rules used here this
makes ``Phi(u) - Phi(a)`` cover the running-cost increase exactly, which is
what the monotonicity argument needs. ``update="pointwise"`` swaps the secant
for the instantaneous derivative and relies on a bracket check instead.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .core import (
    ArgumentError,
    ConfigurationError,
    ControlField,
    NumericError,
    TimeGrid,
    hamiltonian_at,
    hermitian_expm,
)
from .costs import (
    DensityProblem,
    Evaluation,
    ObservableTerminant,
    OverlapTerminant,
    ShapeFn,
    StateProblem,
    fluence,
    gamma_penalty,
    total_objective,
)
from .dynamics import propagate_costate_density, propagate_costate_state
from .trace import IterationRecord, OptimizationTrace, record_from

INNER_MAX = 50
INNER_TOL = 1e-14
ACCEPT_SLACK = 1e-11
FIXED_POINT_TOL = 1e-12
SINGULAR_TOL = 1e-12
RICCATI_LIMIT = 1e12


# ------------------------------------------------------------------ options


@dataclass(frozen=True)
class SigmaSpec:
    """Second-order weight: zero, ``alpha (exp(gamma (T - t)) - 1) + beta`` or Riccati."""

    kind: str = "zero"
    alpha: float = -1.0
    beta: float = -1.0
    gamma: float = 1.0
    riccati_delta: tuple[float, ...] = ()
    riccati_alpha: tuple[float, ...] = ()
    growth: tuple[float, float] = (2.0, 1.5)
    max_retries: int = 8

    def __post_init__(self):
        if self.kind not in ("zero", "exponential", "riccati"):
            raise ArgumentError(f"unknown sigma kind {self.kind!r}")
        if self.kind == "exponential" and not (self.alpha < 0 and self.beta < 0
                                               and self.gamma > 0):
            raise ArgumentError("exponential sigma needs alpha < 0, beta < 0, gamma > 0")
        if self.kind == "riccati":
            delta = np.asarray(self.riccati_delta, dtype=float)
            alpha = np.asarray(self.riccati_alpha, dtype=float)
            if delta.size == 0 or alpha.size == 0 or np.any(delta <= 0) or np.any(alpha <= 0):
                raise ArgumentError("riccati sigma needs positive delta and alpha diagonals")
            object.__setattr__(self, "riccati_delta", tuple(float(v) for v in delta.ravel()))
            object.__setattr__(self, "riccati_alpha", tuple(float(v) for v in alpha.ravel()))
        if self.max_retries < 0:
            raise ArgumentError("max_retries must be nonnegative")

    @property
    def adaptable(self) -> bool:
        return self.kind != "zero"

    def adapted(self) -> "SigmaSpec":
        scale, rate = self.growth
        if self.kind == "exponential":
            return dataclasses.replace(self, alpha=self.alpha * scale, beta=self.beta * scale,
                                       gamma=self.gamma * rate)
        if self.kind == "riccati":
            return dataclasses.replace(
                self, riccati_delta=tuple(v * scale for v in self.riccati_delta),
                riccati_alpha=tuple(v * scale for v in self.riccati_alpha))
        return self

    def summary(self) -> tuple:
        if self.kind == "exponential":
            return (self.alpha, self.beta, self.gamma)
        if self.kind == "riccati":
            return (max(self.riccati_delta), max(self.riccati_alpha))
        return ()


@dataclass(frozen=True)
class KrotovOptions:
    form: str = "gamma_form"
    gamma_u: float = 1.0
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    max_iters: int = 1000
    tol_dJ: float = 1e-8
    update: str = "secant"
    bound_handling: str = "clip"

    def __post_init__(self):
        if self.form not in ("gamma_form", "lambda_u_form", "switching"):
            raise ArgumentError(f"unknown Krotov form {self.form!r}")
        if self.form == "gamma_form" and not self.gamma_u > 0:
            raise ArgumentError("gamma_form requires gamma_u > 0")
        if self.update not in ("secant", "pointwise"):
            raise ArgumentError(f"unknown update mode {self.update!r}")
        if self.bound_handling != "clip":
            raise ArgumentError("only clip-to-box bound handling is supported")
        if self.max_iters < 0 or self.tol_dJ < 0:
            raise ArgumentError("max_iters and tol_dJ must be nonnegative")


@dataclass(frozen=True)
class SpectralConstraint:
    """Gaussian-cosine penalty bands given as ``(omega, width, weight)`` triples."""

    components: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        comps = tuple((float(w), float(s), float(lam)) for w, s, lam in self.components)
        for omega, width, weight in comps:
            if omega < 0 or width <= 0 or weight < 0:
                raise ArgumentError("bands need omega >= 0, width > 0 and weight >= 0")
        object.__setattr__(self, "components", comps)

    def kernel(self, lag) -> np.ndarray:
        lag = np.asarray(lag, dtype=float)
        total = np.zeros_like(lag)
        for omega, width, weight in self.components:
            total = total + (weight * np.sqrt(2 * np.pi * width**2) * np.cos(omega * lag)
                             * np.exp(-0.5 * width**2 * lag**2))
        return total


# ------------------------------------------------------- per-node primitive


@dataclass
class SweepStats:
    fallbacks: int = 0
    unconverged: int = 0
    singular: int = 0
    cauchy: int = 0

    def merge(self, other: "SweepStats") -> None:
        self.fallbacks += other.fallbacks
        self.unconverged += other.unconverged
        self.singular += other.singular
        self.cauchy += other.cauchy


def solve_node(phi: Callable[[float], float], base: float, phi_base: float,
               rule: Callable[[float], float], penalty: Callable[[float], float],
               lower: float, upper: float, dt: float, stats: SweepStats,
               slope: float | None = None) -> tuple[float, float]:
    """Control value for one channel on one interval.

    ``phi`` is the gain as a function of this channel's value, ``rule`` maps a
    slope to a proposed value and ``penalty`` is the running cost per unit
    time. With ``slope`` given the rule is applied once; otherwise the secant
    fixed point is iterated. The result always satisfies
    ``phi(x) - phi(base) >= dt (penalty(x) - penalty(base))`` up to rounding,
    halving the step toward ``base`` when needed.
    """
    cache = {base: phi_base}

    def value(x):
        if x not in cache:
            cache[x] = phi(x)
        return cache[x]

    def clip(x):
        return min(max(x, lower), upper)

    if slope is not None:
        x = clip(rule(slope))
    else:
        h = 1e-6 * (1.0 + abs(base))
        deriv = (value(base + h) - phi_base) / (h * dt)
        near = 1e-9 * (1.0 + abs(base))

        def fixed_map(x):
            if abs(x - base) <= near:
                return clip(rule(deriv))
            return clip(rule((value(x) - phi_base) / (dt * (x - base))))

        # secant iteration on the residual fixed_map(x) - x, stopped at the
        # rounding floor of the secant slope when the residual stops shrinking
        x_prev, r_prev = base, fixed_map(base) - base
        x = x_prev + r_prev
        best, best_r = x, np.inf
        for _ in range(INNER_MAX):
            r = fixed_map(x) - x
            if abs(r) <= INNER_TOL * (1.0 + abs(x)):
                best = x + r
                break
            if abs(r) >= 0.5 * best_r:
                break
            best, best_r = x + r, abs(r)
            denom = r - r_prev
            step = r if denom == 0 else -r * (x - x_prev) / denom
            x_prev, r_prev = x, r
            x = clip(x + step)
        else:
            stats.unconverged += 1
        x = clip(best)
    return guard_step(value, base, phi_base, penalty, x, dt, stats)


def guard_step(phi, base: float, phi_base: float, penalty, x: float, dt: float,
               stats: SweepStats) -> tuple[float, float]:
    """Halve ``x - base`` until the gain covers the penalty increase; returns ``(x, phi(x))``."""
    if x == base:
        return x, phi_base
    pen_base = penalty(base)
    tol = 1e-14 * (1.0 + abs(phi_base))
    for attempt in range(60):
        gain = phi(x)
        if gain - phi_base - dt * (penalty(x) - pen_base) >= -tol:
            if attempt:
                stats.fallbacks += 1
            return x, gain
        x = base + 0.5 * (x - base)
    stats.fallbacks += 1
    return base, phi_base


def krotov_rule(a: float, lam: float, gamma: float, shape: float):
    """Maximizer of ``s (u - a) - (lam u^2 + gamma (u - a)^2) / S`` for fixed ``s``."""
    denom = lam + gamma

    def rule(s):
        return shape * s / (2 * denom) + gamma * a / denom

    def penalty(x):
        return (lam * x * x + gamma * (x - a) ** 2) / shape

    return rule, penalty


def switching_rule(a: float, lower: float, upper: float):
    def rule(s):
        if s > 0:
            return upper
        if s < 0:
            return lower
        return a

    return rule, (lambda x: 0.0)


def ensemble_gain(system, dt: float, left: np.ndarray, right: np.ndarray):
    """``u -> 2 Re sum_e <left_e, V(u) right_e>`` for stacked rows."""
    conj_left = left.conj()

    def phi(u):
        v = hermitian_expm(hamiltonian_at(system, u), dt)
        return float(2.0 * np.sum((conj_left * (right @ v.T)).real))

    return phi


def channel_view(phi_vec, u: np.ndarray, channel: int):
    def phi(x):
        trial = u.copy()
        trial[channel] = x
        return phi_vec(trial)

    return phi


# ------------------------------------------------------------------- sigma


def sigma_exponential(grid: TimeGrid, alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Scalar second-order weight at the grid nodes (multiplies the identity)."""
    remaining = grid.horizon - grid.nodes
    return alpha * np.expm1(gamma * remaining) + beta


def _interval_riccati(generator: np.ndarray, source: np.ndarray, dt: float):
    d = generator.shape[0]
    block = np.zeros((2 * d, 2 * d))
    block[:d, :d] = -generator.T
    block[:d, d:] = source
    block[d:, d:] = generator
    exp = scipy.linalg.expm(block * dt)
    transfer = exp[d:, d:]
    gramian = transfer.T @ exp[:d, d:]
    return transfer, 0.5 * (gramian + gramian.T)


def sigma_riccati(problem: "RealStateProblem", control: ControlField, delta,
                  alpha) -> np.ndarray:
    """Backward solution of ``dSigma/dt = -(Sigma F + F^T Sigma) + diag(delta)``.

    ``F = A + sum_l u_l B_l`` along ``control`` and the terminal value is the
    negated terminant Hessian minus ``diag(alpha)``. Each interval is solved
    exactly with a block exponential. ``delta`` may be constant (d,) or
    per interval (N, d).
    """
    d = problem.dim
    grid = control.grid
    delta = np.asarray(delta, dtype=float)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (d,))
    if delta.ndim == 1:
        delta = np.broadcast_to(delta, (grid.intervals, d))
    if delta.shape != (grid.intervals, d) or np.any(delta <= 0) or np.any(alpha <= 0):
        raise ArgumentError("riccati weights must be positive with matching dimension")
    sigma = np.empty((grid.intervals + 1, d, d))
    sigma[-1] = 2.0 * problem.weight - np.diag(alpha)
    for j in range(grid.intervals - 1, -1, -1):
        transfer, gramian = _interval_riccati(problem.generator(control.values[:, j]),
                                              np.diag(delta[j]), grid.dt)
        nxt = transfer.T @ sigma[j + 1] @ transfer - gramian
        sigma[j] = 0.5 * (nxt + nxt.T)
        if np.max(np.abs(sigma[j])) > RICCATI_LIMIT:
            raise NumericError("riccati weight blew up; choose smaller delta or alpha")
    return sigma


# ----------------------------------------------------------- shared driver


def _accept(new_J: float, old_J: float, regularized: float) -> bool:
    return new_J <= old_J + ACCEPT_SLACK and regularized <= old_J + ACCEPT_SLACK


def run_monotone(method: str, control0: ControlField, evaluate, prepare, regularizer,
                 opts_max_iters: int, tol_dJ: float, sigma: SigmaSpec | None = None,
                 initial_cost: int = 1, backtrack: bool = False) -> OptimizationTrace:
    """Drive accepted-only iterations; ``prepare(u, ev)`` returns ``sweep(sigma)``.

    ``sweep`` yields the proposed control and its :class:`SweepStats`. A
    proposal that raises J triggers sigma adaptation (when available) or,
    with ``backtrack``, halving of the increment.
    """
    control = control0
    evaluation = evaluate(control)
    cauchy = initial_cost
    records = [record_from(0, evaluation, J_regularized=float(evaluation.J), cauchy=cauchy,
                           sigma=sigma.summary() if sigma else ())]
    history = [control.values.copy()]
    status = "max_iters"
    info: dict = {"fixed_point": False, "sigma": sigma}
    for k in range(1, opts_max_iters + 1):
        sweep = prepare(control, evaluation)
        retries = 0
        accepted = None
        while True:
            proposal, stats, extra = sweep(sigma)
            cauchy += stats.cauchy
            if np.max(np.abs(proposal.values - control.values), initial=0.0) <= FIXED_POINT_TOL:
                info["fixed_point"] = True
                break
            new_eval = evaluate(proposal)
            reg = regularizer(proposal, control)
            if _accept(new_eval.J, evaluation.J, new_eval.J + reg):
                accepted = (proposal, new_eval, reg, stats, extra)
                break
            if backtrack and retries < 30:
                half = control.values + 0.5 * (proposal.values - control.values)
                retries += 1
                fixed = control.with_values(half, clip=True)
                sweep = _constant_sweep(fixed, stats, extra)
                continue
            if sigma is not None and sigma.adaptable and retries < sigma.max_retries:
                sigma = sigma.adapted()
                retries += 1
                continue
            status = "warning"
            break
        if accepted is None:
            if info["fixed_point"]:
                status = "converged"
            break
        proposal, new_eval, reg, stats, extra = accepted
        records.append(record_from(
            k, new_eval, J_regularized=float(new_eval.J + reg),
            max_du=float(np.max(np.abs(proposal.values - control.values))),
            cauchy=cauchy, sigma=sigma.summary() if sigma else (), retries=retries,
            fallbacks=stats.fallbacks, extra=extra))
        history.append(proposal.values.copy())
        dJ = abs(evaluation.J - new_eval.J)
        control, evaluation = proposal, new_eval
        if dJ < tol_dJ:
            status = "converged"
            break
    info["sigma"] = sigma
    return OptimizationTrace(method=method, records=records, control=control, status=status,
                             states=evaluation.states, history=history, info=info)


def _constant_sweep(proposal, stats, extra):
    def sweep(_sigma):
        return proposal, SweepStats(fallbacks=stats.fallbacks), extra
    return sweep


# --------------------------------------------------------------- validation


def _weights(objective, opts: KrotovOptions) -> tuple[float, float]:
    lam = float(objective.lambda_u)
    if opts.form == "gamma_form":
        return lam, float(objective.gamma_u if objective.gamma_u is not None else opts.gamma_u)
    if opts.form == "lambda_u_form":
        if lam <= 0:
            raise ConfigurationError("lambda_u_form requires lambda_u > 0 in the objective")
        return lam, 0.0
    return 0.0, 0.0


def _check_state_penalty(objective) -> None:
    if not objective.lambda_state:
        return
    if objective.lambda_state > 0:
        raise ConfigurationError("state penalty needs lambda_state <= 0 for monotonicity")
    ops = np.asarray(objective.state_operator)
    ops = ops if ops.ndim == 3 else ops[np.newaxis]
    for op in ops:
        if np.linalg.eigvalsh(op)[0] < -1e-12:
            raise ConfigurationError("state penalty operator must be positive semidefinite")


def _check_common(problem, control: ControlField, opts: KrotovOptions) -> None:
    if control.n_channels != problem.system.n_controls:
        raise ArgumentError("control channels do not match the system")
    if problem.objective.lambda_du:
        raise ConfigurationError("Krotov updates do not support the derivative penalty")
    if opts.form == "switching":
        raise ConfigurationError("switching form is only available for real-state problems")


# ---------------------------------------------------------- state variants


def _state_costates(problem: StateProblem, control: ControlField, evaluation: Evaluation):
    objective = problem.objective
    states = evaluation.states
    finals = objective.terminant.costate(states[:, -1, :])
    out = np.empty_like(states)
    for e in range(states.shape[0]):
        source = None
        if objective.lambda_state:
            op = np.asarray(objective.state_operator)
            if op.ndim == 3:
                source = objective.lambda_state * np.einsum("jab,jb->ja", op, states[e])
            else:
                source = objective.lambda_state * states[e] @ op.T
        out[e] = propagate_costate_state(problem.system, control, finals[e], source,
                                         evaluation.propagators).samples
    return out


def ensemble_forward_sweep(problem: StateProblem, control: ControlField,
                           evaluation: Evaluation, costates: np.ndarray,
                           sigma_nodes: np.ndarray, lam: float, gamma: float,
                           update: str = "secant") -> tuple[ControlField, SweepStats]:
    system = problem.system
    grid = control.grid
    dt = grid.dt
    shape = problem.objective.shape.on_intervals(grid)
    old = evaluation.states
    psi = problem.ensemble.initial.copy()
    values = np.empty_like(control.values)
    lower, upper = control.lower, control.upper
    stats = SweepStats(cauchy=2 * psi.shape[0])
    for j in range(grid.intervals):
        u = control.values[:, j].copy()
        chi_hat = costates[:, j + 1] - 0.5 * sigma_nodes[j + 1] * old[:, j + 1]
        phi_vec = ensemble_gain(system, dt, chi_hat, psi)
        if shape[j] <= 0:
            values[:, j] = 0.0 if lam > 0 else u
        else:
            slopes = None
            if update == "pointwise":
                shifted = costates[:, j] + 0.5 * sigma_nodes[j] * (psi - old[:, j])
                slopes = [2.0 * float(np.sum((shifted.conj() * (psi @ h.T)).imag))
                          for h in system.controls]
            phi_cur = phi_vec(u)
            for l in range(system.n_controls):
                rule, penalty = krotov_rule(u[l], lam, gamma, shape[j])
                x, phi_cur = solve_node(channel_view(phi_vec, u, l), u[l], phi_cur, rule,
                                        penalty, lower[l], upper[l], dt, stats,
                                        None if slopes is None else slopes[l])
                u[l] = x
            values[:, j] = u
        psi = psi @ hermitian_expm(hamiltonian_at(system, values[:, j]), dt).T
    return control.with_values(values, clip=True), stats


def _state_driver(method: str, problem: StateProblem, u0: ControlField, opts: KrotovOptions,
                  allow_sigma: bool) -> OptimizationTrace:
    _check_common(problem, u0, opts)
    _check_state_penalty(problem.objective)
    lam, gamma = _weights(problem.objective, opts)
    sigma = opts.sigma if allow_sigma else SigmaSpec()
    if sigma.kind == "riccati":
        raise ConfigurationError("riccati sigma applies to real-state problems only")
    n_e = problem.ensemble.size

    def evaluate(control):
        return total_objective(problem, control)

    def prepare(control, evaluation):
        costates = _state_costates(problem, control, evaluation)

        def sweep(spec):
            if spec is None or spec.kind == "zero":
                nodes = np.zeros(control.grid.intervals + 1)
            else:
                nodes = sigma_exponential(control.grid, spec.alpha, spec.beta, spec.gamma)
            proposal, stats = ensemble_forward_sweep(problem, control, evaluation, costates,
                                                     nodes, lam, gamma, opts.update)
            return proposal, stats, {}

        return sweep

    def regularizer(new, old):
        return gamma_penalty(new, old, problem.objective.shape, gamma) if gamma > 0 else 0.0

    return run_monotone(method, u0, evaluate, prepare, regularizer, opts.max_iters,
                        opts.tol_dJ, sigma, initial_cost=n_e)


def krotov1_schrodinger(problem: StateProblem, u0: ControlField,
                        opts: KrotovOptions = KrotovOptions()) -> OptimizationTrace:
    """First-order Krotov for one state or an ensemble with a concave terminant."""
    if not getattr(problem.objective.terminant, "concave", False):
        raise ConfigurationError("first-order Krotov needs a concave terminant (O >= 0)")
    return _state_driver("krotov1", problem, u0, opts, allow_sigma=False)


def krotov2_ensemble(problem: StateProblem, u0: ControlField,
                     opts: KrotovOptions = KrotovOptions()) -> OptimizationTrace:
    """Second-order Krotov with scalar sigma for possibly non-concave terminants."""
    return _state_driver("krotov2", problem, u0, opts, allow_sigma=True)


# --------------------------------------------------------- density variant


def krotov1_density(problem: DensityProblem, u0: ControlField,
                    opts: KrotovOptions = KrotovOptions()) -> OptimizationTrace:
    """First-order Krotov for the Liouville-von Neumann equation (Gamma form)."""
    _check_common(problem, u0, opts)
    if opts.form != "gamma_form":
        raise ConfigurationError("density Krotov is defined for the gamma form")
    if not getattr(problem.objective.terminant, "concave", False):
        raise ConfigurationError("density Krotov needs a linear terminant")
    lam, gamma = _weights(problem.objective, opts)
    system = problem.system
    objective = problem.objective

    def evaluate(control):
        return total_objective(problem, control)

    def prepare(control, evaluation):
        grid = control.grid
        dt = grid.dt
        states = evaluation.states
        source = None
        if objective.lambda_state:
            op = np.asarray(objective.state_operator, dtype=complex)
            source = objective.lambda_state * (op if op.ndim == 3 else
                                               np.broadcast_to(op, states.shape))
        costates = propagate_costate_density(system, control,
                                             objective.terminant.costate(states[-1]), source,
                                             evaluation.propagators).samples
        shape = objective.shape.on_intervals(grid)

        def sweep(_spec):
            rho = np.asarray(problem.rho0, dtype=complex)
            values = np.empty_like(control.values)
            stats = SweepStats(cauchy=2)
            for j in range(grid.intervals):
                u = control.values[:, j].copy()
                weight = costates[j + 1]

                def phi_vec(x, rho=rho, weight=weight):
                    v = hermitian_expm(hamiltonian_at(system, x), dt)
                    return float(np.einsum("ij,ji->", weight, v @ rho @ v.conj().T).real)

                if shape[j] <= 0:
                    values[:, j] = 0.0 if lam > 0 else u
                else:
                    slopes = None
                    if opts.update == "pointwise":
                        slopes = [float(np.einsum("ij,ji->", costates[j],
                                                  h @ rho - rho @ h).imag)
                                  for h in system.controls]
                    phi_cur = phi_vec(u)
                    for l in range(system.n_controls):
                        rule, penalty = krotov_rule(u[l], lam, gamma, shape[j])
                        x, phi_cur = solve_node(channel_view(phi_vec, u, l), u[l], phi_cur,
                                                rule, penalty, control.lower[l],
                                                control.upper[l], dt, stats,
                                                None if slopes is None else slopes[l])
                        u[l] = x
                    values[:, j] = u
                v = hermitian_expm(hamiltonian_at(system, values[:, j]), dt)
                rho = v @ rho @ v.conj().T
            return control.with_values(values, clip=True), stats, {}

        return sweep

    def regularizer(new, old):
        return gamma_penalty(new, old, objective.shape, gamma)

    return run_monotone("krotov1_density", u0, evaluate, prepare, regularizer,
                        opts.max_iters, opts.tol_dJ, None)


# ------------------------------------------------------- real-state variant


@dataclass(frozen=True, eq=False)
class RealStateProblem:
    """``dy/dt = (A + sum_l u_l B_l) y`` with terminant ``offset - <y(T), M y(T)>``."""

    drift: np.ndarray
    controls: tuple[np.ndarray, ...]
    y0: np.ndarray
    weight: np.ndarray
    lambda_u: float = 0.0
    offset: float = 0.0
    shape: ShapeFn = field(default_factory=ShapeFn)

    def __post_init__(self):
        drift = np.asarray(self.drift, dtype=float)
        controls = tuple(np.asarray(b, dtype=float) for b in self.controls)
        y0 = np.asarray(self.y0, dtype=float)
        weight = np.asarray(self.weight, dtype=float)
        d = drift.shape[0]
        if drift.shape != (d, d) or any(b.shape != (d, d) for b in controls) or not controls:
            raise ArgumentError("drift and control matrices must be square and matching")
        if y0.shape != (d,) or weight.shape != (d, d):
            raise ArgumentError("initial state or weight has the wrong dimension")
        if np.max(np.abs(weight - weight.T)) > 1e-12:
            raise ArgumentError("terminal weight must be symmetric")
        if np.linalg.eigvalsh(weight)[0] < -1e-12:
            raise ArgumentError("terminal weight must be positive semidefinite")
        if self.lambda_u < 0:
            raise ArgumentError("lambda_u must be nonnegative")
        for name, value in (("drift", drift), ("controls", controls), ("y0", y0),
                            ("weight", weight)):
            object.__setattr__(self, name, value)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    def generator(self, u) -> np.ndarray:
        out = self.drift.copy()
        for value, b in zip(np.atleast_1d(u), self.controls):
            out = out + value * b
        return out

    def step(self, u, dt: float) -> np.ndarray:
        return scipy.linalg.expm(dt * self.generator(u))


def _real_block(op: np.ndarray) -> np.ndarray:
    """Real form of ``-i H`` acting on ``(Re psi, Im psi)``."""
    re, im = op.real, op.imag
    return np.block([[im, re], [-re, im]])


def realify(problem: StateProblem) -> RealStateProblem:
    """Real-state form of a single-state problem with an observable or overlap terminant."""
    if problem.ensemble.size != 1:
        raise ArgumentError("realify handles a single initial state")
    terminant = problem.objective.terminant
    if isinstance(terminant, OverlapTerminant) and terminant.variant == "squared":
        target = terminant.targets[0]
        observable, offset = np.outer(target, target.conj()), 1.0
    elif isinstance(terminant, ObservableTerminant):
        observable, offset = terminant.observable, terminant.offset
    else:
        raise ArgumentError("realify needs an observable or squared-overlap terminant")
    if problem.objective.lambda_state or problem.objective.lambda_du:
        raise ArgumentError("realify does not carry running state or derivative penalties")
    weight = np.block([[observable.real, -observable.imag], [observable.imag, observable.real]])
    psi0 = problem.ensemble.initial[0]
    return RealStateProblem(
        drift=_real_block(problem.system.drift),
        controls=tuple(_real_block(h) for h in problem.system.controls),
        y0=np.concatenate([psi0.real, psi0.imag]), weight=weight,
        lambda_u=problem.objective.lambda_u, offset=offset, shape=problem.objective.shape)


def evaluate_realstate(problem: RealStateProblem, control: ControlField) -> Evaluation:
    dt = control.grid.dt
    steps = np.stack([problem.step(control.values[:, j], dt)
                      for j in range(control.grid.intervals)])
    states = np.empty((control.grid.intervals + 1, problem.dim))
    states[0] = problem.y0
    for j, e in enumerate(steps):
        states[j + 1] = e @ states[j]
    final = states[-1]
    term = float(problem.offset - final @ problem.weight @ final)
    flu = fluence(control, problem.shape, problem.lambda_u) if problem.lambda_u else 0.0
    return Evaluation(J=term + flu, terminant=term, fluence=flu, state_penalty=0.0, h1=0.0,
                      states=states, propagators=steps)


def realstate_costate(problem: RealStateProblem, evaluation: Evaluation) -> np.ndarray:
    """``p_N = 2 M y_N`` and ``p_j = E_j^T p_{j+1}``."""
    states = evaluation.states
    out = np.empty_like(states)
    out[-1] = 2.0 * problem.weight @ states[-1]
    for j in range(states.shape[0] - 2, -1, -1):
        out[j] = evaluation.propagators[j].T @ out[j + 1]
    return out


def _singular_value(problem, p, y, a):
    b = problem.controls[0]
    a_mat = problem.drift
    denom = float(p @ (b @ b @ y))
    if abs(denom) < SINGULAR_TOL:
        return None
    return a + float(p @ ((a_mat @ b - b @ a_mat) @ y)) / denom


def krotov_realstate(problem: RealStateProblem, u0: ControlField,
                     opts: KrotovOptions = KrotovOptions(form="lambda_u_form")
                     ) -> OptimizationTrace:
    """Krotov iterations for a real bilinear system with a quadratic terminant."""
    if u0.n_channels != problem.n_controls:
        raise ArgumentError("control channels do not match the system")
    lam = float(problem.lambda_u)
    if opts.form == "switching":
        if lam != 0:
            raise ConfigurationError("switching form requires lambda_u = 0")
        if problem.n_controls != 1 or not np.all(np.isfinite(u0.bounds[0])):
            raise ConfigurationError("switching form needs one control with a finite box")
        gamma = 0.0
    elif opts.form == "lambda_u_form":
        if lam <= 0:
            raise ConfigurationError("lambda_u_form requires lambda_u > 0")
        gamma = 0.0
    else:
        gamma = float(opts.gamma_u)
    sigma = opts.sigma

    def evaluate(control):
        return evaluate_realstate(problem, control)

    def prepare(control, evaluation):
        costate = realstate_costate(problem, evaluation)
        grid = control.grid
        dt = grid.dt
        shape = problem.shape.on_intervals(grid)
        old = evaluation.states

        def sweep(spec):
            d = problem.dim
            if spec.kind == "riccati":
                weights = sigma_riccati(problem, control, spec.riccati_delta, spec.riccati_alpha)
            else:
                nodes = (np.zeros(grid.intervals + 1) if spec.kind == "zero" else
                         sigma_exponential(grid, spec.alpha, spec.beta, spec.gamma))
                weights = nodes[:, None, None] * np.eye(d)
            y = problem.y0.copy()
            values = np.empty_like(control.values)
            stats = SweepStats(cauchy=2)
            for j in range(grid.intervals):
                u = control.values[:, j].copy()
                p_next, w_next, ref = costate[j + 1], weights[j + 1], old[j + 1]

                def phi_vec(x, y=y, p_next=p_next, w_next=w_next, ref=ref):
                    moved = problem.step(x, dt) @ y
                    delta = moved - ref
                    return float(p_next @ moved + 0.5 * delta @ w_next @ delta)

                if shape[j] <= 0 and opts.form != "switching":
                    values[:, j] = 0.0 if lam > 0 else u
                else:
                    slopes = None
                    if opts.update == "pointwise":
                        shifted = costate[j] + weights[j] @ (y - old[j])
                        slopes = [float(shifted @ (b @ y)) for b in problem.controls]
                    phi_cur = phi_vec(u)
                    for l in range(problem.n_controls):
                        if opts.form == "switching":
                            rule, penalty = switching_rule(u[l], control.lower[l],
                                                           control.upper[l])
                            if slopes is not None and abs(slopes[l]) <= SINGULAR_TOL:
                                sing = _singular_value(problem, costate[j], y, u[l])
                                if sing is None:
                                    stats.singular += 1
                                    slopes[l] = None
                                else:
                                    sing = min(max(sing, control.lower[l]), control.upper[l])
                                    rule = (lambda s, v=sing: v)
                        else:
                            rule, penalty = krotov_rule(u[l], lam, gamma, shape[j])
                        slope = None if slopes is None else slopes[l]
                        if opts.update == "pointwise" and slope is None:
                            continue
                        x, phi_cur = solve_node(channel_view(phi_vec, u, l), u[l], phi_cur,
                                                rule, penalty, control.lower[l],
                                                control.upper[l], dt, stats, slope)
                        u[l] = x
                    values[:, j] = u
                y = problem.step(values[:, j], dt) @ y
            return control.with_values(values, clip=True), stats, {}

        return sweep

    def regularizer(new, old):
        return gamma_penalty(new, old, problem.shape, gamma) if gamma > 0 else 0.0

    return run_monotone("krotov_realstate", u0, evaluate, prepare, regularizer,
                        opts.max_iters, opts.tol_dJ, sigma)


# --------------------------------------------------------- spectral variant


def band_power(values: np.ndarray, dt: float, center: float, width: float) -> float:
    """DFT power of a sampled signal at angular frequencies within ``width`` of ``center``."""
    values = np.atleast_2d(values)
    spectrum = np.abs(np.fft.rfft(values, axis=1)) ** 2
    omega = 2 * np.pi * np.fft.rfftfreq(values.shape[1], dt)
    mask = np.abs(omega - center) <= width
    return float(np.sum(spectrum[:, mask]))


def dominant_frequency(values: np.ndarray, dt: float) -> float:
    values = np.atleast_2d(values)
    spectrum = np.sum(np.abs(np.fft.rfft(values, axis=1)) ** 2, axis=0)
    omega = 2 * np.pi * np.fft.rfftfreq(values.shape[1], dt)
    return float(omega[int(np.argmax(spectrum))])


def degenerate_kernel_solve(i_hat, left, right, dt: float) -> np.ndarray:
    """Solve ``x = i_hat + left @ (dt * right^T x)`` for a separable kernel.

    ``left`` and ``right`` are (N, r) samples of the kernel factors at the
    quadrature nodes, so the kernel is ``K(t, t') = sum_k left_k(t) right_k(t')``.
    """
    i_hat = np.asarray(i_hat, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.ndim != 2 or left.shape != right.shape or left.shape[0] != i_hat.shape[0]:
        raise ArgumentError("kernel factors must be (N, r) with N matching the source")
    if left.shape[1] == 0:
        return i_hat.copy()
    system = np.eye(left.shape[1]) - dt * right.T @ left
    if np.linalg.cond(system) > 1e12:
        raise NumericError("degenerate-kernel system is ill-conditioned")
    coeffs = np.linalg.solve(system, dt * right.T @ i_hat)
    return i_hat + left @ coeffs


def separable_kernel(constraint: SpectralConstraint, grid: TimeGrid, rank: int = 12,
                     tol: float = 1e-8, max_rank: int | None = None):
    """Factors ``(left, right)`` with ``left @ right.T`` approximating ``K(t_i - t_j)``.

    The sampled kernel is symmetric, so its eigenpairs ordered by magnitude give
    a stable separable expansion. The rank grows until the max-norm kernel
    error is at most ``tol`` relative to ``K(0)``.
    """
    t = grid.midpoints
    exact = constraint.kernel(t[:, None] - t[None, :])
    if not any(weight for _, _, weight in constraint.components):
        return np.zeros((t.size, 0)), np.zeros((t.size, 0)), 0.0
    scale = max(float(constraint.kernel(0.0)), 1.0)
    values, vectors = np.linalg.eigh(exact)
    order = np.argsort(-np.abs(values))
    values, vectors = values[order], vectors[:, order]
    limit = t.size if max_rank is None else min(max_rank, t.size)
    rank = min(max(rank, 1), limit)
    while True:
        left = vectors[:, :rank] * values[:rank]
        right = vectors[:, :rank]
        error = float(np.max(np.abs(left @ right.T - exact)))
        if error <= tol * scale:
            return left, right, error
        if rank >= limit:
            raise NumericError(f"kernel expansion error {error:.2e} above tolerance")
        rank = min(2 * rank, limit)


def fredholm_degenerate_solve(i_hat, constraint: SpectralConstraint, grid: TimeGrid,
                              shape: np.ndarray | None = None, gamma_u: float = 1.0,
                              rank: int = 12) -> np.ndarray:
    """Increment solving ``du = I - S/(2 pi gamma) int K(t - t') du(t') dt'`` per channel."""
    i_hat = np.atleast_2d(np.asarray(i_hat, dtype=float))
    if i_hat.shape[1] != grid.intervals:
        raise ArgumentError("source must be sampled on the grid intervals")
    shape = np.ones(grid.intervals) if shape is None else np.asarray(shape, dtype=float)
    left, right, _ = separable_kernel(constraint, grid, rank)
    left = -(shape / (2 * np.pi * gamma_u))[:, None] * left
    out = np.stack([degenerate_kernel_solve(row, left, right, grid.dt) for row in i_hat])
    if left.shape[1]:
        t = grid.midpoints
        full = -(shape / (2 * np.pi * gamma_u))[:, None] * constraint.kernel(t[:, None] - t)
        residual = np.max(np.abs(out - i_hat - grid.dt * out @ full.T))
        if residual > 1e-8 * max(1.0, float(np.max(np.abs(i_hat)))):
            raise NumericError(f"Fredholm residual {residual:.2e} above tolerance")
    return out


def krotov_spectral(problem: StateProblem, u0: ControlField, constraint: SpectralConstraint,
                    gamma_u: float = 1.0,
                    opts: KrotovOptions = KrotovOptions()) -> OptimizationTrace:
    """Gamma-form Krotov whose increments are filtered by a spectral penalty."""
    _check_common(problem, u0, opts)
    _check_state_penalty(problem.objective)
    if not getattr(problem.objective.terminant, "concave", False):
        raise ConfigurationError("spectral Krotov needs a concave terminant")
    if not np.all(np.isinf(u0.lower)) or not np.all(np.isinf(u0.upper)):
        raise ConfigurationError("spectral Krotov works with an unbounded control box")
    if gamma_u <= 0:
        raise ArgumentError("gamma_u must be positive")
    lam = float(problem.objective.lambda_u)
    objective = problem.objective
    bands = constraint.components

    def evaluate(control):
        return total_objective(problem, control)

    def prepare(control, evaluation):
        costates = _state_costates(problem, control, evaluation)

        def sweep(_spec):
            nodes = np.zeros(control.grid.intervals + 1)
            free, stats = ensemble_forward_sweep(problem, control, evaluation, costates, nodes,
                                                 lam, gamma_u, opts.update)
            i_hat = free.values - control.values
            shape = objective.shape.on_intervals(control.grid)
            increment = fredholm_degenerate_solve(i_hat, constraint, control.grid, shape,
                                                  gamma_u)
            dt = control.grid.dt
            extra = {"band_power": [band_power(increment, dt, w, s) for w, s, _ in bands],
                     "band_power_free": [band_power(i_hat, dt, w, s) for w, s, _ in bands]}
            return control.with_values(control.values + increment), stats, extra

        return sweep

    def regularizer(new, old):
        return 0.0

    return run_monotone("krotov_spectral", u0, evaluate, prepare, regularizer,
                        opts.max_iters, opts.tol_dJ, None, initial_cost=problem.ensemble.size,
                        backtrack=True)
