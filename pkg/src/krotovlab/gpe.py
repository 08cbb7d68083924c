"""One-dimensional Gross-Pitaevskii dynamics on a periodic grid.

``i dpsi/dt = (-1/2 d^2/dx^2 + V(x, u) + kappa |psi|^2) psi`` with hbar = m = 1.
Inner products carry the grid weight ``dx`` so that ``||psi||^2 = 1`` means
unit probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ArgumentError, ControlField, NumericError
from .costs import Evaluation, ShapeFn, gamma_penalty, h1_penalty
from .krotov import SigmaSpec, SweepStats, guard_step, run_monotone, sigma_exponential
from .trace import OptimizationTrace


@dataclass(frozen=True)
class SpatialGrid:
    x_min: float = -8.0
    x_max: float = 8.0
    points: int = 256

    def __post_init__(self):
        m = int(self.points)
        if m < 16 or m & (m - 1):
            raise ArgumentError("grid size must be a power of two and at least 16")
        if not self.x_max > self.x_min:
            raise ArgumentError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.points)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.points, self.dx)

    def inner(self, a, b) -> complex:
        return complex(np.vdot(a, b) * self.dx)

    def norm(self, a) -> float:
        return float(np.sqrt(np.vdot(a, a).real * self.dx))

    def normalize(self, a) -> np.ndarray:
        return a / self.norm(a)

    def reflect(self, a) -> np.ndarray:
        """Values at ``-x`` (the grid is symmetric modulo the period)."""
        return np.roll(a[::-1], 1)

    def kinetic_matrix(self) -> np.ndarray:
        """Dense spectral ``-1/2 d^2/dx^2``."""
        m = self.points
        basis = np.fft.fft(np.eye(m), axis=0)
        return np.fft.ifft(0.5 * self.wavenumbers[:, None] ** 2 * basis, axis=0)


@dataclass(frozen=True)
class GpeState:
    field: np.ndarray
    grid: SpatialGrid

    def __post_init__(self):
        values = np.asarray(self.field, dtype=complex)
        if values.shape != (self.grid.points,):
            raise ArgumentError("field must be sampled on the grid")
        if not abs(self.grid.norm(values) ** 2 - 1.0) <= 1e-8:
            raise ArgumentError("GPE state must be normalized")
        object.__setattr__(self, "field", values)


# -------------------------------------------------------------- potentials


@dataclass(frozen=True)
class TrapLattice:
    """``u x^2 + s(t) V0 cos^2(k x)`` with a linear switch-on ``s(t) = t / T`` by default."""

    v0: float = 1.0
    wavenumber: float = 1.0
    ramp: Callable[[float, float], float] | None = None
    linear_in_u = True

    def switch(self, t: float, horizon: float) -> float:
        if self.ramp is not None:
            return float(self.ramp(t, horizon))
        return float(np.clip(t / horizon, 0.0, 1.0))

    def value(self, x, u, t=0.0, horizon=1.0):
        return u * x**2 + self.switch(t, horizon) * self.v0 * np.cos(self.wavenumber * x) ** 2

    def derivative(self, x, u, t=0.0, horizon=1.0):
        return x**2


@dataclass(frozen=True)
class ShiftedHarmonic:
    """``(x - u x0)^2 / 2``."""

    x0: float = 1.0
    linear_in_u = False

    def value(self, x, u, t=0.0, horizon=1.0):
        return 0.5 * (x - u * self.x0) ** 2

    def derivative(self, x, u, t=0.0, horizon=1.0):
        return -(x - u * self.x0) * self.x0


@dataclass(frozen=True)
class SplitWell:
    """Harmonic trap at ``u = 0`` deforming into two wells at ``x = +-u d / 2``."""

    d: float = 4.0
    linear_in_u = False

    def __post_init__(self):
        if self.d <= 0:
            raise ArgumentError("well separation d must be positive")

    def value(self, x, u, t=0.0, horizon=1.0):
        x = np.asarray(x, dtype=float)
        outer = 0.5 * (np.abs(x) - u * self.d / 2) ** 2
        inner = 0.5 * (u**2 * self.d**2 / 8 - x**2)
        return np.where(np.abs(x) > u * self.d / 4, outer, inner)

    def derivative(self, x, u, t=0.0, horizon=1.0):
        x = np.asarray(x, dtype=float)
        outer = -(np.abs(x) - u * self.d / 2) * self.d / 2
        inner = u * self.d**2 / 8 + 0.0 * x
        return np.where(np.abs(x) > u * self.d / 4, outer, inner)


@dataclass(frozen=True)
class Polynomial:
    """``p2 (x - u)^2 + p4 (x - u)^4 + p6 (x - u)^6``."""

    p2: float = 0.5
    p4: float = 0.0
    p6: float = 0.0
    linear_in_u = False

    def __post_init__(self):
        if not all(np.isfinite([self.p2, self.p4, self.p6])):
            raise ArgumentError("polynomial coefficients must be finite")

    def value(self, x, u, t=0.0, horizon=1.0):
        y = x - u
        return self.p2 * y**2 + self.p4 * y**4 + self.p6 * y**6

    def derivative(self, x, u, t=0.0, horizon=1.0):
        y = x - u
        return -(2 * self.p2 * y + 4 * self.p4 * y**3 + 6 * self.p6 * y**5)


POTENTIALS = {"trap_lattice": TrapLattice, "shifted_harmonic": ShiftedHarmonic,
              "split_well": SplitWell, "polynomial": Polynomial}


@dataclass(frozen=True, eq=False)
class GpeProblem:
    grid: SpatialGrid
    potential: object
    kappa: float
    psi0: np.ndarray
    target: np.ndarray
    lambda_du: float = 0.0
    shape: ShapeFn = field(default_factory=ShapeFn)

    def __post_init__(self):
        if self.kappa < 0:
            raise ArgumentError("kappa must be nonnegative")
        for name in ("psi0", "target"):
            state = np.asarray(getattr(self, name), dtype=complex)
            GpeState(state, self.grid)
            object.__setattr__(self, name, state)

    def potential_at(self, u: float, t: float, horizon: float) -> np.ndarray:
        return np.asarray(self.potential.value(self.grid.x, u, t, horizon), dtype=float)

    def potential_slope(self, u: float, t: float, horizon: float) -> np.ndarray:
        return np.asarray(self.potential.derivative(self.grid.x, u, t, horizon), dtype=float)

    def terminant(self, psi_final) -> float:
        return 1.0 - abs(self.grid.inner(self.target, psi_final)) ** 2

    def terminal_costate(self, psi_final) -> np.ndarray:
        return self.grid.inner(self.target, psi_final) * self.target


# -------------------------------------------------------------- propagation


class _Splitter:
    """Strang split step with cached kinetic phases for one grid and step."""

    def __init__(self, grid: SpatialGrid, dt: float):
        self.grid = grid
        self.dt = dt
        self.half = np.exp(-0.25j * dt * grid.wavenumbers**2)

    def kinetic(self, psi, conjugate: bool = False):
        phase = self.half.conj() if conjugate else self.half
        return np.fft.ifft(phase * np.fft.fft(psi))

    def step(self, psi, potential, kappa: float):
        phi = self.kinetic(psi)
        phi = np.exp(-1j * self.dt * (potential + kappa * np.abs(phi) ** 2)) * phi
        return self.kinetic(phi)

    def adjoint(self, chi, psi, potential, kappa: float):
        """Transpose of the linearized step at ``psi`` for the real pairing ``2 Re <.,.>``."""
        phi = self.kinetic(psi)
        theta = self.dt * (potential + kappa * np.abs(phi) ** 2)
        eta = self.kinetic(chi, conjugate=True)
        coupling = self.dt * kappa
        eta = (np.exp(1j * theta) * (1 + 1j * coupling * np.abs(phi) ** 2) * eta
               - 1j * coupling * np.exp(-1j * theta) * phi**2 * eta.conj())
        return self.kinetic(eta, conjugate=True)


def _potentials(problem: GpeProblem, control: ControlField) -> list[np.ndarray]:
    grid = control.grid
    mids = grid.midpoints
    return [problem.potential_at(control.values[0, j], mids[j], grid.horizon)
            for j in range(grid.intervals)]


def gpe_propagate(problem: GpeProblem, control: ControlField, psi0=None) -> np.ndarray:
    """Strang split-step trajectory at all nodes, shape (N + 1, M)."""
    if control.n_channels != 1:
        raise ArgumentError("GPE control is scalar")
    splitter = _Splitter(problem.grid, control.grid.dt)
    psi = np.asarray(problem.psi0 if psi0 is None else psi0, dtype=complex)
    out = np.empty((control.grid.intervals + 1, psi.size), dtype=complex)
    out[0] = psi
    start = problem.grid.norm(psi)
    for j, potential in enumerate(_potentials(problem, control)):
        out[j + 1] = splitter.step(out[j], potential, problem.kappa)
    drift = abs(problem.grid.norm(out[-1]) - start)
    if not drift <= 1e-8:
        raise NumericError(f"norm drift {drift:.2e}; reduce the time step")
    return out


def gpe_costate_backward(problem: GpeProblem, control: ControlField, states: np.ndarray,
                         chi_final) -> np.ndarray:
    """Exact discrete adjoint of :func:`gpe_propagate` along ``states``."""
    splitter = _Splitter(problem.grid, control.grid.dt)
    potentials = _potentials(problem, control)
    out = np.empty_like(states)
    out[-1] = chi_final
    for j in range(control.grid.intervals - 1, -1, -1):
        out[j] = splitter.adjoint(out[j + 1], states[j], potentials[j], problem.kappa)
    return out


def gpe_energy(grid: SpatialGrid, psi, potential, kappa: float) -> float:
    kinetic = np.fft.ifft(0.5 * grid.wavenumbers**2 * np.fft.fft(psi))
    density = np.abs(psi) ** 2
    return float((np.vdot(psi, kinetic).real + np.sum(potential * density)
                  + 0.5 * kappa * np.sum(density**2)) * grid.dx)


def gp_residual(grid: SpatialGrid, psi, potential, kappa: float) -> tuple[float, float]:
    """Chemical potential and ``||H[psi] psi - mu psi||``."""
    applied = (np.fft.ifft(0.5 * grid.wavenumbers**2 * np.fft.fft(psi))
               + (potential + kappa * np.abs(psi) ** 2) * psi)
    mu = grid.inner(psi, applied).real
    return mu, grid.norm(applied - mu * psi)


def linear_eigenstates(grid: SpatialGrid, potential, count: int = 2):
    """Lowest eigenpairs of the dense linear operator, normalized with real positive sums."""
    h = grid.kinetic_matrix() + np.diag(potential)
    energies, vectors = np.linalg.eigh(0.5 * (h + h.conj().T))
    states = []
    for k in range(count):
        v = vectors[:, k]
        pivot = v[np.argmax(np.abs(v))]
        v = v * abs(pivot) / pivot
        states.append(grid.normalize(v))
    return energies[:count], states


def gpe_ground_state(grid: SpatialGrid, potential, kappa: float, tol: float = 1e-6,
                     max_steps: int = 20000, tau: float = 0.01,
                     max_newton: int = 50) -> GpeState:
    """Ground state by imaginary-time split steps followed by a Newton polish.

    The ground state is nodeless, so the polish works on the real positive
    profile and solves ``H[phi] phi = mu phi`` with ``||phi|| = 1`` for
    ``(phi, mu)``.
    """
    potential = np.asarray(potential, dtype=float)
    _, (psi,) = linear_eigenstates(grid, potential, 1)
    if kappa == 0:
        return GpeState(psi, grid)
    damp = np.exp(-0.5 * tau * grid.wavenumbers**2)
    previous = np.inf
    for _ in range(max_steps):
        psi = np.fft.ifft(damp * np.fft.fft(psi))
        psi = np.exp(-tau * (potential + kappa * np.abs(psi) ** 2)) * psi
        psi = grid.normalize(np.fft.ifft(damp * np.fft.fft(psi)))
        energy = gpe_energy(grid, psi, potential, kappa)
        if abs(previous - energy) < 1e-13:
            break
        previous = energy
    kinetic = grid.kinetic_matrix().real
    m = grid.points
    phi = np.abs(psi)
    mu, residual = gp_residual(grid, phi, potential, kappa)
    jacobian = np.zeros((m + 1, m + 1))
    for _ in range(max_newton):
        if residual <= tol:
            break
        h = kinetic + np.diag(potential + kappa * phi**2)
        rhs = np.concatenate([h @ phi - mu * phi, [0.5 * (phi @ phi * grid.dx - 1.0)]])
        jacobian[:m, :m] = h + np.diag(2 * kappa * phi**2 - mu)
        jacobian[:m, m] = -phi
        jacobian[m, :m] = phi * grid.dx
        step = np.linalg.solve(jacobian, -rhs)
        phi = phi + step[:m]
        mu = mu + step[m]
        _, residual = gp_residual(grid, phi, potential, kappa)
    if not residual <= tol:
        raise NumericError("ground-state preparation did not converge")
    lowest = np.linalg.eigvalsh(kinetic + np.diag(potential + kappa * phi**2))[0]
    if mu - lowest > 1e-6 * max(1.0, abs(mu)):
        raise NumericError("polish converged to an excited state")
    return GpeState(grid.normalize(phi.astype(complex)), grid)


# ------------------------------------------------------------------- Krotov


def evaluate_gpe(problem: GpeProblem, control: ControlField) -> Evaluation:
    states = gpe_propagate(problem, control)
    term = problem.terminant(states[-1])
    h1 = h1_penalty(control, problem.lambda_du) if problem.lambda_du else 0.0
    return Evaluation(J=term + h1, terminant=term, fluence=0.0, state_penalty=0.0, h1=h1,
                      states=states, propagators=None)


def _inner_fixed_point(slope_of, a: float, scale: float, damping: float = 0.5,
                       steps: int = 50, tol: float = 1e-10):
    """Damped iteration of ``u = a + scale * slope_of(u)``; None on failure."""
    u = a + scale * slope_of(a)
    for _ in range(steps):
        target = a + scale * slope_of(u)
        if not np.isfinite(target):
            return None
        if abs(target - u) <= tol:
            return target
        u = u + damping * (target - u)
    return None


def krotov_gpe(problem: GpeProblem, u0: ControlField, gamma_u: float = 1.0,
               sigma: SigmaSpec = SigmaSpec("exponential"), update: str = "full",
               max_iters: int = 300, tol_dJ: float = 1e-8) -> OptimizationTrace:
    """Second-order Krotov with Gamma regularization for the controlled GPE.

    ``update="full"`` evaluates the potential slope at the new control by a
    damped fixed point; ``"simplified"`` evaluates it at the old control.
    """
    if update not in ("full", "simplified"):
        raise ArgumentError(f"unknown update {update!r}")
    if gamma_u <= 0:
        raise ArgumentError("gamma_u must be positive")
    if problem.lambda_du:
        raise ArgumentError("Krotov-GPE does not support the derivative penalty")
    grid = problem.grid
    kappa = problem.kappa

    def evaluate(control):
        return evaluate_gpe(problem, control)

    def prepare(control, evaluation):
        tgrid = control.grid
        dt = tgrid.dt
        old = evaluation.states
        costates = gpe_costate_backward(problem, control, old,
                                        problem.terminal_costate(old[-1]))
        shape = problem.shape.on_intervals(tgrid)
        mids = tgrid.midpoints
        splitter = _Splitter(grid, dt)

        def sweep(spec):
            nodes = (np.zeros(tgrid.intervals + 1) if spec.kind == "zero" else
                     sigma_exponential(tgrid, spec.alpha, spec.beta, spec.gamma))
            psi = problem.psi0.copy()
            values = np.empty_like(control.values)
            stats = SweepStats(cauchy=2)
            for j in range(tgrid.intervals):
                a = control.values[0, j]
                shifted = costates[j] + 0.5 * nodes[j] * (psi - old[j])
                chi_hat = costates[j + 1] - 0.5 * nodes[j + 1] * old[j + 1]

                def phi(u, psi=psi, chi_hat=chi_hat, t=mids[j]):
                    moved = splitter.step(psi, problem.potential_at(u, t, tgrid.horizon), kappa)
                    return 2.0 * grid.inner(chi_hat, moved).real

                def slope_of(u, psi=psi, shifted=shifted, t=mids[j]):
                    dv = problem.potential_slope(u, t, tgrid.horizon)
                    return grid.inner(shifted, dv * psi).imag

                scale = shape[j] / gamma_u
                x = None
                for _ in range(30):
                    if update == "simplified" or problem.potential.linear_in_u:
                        x = a + scale * slope_of(a)
                    else:
                        x = _inner_fixed_point(slope_of, a, scale)
                    if x is not None:
                        break
                    scale *= 0.5
                    stats.fallbacks += 1
                if x is None:
                    x = a
                    stats.unconverged += 1
                x = min(max(x, control.lower[0]), control.upper[0])

                def penalty(u, a=a, s=shape[j]):
                    return gamma_u * (u - a) ** 2 / s

                x, _ = guard_step(phi, a, phi(a), penalty, x, dt, stats)
                values[0, j] = x
                psi = splitter.step(psi, problem.potential_at(x, mids[j], tgrid.horizon),
                                    kappa)
            return control.with_values(values, clip=True), stats, {}

        return sweep

    def regularizer(new, old):
        return gamma_penalty(new, old, problem.shape, gamma_u)

    return run_monotone(f"krotov_gpe_{update}", u0, evaluate, prepare, regularizer, max_iters,
                        tol_dJ, sigma, initial_cost=1)
