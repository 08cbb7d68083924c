"""Terminants, running costs, shape functions and total objectives.

Terminant objects expose ``value(finals)`` and ``costate(finals)``. For an
ensemble the finals are stacked row-wise, and ``costate`` returns the terminal
costates ``-dF/dpsi_j^*`` (Wirtinger derivative) with the same layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import polar

from .core import ArgumentError, ControlField, ControlSystem, is_hermitian
from .dynamics import Ensemble, propagate_density, propagate_state, step_propagators


class DegenerateShapeError(ArgumentError):
    """Shape function vanishes where the control is nonzero."""


# Columns of the magic (Bell) basis: U_B = B^dagger U B maps local gates to SO(4).
BELL_BASIS = np.array([[1, 0, 0, 1j],
                       [0, 1j, 1, 0],
                       [0, 1j, -1, 0],
                       [1, 0, 0, -1j]], dtype=complex) / np.sqrt(2.0)

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CPHASE = np.diag([1, 1, 1, -1]).astype(complex)
QFT = 0.5 * np.array([[1, 1, 1, 1],
                      [1, 1j, -1, -1j],
                      [1, -1, 1, -1],
                      [1, -1j, -1, 1j]], dtype=complex)
_C1, _S1 = np.cos(np.pi / 8), np.sin(np.pi / 8)
_C3, _S3 = np.cos(3 * np.pi / 8), np.sin(3 * np.pi / 8)
BGATE = np.array([[_C1, 0, 0, 1j * _S1],
                  [0, _C3, 1j * _S3, 0],
                  [0, 1j * _S3, _C3, 0],
                  [1j * _S1, 0, 0, _C1]], dtype=complex)
GATES = {"CNOT": CNOT, "CPHASE": CPHASE, "QFT": QFT, "BGATE": BGATE}


@dataclass(frozen=True)
class ShapeFn:
    """Pulse envelope ``S(t)``: constant, sine_squared or gaussian_palao."""

    kind: str = "constant"

    def __post_init__(self):
        if self.kind not in ("constant", "sine_squared", "gaussian_palao"):
            raise ArgumentError(f"unknown shape {self.kind!r}")

    def __call__(self, t, horizon: float) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.ones_like(t)
        if self.kind == "sine_squared":
            return np.sin(np.pi * t / horizon) ** 2
        return np.exp(-32.0 * (t / horizon - 0.5) ** 2)

    def on_intervals(self, grid) -> np.ndarray:
        return self(grid.midpoints, grid.horizon)


# ---------------------------------------------------------------- terminants


def _hermitian(op, name="operator") -> np.ndarray:
    op = np.asarray(op, dtype=complex)
    if not is_hermitian(op):
        raise ArgumentError(f"{name} must be Hermitian")
    return op


def terminant_observable(psi_final, observable) -> float:
    observable = _hermitian(observable, "observable")
    psi = np.asarray(psi_final, dtype=complex)
    return float(-np.vdot(psi, observable @ psi).real)


def terminant_overlap(psi_final, psi_target, variant: str = "squared") -> float:
    overlap = np.vdot(psi_final, psi_target)
    if variant == "squared":
        return float(1.0 - abs(overlap) ** 2)
    if variant == "real_part":
        return float(1.0 - overlap.real)
    raise ArgumentError(f"unknown overlap variant {variant!r}")


def terminant_gate(u_final, gate) -> float:
    u_final = np.asarray(u_final, dtype=complex)
    n = u_final.shape[0]
    return float(-abs(np.trace(np.asarray(gate).conj().T @ u_final)) ** 2 / n**2)


def terminant_density(rho_final, rho_target) -> float:
    return float(-np.trace(np.asarray(rho_final) @ np.asarray(rho_target)).real)


def density_distance_residual(rho_final, rho_target, rho0) -> float:
    """Residual of ``0.5 ||rho_T - rho_target||^2 = C - Tr(rho_target rho_T)``."""
    rho_final, rho_target, rho0 = map(np.asarray, (rho_final, rho_target, rho0))
    diff = rho_final - rho_target
    lhs = 0.5 * np.trace(diff.conj().T @ diff).real
    c = 0.5 * np.trace(rho0 @ rho0).real + 0.5 * np.trace(rho_target @ rho_target).real
    return float(abs(lhs - (c + terminant_density(rho_final, rho_target))))


def terminant_unitary_observable(u_final, operator, rho0, variant: str = "observable") -> float:
    u_final = np.asarray(u_final, dtype=complex)
    evolved = u_final @ np.asarray(rho0) @ u_final.conj().T
    pairing = np.trace(np.asarray(operator).conj().T @ evolved)
    if variant == "observable":
        return float(-np.trace(np.asarray(operator) @ evolved).real)
    if variant == "real_part":
        return float(-pairing.real)
    if variant == "abs_squared":
        return float(-abs(pairing) ** 2)
    raise ArgumentError(f"unknown unitary terminant variant {variant!r}")


def local_invariants(u) -> tuple[float, float, float]:
    """Two-qubit local invariants ``(g1, g2, g3)`` of a 4x4 unitary."""
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ArgumentError("local invariants need a 4x4 matrix")
    ub = BELL_BASIS.conj().T @ u @ BELL_BASIS
    m = ub.T @ ub
    det = np.linalg.det(u)
    tr = np.trace(m)
    g12 = tr**2 / (16.0 * det)
    g3 = (tr**2 - np.trace(m @ m)) / (4.0 * det)
    return float(g12.real), float(g12.imag), float(g3.real)


def _projected_block(finals: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """``U_n[i, j] = <b_i, psi_j(T)>`` for basis vectors ``b_i`` of the subspace."""
    return basis.conj() @ finals.T


def _subspace_basis(projector, dim: int) -> np.ndarray:
    if projector is None:
        return np.eye(dim, dtype=complex)
    projector = _hermitian(projector, "subspace projector")
    values, vectors = np.linalg.eigh(projector)
    keep = values > 0.5
    if np.allclose(projector, np.diag(np.diag(projector))):
        return np.eye(dim, dtype=complex)[np.diag(projector).real > 0.5]
    return vectors[:, keep].T.copy()


def local_invariants_breakdown(block: np.ndarray, target) -> dict:
    """Terms of the local-invariant terminant for a projected block ``U_n``."""
    n = block.shape[0]
    leakage = float(np.max(np.abs(block.conj().T @ block - np.eye(n))))
    unitary_part = polar(block)[0] if leakage > 1e-6 else block
    g_target = np.array(local_invariants(target))
    g_actual = np.array(local_invariants(unitary_part))
    delta = np.abs(g_target - g_actual)
    population = np.trace(block @ block.conj().T).real / n
    return {"delta_g": delta, "leakage": leakage,
            "value": float(np.sum(delta**2) + 1.0 - population)}


def terminant_local_invariants(finals, target, projector=None) -> float:
    finals = np.atleast_2d(np.asarray(finals, dtype=complex))
    basis = _subspace_basis(projector, finals.shape[1])
    if basis.shape[0] != finals.shape[0]:
        raise ArgumentError("ensemble size must equal the subspace dimension")
    return local_invariants_breakdown(_projected_block(finals, basis), target)["value"]


class Terminant:
    """Base for terminal costs on stacked ensemble finals of shape (n_e, n)."""

    concave = False

    def value(self, finals: np.ndarray) -> float:
        raise NotImplementedError

    def costate(self, finals: np.ndarray) -> np.ndarray:
        """Terminal costates ``-dF/dpsi^*`` by central differences."""
        finals = np.asarray(finals, dtype=complex)
        grad = np.zeros_like(finals)
        step = 1e-6
        for idx in np.ndindex(finals.shape):
            parts = []
            for direction in (1.0, 1j):
                plus = finals.copy()
                minus = finals.copy()
                plus[idx] += step * direction
                minus[idx] -= step * direction
                parts.append((self.value(plus) - self.value(minus)) / (2 * step))
            grad[idx] = -0.5 * (parts[0] + 1j * parts[1])
        return grad


@dataclass(frozen=True, eq=False)
class ObservableTerminant(Terminant):
    """``offset - sum_j <psi_j, O psi_j>``; concave when ``O >= 0``."""

    observable: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "observable", _hermitian(self.observable, "observable"))

    @property
    def concave(self) -> bool:
        return bool(np.linalg.eigvalsh(self.observable)[0] >= -1e-12)

    def value(self, finals):
        finals = np.atleast_2d(finals)
        return float(self.offset - np.einsum("ei,ij,ej->", finals.conj(), self.observable,
                                             finals).real)

    def costate(self, finals):
        return np.atleast_2d(finals) @ self.observable.T


@dataclass(frozen=True, eq=False)
class OverlapTerminant(Terminant):
    """Distance to one target state per ensemble member (averaged)."""

    targets: np.ndarray
    variant: str = "squared"
    concave = True

    def __post_init__(self):
        if self.variant not in ("squared", "real_part"):
            raise ArgumentError(f"unknown overlap variant {self.variant!r}")
        object.__setattr__(self, "targets", np.atleast_2d(np.asarray(self.targets, complex)))

    def value(self, finals):
        finals = np.atleast_2d(finals)
        return float(np.mean([terminant_overlap(p, t, self.variant)
                              for p, t in zip(finals, self.targets)]))

    def costate(self, finals):
        finals = np.atleast_2d(finals)
        n_e = finals.shape[0]
        if self.variant == "squared":
            overlaps = np.einsum("ei,ei->e", self.targets.conj(), finals)
            return overlaps[:, None] * self.targets / n_e
        return 0.5 * self.targets / n_e


@dataclass(frozen=True, eq=False)
class GateTerminant(Terminant):
    """``-|sum_j <W b_j, psi_j>|^2 / n_e^2`` for basis inputs ``b_j``."""

    gate: np.ndarray
    inputs: np.ndarray
    concave = True

    def __post_init__(self):
        object.__setattr__(self, "gate", np.asarray(self.gate, dtype=complex))
        object.__setattr__(self, "inputs", np.atleast_2d(np.asarray(self.inputs, complex)))

    @property
    def mapped(self) -> np.ndarray:
        return self.inputs @ self.gate.T

    def _trace(self, finals):
        return np.einsum("ei,ei->", self.mapped.conj(), np.atleast_2d(finals))

    def value(self, finals):
        n_e = self.inputs.shape[0]
        return float(-abs(self._trace(finals)) ** 2 / n_e**2)

    def costate(self, finals):
        n_e = self.inputs.shape[0]
        return self._trace(finals) * self.mapped / n_e**2


@dataclass(frozen=True, eq=False)
class LocalInvariantsTerminant(Terminant):
    """Local-invariant distance to ``target`` (non-convex, eighth order)."""

    target: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=complex))
        object.__setattr__(self, "basis", np.atleast_2d(np.asarray(self.basis, complex)))

    def value(self, finals):
        block = _projected_block(np.atleast_2d(finals), self.basis)
        return local_invariants_breakdown(block, self.target)["value"]


@dataclass(frozen=True, eq=False)
class DensityTerminant(Terminant):
    """``-Tr(rho_T rho_target)``; linear in the density matrix."""

    target: np.ndarray
    concave = True

    def value(self, finals):
        return terminant_density(finals, self.target)

    def costate(self, finals):
        return np.asarray(self.target, dtype=complex)


# ------------------------------------------------------------- running costs


def fluence(control: ControlField, shape: ShapeFn, lambda_u: float) -> float:
    grid = control.grid
    s = shape.on_intervals(grid)
    power = np.sum(control.values**2, axis=0)
    if np.any((s <= 0) & (power > 0)):
        raise DegenerateShapeError("shape vanishes on an interval with nonzero control")
    ratio = np.divide(power, s, out=np.zeros_like(power), where=s > 0)
    return float(lambda_u * grid.dt * np.sum(ratio))


def _operator_at(operator, j: int) -> np.ndarray:
    operator = np.asarray(operator)
    return operator[j] if operator.ndim == 3 else operator


def state_penalty(samples, operator, lambda_state: float, dt: float) -> float:
    """Left-endpoint sum ``lambda * sum_j dt <psi_j, D_j psi_j>`` over j < N.

    ``samples`` has shape (N+1, n) for one state or (n_e, N+1, n) for an
    ensemble; ``operator`` is one matrix or one per node.
    """
    samples = np.asarray(samples)
    operator = np.asarray(operator, dtype=complex)
    if not is_hermitian(_operator_at(operator, 0)):
        raise ArgumentError("state penalty operator must be Hermitian")
    if samples.ndim == 2:
        samples = samples[np.newaxis]
    total = 0.0
    for j in range(samples.shape[-2] - 1):
        d = _operator_at(operator, j)
        block = samples[:, j, :]
        total += np.einsum("ei,ij,ej->", block.conj(), d, block).real
    return float(lambda_state * dt * total)


def density_state_penalty(samples, operator, lambda_state: float, dt: float) -> float:
    samples = np.asarray(samples)
    total = sum(np.trace(samples[j] @ _operator_at(operator, j)).real
                for j in range(samples.shape[0] - 1))
    return float(lambda_state * dt * total)


def h1_penalty(control: ControlField, lambda_du: float) -> float:
    dt = control.grid.dt
    slopes = np.diff(control.values, axis=1) / dt
    return float(lambda_du * dt * np.sum(slopes**2))


# ----------------------------------------------------------------- objectives


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    terminant: Terminant
    lambda_u: float = 0.0
    lambda_state: float = 0.0
    state_operator: np.ndarray | None = None
    lambda_du: float = 0.0
    gamma_u: float | None = None
    shape: ShapeFn = field(default_factory=ShapeFn)

    def __post_init__(self):
        if self.lambda_u < 0 or self.lambda_du < 0:
            raise ArgumentError("lambda_u and lambda_du must be nonnegative")
        if self.gamma_u is not None and self.gamma_u <= 0:
            raise ArgumentError("gamma_u must be positive when given")
        if self.lambda_state != 0 and self.state_operator is None:
            raise ArgumentError("a state penalty weight needs a penalty operator")
        if self.state_operator is not None:
            op = np.asarray(self.state_operator, dtype=complex)
            if not is_hermitian(_operator_at(op, 0)):
                raise ArgumentError("state penalty operator must be Hermitian")
            object.__setattr__(self, "state_operator", op)


@dataclass(frozen=True, eq=False)
class StateProblem:
    """Schrodinger ensemble (a single state is an ensemble of one)."""

    system: ControlSystem
    ensemble: Ensemble
    objective: ObjectiveSpec

    def __post_init__(self):
        if not isinstance(self.ensemble, Ensemble):
            object.__setattr__(self, "ensemble", Ensemble(self.ensemble))
        if self.ensemble.initial.shape[1] != self.system.dim:
            raise ArgumentError("initial states do not match the system dimension")


@dataclass(frozen=True, eq=False)
class DensityProblem:
    system: ControlSystem
    rho0: np.ndarray
    objective: ObjectiveSpec


@dataclass
class Evaluation:
    """Objective value with its components and the trajectories behind it."""

    J: float
    terminant: float
    fluence: float
    state_penalty: float
    h1: float
    states: np.ndarray
    propagators: np.ndarray

    @property
    def components(self) -> dict:
        return {"J": self.J, "terminant": self.terminant, "fluence": self.fluence,
                "state_penalty": self.state_penalty, "h1": self.h1}


def total_objective(problem, control: ControlField,
                    propagators: np.ndarray | None = None) -> Evaluation:
    objective = problem.objective
    if propagators is None:
        propagators = step_propagators(problem.system, control)
    dt = control.grid.dt
    if isinstance(problem, DensityProblem):
        states = propagate_density(problem.system, control, problem.rho0,
                                   propagators=propagators).samples
        term = objective.terminant.value(states[-1])
        penalty = 0.0
        if objective.lambda_state:
            penalty = density_state_penalty(states, objective.state_operator,
                                            objective.lambda_state, dt)
    else:
        states = np.stack([
            propagate_state(problem.system, control, psi, propagators).samples
            for psi in problem.ensemble.initial
        ])
        term = objective.terminant.value(states[:, -1, :])
        penalty = 0.0
        if objective.lambda_state:
            penalty = state_penalty(states, objective.state_operator,
                                    objective.lambda_state, dt)
    flu = fluence(control, objective.shape, objective.lambda_u) if objective.lambda_u else 0.0
    h1 = h1_penalty(control, objective.lambda_du) if objective.lambda_du else 0.0
    return Evaluation(J=term + flu + penalty + h1, terminant=term, fluence=flu,
                      state_penalty=penalty, h1=h1, states=states, propagators=propagators)


def gamma_penalty(new: ControlField, old: ControlField, shape: ShapeFn, gamma_u: float) -> float:
    """Regularizer ``gamma_u * int ||u - u_old||^2 / S`` on the grid."""
    diff = ControlField(new.grid, new.values - old.values)
    return fluence(diff, shape, gamma_u)
