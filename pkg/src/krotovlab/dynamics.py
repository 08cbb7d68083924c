"""Forward and backward propagation under piecewise-constant controls.

Every interval is propagated with the exact exponential of the constant
Hamiltonian on that interval, so grids with aligned intervals reproduce each
other to rounding error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ArgumentError,
    ControlField,
    ControlSystem,
    NumericError,
    TimeGrid,
    hamiltonian_at,
    hermitian_expm,
)


@dataclass(frozen=True)
class Trajectory:
    """Samples of a state, density matrix or unitary at all ``N + 1`` nodes."""

    grid: TimeGrid
    samples: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]

    def __len__(self) -> int:
        return self.samples.shape[0]


# Costates share the storage layout; the alias documents intent at call sites.
CostateTrajectory = Trajectory


@dataclass(frozen=True)
class Ensemble:
    """Several initial states driven by one shared control."""

    initial: np.ndarray
    targets: np.ndarray | None = None
    subspace_projector: np.ndarray | None = None

    def __post_init__(self):
        initial = np.atleast_2d(np.asarray(self.initial, dtype=complex))
        object.__setattr__(self, "initial", initial)
        if self.targets is not None:
            targets = np.atleast_2d(np.asarray(self.targets, dtype=complex))
            if targets.shape != initial.shape:
                raise ArgumentError("targets must match the initial states in count and dim")
            object.__setattr__(self, "targets", targets)

    @property
    def size(self) -> int:
        return self.initial.shape[0]

    @classmethod
    def basis(cls, dim: int, targets=None) -> "Ensemble":
        return cls(np.eye(dim, dtype=complex), targets)


def _check(system: ControlSystem, control: ControlField):
    if control.n_channels != system.n_controls:
        raise ArgumentError(
            f"control has {control.n_channels} channels, system expects {system.n_controls}"
        )


def step_propagators(system: ControlSystem, control: ControlField) -> np.ndarray:
    """All interval propagators ``V_j = exp(-i dt H[u_j])`` stacked as (N, n, n)."""
    _check(system, control)
    dt = control.grid.dt
    return np.stack([
        hermitian_expm(hamiltonian_at(system, control.values[:, j]), dt)
        for j in range(control.grid.intervals)
    ])


def _vector(psi, dim: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (dim,):
        raise ArgumentError(f"state must have shape ({dim},), got {psi.shape}")
    return psi


def propagate_state(system: ControlSystem, control: ControlField, psi0,
                    propagators: np.ndarray | None = None) -> Trajectory:
    psi = _vector(psi0, system.dim)
    if propagators is None:
        propagators = step_propagators(system, control)
    samples = np.empty((control.grid.intervals + 1, system.dim), dtype=complex)
    samples[0] = psi
    for j, v in enumerate(propagators):
        samples[j + 1] = v @ samples[j]
    drift = np.max(np.abs(np.linalg.norm(samples, axis=1) - np.linalg.norm(psi)))
    if not drift <= 1e-10:
        raise NumericError(f"norm drift {drift:.3e} exceeds tolerance")
    return Trajectory(control.grid, samples)


def propagate_unitary(system: ControlSystem, control: ControlField,
                      propagators: np.ndarray | None = None) -> Trajectory:
    if propagators is None:
        propagators = step_propagators(system, control)
    n = system.dim
    samples = np.empty((control.grid.intervals + 1, n, n), dtype=complex)
    samples[0] = np.eye(n)
    for j, v in enumerate(propagators):
        samples[j + 1] = v @ samples[j]
    return Trajectory(control.grid, samples)


def propagate_density(system: ControlSystem, control: ControlField, rho0,
                      route: str = "von_neumann",
                      propagators: np.ndarray | None = None) -> Trajectory:
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (system.dim, system.dim):
        raise ArgumentError("density matrix dimension mismatch")
    if propagators is None:
        propagators = step_propagators(system, control)
    if route == "conjugation":
        unitaries = propagate_unitary(system, control, propagators).samples
        samples = unitaries @ rho0 @ unitaries.conj().transpose(0, 2, 1)
    elif route == "von_neumann":
        samples = np.empty((control.grid.intervals + 1, *rho0.shape), dtype=complex)
        samples[0] = rho0
        for j, v in enumerate(propagators):
            samples[j + 1] = v @ samples[j] @ v.conj().T
    else:
        raise ArgumentError(f"unknown density route {route!r}")
    return Trajectory(control.grid, samples)


def propagate_costate_state(system: ControlSystem, control: ControlField, chi_final,
                            inhomogeneity: np.ndarray | None = None,
                            propagators: np.ndarray | None = None) -> Trajectory:
    """Backward sweep ``chi_j = V_j^dagger chi_{j+1} - dt * source_j``.

    ``inhomogeneity`` holds the source at the nodes ``t_0..t_N`` (or ``t_0..t_{N-1}``).
    """
    chi = _vector(chi_final, system.dim)
    if propagators is None:
        propagators = step_propagators(system, control)
    grid = control.grid
    if inhomogeneity is not None:
        inhomogeneity = np.asarray(inhomogeneity, dtype=complex)
        if inhomogeneity.shape[0] < grid.intervals or inhomogeneity.shape[1:] != chi.shape:
            raise ArgumentError("inhomogeneity must be sampled on the grid nodes")
    samples = np.empty((grid.intervals + 1, system.dim), dtype=complex)
    samples[-1] = chi
    for j in range(grid.intervals - 1, -1, -1):
        samples[j] = propagators[j].conj().T @ samples[j + 1]
        if inhomogeneity is not None:
            samples[j] -= grid.dt * inhomogeneity[j]
    return Trajectory(grid, samples)


def propagate_costate_density(system: ControlSystem, control: ControlField, sigma_final,
                              inhomogeneity: np.ndarray | None = None,
                              propagators: np.ndarray | None = None) -> Trajectory:
    """Backward sweep ``sigma_j = V_j^dagger sigma_{j+1} V_j - dt * source_j``."""
    sigma = np.asarray(sigma_final, dtype=complex)
    if sigma.shape != (system.dim, system.dim):
        raise ArgumentError("costate dimension mismatch")
    if propagators is None:
        propagators = step_propagators(system, control)
    grid = control.grid
    samples = np.empty((grid.intervals + 1, *sigma.shape), dtype=complex)
    samples[-1] = sigma
    for j in range(grid.intervals - 1, -1, -1):
        v = propagators[j]
        samples[j] = v.conj().T @ samples[j + 1] @ v
        if inhomogeneity is not None:
            samples[j] -= grid.dt * np.asarray(inhomogeneity[j])
    return Trajectory(grid, samples)


def propagate_ensemble(system: ControlSystem, control: ControlField, ensemble: Ensemble,
                       propagators: np.ndarray | None = None) -> list[Trajectory]:
    if propagators is None:
        propagators = step_propagators(system, control)
    return [propagate_state(system, control, psi, propagators) for psi in ensemble.initial]
