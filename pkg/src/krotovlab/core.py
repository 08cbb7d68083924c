"""Domain types and elementary matrix algebra shared by the whole package.

Units are natural (hbar = 1). Controls are piecewise constant on a uniform
time grid; the value ``values[l, j]`` acts on channel ``l`` during
``[t_j, t_{j+1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
NORM_TOL = 1e-10

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)


class ArgumentError(ValueError):
    """Inputs with inconsistent shapes or violated type invariants."""


class ConfigurationError(ValueError):
    """A method was configured outside its stated preconditions."""


class NumericError(ArithmeticError):
    """A numerical routine failed (decomposition, blow-up, drift)."""


def is_hermitian(matrix: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    return bool(np.max(np.abs(matrix - matrix.conj().T), initial=0.0) <= tol)


def _square(matrix, name: str) -> np.ndarray:
    arr = np.asarray(matrix, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ArgumentError(f"{name} must be a square matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ControlSystem:
    """Drift plus control operators defining ``H[u] = H0 + sum_l u_l H_l``."""

    drift: np.ndarray
    controls: tuple[np.ndarray, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        drift = _square(self.drift, "drift")
        controls = tuple(_square(h, "control operator") for h in self.controls)
        n = drift.shape[0]
        if n < 2:
            raise ArgumentError("system dimension must be at least 2")
        if not controls:
            raise ArgumentError("at least one control operator is required")
        for h in controls:
            if h.shape != drift.shape:
                raise ArgumentError("control operators must match the drift dimension")
        for h in (drift, *controls):
            if not is_hermitian(h):
                raise ArgumentError("drift and control operators must be Hermitian")
        if self.labels is not None and len(self.labels) != len(controls):
            raise ArgumentError("one label per control channel is required")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "_stack", np.stack(controls))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def control_stack(self) -> np.ndarray:
        return self._stack


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j T / N`` for ``j = 0..N``."""

    horizon: float
    intervals: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ArgumentError("horizon must be positive and finite")
        if int(self.intervals) != self.intervals or self.intervals < 1:
            raise ArgumentError("intervals must be a positive integer")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "intervals", int(self.intervals))

    @property
    def dt(self) -> float:
        return self.horizon / self.intervals

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.intervals + 1) * self.dt

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.intervals) + 0.5) * self.dt


Bounds = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class ControlField:
    """Multi-channel piecewise-constant control with per-channel box bounds."""

    grid: TimeGrid
    values: np.ndarray
    bounds: Bounds | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        if values.ndim != 2 or values.shape[1] != self.grid.intervals:
            raise ArgumentError(
                f"control values must have shape (m, {self.grid.intervals}), got {values.shape}"
            )
        m = values.shape[0]
        bounds = self.bounds
        if bounds is None:
            bounds = tuple((-np.inf, np.inf) for _ in range(m))
        bounds = tuple((float(a), float(b)) for a, b in bounds)
        if len(bounds) != m:
            raise ArgumentError("one (lower, upper) bound pair per channel is required")
        for (a, b), row in zip(bounds, values):
            if a > b:
                raise ArgumentError("lower bound exceeds upper bound")
            if np.any(row < a) or np.any(row > b):
                raise ArgumentError("control values violate the box bounds")
        if not np.all(np.isfinite(values)):
            raise ArgumentError("control values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", bounds)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.bounds])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.bounds])

    def with_values(self, values: np.ndarray, clip: bool = False) -> "ControlField":
        values = np.asarray(values, dtype=float).reshape(self.values.shape)
        if clip:
            values = np.clip(values, self.lower[:, None], self.upper[:, None])
        return ControlField(self.grid, values, self.bounds)

    @classmethod
    def constant(cls, grid: TimeGrid, value: float | Sequence[float] = 0.0,
                 bounds: Bounds | None = None) -> "ControlField":
        level = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.repeat(level[:, None], grid.intervals, axis=1), bounds)


def check_state(psi, tol: float = NORM_TOL) -> np.ndarray:
    """Return ``psi`` as a complex vector after checking its unit norm."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim != 1:
        raise ArgumentError("a state must be a vector")
    if not abs(np.linalg.norm(psi) - 1.0) <= tol:
        raise ArgumentError("state is not normalized")
    return psi


def check_density(rho, tol: float = NORM_TOL) -> np.ndarray:
    rho = _square(rho, "density matrix")
    if not is_hermitian(rho):
        raise ArgumentError("density matrix must be Hermitian")
    if not abs(np.trace(rho).real - 1.0) <= tol:
        raise ArgumentError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho)[0] < -tol:
        raise ArgumentError("density matrix must be positive semidefinite")
    return rho


def check_unitary(u, tol: float = UNITARY_TOL) -> np.ndarray:
    u = _square(u, "unitary")
    if not np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) <= tol:
        raise ArgumentError("matrix is not unitary")
    return u


def hamiltonian_at(system: ControlSystem, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape[0] != system.n_controls:
        raise ArgumentError(
            f"expected {system.n_controls} control values, got {u.shape[0]}"
        )
    return system.drift + np.tensordot(u, system.control_stack, axes=1)


def commutator(a, b) -> np.ndarray:
    a = _square(a, "A")
    b = _square(b, "B")
    if a.shape != b.shape:
        raise ArgumentError("commutator operands must have equal dimensions")
    return a @ b - b @ a


def hermitian_expm(h, s: float) -> np.ndarray:
    """``exp(-i s H)`` for Hermitian ``H`` via its eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ArgumentError(f"H must be a square matrix, got shape {h.shape}")
    try:
        energies, vectors = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    return (vectors * np.exp(-1j * s * energies)) @ vectors.conj().T


def expm_frechet_hermitian(h, direction, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagator ``exp(-i s H)`` and its derivative along ``H -> H + e * direction``.

    Uses the divided-difference formula in the eigenbasis of ``H``, which is
    exact for Hermitian generators.
    """
    energies, vectors = np.linalg.eigh(h)
    phases = np.exp(-1j * s * energies)
    gap = energies[:, None] - energies[None, :]
    same = np.abs(gap) < 1e-12
    safe_gap = np.where(same, 1.0, gap)
    divided = np.where(same, -1j * s * phases[:, None],
                       (phases[:, None] - phases[None, :]) / safe_gap)
    rotated = vectors.conj().T @ direction @ vectors
    derivative = vectors @ (rotated * divided) @ vectors.conj().T
    propagator = (vectors * phases) @ vectors.conj().T
    return propagator, derivative
