"""Lie-algebra rank analysis of bilinear quantum systems.

Matrices are handled as real vectors ``(Re A, Im A)`` so that the Euclidean
dot product equals the real inner product ``Re Tr(A^dagger B)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ArgumentError, ControlSystem, commutator

INDEPENDENCE_TOL = 1e-9
SKEW_FORM_TOL = 1e-9
VERDICTS = ("controllable_su", "controllable_sp", "not_controllable", "undetermined")


@dataclass(frozen=True)
class LieClosureReport:
    dimension: int
    basis: list = field(repr=False)
    depth_reached: int
    verdict: str = "undetermined"
    closed: bool = True

    def summary(self) -> dict:
        return {"dimension": self.dimension, "depth_reached": self.depth_reached,
                "verdict": self.verdict, "closed": self.closed}


def traceless_part(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ArgumentError("traceless_part expects a square matrix")
    return h - np.trace(h) / h.shape[0] * np.eye(h.shape[0])


def _flatten(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def _unflatten(v: np.ndarray, n: int) -> np.ndarray:
    half = n * n
    return (v[:half] + 1j * v[half:]).reshape(n, n)


class _RealSpan:
    """Orthonormal basis grown by modified Gram-Schmidt with one re-orthogonalization pass."""

    def __init__(self, n: int, tol: float):
        self.n = n
        self.tol = tol
        self.vectors: list[np.ndarray] = []

    def residual(self, v: np.ndarray) -> np.ndarray:
        r = v.copy()
        for _ in range(2):
            for q in self.vectors:
                r -= (q @ r) * q
        return r

    def add(self, a: np.ndarray) -> np.ndarray | None:
        v = _flatten(a)
        r = self.residual(v)
        norm = np.linalg.norm(r)
        if norm <= self.tol * max(np.linalg.norm(v), 1.0):
            return None
        q = r / norm
        self.vectors.append(q)
        return _unflatten(q, self.n)

    def matrices(self) -> list[np.ndarray]:
        return [_unflatten(q, self.n) for q in self.vectors]


def _check_generators(generators: Sequence) -> list[np.ndarray]:
    mats = [np.asarray(g, dtype=complex) for g in generators]
    if not mats:
        raise ArgumentError("at least one generator is required")
    n = mats[0].shape[0]
    for g in mats:
        if g.shape != (n, n):
            raise ArgumentError("generators must be square matrices of equal size")
        scale = max(np.max(np.abs(g)), 1.0)
        if np.max(np.abs(g + g.conj().T)) > 1e-10 * scale:
            raise ArgumentError("generators must be skew-Hermitian")
        if abs(np.trace(g)) > 1e-10 * scale * n:
            raise ArgumentError("generators must be traceless")
    return mats


def lie_closure(generators: Sequence, depth_cap: int | None = None,
                tol: float = INDEPENDENCE_TOL) -> LieClosureReport:
    """Real span of all right-nested commutators of skew-Hermitian generators."""
    mats = _check_generators(generators)
    n = mats[0].shape[0]
    cap = 2 * n * n if depth_cap is None else int(depth_cap)
    if cap < 0:
        raise ArgumentError("depth_cap must be non-negative")
    full = n * n - 1
    span = _RealSpan(n, tol)
    units = []
    for g in mats:
        norm = np.linalg.norm(g)
        if norm > 0:
            units.append(g / norm)
    frontier = [q for q in (span.add(g) for g in units) if q is not None]
    depth = 0
    while frontier and len(span.vectors) < full and depth < cap:
        depth += 1
        fresh = []
        for b in frontier:
            for g in units:
                q = span.add(commutator(g, b))
                if q is not None:
                    fresh.append(q)
                    if len(span.vectors) == full:
                        break
            if len(span.vectors) == full:
                break
        frontier = fresh
    closed = not frontier or len(span.vectors) == full
    basis = span.matrices()
    return LieClosureReport(dimension=len(basis), basis=basis, depth_reached=depth,
                            verdict=_classify(basis, n, closed), closed=closed)


def _antisymmetric_basis(n: int) -> list[np.ndarray]:
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n), dtype=complex)
            e[i, j], e[j, i] = 1.0, -1.0
            out.append(e)
    return out


def invariant_skew_forms(basis: Sequence[np.ndarray], tol: float = SKEW_FORM_TOL) -> list[np.ndarray]:
    """Antisymmetric J with ``X^T J + J X = 0`` for every X in ``basis``."""
    n = basis[0].shape[0]
    elements = _antisymmetric_basis(n)
    columns = []
    for e in elements:
        columns.append(np.concatenate([(x.T @ e + e @ x).ravel() for x in basis]))
    system = np.array(columns).T
    _, s, vh = np.linalg.svd(system)
    scale = max(s[0], 1.0) if s.size else 1.0
    rank = int(np.sum(s > tol * scale))
    null = vh[rank:].conj()
    return [sum(c * e for c, e in zip(row, elements)) for row in null]


def _nondegenerate_form(forms: list[np.ndarray], tol: float = SKEW_FORM_TOL) -> bool:
    if not forms:
        return False
    rng = np.random.default_rng(0)
    for _ in range(4):
        weights = rng.normal(size=len(forms)) + 1j * rng.normal(size=len(forms))
        j = sum(w * f for w, f in zip(weights, forms))
        s = np.linalg.svd(j, compute_uv=False)
        if s[-1] > tol * max(s[0], 1.0):
            return True
    return False


def _classify(basis: list[np.ndarray], n: int, closed: bool) -> str:
    dim = len(basis)
    if not closed:
        return "undetermined"
    if dim == n * n - 1:
        return "controllable_su"
    if (n % 2 == 0 and dim == n * (n + 1) // 2
            and _nondegenerate_form(invariant_skew_forms(basis))):
        return "controllable_sp"
    return "not_controllable"


def system_generators(system: ControlSystem) -> list[np.ndarray]:
    ops = (system.drift, *system.controls)
    return [-1j * traceless_part(h) for h in ops if np.linalg.norm(traceless_part(h)) > 0]


def projective_controllability_verdict(system: ControlSystem,
                                       depth_cap: int | None = None) -> LieClosureReport:
    generators = system_generators(system)
    if not generators:
        return LieClosureReport(0, [], 0, "not_controllable", True)
    return lie_closure(generators, depth_cap)
