"""Per-iteration records shared by every optimizer in the package."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ControlField

STATUSES = ("converged", "max_iters", "warning", "stalled")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    J: float
    terminant: float
    fluence: float = 0.0
    state_penalty: float = 0.0
    h1: float = 0.0
    J_regularized: float | None = None
    max_du: float = 0.0
    cauchy: int = 0
    sigma: tuple = ()
    retries: int = 0
    fallbacks: int = 0
    extra: dict = field(default_factory=dict)


@dataclass
class OptimizationTrace:
    """Accepted iterations of one run; ``records[0]`` describes the initial guess."""

    method: str
    records: list[IterationRecord]
    control: ControlField
    status: str = "max_iters"
    states: np.ndarray | None = None
    history: list[np.ndarray] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.records])

    @property
    def terminant(self) -> np.ndarray:
        return np.array([r.terminant for r in self.records])

    @property
    def cauchy(self) -> int:
        return self.records[-1].cauchy if self.records else 0

    @property
    def iterations(self) -> int:
        return len(self.records) - 1

    def is_monotone(self, slack: float = 1e-10, regularized: bool = False) -> bool:
        values = self.J
        if len(values) < 2:
            return True
        if regularized:
            later = np.array([r.J if r.J_regularized is None else r.J_regularized
                              for r in self.records[1:]])
            return bool(np.all(later <= values[:-1] + slack))
        return bool(np.all(np.diff(values) <= slack))


def record_from(iteration: int, evaluation, **kwargs) -> IterationRecord:
    return IterationRecord(iteration=iteration, J=float(evaluation.J),
                           terminant=float(evaluation.terminant),
                           fluence=float(evaluation.fluence),
                           state_penalty=float(evaluation.state_penalty),
                           h1=float(evaluation.h1), **kwargs)
