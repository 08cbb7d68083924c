"""Catalog of small, dimensionless model problems.

Every entry is plain data (scalar parameters plus notes) and builds its
system, objective and initial guess on demand, so entries serialize to the
flat key-value configuration used by the command line.

Rotor convention (``P4``): basis index ``k = 0..21`` carries angular momentum
``j = k - 10``, so ``j`` runs over ``-10..11``. Components are numbered from one
as ``z_1..z_22``; ``z_2`` is index ``k = 1`` (``j = -9``). The run starts in
``z_2`` and empties it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SIGMA_X, SIGMA_Z, ArgumentError, ControlField, ControlSystem, TimeGrid
from .costs import (GATES, GateTerminant, ObjectiveSpec, ObservableTerminant,
                    OverlapTerminant, StateProblem)
from .dynamics import Ensemble
from .gpe import (GpeProblem, Polynomial, SpatialGrid, SplitWell, gpe_ground_state,
                  linear_eigenstates)

ROTOR_SIZE = 22
ROTOR_J_MIN = -10


@dataclass(frozen=True)
class BuiltProblem:
    entry: "ProblemCatalogEntry"
    problem: object
    guess: ControlField

    @property
    def system(self) -> ControlSystem | None:
        return getattr(self.problem, "system", None)


@dataclass(frozen=True)
class ProblemCatalogEntry:
    id: str
    kind: str
    title: str
    params: dict = field(default_factory=dict)
    method: str = "krotov1"
    method_params: dict = field(default_factory=dict)
    expected_verdict: str | None = None
    notes: str = ""

    def __post_init__(self):
        if self.kind not in ("state", "gpe"):
            raise ArgumentError(f"unknown problem kind {self.kind!r}")

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.params["horizon"], self.params["intervals"])

    def with_params(self, **changes) -> "ProblemCatalogEntry":
        unknown = set(changes) - set(self.params)
        if unknown:
            raise ArgumentError(f"unknown parameters for {self.id}: {sorted(unknown)}")
        merged = dict(self.params)
        for key, value in changes.items():
            merged[key] = coerce_value(self.params[key], value, key)
        return ProblemCatalogEntry(self.id, self.kind, self.title, merged, self.method,
                                   dict(self.method_params), self.expected_verdict, self.notes)

    def build(self) -> BuiltProblem:
        return _BUILDERS[self.id](self)

    def to_config(self) -> dict[str, dict[str, str]]:
        section = {"id": self.id}
        section.update({k: format_value(v) for k, v in self.params.items()})
        return {"problem": section}

    @classmethod
    def from_config(cls, sections: dict) -> "ProblemCatalogEntry":
        section = dict(sections["problem"])
        base = entry(section.pop("id"))
        return base.with_params(**section)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce_value(default, value, key: str):
    if not isinstance(value, str):
        return type(default)(value)
    try:
        if isinstance(default, bool):
            if value.lower() not in ("true", "false"):
                raise ValueError(value)
            return value.lower() == "true"
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ArgumentError(f"parameter {key!r} expects {type(default).__name__}, "
                            f"got {value!r}") from None
    return value


# ------------------------------------------------------------- builders


def _basis(n: int, k: int) -> np.ndarray:
    v = np.zeros(n, dtype=complex)
    v[k] = 1.0
    return v


def _two_level(e: ProblemCatalogEntry, drift: np.ndarray) -> BuiltProblem:
    p = e.params
    system = ControlSystem(drift, (SIGMA_X,), ("x",))
    target = _basis(2, 1)
    objective = ObjectiveSpec(OverlapTerminant(target, p["variant"]), lambda_u=p["lambda_u"])
    problem = StateProblem(system, Ensemble(_basis(2, 0), target), objective)
    return BuiltProblem(e, problem, ControlField.constant(e.grid, p["guess"]))


def _build_p1(e):
    return _two_level(e, SIGMA_Z)


def _build_p2(e):
    return _two_level(e, e.params["drift_scale"] * SIGMA_Z)


def lambda_system(detuning: float) -> ControlSystem:
    pump = np.zeros((3, 3), dtype=complex)
    pump[0, 1] = pump[1, 0] = 1.0
    stokes = np.zeros((3, 3), dtype=complex)
    stokes[1, 2] = stokes[2, 1] = 1.0
    return ControlSystem(np.diag([0.0, detuning, 0.0]), (pump, stokes), ("pump", "stokes"))


def forbidden_operator() -> np.ndarray:
    """Positive weight on every level except the intermediate one."""
    return np.diag([1.0, 0.0, 1.0]).astype(complex)


def _build_p3(e):
    p = e.params
    system = lambda_system(p["detuning"])
    target = _basis(3, 2)
    weight = p["lambda_state"]
    objective = ObjectiveSpec(OverlapTerminant(target, p["variant"]), lambda_u=p["lambda_u"],
                              lambda_state=weight,
                              state_operator=forbidden_operator() if weight else None)
    problem = StateProblem(system, Ensemble(_basis(3, 0), target), objective)
    return BuiltProblem(e, problem, ControlField.constant(e.grid, [p["guess"], p["guess"]]))


def rotor_system() -> ControlSystem:
    """``H0 = diag(j^2)`` and ``cos(theta)`` with 1/2 on the first off-diagonals."""
    j = np.arange(ROTOR_SIZE) + ROTOR_J_MIN
    cosine = 0.5 * (np.eye(ROTOR_SIZE, k=1) + np.eye(ROTOR_SIZE, k=-1))
    return ControlSystem(np.diag(j.astype(float) ** 2), (cosine,), ("cos",))


def _build_p4(e):
    p = e.params
    system = rotor_system()
    k = p["target_component"] - 1
    if not 0 <= k < ROTOR_SIZE:
        raise ArgumentError("target_component must lie in 1..22")
    projector = np.zeros((ROTOR_SIZE, ROTOR_SIZE), dtype=complex)
    projector[k, k] = 1.0
    terminant = ObservableTerminant(np.eye(ROTOR_SIZE) - projector, offset=1.0)
    psi0 = _basis(ROTOR_SIZE, p["initial_component"] - 1)
    problem = StateProblem(system, Ensemble(psi0), ObjectiveSpec(terminant))
    bound = p["bound"]
    guess = ControlField.constant(e.grid, p["guess"], ((-bound, bound),))
    return BuiltProblem(e, problem, guess)


def two_qubit_system(coupling: float, local_a: float, local_b: float) -> ControlSystem:
    eye = np.eye(2)
    drift = (coupling * np.kron(SIGMA_Z, SIGMA_Z) + local_a * np.kron(SIGMA_Z, eye)
             + local_b * np.kron(eye, SIGMA_Z))
    return ControlSystem(drift, (np.kron(SIGMA_X, eye), np.kron(eye, SIGMA_X)), ("xa", "xb"))


def _build_p5(e):
    p = e.params
    system = two_qubit_system(p["coupling"], p["local_a"], p["local_b"])
    if p["gate"] not in GATES:
        raise ArgumentError(f"unknown gate {p['gate']!r}; choose from {sorted(GATES)}")
    gate = GATES[p["gate"]]
    inputs = np.eye(4, dtype=complex)
    ensemble = Ensemble(inputs, inputs @ gate.T)
    problem = StateProblem(system, ensemble, ObjectiveSpec(GateTerminant(gate, inputs)))
    return BuiltProblem(e, problem, ControlField.constant(e.grid, [p["guess"], p["guess"]]))


def _spatial(p) -> SpatialGrid:
    return SpatialGrid(p["x_min"], p["x_max"], p["points"])


def _build_p6(e):
    p = e.params
    grid = _spatial(p)
    potential = SplitWell(p["separation"])
    kappa = p["kappa"]
    start = gpe_ground_state(grid, potential.value(grid.x, 0.0), kappa)
    goal = gpe_ground_state(grid, potential.value(grid.x, p["final_split"]), kappa)
    problem = GpeProblem(grid, potential, kappa, start.field, goal.field)
    ramp = p["final_split"] * e.grid.midpoints / e.grid.horizon
    guess = ControlField(e.grid, ramp, ((p["lower"], p["upper"]),))
    return BuiltProblem(e, problem, guess)


def _polynomial(p) -> Polynomial:
    return Polynomial(p["p2"], p["p4"], p["p6"])


def _build_p7(e):
    p = e.params
    grid = _spatial(p)
    potential = _polynomial(p)
    trap = potential.value(grid.x, 0.0)
    start = gpe_ground_state(grid, trap, p["kappa"])
    _, (_, excited) = linear_eigenstates(grid, trap, 2)
    problem = GpeProblem(grid, potential, p["kappa"], start.field, excited)
    t = e.grid.midpoints / e.grid.horizon
    guess = ControlField(e.grid, p["guess_amplitude"] * np.sin(2 * np.pi * t),
                         ((p["lower"], p["upper"]),))
    return BuiltProblem(e, problem, guess)


def _build_abelian(e):
    p = e.params
    system = ControlSystem(np.diag([1.0, -1.0]), (p["control_scale"] * np.diag([1.0, -1.0]),))
    target = _basis(2, 1)
    problem = StateProblem(system, Ensemble(_basis(2, 0), target),
                           ObjectiveSpec(OverlapTerminant(target)))
    return BuiltProblem(e, problem, ControlField.constant(e.grid, p["guess"]))


_BUILDERS = {"P1": _build_p1, "P2": _build_p2, "P3": _build_p3, "P4": _build_p4,
             "P5": _build_p5, "P6": _build_p6, "P7": _build_p7, "abelian": _build_abelian}

_GPE_GRID = {"x_min": -8.0, "x_max": 8.0, "points": 256}

_CATALOG = (
    ProblemCatalogEntry(
        "P1", "state", "two-level transfer |0> -> |1> with sigma_z drift and sigma_x control",
        {"horizon": float(np.pi), "intervals": 100, "guess": 0.1, "variant": "squared",
         "lambda_u": 0.0},
        "krotov1", {"gamma_u": 1.0}, "controllable_su",
        "u = 0 is stationary for the squared overlap, hence the nonzero guess."),
    ProblemCatalogEntry(
        "P2", "state", "Landau-Zener style two-level transfer with a scaled drift",
        {"horizon": 2.0, "intervals": 100, "drift_scale": 2.0, "guess": 0.5,
         "variant": "squared", "lambda_u": 0.0},
        "krotov1", {"gamma_u": 1.0}, "controllable_su",
        "The drift splitting is 4; the undriven transfer is zero."),
    ProblemCatalogEntry(
        "P3", "state", "three-level lambda system |1> -> |3> via pump and Stokes fields",
        {"horizon": 10.0, "intervals": 200, "detuning": 0.5, "guess": 0.1,
         "variant": "squared", "lambda_u": 0.0, "lambda_state": 0.0},
        "krotov1", {"gamma_u": 1.0}, "controllable_su",
        "A negative lambda_state rewards population outside the intermediate level."),
    ProblemCatalogEntry(
        "P4", "state", "22-level planar rotor depleting component z_2 under |u| <= 1/3",
        {"horizon": 20.0, "intervals": 800, "guess": 0.1, "bound": 1.0 / 3.0,
         "target_component": 2, "initial_component": 2},
        "krotov1", {"gamma_u": 1.0}, "controllable_su",
        "Index k = 0..21 carries j = k - 10; z_2 is k = 1 (j = -9)."),
    ProblemCatalogEntry(
        "P5", "state", "two-qubit gate synthesis with Ising coupling and local x controls",
        {"horizon": 5.0, "intervals": 100, "coupling": 1.0, "local_a": 1.0,
         "local_b": 1.3, "guess": 0.2, "gate": "CNOT"},
        "krotov2", {"gamma_u": 1.0}, "controllable_su",
        "Distinct local splittings keep the two qubits distinguishable."),
    ProblemCatalogEntry(
        "P6", "gpe", "condensate splitting from a harmonic trap into a double well",
        {"horizon": 6.0, "intervals": 300, "separation": 4.0, "kappa": float(np.pi / 2),
         "final_split": 1.0, "lower": -0.5, "upper": 2.0, **_GPE_GRID},
        "krotov_gpe", {"gamma_u": 1.0, "sigma_alpha": -1e-3, "sigma_beta": -1e-3,
                       "sigma_gamma": 0.1},
        None, "Start: interacting ground state at u = 0. Goal: ground state at u = 1."),
    ProblemCatalogEntry(
        "P7", "gpe", "condensate shaking in an anharmonic trap toward the first excited state",
        {"horizon": 6.0, "intervals": 300, "p2": 0.5, "p4": 0.05, "p6": 0.002,
         "kappa": float(2 * np.pi), "guess_amplitude": 0.3, "lower": -3.0, "upper": 3.0,
         **_GPE_GRID},
        "krotov_gpe", {"gamma_u": 1.0, "sigma_alpha": -1e-3, "sigma_beta": -1e-3,
                       "sigma_gamma": 0.1},
        None, "Goal: first excited state of the linear trap operator at u = 0."),
    ProblemCatalogEntry(
        "abelian", "state", "two-level toy with commuting diagonal drift and control",
        {"horizon": 1.0, "intervals": 20, "guess": 0.1, "control_scale": 0.5},
        "grape", {}, "not_controllable",
        "Deliberately uncontrollable: the algebra is one dimensional."),
)


def catalog() -> list[ProblemCatalogEntry]:
    return list(_CATALOG)


def entry(problem_id: str) -> ProblemCatalogEntry:
    for item in _CATALOG:
        if item.id == problem_id:
            return item
    raise ArgumentError(f"unknown problem {problem_id!r}; known: {[e.id for e in _CATALOG]}")
