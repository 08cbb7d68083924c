"""Batch command-line front end.

Runs are described by an INI file with the sections ``problem``, ``method``,
``grid`` and ``output``; unknown sections or keys are rejected. Numeric
outputs are comma separated with 17 significant digits so that doubles
round-trip exactly.
"""
from __future__ import annotations

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import configparser
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alt_methods import (CrabBasis, MadayTuriniciParams, crab, grape, maday_turinici,
                          steepest_descent, zhu_rabitz)
from .controllability import projective_controllability_verdict
from .core import ArgumentError, ConfigurationError, ControlField, NumericError
from .costs import total_objective
from .dynamics import propagate_state
from .gpe import GpeProblem, gpe_propagate, krotov_gpe
from .krotov import (KrotovOptions, SigmaSpec, SpectralConstraint, krotov1_schrodinger,
                     krotov2_ensemble, krotov_spectral)
from .problems import BuiltProblem, ProblemCatalogEntry, coerce_value, entry, format_value
from .trace import OptimizationTrace

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_WARNING = 0, 2, 3, 4
SECTIONS = ("problem", "method", "grid", "output")

_KROTOV = {"form": "gamma_form", "gamma_u": 1.0, "update": "secant", "max_iters": 200,
           "tol_dJ": 1e-8}
_SIGMA = {"sigma_kind": "exponential", "sigma_alpha": -1e-3, "sigma_beta": -1e-3,
          "sigma_gamma": 0.1}
METHOD_PARAMS = {
    "krotov1": dict(_KROTOV),
    "krotov2": {**_KROTOV, **_SIGMA},
    "krotov_spectral": {"gamma_u": 1.0, "band_center": 0.0, "band_width": 1.0,
                        "band_weight": 1.0, "max_iters": 200, "tol_dJ": 1e-8},
    "zhu_rabitz": {"max_iters": 200, "tol_dJ": 1e-8},
    "maday_turinici": {"delta": 1.0, "eta": 0.0, "max_iters": 200, "tol_dJ": 1e-8},
    "grape": {"optimizer": "lbfgs", "iters": 200, "step": 1.0, "tol_dJ": 1e-12},
    "steepest_descent": {"max_iters": 200, "tol_dJ": 1e-10, "evaluations": 40,
                         "band_low": 0.0, "band_high": float("inf")},
    "crab": {"n_terms": 4, "iters": 300, "step": 0.1},
    "krotov_gpe": {"gamma_u": 1.0, **_SIGMA, "update": "full", "max_iters": 300,
                   "tol_dJ": 1e-8},
}
GPE_METHODS = ("krotov_gpe",)
OUTPUT_KEYS = ("dir",)
GRID_KEYS = ("horizon", "intervals")


@dataclass(frozen=True)
class RunConfig:
    problem: ProblemCatalogEntry
    method: str
    params: dict
    seed: int = 0
    out: Path = Path("krotovlab_out")
    methods: tuple = ()
    sections: dict = field(default_factory=dict)

    def echo(self) -> dict:
        sections = self.problem.to_config()
        method = {"name": self.method}
        method.update({k: format_value(v) for k, v in self.params.items()})
        sections["method"] = method
        sections["output"] = {"dir": str(self.out)}
        return {"sections": sections, "seed": self.seed}


# ---------------------------------------------------------------- config


def read_sections(path: str | None) -> dict[str, dict[str, str]]:
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except (OSError, configparser.Error) as exc:
        raise ArgumentError(f"cannot read config {path}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ArgumentError(f"unknown config sections {unknown}; allowed: {list(SECTIONS)}")
    return {s: dict(parser[s]) for s in parser.sections()}


def _method_params(name: str, base: ProblemCatalogEntry, given: dict) -> dict:
    if name not in METHOD_PARAMS:
        raise ArgumentError(f"unknown method {name!r}; choose from {sorted(METHOD_PARAMS)}")
    params = dict(METHOD_PARAMS[name])
    if name == base.method:
        params.update(base.method_params)
    for key, value in given.items():
        if key not in params:
            raise ArgumentError(f"unknown parameter {key!r} for method {name}; "
                                f"allowed: {sorted(params)}")
        params[key] = coerce_value(params[key], value, key)
    return params


def build_config(sections: dict, seed: int | None = None, out: str | None = None,
                 max_iters: int | None = None) -> RunConfig:
    problem = dict(sections.get("problem", {}))
    if "id" not in problem:
        raise ArgumentError("the [problem] section needs an id, e.g. id = P1")
    grid = dict(sections.get("grid", {}))
    bad = set(grid) - set(GRID_KEYS)
    if bad:
        raise ArgumentError(f"unknown [grid] keys {sorted(bad)}; allowed: {list(GRID_KEYS)}")
    clash = set(grid) & set(problem)
    if clash:
        raise ArgumentError(f"{sorted(clash)} given in both [problem] and [grid]")
    problem.update(grid)
    base = ProblemCatalogEntry.from_config({"problem": problem})
    output = dict(sections.get("output", {}))
    bad = set(output) - set(OUTPUT_KEYS)
    if bad:
        raise ArgumentError(f"unknown [output] keys {sorted(bad)}; allowed: {list(OUTPUT_KEYS)}")
    method = dict(sections.get("method", {}))
    names = method.pop("methods", None)
    name = method.pop("name", base.method)
    listed: tuple = ()
    if names is not None:
        listed = tuple(n.strip() for n in names.split(",") if n.strip())
        if not listed:
            raise ArgumentError("the methods list is empty")
        for n in listed:
            _method_params(n, base, {})
    if max_iters is not None:
        if max_iters < 0:
            raise ArgumentError("--max-iters must be nonnegative")
        key = "iters" if name in ("grape", "crab") else "max_iters"
        method[key] = str(max_iters)
    params = _method_params(name, base, method)
    directory = out if out is not None else output.get("dir", "krotovlab_out")
    return RunConfig(base, name, params, 0 if seed is None else int(seed), Path(directory),
                     listed, sections)


# ------------------------------------------------------------------ output


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")


def write_trace(path: Path, trace: OptimizationTrace) -> None:
    header = ["iteration [count]", "J [1]", "terminant [1]", "fluence [1]",
              "state_penalty [1]", "h1 [1]", "max_du [control]", "cauchy [count]"]
    rows = [(str(r.iteration), r.J, r.terminant, r.fluence, r.state_penalty, r.h1, r.max_du,
             str(r.cauchy)) for r in trace.records]
    write_csv(path, header, rows)


def write_pulse(path: Path, control: ControlField) -> None:
    header = ["t [time]"] + [f"u_{l + 1} [control]" for l in range(control.n_channels)]
    nodes = control.grid.nodes[:-1]
    write_csv(path, header, ([t, *control.values[:, j]] for j, t in enumerate(nodes)))


def read_pulse(path: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ArgumentError(f"cannot read pulse file {path}: {exc}") from None
    if data.shape[1] < 2 or data.shape[0] < 2:
        raise ArgumentError("pulse file needs a time column, a control column and 2+ rows")
    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0) or np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(t[-1])):
        raise ArgumentError("pulse times must be uniformly spaced and increasing")
    return t, data[:, 1:].T


def pulse_spectrum(values: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Angular frequencies, ``|u_hat|^2`` per channel and the Parseval residual."""
    values = np.atleast_2d(values)
    n = values.shape[1]
    omega = np.fft.fftshift(2 * np.pi * np.fft.fftfreq(n, dt))
    u_hat = dt * np.fft.fftshift(np.fft.fft(values, axis=1), axes=1)
    power = np.abs(u_hat) ** 2
    energy = dt * np.sum(values**2)
    spectral = np.sum(power) / (n * dt)
    residual = abs(energy - spectral) / max(energy, 1e-300) if energy > 0 else spectral
    return omega, power, float(residual)


def write_spectrum(path: Path, values: np.ndarray, dt: float) -> float:
    omega, power, residual = pulse_spectrum(values, dt)
    header = ["omega [1/time]"] + [f"power_{l + 1} [control^2 time^2]"
                                   for l in range(power.shape[0])]
    write_csv(path, header, ([w, *power[:, k]] for k, w in enumerate(omega)))
    return residual


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")


# ---------------------------------------------------------------- dispatch


def _krotov_options(p: dict, sigma: bool) -> KrotovOptions:
    spec = SigmaSpec()
    if sigma and p["sigma_kind"] != "zero":
        spec = SigmaSpec(p["sigma_kind"], p["sigma_alpha"], p["sigma_beta"], p["sigma_gamma"])
    return KrotovOptions(form=p["form"], gamma_u=p["gamma_u"], sigma=spec,
                         max_iters=p["max_iters"], tol_dJ=p["tol_dJ"], update=p["update"])


def run_method(name: str, built: BuiltProblem, p: dict, seed: int = 0) -> OptimizationTrace:
    problem, guess = built.problem, built.guess
    is_gpe = isinstance(problem, GpeProblem)
    if is_gpe != (name in GPE_METHODS):
        kind = "condensate" if is_gpe else "finite-level"
        raise ConfigurationError(f"method {name} cannot run on the {kind} problem "
                                 f"{built.entry.id}")
    if name == "krotov1":
        return krotov1_schrodinger(problem, guess, _krotov_options(p, False))
    if name == "krotov2":
        return krotov2_ensemble(problem, guess, _krotov_options(p, True))
    if name == "krotov_spectral":
        constraint = SpectralConstraint(((p["band_center"], p["band_width"],
                                          p["band_weight"]),))
        opts = KrotovOptions(gamma_u=p["gamma_u"], max_iters=p["max_iters"],
                             tol_dJ=p["tol_dJ"])
        return krotov_spectral(problem, guess, constraint, p["gamma_u"], opts)
    if name == "zhu_rabitz":
        return zhu_rabitz(problem, guess, p["max_iters"], p["tol_dJ"])
    if name == "maday_turinici":
        return maday_turinici(problem, guess, MadayTuriniciParams(p["delta"], p["eta"]),
                              p["max_iters"], p["tol_dJ"])
    if name == "grape":
        return grape(problem, guess, p["optimizer"], p["iters"], p["step"], p["tol_dJ"])
    if name == "steepest_descent":
        band = (p["band_low"], p["band_high"])
        if band == (0.0, float("inf")):
            band = None
        return steepest_descent(problem, guess, band, p["max_iters"], p["tol_dJ"],
                                p["evaluations"])
    if name == "crab":
        return crab(problem, CrabBasis.random(guess, p["n_terms"], seed), p["iters"], p["step"])
    spec = SigmaSpec(p["sigma_kind"], p["sigma_alpha"], p["sigma_beta"], p["sigma_gamma"])
    return krotov_gpe(problem, guess, p["gamma_u"], spec, p["update"], p["max_iters"],
                      p["tol_dJ"])


def _status_code(status: str) -> int:
    return EXIT_WARNING if status in ("warning", "stalled") else EXIT_OK


# ---------------------------------------------------------------- commands


def cmd_propagate(config: RunConfig, pulse: str | None = None) -> dict:
    built = config.problem.build()
    control = built.guess
    if pulse is not None:
        t, values = read_pulse(pulse)
        if values.shape != control.values.shape or abs(t[1] - t[0] - control.grid.dt) > 1e-9:
            raise ArgumentError(f"pulse shape {values.shape} and step do not match the grid "
                                f"{control.values.shape}, dt = {control.grid.dt}")
        control = control.with_values(values)
    nodes = control.grid.nodes
    problem = built.problem
    if isinstance(problem, GpeProblem):
        states = gpe_propagate(problem, control)
        pops = np.abs(states) ** 2 * problem.grid.dx
        header = ["t [time]", "norm_residual [1]"]
        rows = [[t, abs(np.sum(p) - 1.0)] for t, p in zip(nodes, pops)]
    else:
        states = propagate_state(problem.system, control, problem.ensemble.initial[0]).samples
        pops = np.abs(states) ** 2
        header = (["t [time]"] + [f"p_{i + 1} [1]" for i in range(pops.shape[1])]
                  + ["norm_residual [1]"])
        rows = [[t, *p, abs(np.sum(p) - 1.0)] for t, p in zip(nodes, pops)]
    write_csv(config.out / "populations.csv", header, rows)
    write_pulse(config.out / "pulse.csv", control)
    return {"final_populations": [float(v) for v in pops[-1]] if pops.ndim == 2 else [],
            "max_norm_residual": max(r[-1] for r in rows)}


def cmd_optimize(config: RunConfig) -> tuple[OptimizationTrace, dict]:
    built = config.problem.build()
    start = time.perf_counter()
    trace = run_method(config.method, built, config.params, config.seed)
    wall = time.perf_counter() - start
    write_trace(config.out / "trace.csv", trace)
    write_pulse(config.out / "pulse.csv", trace.control)
    write_spectrum(config.out / "spectrum.csv", trace.control.values, trace.control.grid.dt)
    summary = {"method": config.method, "problem": config.problem.id, "status": trace.status,
               "final_J": trace.records[-1].J, "final_terminant": trace.records[-1].terminant,
               "iterations": trace.iterations, "cauchy": trace.cauchy,
               "wall_time": wall, "config": config.echo()}
    _write_json(config.out / "summary.json", summary)
    return trace, summary


def cmd_controllability(config: RunConfig, depth_cap: int | None = None) -> dict:
    built = config.problem.build()
    if built.system is None:
        raise ConfigurationError("controllability applies to finite-level problems only")
    report = projective_controllability_verdict(built.system, depth_cap)
    payload = {"problem": config.problem.id, "dimension_n": built.system.dim,
               **report.summary()}
    _write_json(config.out / "controllability.json", payload)
    return payload


def cmd_spectrum(pulse: str, out: Path) -> float:
    t, values = read_pulse(pulse)
    residual = write_spectrum(out / "spectrum.csv", values, t[1] - t[0])
    if not residual <= 1e-10:
        raise NumericError(f"Parseval residual {residual:.3e} exceeds 1e-10")
    return residual


def cmd_compare(config: RunConfig) -> list[dict]:
    if not config.methods:
        raise ArgumentError("compare needs [method] methods = name1, name2, ...")
    built = config.problem.build()
    rows = []
    for name in config.methods:
        params = _method_params(name, config.problem, {})
        start = time.perf_counter()
        trace = run_method(name, built, params, config.seed)
        rows.append({"method": name, "iterations": trace.iterations, "cauchy": trace.cauchy,
                     "terminant": trace.records[-1].terminant,
                     "wall_time": time.perf_counter() - start, "status": trace.status})
    write_csv(config.out / "comparison.csv",
              ["method", "iterations [count]", "cauchy [count]", "terminant [1]",
               "wall_time [s]", "status"],
              ([r["method"], str(r["iterations"]), str(r["cauchy"]), r["terminant"],
                r["wall_time"], r["status"]] for r in rows))
    return rows


# --------------------------------------------------------------------- main


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [problem] [method] [grid] [output]")
    common.add_argument("--problem", help="catalog id used when no config is given")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--max-iters", type=int, default=None)
    common.add_argument("--quiet", action="store_true")
    parser = argparse.ArgumentParser(prog="krotovlab",
                                     description="Monotone quantum optimal control runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    prop = sub.add_parser("propagate", parents=[common], help="propagate the guess pulse")
    prop.add_argument("--pulse", help="pulse CSV replacing the catalog guess")
    sub.add_parser("optimize", parents=[common], help="run the configured optimizer")
    sub.add_parser("gpe-optimize", parents=[common], help="optimize a condensate problem")
    ctrl = sub.add_parser("controllability", parents=[common], help="Lie-algebra rank test")
    ctrl.add_argument("--depth-cap", type=int, default=None)
    spec = sub.add_parser("spectrum", parents=[common], help="DFT power of a pulse file")
    spec.add_argument("pulse", help="pulse CSV written by optimize or propagate")
    sub.add_parser("compare", parents=[common], help="run several methods on one problem")
    return parser


def _config_from(args) -> RunConfig:
    sections = read_sections(args.config)
    if args.problem is not None:
        if "problem" in sections:
            raise ArgumentError("give the problem either in the config or via --problem")
        sections["problem"] = {"id": args.problem}
    return build_config(sections, args.seed, args.out, args.max_iters)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    say = (lambda *a: None) if args.quiet else print
    try:
        if args.command == "spectrum":
            out = Path(args.out or "krotovlab_out")
            residual = cmd_spectrum(args.pulse, out)
            say(f"spectrum written to {out / 'spectrum.csv'}; Parseval residual {residual:.3e}")
            return EXIT_OK
        config = _config_from(args)
        if args.command == "propagate":
            info = cmd_propagate(config, args.pulse)
            say(f"final populations {info['final_populations']}")
            return EXIT_OK
        if args.command == "controllability":
            info = cmd_controllability(config, args.depth_cap)
            say(f"{config.problem.id}: {info['verdict']} (dimension {info['dimension']})")
            return EXIT_OK
        if args.command == "compare":
            for row in cmd_compare(config):
                say(f"{row['method']}: terminant {row['terminant']:.6g}, "
                    f"{row['iterations']} iterations, {row['cauchy']} sweeps")
            return EXIT_OK
        if args.command == "gpe-optimize" and config.method not in GPE_METHODS:
            raise ConfigurationError(f"gpe-optimize expects one of {GPE_METHODS}")
        trace, summary = cmd_optimize(config)
        say(f"{config.method} on {config.problem.id}: {summary['status']}, "
            f"J = {summary['final_J']:.10g} after {summary['iterations']} iterations")
        return _status_code(trace.status)
    except (ArgumentError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
