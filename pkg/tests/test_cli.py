import json

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from krotovlab.cli import (EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, EXIT_WARNING,
                           _status_code, build_config, main, pulse_spectrum, read_sections)
from krotovlab.core import SIGMA_X, SIGMA_Z, ArgumentError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def _csv(path):
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().strip().split(",")
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def _pulse_file(path, t, values):
    rows = "\n".join(f"{float(a)!r},{float(b)!r}" for a, b in zip(t, values))
    return _write(path, "t [time],u_1 [control]\n" + rows + "\n")


# ------------------------------------------------------------ validation


@pytest.mark.parametrize("text", [
    "[problem]\nid = P1\nbogus = 1\n",
    "[problem]\nid = P1\nintervals = many\n",
    "[problem]\nid = P1\n[extra]\nkey = 1\n",
    "[problem]\nid = P1\n[method]\nname = krotov1\ngamma = 1\n",
    "[problem]\nid = P1\n[method]\nname = nonsense\n",
    "[problem]\nid = P1\n[grid]\nsteps = 10\n",
    "[problem]\nid = P1\nintervals = 10\n[grid]\nintervals = 20\n",
    "[problem]\nid = P1\n[method]\nmethods = ,\n",
    "[problem]\nid = P1\n[output]\nformat = csv\n",
    "[method]\nname = krotov1\n",
])
def test_invalid_configs_exit_with_validation_code(tmp_path, text):
    config = _write(tmp_path / "run.ini", text)
    assert main(["optimize", "--config", config, "--out", str(tmp_path), "--quiet"]) \
        == EXIT_VALIDATION


def test_problem_given_twice_is_rejected(tmp_path):
    config = _write(tmp_path / "run.ini", "[problem]\nid = P1\n")
    assert main(["propagate", "--config", config, "--problem", "P2", "--quiet"]) \
        == EXIT_VALIDATION


def test_missing_config_file_is_validation_error(tmp_path):
    assert main(["optimize", "--config", str(tmp_path / "none.ini"), "--quiet"]) \
        == EXIT_VALIDATION


def test_gpe_optimize_requires_gpe_method(tmp_path):
    assert main(["gpe-optimize", "--problem", "P1", "--out", str(tmp_path), "--quiet"]) \
        == EXIT_VALIDATION


def test_build_config_merges_grid_and_method(tmp_path):
    path = _write(tmp_path / "run.ini", "[problem]\nid = P1\n[grid]\nintervals = 40\n"
                  "[method]\nname = grape\noptimizer = fixed\n")
    config = build_config(read_sections(path), seed=3, max_iters=7)
    assert config.problem.params["intervals"] == 40
    assert config.params["optimizer"] == "fixed" and config.params["iters"] == 7
    assert config.seed == 3
    with pytest.raises(ArgumentError):
        build_config(read_sections(path), max_iters=-1)


def test_status_codes():
    assert _status_code("converged") == EXIT_OK
    assert _status_code("max_iters") == EXIT_OK
    assert _status_code("warning") == EXIT_WARNING
    assert _status_code("stalled") == EXIT_WARNING


# ------------------------------------------------------------- propagate


def test_propagate_zero_pulse_keeps_populations(tmp_path):
    config = _write(tmp_path / "run.ini", "[problem]\nid = P1\nguess = 0.0\n")
    assert main(["propagate", "--config", config, "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    header, data = _csv(tmp_path / "populations.csv")
    assert header == ["t [time]", "p_1 [1]", "p_2 [1]", "norm_residual [1]"]
    np.testing.assert_allclose(data[:, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(data[:, 2], 0.0, atol=1e-12)
    assert np.max(data[:, 3]) <= 1e-12


def _transfer_pulse():
    """Two-segment pulse moving |0> to |1> under sigma_z + u sigma_x on [0, pi]."""
    def final(u):
        psi = np.array([1.0, 0.0], dtype=complex)
        for x in u:
            psi = scipy.linalg.expm(-0.5j * np.pi * (SIGMA_Z + x * SIGMA_X)) @ psi
        return psi

    result = scipy.optimize.least_squares(lambda u: [abs(final(u)[0])], [-2.8, 0.35],
                                          xtol=1e-15, ftol=1e-15, gtol=1e-15)
    assert abs(final(result.x)[1]) ** 2 > 1 - 1e-13
    return result.x


def test_propagate_transfer_pulse_from_file(tmp_path):
    values = _transfer_pulse()
    pulse = _pulse_file(tmp_path / "pulse_in.csv", [0.0, np.pi / 2], values)
    config = _write(tmp_path / "run.ini", "[problem]\nid = P1\n[grid]\nintervals = 2\n")
    out = tmp_path / "out"
    assert main(["propagate", "--config", config, "--pulse", pulse, "--out", str(out),
                 "--quiet"]) == EXIT_OK
    _, data = _csv(out / "populations.csv")
    assert data[-1, 2] == pytest.approx(1.0, abs=1e-10)
    _, echoed = _csv(out / "pulse.csv")
    np.testing.assert_array_equal(echoed[:, 1], values)


def test_propagate_rejects_mismatched_pulse(tmp_path):
    pulse = _pulse_file(tmp_path / "p.csv", [0.0, 0.1, 0.2], [0.0, 0.0, 0.0])
    assert main(["propagate", "--problem", "P1", "--pulse", pulse, "--out", str(tmp_path),
                 "--quiet"]) == EXIT_VALIDATION


# -------------------------------------------------------------- spectrum


def test_spectrum_of_constant_pulse(tmp_path):
    pulse = _pulse_file(tmp_path / "p.csv", 0.1 * np.arange(16), np.full(16, 2.0))
    assert main(["spectrum", pulse, "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    _, data = _csv(tmp_path / "spectrum.csv")
    peak = np.argmax(data[:, 1])
    assert data[peak, 0] == 0.0
    assert data[peak, 1] == pytest.approx((2.0 * 16 * 0.1) ** 2)
    assert np.sum(np.delete(data[:, 1], peak)) < 1e-20


def test_spectrum_of_cosine_has_two_symmetric_bins():
    n, dt = 64, 0.05
    t = dt * np.arange(n)
    omega0 = 2 * np.pi * 4 / (n * dt)
    omega, power, residual = pulse_spectrum(np.cos(omega0 * t), dt)
    top = np.argsort(power[0])[-2:]
    np.testing.assert_allclose(sorted(omega[top]), [-omega0, omega0], rtol=1e-12)
    assert power[0, top[0]] == pytest.approx(power[0, top[1]], rel=1e-12)
    assert np.sum(power[0]) - np.sum(power[0, top]) < 1e-20
    assert residual < 1e-12


def test_spectrum_of_zero_pulse():
    omega, power, residual = pulse_spectrum(np.zeros(8), 0.1)
    assert omega.size == 8 and np.all(power == 0) and residual == 0.0


def test_spectrum_non_finite_pulse_is_numeric_failure(tmp_path):
    pulse = _pulse_file(tmp_path / "p.csv", [0.0, 0.1, 0.2], [0.0, float("nan"), 1.0])
    assert main(["spectrum", pulse, "--out", str(tmp_path), "--quiet"]) == EXIT_NUMERIC


# -------------------------------------------------- optimize and compare


def test_optimize_writes_outputs_and_is_deterministic(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["optimize", "--problem", "P1", "--max-iters", "5", "--seed", "4",
                     "--out", str(out), "--quiet"])
        assert code == EXIT_OK
        outputs.append(out)
    for filename in ("trace.csv", "pulse.csv", "spectrum.csv"):
        assert (outputs[0] / filename).read_bytes() == (outputs[1] / filename).read_bytes()
    summary = json.loads((outputs[0] / "summary.json").read_text())
    assert summary["problem"] == "P1" and summary["iterations"] <= 5
    assert summary["config"]["seed"] == 4
    header, data = _csv(outputs[0] / "trace.csv")
    assert header[0] == "iteration [count]"
    assert np.all(np.diff(data[:, 1]) <= 1e-10)


def test_controllability_command(tmp_path):
    assert main(["controllability", "--problem", "abelian", "--out", str(tmp_path),
                 "--quiet"]) == EXIT_OK
    payload = json.loads((tmp_path / "controllability.json").read_text())
    assert payload["verdict"] == "not_controllable" and payload["dimension"] == 1
    assert main(["controllability", "--problem", "P1", "--depth-cap", "0", "--out",
                 str(tmp_path), "--quiet"]) == EXIT_OK
    payload = json.loads((tmp_path / "controllability.json").read_text())
    assert payload["verdict"] == "undetermined"
    assert main(["controllability", "--problem", "P6", "--out", str(tmp_path),
                 "--quiet"]) == EXIT_VALIDATION


def test_compare_rows(tmp_path):
    config = _write(tmp_path / "run.ini", "[problem]\nid = P1\n[grid]\nintervals = 40\n"
                    "[method]\nmethods = krotov1, grape, steepest_descent\n")
    assert main(["compare", "--config", config, "--max-iters", "10", "--out", str(tmp_path),
                 "--quiet"]) == EXIT_OK
    lines = (tmp_path / "comparison.csv").read_text().strip().splitlines()
    assert lines[0].startswith("method,iterations [count]")
    assert [line.split(",")[0] for line in lines[1:]] == ["krotov1", "grape",
                                                          "steepest_descent"]
