import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Two-qubit local invariants from an independent magic-basis oracle, frozen here.
INVARIANTS = {"I": (1.0, 0.0, 3.0), "CNOT": (0.0, 0.0, 1.0), "CPHASE": (0.0, 0.0, 1.0),
              "QFT": (-0.5, 0.0, -2.0), "BGATE": (0.0, 0.0, 0.0)}
MAGIC = np.array([[1, 0, 0, 1j], [0, 1j, 1, 0], [0, 1j, -1, 0], [1, 0, 0, -1j]]) / np.sqrt(2)


def oracle_invariants(u):
    ub = MAGIC.conj().T @ u @ MAGIC
    m = ub.T @ ub
    det = np.linalg.det(u)
    g1 = np.trace(m) ** 2 / (16 * det)
    g3 = (np.trace(m) ** 2 - np.trace(m @ m)) / (4 * det)
    return g1.real, g1.imag, g3.real


def random_hermitian(rng, n, scale=1.0):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_unitary(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state(rng, n):
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
