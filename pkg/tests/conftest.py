import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fraclap import KernelSpec, Weight, assemble, generate_interval, generate_square, mass  # noqa: E402


@pytest.fixture(scope="session")
def interval64():
    return generate_interval(64)


@pytest.fixture(scope="session")
def square4():
    return generate_square(4)


@pytest.fixture(scope="session")
def mats():
    """Memoised ``(mesh, A_s, L_s, M)`` keyed by mesh spec and order."""
    cache = {}

    def get(mesh, s):
        key = (mesh.fingerprint, round(s, 12))
        if key not in cache:
            cache[key] = (
                assemble(mesh, KernelSpec(mesh.dim, s, Weight.PLAIN)),
                assemble(mesh, KernelSpec(mesh.dim, s, Weight.LOG)),
                mass(mesh),
            )
        return cache[key]
    return get


@pytest.fixture
def rng():
    return np.random.Generator(np.random.MT19937(20240611))


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion; printed after the run."""
    def record(number: int, title: str, passed: bool, detail: str, elapsed: float, limit: float):
        within = elapsed < limit
        status = "PASS" if passed and within else "FAIL"
        _CRITERIA[number] = (f"criterion {number:2d} {status}  {title}: {detail} "
                             f"[{elapsed:.2f} s, limit {limit:g} s]")
        return passed and within
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
