import numpy as np
import pytest

from nlslab import Field, Grid


@pytest.fixture
def grid1():
    return Grid(1, 1024, 20.0)


@pytest.fixture
def gauss1(grid1):
    return Field(grid1, np.exp(-0.5 * grid1.r2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def smooth_random(grid, rng, modes=6, width=1.5):
    """Random complex Gaussian-windowed trigonometric field."""
    x = grid.coords[0]
    f = np.zeros(grid.shape, dtype=complex)
    for k in range(modes):
        a = rng.normal() + 1j * rng.normal()
        f = f + a * np.exp(1j * rng.uniform(-2, 2) * x)
    return f * np.exp(-0.5 * grid.r2 / width**2)


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(num: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[num] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
