import numpy as np
import pytest

from poiseuille_lab.spectral import Grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid():
    return Grid(n_x=16, L=6.0, n_y=95, fd_order=8)


def decayed_profile(grid: Grid, rng, complex_valued: bool = True) -> np.ndarray:
    """Random smooth profile under a Gaussian envelope, negligible at the walls."""
    y = grid.y
    c = rng.standard_normal(4)
    prof = c[0] + c[1] * y + c[2] * np.cos(1.3 * y) + c[3] * np.sin(0.7 * y)
    if complex_valued:
        d = rng.standard_normal(3)
        prof = prof + 1j * (d[0] + d[1] * y**2 / 4 + d[2] * np.sin(y))
    return prof * np.exp(-(y**2) / 2)


# criterion number -> "PASS ..." / "FAIL ..." line, filled by the acceptance suite
ACCEPTANCE: dict[int, list[str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the summary block."""

    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(number, []).append(f"{'PASS' if passed else 'FAIL'}  {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        for line in ACCEPTANCE[number]:
            terminalreporter.write_line(f"criterion {number:>2}: {line}")
