import numpy as np
import pytest
from hypothesis import settings

from nlsblowup.core import RadialField, RadialGrid, derive_params

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def criterion():
    """Record one acceptance criterion from ``(label, ok)`` checks; returns the verdict."""

    def record(n: int, title: str, checks) -> bool:
        ok = all(bool(v) for _, v in checks)
        lines = [f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}"]
        lines += [f"    [{'ok' if v else 'FAIL'}] {label}" for label, v in checks]
        _ACCEPTANCE[n] = lines
        print("\n".join(lines))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n][0])


@pytest.fixture(scope="session")
def P():
    return derive_params(3, 3.0)


@pytest.fixture(scope="session")
def grid():
    return RadialGrid.uniform(20.0, 4096)


@pytest.fixture(scope="session")
def gauss(grid, P):
    """The unit Gaussian ``exp(-r^2/2)``."""
    return RadialField.from_function(grid, P, lambda r: np.exp(-r * r / 2))


SMALL_RUN = ["solver.M=4096", "solver.r_min=1e-6", "stop.amplification=30"]


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A reduced headline run driven through the CLI; returns ``(dir, record)``."""
    from nlsblowup.experiments.cli import main
    from nlsblowup.experiments.manifest import packaged
    from nlsblowup.trajectory import TrajectoryRecord

    out = tmp_path_factory.mktemp("small_run")
    argv = ["simulate", str(packaged("headline.ini")), "--out", str(out)]
    for s in SMALL_RUN:
        argv += ["--set", s]
    assert main(argv) == 0
    return out, TrajectoryRecord.from_dir(out)
