import os

import numpy as np
import pytest

os.environ.setdefault("NUMBA_CACHE_DIR", os.path.join(os.path.dirname(__file__), ".numba_cache"))

from foamlab.field import GridGeom, LabelField

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow-suite experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow suite; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(3, ok, "detail")``; the assertion is made by the caller.
    """

    def record(number: int, ok: bool, detail: str = ""):
        status = "PASS" if ok else "FAIL"
        prev = _CRITERIA.get(number)
        if prev is not None and prev[0] == "FAIL":
            status = "FAIL"
            detail = prev[1] + "; " + detail
        elif prev is not None:
            detail = prev[1] + "; " + detail
        _CRITERIA[number] = (status, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")


# -- small field builders shared by the module tests


def half_planes(n=64, length=1.0, d=2):
    """Two phases: x < L/2 is phase 1, the rest phase 2 (interfaces at x = L/2 and x = 0)."""
    geom = GridGeom.box((n,) * d, length)
    x = geom.centers()[..., 0]
    labels = np.where(x < length / 2, 1, 2)
    return LabelField(geom, labels, 2)


def disc_field(n, length, radius, center=None, d=2):
    geom = GridGeom.box((n,) * d, length)
    c = np.full(d, length / 2) if center is None else np.asarray(center)
    r2 = ((geom.centers() - c) ** 2).sum(-1)
    return LabelField(geom, np.where(r2 < radius**2, 1, 2), 2)
