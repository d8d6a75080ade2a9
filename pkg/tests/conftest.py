"""Shared fixtures."""

from __future__ import annotations

import math

import numpy as np
import pytest

from nlmaxwell.material import NonlinearityModel
from nlmaxwell.mesh import BoxGrid

PI_CUBE = (math.pi, math.pi, math.pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cube8():
    return BoxGrid(PI_CUBE, (8, 8, 8))


@pytest.fixture(scope="session")
def cube6():
    return BoxGrid(PI_CUBE, (6, 6, 6))


@pytest.fixture(scope="session")
def box_aniso():
    return BoxGrid((1.0, 1.5, 2.0), (5, 6, 7))


@pytest.fixture(scope="session")
def kerr():
    return NonlinearityModel("kerr", chi3=1.0)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(_ACCEPTANCE[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
