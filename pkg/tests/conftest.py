import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kscan.geometry import LabeledDataset  # noqa: E402


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def criterion():
    """Record one criterion's verdict; the test asserts the same verdict."""

    def record(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def four_point():
    xy = np.array([[0.0, 0.0], [0.5, 0.0], [2.0, 0.0], [-2.0, 0.0]])
    m = np.array([1.0, 1.0, 0.0, 0.0])
    return LabeledDataset(xy, m)
