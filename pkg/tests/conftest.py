import math

import numpy as np
import pytest

from driftlab.system_model import BuiltinParams, builtin_system, preset


def skew(bar_sin=(0.0, 0.0, 1.0), hat_cos=(0.0, 1.0), eps=1e-2, **kw):
    """Skew product over doubling with the given Fourier data."""
    return builtin_system(BuiltinParams("skew_doubling", bar_sin=tuple(bar_sin),
                                        hat_cos=tuple(hat_cos), **kw), eps)


@pytest.fixture(scope="session")
def two_sink():
    return skew(eps=1e-2)


@pytest.fixture(scope="session")
def nonex():
    return preset("nonexample", 1e-3)


@pytest.fixture(scope="session")
def one_sink():
    return preset("one_sink", 1e-3)


@pytest.fixture(scope="session")
def one_sink_field(one_sink):
    from driftlab.averaged_dynamics import tabulate_field

    return tabulate_field(one_sink)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)


TWO_PI = 2 * math.pi


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {line}")
