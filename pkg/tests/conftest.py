import math

import numpy as np
import pytest

from sgld_dp.core_model import DomainSpec, ModelParams

FIG1_SPEC = DomainSpec(n=267909, c=900502, gamma1=0.1, x_l=0.9, x_h=1.8, gamma2=1.11)
FIG1_MODEL = ModelParams(alpha=0.5, beta=1.0)

# desk-scale instance with a certified violation at step T = 35
DESK_SPEC = DomainSpec(n=5, c=20.0, gamma1=0.3, x_l=0.5, x_h=1.0)
DESK_MODEL = ModelParams(alpha=1.0, beta=4.0)


def random_sgld_instance(rng: np.random.Generator, n_lo: int = 2, n_hi: int = 20):
    """Spec/model pair with x_h^2 beta > 3 and a small n."""
    alpha = 10 ** rng.uniform(-1, 1)
    beta = rng.uniform(0.5, 5)
    s = rng.uniform(3.05, 20)
    x_h = math.sqrt(s / beta)
    n = int(rng.integers(n_lo, n_hi + 1))
    c = rng.uniform(0.5, 10) * n ** rng.uniform(0.5, 1.5)
    spec = DomainSpec(n=n, c=c, gamma1=rng.uniform(0.05, 0.45), x_l=x_h * rng.uniform(0.3, 0.9), x_h=x_h)
    return spec, ModelParams(alpha, beta)


def random_rdp_instance(rng: np.random.Generator, large_c: bool = True):
    """Spec/model/order with the order inside the posterior bound's gates.

    ``large_c`` draws c in [n^(1+g1), 10 n^(1+g1)]; otherwise c is a small
    multiple of n^g1, where the five-term bound can be exceeded.
    """
    alpha = rng.uniform(0.2, 5)
    beta = rng.uniform(0.5, 5)
    x_h = rng.uniform(0.5, 2)
    x_l = x_h * rng.uniform(0.4, 0.9)
    nu = rng.uniform(1.5, 30)
    r = x_h**2 / x_l**2
    floor = max(1 + 10 * r * nu / beta, 1 + nu * r)
    n = int(floor * rng.uniform(1.05, 4)) + 1
    g1 = rng.uniform(0.05, 0.45)
    scale = n ** (1 + g1) if large_c else n**g1
    c = scale * rng.uniform(1.1, 10)
    return DomainSpec(n=n, c=c, gamma1=g1, x_l=x_l, x_h=x_h), ModelParams(alpha, beta), nu


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    key, title = mark.args
    if rep.when == "call" or rep.failed:
        prev = _ACCEPTANCE.get(key)
        ok = rep.passed and (prev is None or prev[0])
        _ACCEPTANCE[key] = (ok, title, rep.duration + (prev[2] if prev else 0.0))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        ok, title, secs = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f}s)")
