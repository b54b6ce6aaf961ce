"""Algebraic identities and inequalities behind the SGLD lower bound.

Each is checked at 100 random admissible draws. Left-hand sides come from
the library's stored coefficients, right-hand sides from mpmath.
"""

import math

import mpmath
import numpy as np
import pytest

from sgld_dp.core_model import DomainSpec, ModelParams
from sgld_dp.errors import SgldDpError
from sgld_dp.sgld_closed_form import coefficients, critical_epoch, geometric_sum, state_at_epoch

from conftest import random_sgld_instance

DRAWS = 100
mpmath.mp.dps = 40


def draws(seed, n_hi=2000):
    rng = np.random.default_rng(seed)
    for _ in range(DRAWS):
        spec, model = random_sgld_instance(rng, 2, n_hi)
        yield spec, model, coefficients(spec, model)


def exact_scale(spec, model):
    s = mpmath.mpf(spec.x_h) ** 2 * model.beta
    big = model.alpha + spec.n * s
    return spec.n * mpmath.mpf(spec.c) * s / big, 1 - 1 / big


def test_m1_drift_ratio():
    for spec, model, c in draws(1):
        scale, _ = exact_scale(spec, model)
        assert c.rho / c.d == pytest.approx(float(scale), rel=1e-10)


def test_m2_d1_epoch_drift():
    for spec, model, c in draws(2):
        scale, lam = exact_scale(spec, model)
        n = spec.n
        lhs = c.rho * float(geometric_sum(c.d, n - 1)) + c.rho * math.exp((n - 1) * c.log_lam)
        assert lhs == pytest.approx(float(scale * (1 - lam**n)), rel=1e-10)


def test_m3_d2_epoch_drift():
    for spec, model, c in draws(3):
        scale, lam = exact_scale(spec, model)
        n = spec.n
        lhs = c.rho * float(geometric_sum(c.d, n - 1)) + c.rho_hat * math.exp((n - 1) * c.log_lam)
        rhs = scale * (1 - lam**n * (mpmath.mpf(3) / 4 / lam + mpmath.mpf(1) / 4))
        assert lhs == pytest.approx(float(rhs), rel=1e-10)


def test_m5a_contraction_gap():
    for spec, model, c in draws(4):
        # lam/4 + 3/4 - lam_hat rewritten through the stored 1 - lam values
        lhs = c.d_hat - c.d / 4
        assert lhs == pytest.approx(0.75 * c.eta / 2 * model.alpha, rel=1e-10)


def test_g1b_epoch_contraction_lower_bound():
    rng = np.random.default_rng(5)
    checked = 0
    while checked < DRAWS:
        alpha = rng.uniform(0.5, 10)
        s = rng.uniform(3.05, 20)
        n = int(10 ** rng.uniform(0, 6))
        if not n * s * (2 * alpha - 1) + alpha * (2 * alpha - 1) - 1 > 0:
            continue
        lhs = 2 * n * mpmath.log(1 - 1 / (alpha + n * mpmath.mpf(s)))
        assert lhs > -2 / mpmath.mpf(s)
        checked += 1


def test_g1b_fails_below_half():
    alpha, s, n = 0.3, 3.5, 10**6
    lhs = 2 * n * mpmath.log(1 - 1 / (alpha + n * mpmath.mpf(s)))
    assert lhs - (-2 / mpmath.mpf(s)) == pytest.approx(-3.27e-8, rel=0.01)


def critical_draws(seed):
    rng = np.random.default_rng(seed)
    found = 0
    while found < DRAWS:
        spec, model = random_sgld_instance(rng, 2, 2000)
        coeff = coefficients(spec, model)
        try:
            rep = critical_epoch(coeff, spec, model)
        except SgldDpError:
            continue
        found += 1
        yield spec, model, coeff, rep


def contraction(coeff, r, n):
    return coeff.log_lam_hat + (n - r) * coeff.log_lam


def test_variance_bounds_before_critical_epoch():
    for spec, model, coeff, rep in critical_draws(6):
        n = spec.n
        r = np.arange(1, n + 1)
        log_m = contraction(coeff, 1, n)
        for k in range(1, math.floor(rep.k_dot) + 1):
            v = state_at_epoch(k + 1, coeff, spec, model).d2_vars
            assert v[0] < 2 * math.exp(2 * log_m * (k + 1)) / model.alpha
            bound = 6 * np.exp(2 * contraction(coeff, r[1:], n)) / model.alpha * math.exp(2 * log_m * k)
            assert np.all(v[1:] < bound)


def test_variance_bounds_at_critical_epoch():
    for spec, model, coeff, rep in critical_draws(7):
        n = spec.n
        r = np.arange(1, n + 1)
        log_m = contraction(coeff, 1, n)
        k = rep.k_star
        v = state_at_epoch(k + 1, coeff, spec, model).d2_vars
        s = spec.x_h**2 * model.beta
        assert v[0] <= (1 + 2 * math.exp(1 / s)) * math.exp(2 * log_m * (k + 1)) / model.alpha
        bound = 6 * np.exp(2 * contraction(coeff, r[1:], n)) / model.alpha * math.exp(2 * log_m * k)
        assert np.all(v[1:] <= bound)


def test_standardized_gap_lower_bound_at_critical_epoch():
    for spec, model, coeff, rep in critical_draws(8):
        st = state_at_epoch(rep.k_star + 1, coeff, spec, model)
        s = spec.x_h**2 * model.beta
        lower = math.exp(-2 / s) * model.alpha / rep.v1 * (3 / (32 * s)) ** 2 * (spec.c / spec.n) ** 2
        ratio = (st.d1.mean - st.d2_means) ** 2 / st.d2_vars
        assert np.all(ratio >= lower)
