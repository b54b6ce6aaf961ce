import math

import numpy as np
import pytest
from scipy.special import ndtr

from sgld_dp.core_model import DomainSpec, ModelParams, make_d1, make_d2
from sgld_dp.errors import DeltaTooLarge, HypothesisViolated, InfeasibleTarget
from sgld_dp.posterior_privacy import check_rdp_hypothesis, posterior_adp
from sgld_dp.sgld_closed_form import (
    advance_epoch,
    certify_violation,
    chernoff_mass_bound,
    coefficients,
    critical_epoch,
    default_eta,
    epoch_maps,
    figure1_rows,
    gap_metric,
    geometric_sum,
    geometric_sum_sq,
    initial_state,
    k_dot,
    max_violated_epsilon,
    mean_gap_lower_bound,
    mixture_mass_above,
    state_at_epoch,
    theorem1_bounds,
    theorem1_instantiate,
    v1_constant,
    violation_epsilon,
)

import oracles
from conftest import DESK_MODEL, DESK_SPEC, FIG1_MODEL, FIG1_SPEC, random_sgld_instance


def oracle_state(spec, model, coeff, k):
    """Per-step iteration for D1 and every cyclic position of the D2 record."""
    d1, d2 = make_d1(spec), make_d2(spec)
    args = (model.alpha, model.beta, coeff.eta, k * spec.n)
    m1, v1 = oracles.affine_iterate(d1.x, d1.y, *args)
    comps = [oracles.affine_iterate(d2.x, d2.y, *args, offset=(spec.n - r) % spec.n) for r in range(1, spec.n + 1)]
    return (m1, v1), np.array(comps)


def test_one_minus_lambda_figure1():
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    want = oracles.mp_one_minus_lambda(0.5, 1.0, 1.8, 267909)
    assert coeff.d == pytest.approx(want, rel=1e-15)
    assert coeff.d == pytest.approx(1.1520396758777844e-06, rel=1e-14)
    assert coeff.eta == default_eta(FIG1_SPEC, FIG1_MODEL)


def test_coefficients_relations():
    spec, model = DESK_SPEC, DESK_MODEL
    c = coefficients(spec, model)
    s = spec.x_h**2 * model.beta
    assert c.d == pytest.approx(c.eta / 2 * (model.alpha + spec.n * s), rel=1e-14)
    assert c.d_hat == pytest.approx(c.eta / 2 * (model.alpha + spec.n * s / 4), rel=1e-14)
    assert c.rho_hat == pytest.approx(c.rho / 4, rel=1e-15)
    assert set(c.to_dict()) >= {"eta", "lambda", "lambda_hat", "rho", "rho_hat"}


@pytest.mark.parametrize("d", [0.3, 1e-3, 1e-9, 0.0])
def test_geometric_sums(d):
    m = np.array([0, 1, 5, 40])
    direct = np.array([sum((1 - d) ** i for i in range(k)) for k in m])
    direct_sq = np.array([sum((1 - d) ** (2 * i) for i in range(k)) for k in m])
    np.testing.assert_allclose(geometric_sum(d, m), direct, rtol=1e-9)
    np.testing.assert_allclose(geometric_sum_sq(d, m), direct_sq, rtol=1e-9)


def test_geometric_sum_small_d_extended_precision():
    import mpmath

    mpmath.mp.dps = 40
    d, m = 1.1520396758777844e-06, 267909
    want = (1 - (1 - mpmath.mpf(d)) ** m) / mpmath.mpf(d)
    assert float(geometric_sum(d, m)) == pytest.approx(float(want), rel=1e-12)


def test_n3_epoch2_matches_step_oracle():
    spec = DomainSpec(n=3, c=4.0, gamma1=0.3, x_l=0.5, x_h=1.0)
    model = ModelParams(1.0, 4.0)
    coeff = coefficients(spec, model)
    st = state_at_epoch(2, coeff, spec, model)
    (m1, v1), comps = oracle_state(spec, model, coeff, 2)
    assert st.d1.mean == pytest.approx(m1, rel=1e-12)
    assert st.d1.variance == pytest.approx(v1, rel=1e-12)
    np.testing.assert_allclose(st.d2_means, comps[:, 0], rtol=1e-12)
    np.testing.assert_allclose(st.d2_vars, comps[:, 1], rtol=1e-12)


def test_closed_form_equals_repeated_advance():
    spec = DomainSpec(n=4, c=6.0, gamma1=0.3, x_l=0.5, x_h=1.0)
    model = ModelParams(0.7, 4.0)
    coeff = coefficients(spec, model)
    st = initial_state(spec.n, model)
    for _ in range(5):
        st = advance_epoch(st, coeff)
    closed = state_at_epoch(5, coeff, spec, model)
    assert closed.d1.mean == pytest.approx(st.d1.mean, rel=1e-12)
    np.testing.assert_allclose(closed.d2_means, st.d2_means, rtol=1e-12)
    np.testing.assert_allclose(closed.d2_vars, st.d2_vars, rtol=1e-12)


def test_random_specs_match_step_oracle(rng):
    for _ in range(10):
        spec, model = random_sgld_instance(rng)
        coeff = coefficients(spec, model)
        k = int(rng.integers(1, 6))
        st = state_at_epoch(k, coeff, spec, model)
        (m1, v1), comps = oracle_state(spec, model, coeff, k)
        assert st.d1.mean == pytest.approx(m1, rel=1e-12)
        assert st.d1.variance == pytest.approx(v1, rel=1e-12)
        np.testing.assert_allclose(st.d2_means, comps[:, 0], rtol=1e-12)
        np.testing.assert_allclose(st.d2_vars, comps[:, 1], rtol=1e-12)


def test_epoch_zero_is_prior():
    st = state_at_epoch(0, coefficients(DESK_SPEC, DESK_MODEL), DESK_SPEC, DESK_MODEL)
    assert st.d1.mean == 0 and st.d1.variance == 1 / DESK_MODEL.alpha
    assert np.all(st.d2_vars == 1 / DESK_MODEL.alpha)
    with pytest.raises(ValueError):
        state_at_epoch(-1, coefficients(DESK_SPEC, DESK_MODEL), DESK_SPEC, DESK_MODEL)


def test_figure1_first_epoch_is_bounded():
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    st = state_at_epoch(1, coeff, FIG1_SPEC, FIG1_MODEL)
    top = 1 / FIG1_MODEL.alpha + coeff.eta * FIG1_SPEC.n
    assert np.all(np.isfinite(st.d2_means))
    assert np.all((st.d2_vars > 0) & (st.d2_vars < top))
    assert 0 < st.d1.variance < top
    assert gap_metric(st) == pytest.approx(0.3026888261775179, rel=1e-9)


def test_gap_metric_hand_sum():
    coeff = coefficients(DESK_SPEC, DESK_MODEL)
    st = state_at_epoch(3, coeff, DESK_SPEC, DESK_MODEL)
    (m1, _), comps = oracle_state(DESK_SPEC, DESK_MODEL, coeff, 3)
    hand = sum((m1 - mu) ** 2 / var for mu, var in comps) / 5
    assert gap_metric(st) == pytest.approx(hand, rel=1e-11)


def test_figure1_critical_epoch():
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    rep = critical_epoch(coeff, FIG1_SPEC, FIG1_MODEL, delta=0.01)
    want = oracles.mp_k_dot(0.5, 1.0, 1.8, 267909)
    assert rep.k_dot == pytest.approx(want, rel=1e-9)
    assert round(rep.k_dot) == 22
    assert rep.k_dot == pytest.approx(22.274740452280913, rel=1e-9)
    assert rep.k_star == 23
    assert rep.violation_step == 24 * 267909 == 6429816
    assert rep.v1 == 6.0
    assert rep.epsilon_prime == pytest.approx(-0.7129246978894459, rel=1e-10)


def test_v1_constant():
    spec = DomainSpec(n=10, c=1.0, gamma1=0.2, x_l=0.5, x_h=1.0)
    assert v1_constant(spec, ModelParams(1.0, 4.0)) == 6.0
    assert 1 + 2 * math.exp(0.25) == pytest.approx(3.568050833375483, rel=1e-14)
    assert v1_constant(spec, ModelParams(1.0, 0.5)) == pytest.approx(1 + 2 * math.exp(2), rel=1e-15)


def test_critical_epoch_gates():
    spec = DomainSpec(n=10, c=1.0, gamma1=0.2, x_l=0.5, x_h=1.0)
    with pytest.raises(HypothesisViolated):
        critical_epoch(coefficients(spec, ModelParams(1.0, 3.0)), spec, ModelParams(1.0, 3.0))
    small = DomainSpec(n=1, c=1.0, gamma1=0.2, x_l=0.5, x_h=1.0)
    model = ModelParams(0.01, 4.0)
    with pytest.raises(HypothesisViolated):
        critical_epoch(coefficients(small, model), small, model)


def test_k_dot_matches_extended_precision_on_random_specs(rng):
    for _ in range(10):
        spec, model = random_sgld_instance(rng, 5, 5000)
        coeff = coefficients(spec, model)
        assert k_dot(coeff, model) == pytest.approx(oracles.mp_k_dot(model.alpha, model.beta, spec.x_h, spec.n), rel=1e-9)


def test_mean_gap_lower_bound_holds_on_toy():
    coeff = coefficients(DESK_SPEC, DESK_MODEL)
    for k in range(5):
        st = state_at_epoch(k + 1, coeff, DESK_SPEC, DESK_MODEL)
        gap = np.min(st.d1.mean - st.d2_means)
        assert mean_gap_lower_bound(k, coeff, DESK_SPEC, DESK_MODEL) <= gap


def test_standard_chernoff_dominates_exact_mass(rng):
    coeff = coefficients(DESK_SPEC, DESK_MODEL)
    st = state_at_epoch(3, coeff, DESK_SPEC, DESK_MODEL)
    exact = float(np.mean(ndtr((st.d2_means - st.d1.mean) / np.sqrt(st.d2_vars))))
    assert mixture_mass_above(st) == pytest.approx(exact, rel=1e-14)
    assert exact <= chernoff_mass_bound(st, exponent_scale=0.5)
    for _ in range(20):
        spec, model = random_sgld_instance(rng)
        c = coefficients(spec, model)
        s = state_at_epoch(int(rng.integers(1, 30)), c, spec, model)
        assert mixture_mass_above(s) <= chernoff_mass_bound(s, exponent_scale=0.5)


def test_printed_chernoff_form_undercuts_exact_tail():
    # exp(-t^2) < Q(t) once t is past about 1.6
    t = 3.0
    assert math.exp(-t * t) < ndtr(-t)
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    st = state_at_epoch(24, coeff, FIG1_SPEC, FIG1_MODEL)
    assert chernoff_mass_bound(st) < mixture_mass_above(st)


def test_violation_epsilon_domain():
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    rep = critical_epoch(coeff, FIG1_SPEC, FIG1_MODEL)
    with pytest.raises(DeltaTooLarge):
        violation_epsilon(rep, FIG1_SPEC, FIG1_MODEL, 0.5)
    # larger c/n only helps
    wide = DomainSpec(n=FIG1_SPEC.n, c=2 * FIG1_SPEC.c, gamma1=0.1, x_l=0.9, x_h=1.8)
    assert violation_epsilon(rep, wide, FIG1_MODEL, 0.01) > violation_epsilon(rep, FIG1_SPEC, FIG1_MODEL, 0.01)


def test_figure1_certificate_at_posterior_level():
    coeff = coefficients(FIG1_SPEC, FIG1_MODEL)
    rep = critical_epoch(coeff, FIG1_SPEC, FIG1_MODEL, delta=0.01)
    st = state_at_epoch(rep.k_star + 1, coeff, FIG1_SPEC, FIG1_MODEL)
    cert = certify_violation(rep, st, 0.85, 0.01)
    assert cert.T == rep.violation_step
    assert cert.violated and cert.violated_chernoff
    assert cert.p2_exact == pytest.approx(8.18e-17, rel=0.01)
    assert gap_metric(st) == pytest.approx(67.9979, rel=1e-5)


def test_certificate_exact_and_standard_chernoff_agree():
    coeff = coefficients(DESK_SPEC, DESK_MODEL)
    rep = critical_epoch(coeff, DESK_SPEC, DESK_MODEL, delta=0.05)
    assert rep.violation_step == 35
    st = state_at_epoch(rep.k_star + 1, coeff, DESK_SPEC, DESK_MODEL)
    top = max_violated_epsilon(st, 0.05)
    assert top == pytest.approx(6.84, abs=0.01)
    safe = max_violated_epsilon(st, 0.05, use_chernoff=True, chernoff_scale=0.5)
    assert safe <= top
    for eps in np.linspace(0.1, safe - 1e-6, 7):
        c = certify_violation(rep, st, eps, 0.05, chernoff_scale=0.5)
        assert c.violated_chernoff and c.violated
    assert not certify_violation(rep, st, top + 1e-6, 0.05).violated
    assert certify_violation(rep, st, 6.0, 0.05).margin_exact == pytest.approx(0.45 * (1 - math.exp(6.0 - top)), rel=1e-12)


def test_theorem1_infeasible_under_cap():
    base = DomainSpec(n=1, c=1.0, gamma1=0.01, x_l=0.9, x_h=1.8, gamma2=1.06)
    with pytest.raises(InfeasibleTarget) as info:
        theorem1_instantiate(0.1, 1.0, 0.1, base, FIG1_MODEL)
    assert info.value.bounds.n_p > 1e7
    with pytest.raises(ValueError):
        theorem1_bounds(0.1, 1.0, 0.1, DomainSpec(n=1, c=1.0, gamma1=0.1, x_l=0.9, x_h=1.8, gamma2=1.05), FIG1_MODEL)


def test_theorem1_instance_passes_gates():
    base = DomainSpec(n=1, c=1.0, gamma1=0.01, x_l=0.9, x_h=1.8, gamma2=1.3)
    model = ModelParams(5.0, 1.0)
    bounds = theorem1_bounds(10.0, 11.0, 0.1, base, model)
    spec, rep = theorem1_instantiate(10.0, 11.0, 0.1, base, model, max_n=10**8)
    assert spec.n == math.floor(bounds.n_p) + 1
    assert spec.c == pytest.approx(spec.n**1.3, rel=1e-12)
    check_rdp_hypothesis(spec, model, bounds.nu1)
    assert rep.epsilon_prime >= 11.0
    budget, _ = posterior_adp(spec, model, 0.1, nus=[bounds.nu1])
    assert budget.epsilon <= 10.0


def test_figure1_rows_columns():
    rows = figure1_rows(DESK_SPEC, DESK_MODEL, range(4))
    assert [r["epoch"] for r in rows] == [0, 1, 2, 3]
    assert rows[0]["gap_metric"] == 0.0
    assert rows[2]["step"] == 10


def test_epoch_maps_shapes():
    m = epoch_maps(coefficients(DESK_SPEC, DESK_MODEL))
    assert m.drift2.shape == m.noise2.shape == (5,)
