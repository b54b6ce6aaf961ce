"""Posterior sampling privacy for Bayesian linear regression.

Rényi divergence between Gaussian posteriors, the five-term RDP bound for
one posterior sample on the restricted domain, RDP to (eps, delta)
conversion and a brute-force worst-case neighbour search used as an
independent check of that bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core_model import Dataset, DomainSpec, Gaussian1D, ModelParams
from .errors import DivergenceUndefined, HypothesisViolated, NoAdmissibleNu


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class RdpBound:
    nu: float
    epsilon1: float
    terms: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.nu > 1:
            raise ValueError(f"nu must exceed 1, got {self.nu}")


def posterior(data: Dataset, model: ModelParams) -> Gaussian1D:
    st = data.stats()
    prec = model.alpha + model.beta * st.z
    return Gaussian1D(mean=model.beta * st.q / prec, variance=1.0 / prec)


def posterior_from_stats(z, q, model: ModelParams):
    """Vectorised posterior (mean, variance) from sufficient statistics."""
    z = np.asarray(z, dtype=float)
    q = np.asarray(q, dtype=float)
    prec = model.alpha + model.beta * z
    return model.beta * q / prec, 1.0 / prec


def _renyi_arrays(mp, vp, mq, vq, nu):
    s_star = nu * vq + (1.0 - nu) * vp
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (
            0.5 * np.log(vq / vp)
            + np.log(vq / s_star) / (2.0 * (nu - 1.0))
            + 0.5 * nu * (mp - mq) ** 2 / s_star
        )
    return d, s_star


def renyi_divergence_gaussians(p: Gaussian1D, q: Gaussian1D, nu: float) -> float:
    """Order-``nu`` Rényi divergence D(p || q) for univariate Gaussians.

    Uses ``s* = nu*var_q + (1-nu)*var_p`` and

        ln(sd_q/sd_p) + ln(var_q/s*) / (2(nu-1)) + nu (mu_p-mu_q)^2 / (2 s*)

    Raises:
        DivergenceUndefined: if ``s* <= 0`` (the integral diverges).
    """
    if not nu > 1:
        raise ValueError(f"nu must exceed 1, got {nu}")
    d, s_star = _renyi_arrays(p.mean, p.variance, q.mean, q.variance, nu)
    if not s_star > 0:
        raise DivergenceUndefined(f"nu*var_q + (1-nu)*var_p = {s_star:.6g} <= 0")
    return max(float(d), 0.0)


def _hypothesis_bounds(spec: DomainSpec, model: ModelParams, nu: float) -> list[tuple[str, float]]:
    r = spec.x_h**2 / spec.x_l**2
    return [
        ("n > 1 + 10 (x_h^2/x_l^2) (nu/beta)", 1 + 10 * r * nu / model.beta),
        ("n > 1 + nu x_h^2/x_l^2", 1 + nu * r),
    ]


def check_rdp_hypothesis(spec: DomainSpec, model: ModelParams, nu: float) -> None:
    for name, bound in _hypothesis_bounds(spec, model, nu):
        if not spec.n > bound:
            raise HypothesisViolated(name, bound, spec.n)


def rdp_admissible(spec: DomainSpec, model: ModelParams, nu: float) -> bool:
    return all(spec.n > b for _, b in _hypothesis_bounds(spec, model, nu))


def rdp_terms(spec: DomainSpec, model: ModelParams, nu: float) -> tuple[float, float, float, float, float]:
    """The five summands of the posterior RDP bound, unchecked."""
    n, a, b = spec.n, model.alpha, model.beta
    xh2, xl2 = spec.x_h**2, spec.x_l**2
    g1 = spec.gamma1
    ln_n = math.log(n)
    n_g1 = math.exp(g1 * ln_n)
    k = xh2 * a + xh2 * xh2 * b
    t1 = xh2 / (2 * (n - 1) * xl2)
    t2 = 0.5 * (nu - 1) * nu * xh2 / ((n - 1) * xl2 - nu * xh2)
    t3 = 2 * nu * b * xh2 * xh2 / (0.9 * math.exp((1 - 2 * g1) * ln_n) * xl2)
    t4 = (
        2 * nu * b * (xh2 * b) * k / (0.9 * (xl2 * b) ** 2)
        * (spec.c + n_g1) / math.exp((2 - g1) * ln_n)
    )
    t5 = nu / 2 * k**2 / (0.9 * xl2**3 * b) * (spec.c + n_g1) ** 2 / math.exp(3 * ln_n)
    return t1, t2, t3, t4, t5


def posterior_rdp_epsilon(spec: DomainSpec, model: ModelParams, nu: float) -> RdpBound:
    """(nu, eps1) RDP bound for one posterior sample on the restricted domain.

    Raises:
        HypothesisViolated: when n is below either of the two lower bounds.
    """
    if not nu > 1:
        raise ValueError(f"nu must exceed 1, got {nu}")
    check_rdp_hypothesis(spec, model, nu)
    terms = rdp_terms(spec, model, nu)
    return RdpBound(nu=float(nu), epsilon1=float(sum(terms)), terms=tuple(float(t) for t in terms))


def rdp_to_adp(bound: RdpBound, delta: float) -> PrivacyBudget:
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return PrivacyBudget(bound.epsilon1 + math.log(1 / delta) / (bound.nu - 1), delta)


def nu_grid(delta: float, epsilon_ref: float = 1.0, extra: Sequence[float] = ()) -> np.ndarray:
    """Geometric grid ``1 + 2**k * ln(1/delta)/epsilon_ref`` for k in -10..20."""
    base = math.log(1 / delta) / epsilon_ref
    nus = [1 + 2.0**k * base for k in range(-10, 21)]
    nus.append(1 + 2 * math.log(1 / delta) / epsilon_ref)
    nus.extend(extra)
    return np.unique(np.asarray(nus, dtype=float))


def posterior_adp(
    spec: DomainSpec,
    model: ModelParams,
    delta: float,
    epsilon_ref: float = 1.0,
    nus: Optional[Sequence[float]] = None,
) -> tuple[PrivacyBudget, RdpBound]:
    """Smallest (eps, delta) guarantee over an admissible grid of orders.

    ``epsilon_ref`` sets the grid scale; it also contributes the order
    ``1 + 2 ln(1/delta)/epsilon_ref``.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 0.5)")
    grid = nu_grid(delta, epsilon_ref) if nus is None else np.asarray(nus, dtype=float)
    best = None
    for nu in grid:
        if nu <= 1 or not rdp_admissible(spec, model, nu):
            continue
        bound = posterior_rdp_epsilon(spec, model, float(nu))
        budget = rdp_to_adp(bound, delta)
        if best is None or budget.epsilon < best[0].epsilon:
            best = (budget, bound)
    if best is None:
        raise NoAdmissibleNu(f"no order on the grid satisfies the n lower bounds (n={spec.n})")
    return best


def adp_report(budget: PrivacyBudget, bound: RdpBound) -> dict:
    return {
        "epsilon": budget.epsilon,
        "delta": budget.delta,
        "nu": bound.nu,
        "epsilon1": bound.epsilon1,
        "terms": list(bound.terms),
    }


def _candidate_points(spec: DomainSpec, grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    tol = spec.n**spec.gamma1
    xs = np.linspace(spec.x_l, spec.x_h, grid_size)
    slopes = np.linspace(spec.c - tol, spec.c + tol, grid_size)
    X, S = np.meshgrid(xs, slopes, indexing="ij")
    x = np.append(X.ravel(), 0.0)  # removal modelled as the zero record
    y = np.append((X * S).ravel(), 0.0)
    return x, y


def worst_case_renyi_oracle(spec: DomainSpec, model: ModelParams, nu: float, grid_size: int = 16) -> float:
    """Brute-force max of D_nu over neighbouring pairs.

    The shared n-1 records are identical copies of one corner of the domain
    (x in {x_l, x_h}, slope in {c - n^g1, c + n^g1}). The differing record
    ranges over a ``grid_size`` x ``grid_size`` lattice of in-domain points plus
    the zero record; all ordered pairs are evaluated.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    tol = spec.n**spec.gamma1
    px, py = _candidate_points(spec, grid_size)
    worst = 0.0
    for xc in (spec.x_l, spec.x_h):
        for sc in (spec.c - tol, spec.c + tol):
            z = (spec.n - 1) * xc * xc + px * px
            q = (spec.n - 1) * xc * xc * sc + px * py
            mu, var = posterior_from_stats(z, q, model)
            d, s_star = _renyi_arrays(mu[:, None], var[:, None], mu[None, :], var[None, :], nu)
            if np.any(s_star <= 0):
                raise DivergenceUndefined("a neighbouring pair has nonpositive s*")
            worst = max(worst, float(np.max(d)))
    return worst
