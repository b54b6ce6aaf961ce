"""Exact epoch-boundary distributions of cyclic SGLD with batch size 1.

On D1 (n identical records) the iterate is Gaussian. On D2 (one record with
half the covariate) it is a uniform mixture over the cyclic position r of
the modified record, each component Gaussian. Everything here works with
``d = 1 - lambda`` directly; powers and geometric sums go through
``log1p``/``expm1`` because ``d`` is around 1e-6 at realistic sizes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .core_model import DomainSpec, Gaussian1D, GaussianMixture1D, ModelParams
from .errors import DeltaTooLarge, HypothesisViolated, InfeasibleTarget, NonPositiveKdot

DEFAULT_MAX_N = 10_000_000


def _pow(log_base, m):
    return np.exp(np.multiply(m, log_base))


def _one_minus_pow(log_base, m):
    # 1 - base**m
    return -np.expm1(np.multiply(m, log_base))


def geometric_sum(d: float, m):
    """sum_{i<m} (1-d)**i, evaluated stably for small ``d``."""
    m = np.asarray(m, dtype=float)
    if d == 0:
        return m
    return _one_minus_pow(math.log1p(-d), m) / d


def geometric_sum_sq(d: float, m):
    """sum_{i<m} (1-d)**(2i)."""
    m = np.asarray(m, dtype=float)
    if d == 0:
        return m
    return _one_minus_pow(2 * math.log1p(-d), m) / (d * (2 - d))


@dataclass(frozen=True)
class SgldCoefficients:
    """Recurrence constants of one SGLD step.

    ``d`` and ``d_hat`` hold ``1 - lambda`` and ``1 - lambda_hat`` at full
    precision; ``lam``/``lam_hat`` are derived conveniences.
    """

    eta: float
    d: float
    d_hat: float
    rho: float
    rho_hat: float
    n: int

    @property
    def lam(self) -> float:
        return 1.0 - self.d

    @property
    def lam_hat(self) -> float:
        return 1.0 - self.d_hat

    @property
    def log_lam(self) -> float:
        return math.log1p(-self.d)

    @property
    def log_lam_hat(self) -> float:
        return math.log1p(-self.d_hat)

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "lambda": self.lam,
            "lambda_hat": self.lam_hat,
            "one_minus_lambda": self.d,
            "one_minus_lambda_hat": self.d_hat,
            "rho": self.rho,
            "rho_hat": self.rho_hat,
        }


def default_eta(spec: DomainSpec, model: ModelParams) -> float:
    return 2.0 / (model.alpha + spec.n * spec.x_h**2 * model.beta) ** 2


def coefficients(spec: DomainSpec, model: ModelParams, eta: Optional[float] = None) -> SgldCoefficients:
    """Step constants; ``eta`` defaults to ``2/(alpha + n x_h^2 beta)^2``."""
    s = spec.x_h**2 * model.beta
    a_full = model.alpha + spec.n * s
    a_half = model.alpha + spec.n * s / 4
    if eta is None:
        eta = default_eta(spec, model)
        d = 1.0 / a_full
    else:
        d = eta / 2 * a_full
    d_hat = eta / 2 * a_half
    rho = eta / 2 * spec.n * spec.c * s
    return SgldCoefficients(eta=float(eta), d=float(d), d_hat=float(d_hat), rho=float(rho), rho_hat=rho / 4, n=spec.n)


@dataclass(frozen=True)
class EpochMaps:
    """Per-epoch affine maps ``mean <- M mean + drift``, ``var <- M^2 var + noise``."""

    log_m1: float
    drift1: float
    noise1: float
    log_m2: float
    drift2: np.ndarray  # indexed by r-1
    noise2: np.ndarray


def epoch_maps(coeff: SgldCoefficients) -> EpochMaps:
    n, d, eta = coeff.n, coeff.d, coeff.eta
    ll, llh = coeff.log_lam, coeff.log_lam_hat
    r = np.arange(1, n + 1, dtype=float)
    tail = _pow(ll, n - r)  # lambda^(n-r)
    drift2 = coeff.rho * coeff.lam_hat * tail * geometric_sum(d, r - 1) + coeff.rho_hat * tail + coeff.rho * geometric_sum(d, n - r)
    noise2 = eta * (
        coeff.lam_hat**2 * tail**2 * geometric_sum_sq(d, r - 1) + tail**2 + geometric_sum_sq(d, n - r)
    )
    return EpochMaps(
        log_m1=n * ll,
        drift1=float(coeff.rho * geometric_sum(d, n)),
        noise1=float(eta * geometric_sum_sq(d, n)),
        log_m2=llh + (n - 1) * ll,
        drift2=drift2,
        noise2=noise2,
    )


@dataclass(frozen=True)
class EpochState:
    """Iterate distributions after ``epoch`` full passes.

    ``d2_means[r-1]``/``d2_vars[r-1]`` describe the D2 chain whose modified
    record sits at cyclic position r.
    """

    epoch: int
    d1: Gaussian1D
    d2_means: np.ndarray
    d2_vars: np.ndarray

    @property
    def n(self) -> int:
        return self.d2_means.size

    @property
    def d2_components(self) -> GaussianMixture1D:
        return GaussianMixture1D(self.d2_means, self.d2_vars)

    def component(self, r: int) -> Gaussian1D:
        return Gaussian1D(float(self.d2_means[r - 1]), float(self.d2_vars[r - 1]))


def initial_state(n: int, model: ModelParams) -> EpochState:
    return EpochState(0, Gaussian1D(0.0, 1.0 / model.alpha), np.zeros(n), np.full(n, 1.0 / model.alpha))


def advance_epoch(state: EpochState, coeff: SgldCoefficients, spec: DomainSpec = None, maps: EpochMaps = None) -> EpochState:
    maps = maps or epoch_maps(coeff)
    m1, m2 = math.exp(maps.log_m1), math.exp(maps.log_m2)
    d1 = Gaussian1D(m1 * state.d1.mean + maps.drift1, m1 * m1 * state.d1.variance + maps.noise1)
    return EpochState(
        state.epoch + 1,
        d1,
        m2 * state.d2_means + maps.drift2,
        m2 * m2 * state.d2_vars + maps.noise2,
    )


def _closed(log_m: float, drift, noise, k: int, alpha: float):
    # iterate the affine map k times from (0, 1/alpha)
    if k == 0:
        return np.zeros_like(np.asarray(drift, float)), np.full_like(np.asarray(noise, float), 1.0 / alpha)
    mean = drift * (_one_minus_pow(log_m, k) / -math.expm1(log_m))
    var = _pow(2 * log_m, k) / alpha + noise * (_one_minus_pow(2 * log_m, k) / -math.expm1(2 * log_m))
    return mean, var


def state_at_epoch(k: int, coeff: SgldCoefficients, spec: DomainSpec, model: ModelParams, maps: EpochMaps = None) -> EpochState:
    """Closed-form state after ``k`` epochs (no iteration)."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    maps = maps or epoch_maps(coeff)
    m1, v1 = _closed(maps.log_m1, maps.drift1, maps.noise1, k, model.alpha)
    m2, v2 = _closed(maps.log_m2, maps.drift2, maps.noise2, k, model.alpha)
    return EpochState(k, Gaussian1D(float(m1), float(v1)), np.asarray(m2, float), np.asarray(v2, float))


def standardized_gaps(state: EpochState) -> np.ndarray:
    """(mu - mu_r) / sd_r for every component."""
    return (state.d1.mean - state.d2_means) / np.sqrt(state.d2_vars)


def gap_metric(state: EpochState) -> float:
    t = standardized_gaps(state)
    return float(np.mean(t * t))


def chernoff_mass_bound(state: EpochState, exponent_scale: float = 1.0) -> float:
    """Exponential bound on the D2 mixture mass above the D1 mean.

    With the default ``exponent_scale=1`` this is ``mean(exp(-t_r^2))`` as it is
    usually quoted for this counterexample. That form is not a valid Gaussian
    tail bound once ``t_r`` exceeds roughly 1.6; ``exponent_scale=0.5`` gives
    the standard Chernoff bound ``exp(-t^2/2)``, which always dominates the
    exact tail.
    """
    t = standardized_gaps(state)
    return float(min(1.0, np.mean(np.exp(-exponent_scale * t * t))))


def mixture_mass_above(state: EpochState, threshold: Optional[float] = None) -> float:
    thr = state.d1.mean if threshold is None else threshold
    return float(np.mean(ndtr((state.d2_means - thr) / np.sqrt(state.d2_vars))))


@dataclass(frozen=True)
class CriticalEpochReport:
    k_dot: float
    k_star: int
    violation_step: int
    v1: float
    epsilon_prime: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def critical_epoch_gates(spec: DomainSpec, model: ModelParams) -> list[tuple[str, float]]:
    # the source writes x for x_h in some of these constants; x_h is used throughout
    s = spec.x_h**2 * model.beta
    a = model.alpha
    return [
        ("n > alpha/(x_h^2 beta)", a / s),
        ("n > (alpha/(x_h^2 beta))(e^{2/(x_h^2 beta)} - 2) + 1/(2 x_h^2 beta)", a / s * (math.exp(2 / s) - 2) + 1 / (2 * s)),
        ("n > 1/(2 alpha x_h^2 beta) - 1/(x_h^2 beta)", 1 / (2 * a * s) - 1 / s),
    ]


def v1_constant(spec: DomainSpec, model: ModelParams) -> float:
    return max(6.0, 1 + 2 * math.exp(1 / (spec.x_h**2 * model.beta)))


def k_dot(coeff: SgldCoefficients, model: ModelParams) -> float:
    one_minus_lam_sq = coeff.d * (2 - coeff.d)
    log_arg = -math.log1p(one_minus_lam_sq / (model.alpha * coeff.eta))
    return log_arg / coeff.log_lam / (2 * coeff.n) - 1


def critical_epoch(
    coeff: SgldCoefficients,
    spec: DomainSpec,
    model: ModelParams,
    delta: Optional[float] = None,
) -> CriticalEpochReport:
    """Critical epoch and violation step ``T = (ceil(k_dot) + 1) n``.

    Raises:
        HypothesisViolated: n below one of the three gates, or x_h^2 beta <= 3.
        NonPositiveKdot: k_dot <= 0.
    """
    s = spec.x_h**2 * model.beta
    if not s > 3:
        raise HypothesisViolated("x_h^2 beta > 3", 3.0, s)
    for name, bound in critical_epoch_gates(spec, model):
        if not spec.n > bound:
            raise HypothesisViolated(name, bound, spec.n)
    kd = k_dot(coeff, model)
    if not kd > 0:
        raise NonPositiveKdot(f"k_dot = {kd:.6g} is not positive")
    k_star = math.ceil(kd)
    rep = CriticalEpochReport(kd, k_star, (k_star + 1) * spec.n, v1_constant(spec, model))
    if delta is not None:
        rep = CriticalEpochReport(rep.k_dot, rep.k_star, rep.violation_step, rep.v1,
                                  violation_epsilon(rep, spec, model, delta))
    return rep


def mean_gap_lower_bound(k: int, coeff: SgldCoefficients, spec: DomainSpec, model: ModelParams) -> float:
    """Lower bound on ``mu - mu_r`` after ``k + 1`` epochs, for every r."""
    n = spec.n
    s = spec.x_h**2 * model.beta
    scale = n * spec.c * s / (model.alpha + n * s)
    ll, llh = coeff.log_lam, coeff.log_lam_hat
    lead = math.exp((n - 1) * ll + k * (n - 1) * ll + (k + 1) * ll)
    # lam_hat^(k+1) - lam^(k+1) = lam^(k+1) * expm1((k+1)(log lam_hat - log lam))
    return scale * lead * math.expm1((k + 1) * (llh - ll))


def violation_epsilon(report: CriticalEpochReport, spec: DomainSpec, model: ModelParams, delta: float) -> float:
    if delta >= 0.5:
        raise DeltaTooLarge(f"delta = {delta} must be below 0.5")
    s = spec.x_h**2 * model.beta
    return (
        math.exp(-2 / s) * model.alpha / report.v1 * (3 / (32 * s)) ** 2 * (spec.c / spec.n) ** 2
        + math.log(0.5 - delta)
    )


@dataclass(frozen=True)
class CertificateResult:
    T: int
    epsilon_prime: Optional[float]
    epsilon_tested: float
    delta: float
    p1: float
    p2_exact: float
    p2_chernoff: float
    violated: bool
    violated_chernoff: bool
    margin_exact: float
    margin_chernoff: float

    def to_dict(self) -> dict:
        return asdict(self)


def certify_violation(
    report: CriticalEpochReport,
    state_at_T: EpochState,
    epsilon: float,
    delta: float,
    chernoff_scale: float = 1.0,
) -> CertificateResult:
    """Test ``P1 > e^eps P2 + delta`` on S = {theta > mu_T}.

    P1 = 1/2 is the D1 mass above its own mean; P2 is the D2 mixture mass,
    once exactly (Gaussian CDF) and once through the Chernoff-type bound.
    """
    p1 = 0.5
    p2 = mixture_mass_above(state_at_T)
    p2c = chernoff_mass_bound(state_at_T, chernoff_scale)
    e = math.exp(epsilon)
    m_exact = p1 - e * p2 - delta
    m_ch = p1 - e * p2c - delta
    return CertificateResult(
        T=state_at_T.epoch * state_at_T.n,
        epsilon_prime=report.epsilon_prime,
        epsilon_tested=float(epsilon),
        delta=float(delta),
        p1=p1,
        p2_exact=p2,
        p2_chernoff=p2c,
        violated=bool(m_exact > 0),
        violated_chernoff=bool(m_ch > 0),
        margin_exact=m_exact,
        margin_chernoff=m_ch,
    )


def max_violated_epsilon(state_at_T: EpochState, delta: float, use_chernoff: bool = False, chernoff_scale: float = 1.0) -> float:
    """Largest eps for which the certificate still reports a violation."""
    p2 = chernoff_mass_bound(state_at_T, chernoff_scale) if use_chernoff else mixture_mass_above(state_at_T)
    if p2 <= 0:
        return math.inf
    if 0.5 - delta <= 0:
        return -math.inf
    return math.log((0.5 - delta) / p2)


@dataclass(frozen=True)
class Theorem1Bounds:
    nu1: float
    n1: float
    n2: float
    n3: float
    n_eps_prime: float  # may be inf when it overflows
    n_p: float
    n1_terms: tuple
    n2_terms: tuple
    n3_terms: tuple

    def to_dict(self) -> dict:
        return asdict(self)


def _safe_pow(log_value: float) -> float:
    return math.exp(log_value) if log_value < 700 else math.inf


def theorem1_bounds(epsilon: float, epsilon_prime: float, delta: float, base: DomainSpec, model: ModelParams) -> Theorem1Bounds:
    """All lower bounds on n from the parameter construction, literally.

    ``base`` supplies x_h, gamma1 and gamma2; x_l is taken as x_h/2.
    """
    if delta >= 0.5:
        raise DeltaTooLarge(f"delta = {delta} must be below 0.5")
    if not epsilon_prime > epsilon > 0:
        raise ValueError("need epsilon_prime > epsilon > 0")
    g1, g2 = base.gamma1, base.gamma2
    if g2 is None or not 1 + g1 < g2 < 1.5:
        raise ValueError(f"gamma2 must lie in (1 + gamma1, 3/2), got {g2}")
    a, b, xh = model.alpha, model.beta, base.x_h
    xl = xh / 2
    s = xh**2 * b
    r = xh**2 / xl**2
    eps = epsilon
    nu = 2 * math.log(1 / delta) / eps + 1
    k = xh**2 * a + xh**4 * b
    f = 1 + 1 / (1 + 10 * r * nu / b) ** (g2 - g1)

    n1_terms = (1 / (2 * a * s) - 1 / s, a / s, a / s * (math.exp(2 / s) - 2) + 1 / (2 * s))
    n2_terms = (
        1 + r * 8 / eps,
        1 + nu * r * (1 + 8 * (nu - 1) / eps),
        _safe_pow(math.log(16 * nu * b * xh**4 / (0.9 * eps * xl**2)) / (1 - 2 * g1)),
        _safe_pow(math.log(16 * nu * b / eps * (s * k / (0.9 * (xl**2 * b) ** 2)) * f) / (2 - g1 - g2)),
        _safe_pow(math.log(4 * nu / eps * (k**2 / (0.9 * xl**6 * b)) * f) / (3 - 2 * g2)),
    )
    n3_terms = (1 + 10 * r * nu / b, 1 + nu * r)
    v1 = max(6.0, 1 + 2 * math.exp(1 / s))
    inner = (epsilon_prime - math.log(0.5 - delta)) * math.exp(2 / s) * (32 * s / 3) ** 2 * v1 / a
    n_eps = _safe_pow(math.log(inner) / (2 * (g2 - 1)))
    n1, n2, n3 = max(n1_terms), max(n2_terms), max(n3_terms)
    return Theorem1Bounds(nu, n1, n2, n3, n_eps, max(n1, n2, n3, n_eps), n1_terms, n2_terms, n3_terms)


def spec_for_size(n: int, base: DomainSpec) -> DomainSpec:
    return DomainSpec(n=n, c=float(n) ** base.gamma2, gamma1=base.gamma1, x_l=base.x_h / 2, x_h=base.x_h, gamma2=base.gamma2)


def theorem1_instantiate(
    epsilon: float,
    epsilon_prime: float,
    delta: float,
    base: DomainSpec,
    model: ModelParams,
    max_n: int = DEFAULT_MAX_N,
) -> tuple[DomainSpec, CriticalEpochReport]:
    """Concrete (n_p, c_p) problem instance for the requested levels.

    Raises:
        InfeasibleTarget: when n_p exceeds ``max_n``. The exception carries
            the computed bounds as ``.bounds``.
    """
    bounds = theorem1_bounds(epsilon, epsilon_prime, delta, base, model)
    if not bounds.n_p <= max_n:
        exc = InfeasibleTarget(f"n_p = {bounds.n_p:.4g} exceeds the size cap {max_n:.4g}")
        exc.bounds = bounds
        raise exc
    # strict inequalities in the gates: step to the next integer above n_p
    n = math.floor(bounds.n_p) + 1
    spec = spec_for_size(n, base)
    report = critical_epoch(coefficients(spec, model), spec, model, delta)
    return spec, report


def largest_feasible_instance(
    epsilon: float,
    delta: float,
    base: DomainSpec,
    model: ModelParams,
    max_n: int = DEFAULT_MAX_N,
) -> tuple[DomainSpec, CriticalEpochReport]:
    """Fallback when the requested level is out of reach: n at the size cap.

    The certified level grows with n (as n^(gamma2-1)), so the cap gives the
    largest attainable one. Raises InfeasibleTarget if even the
    privacy-side bounds exceed the cap.
    """
    bounds = theorem1_bounds(epsilon, 2 * epsilon, delta, base, model)
    floor_n = max(bounds.n1, bounds.n2, bounds.n3)
    if not floor_n < max_n:
        raise InfeasibleTarget(f"privacy-side bounds need n > {floor_n:.4g}, above cap {max_n:.4g}")
    spec = spec_for_size(int(max_n), base)
    report = critical_epoch(coefficients(spec, model), spec, model, delta)
    return spec, report


def figure1_rows(spec: DomainSpec, model: ModelParams, epochs, coeff: SgldCoefficients = None) -> list[dict]:
    coeff = coeff or coefficients(spec, model)
    maps = epoch_maps(coeff)
    rows = []
    for k in epochs:
        st = state_at_epoch(int(k), coeff, spec, model, maps)
        rows.append({
            "epoch": int(k),
            "step": int(k) * spec.n,
            "gap_metric": gap_metric(st),
            "d1_mean": st.d1.mean,
            "d1_var": st.d1.variance,
            "min_component_mean": float(st.d2_means.min()),
            "max_component_mean": float(st.d2_means.max()),
        })
    return rows
