"""Laplace primitives and the Propose-Test-Sample mechanism.

The mechanism clips the data, privately estimates its size and slope,
keeps the records near the noisy slope and releases one posterior sample
over them if enough survive. A variant replaces the exact posterior draw
by a finite cyclic SGLD run, which is not private.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .core_model import Dataset, ModelParams
from .errors import DegenerateCount
from .monte_carlo import ChainConfig, SHUFFLED_ONCE, run_chain
from .posterior_privacy import posterior


class Outcome(str, enum.Enum):
    NULL_AT_STEP10 = "NullAtStep10"
    NULL_AT_STEP18 = "NullAtStep18"
    SAMPLED = "Sampled"


@dataclass(frozen=True)
class PtsParams:
    """Mechanism parameters.

    ``mode="strict"`` evaluates n_min with every term. ``mode="relaxed"``
    drops the n_b1 block, whose exponents such as 1/(1 - 2 gamma1) make it
    astronomically large for gamma1 near 1/2, and keeps
    ``max(n_b2, n1**(rho2/gamma1))``. Relaxed mode exists so that the
    mechanism can reach its sampling branch at desk-scale n.
    """

    epsilon: float
    delta: float
    x_l: float
    x_h: float
    alpha: float
    beta: float
    rho1: float
    rho2: float
    gamma1: float
    mode: str = "relaxed"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 0.5)")
        if not 0 < self.x_l < self.x_h:
            raise ValueError("need 0 < x_l < x_h")
        if not self.alpha > 0 or not self.beta >= 3 / self.x_h**2:
            raise ValueError("need alpha > 0 and beta >= 3/x_h^2")
        if not 1 < self.rho1 < 1.5:
            raise ValueError("rho1 must lie in (1, 3/2)")
        if not 0 < self.rho2 < 0.5:
            raise ValueError("rho2 must lie in (0, 1/2)")
        if not self.rho2 < self.gamma1 < 0.5:
            raise ValueError("gamma1 must lie in (rho2, 1/2)")
        if self.mode not in ("strict", "relaxed"):
            raise ValueError("mode must be 'strict' or 'relaxed'")

    @property
    def model(self) -> ModelParams:
        return ModelParams(self.alpha, self.beta)

    @property
    def shift(self) -> float:
        return math.log(1 / (2 * self.delta)) / self.epsilon

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PtsParams":
        keys = ("epsilon", "delta", "x_l", "x_h", "alpha", "beta", "rho1", "rho2", "gamma1")
        return cls(**{k: float(d[k]) for k in keys}, mode=d.get("mode", "relaxed"))


@dataclass
class PtsTrace:
    n1: int
    n1_noisy: float
    v_size: Optional[int] = None
    n2: Optional[float] = None
    m: Optional[float] = None
    m_noisy: Optional[float] = None
    w_size: Optional[int] = None
    n_w: Optional[float] = None
    n_min: Optional[float] = None
    outcome: Outcome = Outcome.NULL_AT_STEP10

    def to_dict(self) -> dict:
        d = asdict(self)
        d["outcome"] = self.outcome.value
        return d


def laplace_sample(scale: float, rng: np.random.Generator) -> float:
    if not scale > 0:
        raise ValueError("scale must be positive")
    return float(rng.laplace(0.0, scale))


def _nu(params: PtsParams) -> float:
    return 2 * math.log(1 / params.delta) / params.epsilon + 1


def n_min_terms(params: PtsParams, m_noisy: float, n1: int) -> dict:
    """Every term of the size gate, by name."""
    p = params
    nu, eps, a, b = _nu(p), p.epsilon, p.alpha, p.beta
    xh2, xl2 = p.x_h**2, p.x_l**2
    r = xh2 / xl2
    k4 = (xh2 * b) * (xh2 * a + xh2 * xh2 * b) / (0.9 * (xl2 * b) ** 2)
    k5 = (xh2 * a + xh2 * xh2 * b) ** 2 / (0.9 * xl2**3 * b)
    # the slope-dependent terms come from bounds written for a positive centre
    m = max(m_noisy, 0.0)
    g1 = p.gamma1

    def power(base, expo):
        if base <= 0:
            return 0.0
        lg = math.log(base) * expo
        return math.exp(lg) if lg < 700 else math.inf

    return {
        "b1_1": 1 + r * 8 / eps,
        "b1_2": 1 + nu * r * (1 + 8 * (nu - 1) / eps),
        "b1_3": power(16 * nu * b * xh2 * xh2 / (0.9 * eps * xl2), 1 / (1 - 2 * g1)),
        "b1_4": power(32 * nu * b / eps * k4 * m, 1 / (2 - g1)),
        "b1_5": power(32 * nu * b / eps * k4, 1 / (2 - 2 * g1)),
        "b1_6": power(8 * nu / eps * k5 * m, 2 / 3),
        "b1_7": power(8 * nu / eps * k5, 1 / (3 - 2 * g1)),
        "b2_1": 1 + r * 10 * nu / b,
        "b2_2": 1 + nu * r,
        "size": power(float(n1), p.rho2 / g1),
    }


def n_min(params: PtsParams, m_noisy: float, n1: int) -> float:
    """Minimum noisy |W| for releasing a sample (mode-dependent, see PtsParams)."""
    t = n_min_terms(params, m_noisy, n1)
    if params.mode == "relaxed":
        return max(t["b2_1"], t["b2_2"], t["size"])
    return max(t.values())


def m_sensitivity(n1_noisy: float, n2: float, params: PtsParams) -> float:
    """Bound on how much the ratio-of-sums slope over V moves under one swap."""
    if not n2 > 1:
        raise DegenerateCount(f"n2 = {n2} must exceed 1")
    xh2, xl2 = params.x_h**2, params.x_l**2
    cap = _slope_cap(n1_noisy, params.rho1)
    return cap * (2 * (n2 - 1) * xh2 * xl2 + xh2 * xh2) / (n2 * (n2 - 1) * xl2 * xl2)


def _slope_cap(n1_noisy: float, rho1: float) -> float:
    # a negative noisy size admits only zero slopes
    return max(n1_noisy, 0.0) ** rho1


def clip(data: Dataset, params: PtsParams) -> Dataset:
    x = np.minimum(np.maximum(data.x, params.x_l), params.x_h)
    return Dataset(x, np.maximum(data.y, 0.0))


def _select(data: Dataset, params: PtsParams, rng: np.random.Generator) -> tuple[Optional[Dataset], PtsTrace]:
    d = clip(data, params)
    n1 = len(d)
    shift = params.shift
    lap = 1 / params.epsilon
    n1_noisy = n1 - shift + laplace_sample(lap, rng)
    slopes = d.y / d.x if n1 else np.empty(0)
    in_v = slopes <= _slope_cap(n1_noisy, params.rho1)
    v_size = int(np.count_nonzero(in_v))
    n2 = v_size - shift + laplace_sample(lap, rng)
    tr = PtsTrace(n1=n1, n1_noisy=n1_noisy, v_size=v_size, n2=n2)
    if n2 <= 1:
        return None, tr
    zv = float(np.dot(d.x[in_v], d.x[in_v]))
    m = float(np.dot(d.x[in_v], d.y[in_v])) / zv if zv > 0 else 0.0
    # a nonpositive noisy size gives zero sensitivity; numpy then returns exactly 0
    m_noisy = m + float(rng.laplace(0.0, m_sensitivity(n1_noisy, n2, params) / params.epsilon))
    in_w = np.abs(slopes - m_noisy) <= n2**params.rho2
    w_size = int(np.count_nonzero(in_w))
    n_w = w_size - shift + laplace_sample(lap, rng)
    gate = n_min(params, m_noisy, n1)
    tr.m, tr.m_noisy, tr.w_size, tr.n_w, tr.n_min = m, m_noisy, w_size, n_w, gate
    if n_w < gate:
        tr.outcome = Outcome.NULL_AT_STEP18
        return None, tr
    tr.outcome = Outcome.SAMPLED
    return d.subset(in_w), tr


def propose_test_sample(data: Dataset, params: PtsParams, rng: np.random.Generator) -> tuple[Optional[float], PtsTrace]:
    w, tr = _select(data, params, rng)
    if w is None:
        return None, tr
    post = posterior(w, params.model)
    return float(rng.normal(post.mean, post.std)), tr


def sgld_variant_eta(n1: int, params: PtsParams) -> float:
    return 1 / (params.alpha + n1 * params.x_h**2 * params.beta) ** 2


def propose_test_sample_sgld(
    data: Dataset, params: PtsParams, steps: int, rng: np.random.Generator
) -> tuple[Optional[float], PtsTrace]:
    """Same as ``propose_test_sample`` but the final draw is a cyclic SGLD chain.

    The chain runs ``steps`` steps on W (shuffled once) with step size
    ``1/(alpha + n1 x_h^2 beta)^2`` and starts from a prior draw. The random
    stream is shared, so seeded runs agree with ``propose_test_sample`` up to
    the final draw.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    w, tr = _select(data, params, rng)
    if w is None:
        return None, tr
    cfg = ChainConfig(eta=sgld_variant_eta(tr.n1, params), steps=steps, order=SHUFFLED_ONCE)
    return run_chain(w, params.model, cfg, rng), tr


def claim3_params(epsilon: float, delta: float, mode: str = "relaxed") -> PtsParams:
    """Parameter set used for the non-privacy construction of the SGLD variant."""
    return PtsParams(epsilon=epsilon, delta=delta, x_l=0.5, x_h=1.0, alpha=1.0, beta=3.0,
                     rho1=1.25, rho2=0.45, gamma1=0.49, mode=mode)


CLAIM3_RHO3 = 1.15


def pts_output_audit(
    data_a: Dataset,
    data_b: Dataset,
    params: PtsParams,
    runs: int,
    seed: int,
    epsilon_total: float,
    delta_total: float,
    bins: int = 64,
) -> dict:
    """Binned frequency comparison of the mechanism's outputs on two datasets.

    Outputs are the released sample (null gets its own bin) and the pooled
    samples are cut into ``bins`` quantile bins. Reports the worst
    ``p_a - e^eps p_b - delta`` over bins and both directions. This is a
    heuristic audit, not a proof of privacy.
    """
    outs = []
    for g, data in enumerate((data_a, data_b)):
        vals = np.empty(runs)
        for i in range(runs):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(g, i)))
            s, _ = propose_test_sample(data, params, rng)
            vals[i] = np.nan if s is None else s
        outs.append(vals)
    pooled = np.concatenate(outs)
    finite = pooled[np.isfinite(pooled)]
    edges = np.unique(np.quantile(finite, np.linspace(0, 1, bins + 1))) if finite.size else np.array([0.0])

    def hist(v):
        f = v[np.isfinite(v)]
        idx = np.clip(np.searchsorted(edges, f, side="right") - 1, 0, max(len(edges) - 2, 0))
        h = np.bincount(idx, minlength=max(len(edges) - 1, 1)).astype(float)
        return np.append(h, np.count_nonzero(~np.isfinite(v))) / v.size

    ha, hb = hist(outs[0]), hist(outs[1])
    e = math.exp(epsilon_total)
    worst = float(max(np.max(ha - e * hb - delta_total), np.max(hb - e * ha - delta_total)))
    return {
        "runs": runs,
        "bins": int(ha.size),
        "worst_excess": worst,
        "flagged": bool(worst > 0),
        "null_rate_a": float(ha[-1]),
        "null_rate_b": float(hb[-1]),
    }
