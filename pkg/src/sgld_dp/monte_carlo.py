"""Monte Carlo SGLD simulator and empirical distribution tools.

Randomness is counter based. ``(seed, group)`` keys one Philox generator and
chain i reads a fixed window of its output starting at counter
``i * width / 4``, so results do not depend on how chains are batched or
scheduled. Normals come from the inverse CDF of 53-bit uniforms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from scipy.special import ndtri

from .core_model import Dataset, ModelParams
from .errors import TooFewSamples

SHUFFLED_ONCE = "shuffled-once"
_BLOCK_WORDS = 1 << 22


@dataclass(frozen=True)
class ChainConfig:
    """SGLD chain settings.

    Attributes:
        order: integer rotation offset (consumption starts at that stored
            index) or ``"shuffled-once"`` for a random permutation per chain.
        sampling: ``"cyclic"`` (used everywhere in the analysis) or
            ``"uniform"`` for with-replacement minibatches, exploratory only.
    """

    eta: float
    steps: int
    batch: int = 1
    order: Union[int, str] = 0
    seed: int = 0
    sampling: str = "cyclic"

    def __post_init__(self):
        if self.batch < 1 or self.steps < 0:
            raise ValueError("need batch >= 1 and steps >= 0")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.sampling not in ("cyclic", "uniform"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if isinstance(self.order, str) and self.order != SHUFFLED_ONCE:
            raise ValueError(f"order must be an int or {SHUFFLED_ONCE!r}")


@dataclass(frozen=True)
class EmpiricalDist:
    samples: np.ndarray

    @property
    def count(self) -> int:
        return int(self.samples.size)


def offset_for_position(n: int, r: int) -> int:
    """Rotation offset that puts the last stored record at cyclic position r (1-based)."""
    if not 1 <= r <= n:
        raise ValueError("r must lie in 1..n")
    return (n - r) % n


def chain_rng(seed: int, chain: int, group: int = 0) -> np.random.Generator:
    """Independent Generator for one chain, used by the non-vectorised paths."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(group, chain))
    return np.random.Generator(np.random.Philox(ss))


def _stream_key(seed: int, group: int) -> np.ndarray:
    return np.random.SeedSequence(entropy=seed, spawn_key=(group,)).generate_state(2, np.uint64)


def _width(steps: int) -> int:
    # one word for the rotation, one for theta_0, one per step; padded to a Philox block
    return -(-(steps + 2) // 4) * 4


def _uniforms(raw: np.ndarray) -> np.ndarray:
    # midpoints of the 2^53 grid, strictly inside (0, 1)
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def chain_draws(seed: int, start: int, count: int, steps: int, group: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform rotation draw, theta_0 z-score and step noise for chains ``start..start+count-1``."""
    width = _width(steps)
    bg = np.random.Philox(key=_stream_key(seed, group))
    bg.advance(start * width // 4)
    u = _uniforms(bg.random_raw(count * width)).reshape(count, width)
    z = ndtri(u[:, 1 : steps + 2])
    return u[:, 0], z[:, 0], z[:, 1:]


def _sgld_loop(x, y, model: ModelParams, config: ChainConfig, rng: np.random.Generator, theta: float) -> float:
    n = x.size
    eta, b = config.eta, config.batch
    half = eta / 2
    scale = n / b
    root = math.sqrt(eta)
    noise = rng.standard_normal(config.steps)
    for j in range(config.steps):
        if config.sampling == "cyclic":
            idx = (np.arange(j * b, (j + 1) * b) % n) if b > 1 else j % n
        else:
            idx = rng.integers(0, n, size=b)
        xi, yi = x[idx], y[idx]
        grad = -model.alpha * theta + scale * model.beta * float(np.sum(xi * (yi - theta * xi)))
        theta = theta + half * grad + root * noise[j]
    return theta


def run_chain(data: Dataset, model: ModelParams, config: ChainConfig, rng: Optional[np.random.Generator] = None) -> float:
    """Final iterate of one SGLD chain.

    theta_0 is drawn from the prior. With ``rng=None`` the chain stream is
    derived from ``config.seed``.
    """
    rng = rng if rng is not None else chain_rng(config.seed, 0)
    theta = rng.normal(0.0, 1.0 / math.sqrt(model.alpha))
    if config.steps == 0 or len(data) == 0:
        return float(theta)
    if config.order == SHUFFLED_ONCE:
        perm = rng.permutation(len(data))
        x, y = data.x[perm], data.y[perm]
    else:
        d = data.rotate(int(config.order))
        x, y = d.x, d.y
    return float(_sgld_loop(x, y, model, config, rng, theta))


def run_chains(
    data: Dataset,
    model: ModelParams,
    config: ChainConfig,
    chains: int,
    random_rotation: bool = False,
    group: int = 0,
) -> EmpiricalDist:
    """Many cyclic chains with batch 1, vectorised across chains.

    Chain i uses ``chain_draws(config.seed, i, 1, steps, group)``: the first
    uniform picks the rotation offset (only if ``random_rotation``), then
    theta_0 and one normal per step. Other orders and sampling modes fall
    back to ``run_chain`` with one ``chain_rng`` per chain.
    """
    if config.batch != 1 or config.sampling != "cyclic" or config.order == SHUFFLED_ONCE:
        rngs = (chain_rng(config.seed, i, group) for i in range(chains))
        return EmpiricalDist(np.array([run_chain(data, model, config, g) for g in rngs]))
    n = len(data)
    out = np.empty(chains)
    a, b, eta = model.alpha, model.beta, config.eta
    mult = 1 - eta / 2 * (a + n * b * data.x**2)
    drift = eta / 2 * n * b * data.x * data.y
    root = math.sqrt(eta)
    sd0 = 1 / math.sqrt(a)
    block = max(1, _BLOCK_WORDS // _width(config.steps))
    for start in range(0, chains, block):
        m = min(chains, start + block) - start
        u_rot, z0, noise = chain_draws(config.seed, start, m, config.steps, group)
        if random_rotation:
            offsets = np.minimum((u_rot * n).astype(np.int64), n - 1)
        else:
            offsets = np.full(m, int(config.order) % max(n, 1), dtype=np.int64)
        theta = sd0 * z0
        for j in range(config.steps if n else 0):
            idx = (offsets + j) % n
            theta = mult[idx] * theta + drift[idx] + root * noise[:, j]
        out[start : start + m] = theta
    return EmpiricalDist(out)


def affine_moments(
    data: Dataset,
    model: ModelParams,
    eta: float,
    steps: int,
    offset: int = 0,
    mean0: float = 0.0,
    var0: Optional[float] = None,
) -> tuple[float, float]:
    """Exact mean and variance of a batch-1 cyclic chain, one step at a time.

    Independent of the epoch-level closed forms; serves as their oracle.
    """
    n = len(data)
    mean = mean0
    var = 1.0 / model.alpha if var0 is None else var0
    for j in range(steps):
        i = (offset + j) % n
        xi, yi = data.x[i], data.y[i]
        a = 1 - eta / 2 * (model.alpha + n * xi * xi * model.beta)
        mean = a * mean + eta / 2 * n * xi * yi * model.beta
        var = a * a * var + eta
    return float(mean), float(var)


def empirical_set_mass(dist: EmpiricalDist, threshold: float) -> tuple[float, float]:
    """Fraction of samples strictly above ``threshold`` and its binomial SE."""
    if dist.count < 100:
        raise TooFewSamples(f"need at least 100 samples, got {dist.count}")
    p = float(np.count_nonzero(dist.samples > threshold)) / dist.count
    return p, math.sqrt(p * (1 - p) / dist.count)


@dataclass(frozen=True)
class AuditResult:
    p_a: float
    p_b: float
    margin: float
    ci_low: float
    ci_high: float
    confidence: float
    threshold: float
    chains: int
    epsilon: float
    delta: float

    def to_dict(self) -> dict:
        return asdict(self)


def empirical_dp_audit(
    data_a: Dataset,
    data_b: Dataset,
    model: ModelParams,
    config: ChainConfig,
    epsilon: float,
    delta: float,
    chains: int,
    threshold: Optional[float] = None,
    confidence: float = 0.99,
    n_boot: int = 4000,
) -> AuditResult:
    """Estimate ``P_A(S) - e^eps P_B(S) - delta`` for S = {theta > threshold}.

    Chains on ``data_a`` use ``config.order``; chains on ``data_b`` use a
    uniformly random rotation each. The threshold defaults to the exact mean
    of the ``data_a`` chain. The interval is a percentile bootstrap.
    """
    if chains < 10_000:
        raise ValueError("the audit needs at least 1e4 chains per dataset")
    if threshold is None:
        off = 0 if config.order == SHUFFLED_ONCE else int(config.order)
        threshold, _ = affine_moments(data_a, model, config.eta, config.steps, off)
    da = run_chains(data_a, model, config, chains, random_rotation=False, group=0)
    db = run_chains(data_b, model, config, chains, random_rotation=True, group=1)
    pa, _ = empirical_set_mass(da, threshold)
    pb, _ = empirical_set_mass(db, threshold)
    e = math.exp(epsilon)
    margin = pa - e * pb - delta
    rng = chain_rng(config.seed, 0, group=2)
    ba = rng.binomial(chains, pa, size=n_boot) / chains
    bb = rng.binomial(chains, pb, size=n_boot) / chains
    boot = ba - e * bb - delta
    tail = (1 - confidence) / 2
    lo, hi = np.quantile(boot, [tail, 1 - tail])
    return AuditResult(pa, pb, margin, float(lo), float(hi), confidence, float(threshold), chains, epsilon, delta)
