"""Pointwise density bounds from Wasserstein proximity, checked on grids.

If two L-Lipschitz densities p, q satisfy W2(p, q) < eps^2, their ball
averages over radius s obey

    p_s(x) <= R q_s(x) + (R - 1) 2 s L + eps / vol_d(s - eps),
    R = vol_d(s) / vol_d(s - eps).

Densities live on regular lattices (d <= 3) and every inequality is checked
pointwise away from the lattice boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, signal
from scipy.integrate import trapezoid
from scipy.special import gammaln

from .errors import RadiusBelowResolution

MAX_DIM = 3
_TOL = 1e-9


def ball_volume(d: int, r: float) -> float:
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if r == 0:
        return 0.0
    return math.exp(d * math.log(r) + d / 2 * math.log(math.pi) - gammaln(d / 2 + 1))


def volume_ratio(d: int, radius: float, budget: float) -> float:
    return ball_volume(d, radius) / ball_volume(d, radius - budget)


def ratio_curve(radius: float, budget: float, dims: Sequence[int] = range(1, 11)) -> list[dict]:
    return [{"dim": int(d), "ratio": volume_ratio(int(d), radius, budget)} for d in dims]


@dataclass(frozen=True)
class SmoothingConfig:
    radius: float
    w2_budget: float

    def __post_init__(self):
        if not self.radius > self.w2_budget > 0:
            raise ValueError("need radius > w2_budget > 0")


def _integrate(values: np.ndarray, spacing: float) -> float:
    out = values
    for _ in range(values.ndim):
        out = trapezoid(out, dx=spacing, axis=0)
    return float(out)


def max_fd_slope(values: np.ndarray, spacing: float) -> float:
    """Largest finite-difference gradient norm on the lattice."""
    if values.ndim == 1:
        return float(np.max(np.abs(np.diff(values)))) / spacing if values.size > 1 else 0.0
    grads = np.gradient(values, spacing)
    return float(np.max(np.sqrt(sum(g * g for g in grads))))


@dataclass(frozen=True)
class GriddedDensity:
    """Density values on a regular lattice with common spacing on every axis.

    ``origin`` is the coordinate of index (0, ..., 0).
    """

    values: np.ndarray
    origin: tuple
    spacing: float
    lipschitz: float
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", tuple(float(o) for o in np.atleast_1d(self.origin)))
        if not 1 <= v.ndim <= MAX_DIM:
            raise ValueError(f"dimension must be between 1 and {MAX_DIM}")
        if len(self.origin) != v.ndim:
            raise ValueError("origin length must match the dimension")
        if not self.spacing > 0 or np.any(v < 0):
            raise ValueError("spacing must be positive and values nonnegative")
        if self.validate:
            mass = _integrate(v, self.spacing)
            if abs(mass - 1) > 1e-6:
                raise ValueError(f"density integrates to {mass:.9f}, not 1")
            slope = max_fd_slope(v, self.spacing)
            if slope > self.lipschitz * (1 + 1e-9):
                raise ValueError(f"declared L = {self.lipschitz} below observed slope {slope}")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def coords(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.shape[axis])

    def mass(self) -> float:
        return _integrate(self.values, self.spacing)


def _ball_mask(dim: int, radius: float, spacing: float) -> np.ndarray:
    k = int(math.floor(radius / spacing + _TOL))
    ax = np.arange(-k, k + 1) * spacing
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    dist = np.sqrt(sum(g * g for g in grids))
    w = (dist <= radius * (1 + _TOL)).astype(float)
    # half weight on lattice points lying on the sphere (trapezoid ends in 1-d)
    w[np.abs(dist - radius) <= radius * _TOL] = 0.5
    return w


def _interior(shape: tuple, half_width: int) -> np.ndarray:
    m = np.ones(shape, dtype=bool)
    for ax, n in enumerate(shape):
        idx = np.arange(n)
        ok = (idx >= half_width) & (idx <= n - 1 - half_width)
        m &= ok.reshape([-1 if i == ax else 1 for i in range(len(shape))])
    return m


def smooth(density: GriddedDensity, radius: float, renormalize: bool = True) -> GriddedDensity:
    """Ball average of radius ``radius`` at every lattice point.

    Values outside the lattice count as zero.

    Raises:
        RadiusBelowResolution: if ``radius`` is below the lattice spacing.
    """
    if radius < density.spacing * (1 - _TOL):
        raise RadiusBelowResolution(f"radius {radius} is below the grid spacing {density.spacing}")
    w = _ball_mask(density.dim, radius, density.spacing)
    if density.dim == 1:
        avg = ndimage.correlate(density.values, w / w.sum(), mode="constant", cval=0.0)
    else:
        # the mask is symmetric, so convolution equals correlation
        avg = np.clip(signal.fftconvolve(density.values, w / w.sum(), mode="same"), 0.0, None)
    if renormalize:
        avg = avg / _integrate(avg, density.spacing)
    return GriddedDensity(avg, density.origin, density.spacing, density.lipschitz, validate=False)


def interior_mask(density: GriddedDensity, radius: float) -> np.ndarray:
    """Lattice points whose radius-ball stays inside the lattice."""
    return _interior(density.shape, int(math.floor(radius / density.spacing + _TOL)))


def theorem2_rhs(q_smoothed_value, config: SmoothingConfig, d: int, L: float, form: str = "theorem"):
    """Right-hand side of the smoothed-density bound.

    ``form="proof"`` assembles it as ``R q + (Delta + eps)/vol_d(s - eps)`` with
    ``Delta = (vol_d(s) - vol_d(s - eps)) 2 s L``; algebraically the same.
    """
    s, eps = config.radius, config.w2_budget
    v_in = ball_volume(d, s - eps)
    ratio = ball_volume(d, s) / v_in
    q = np.asarray(q_smoothed_value, dtype=float)
    if form == "theorem":
        return ratio * q + (ratio - 1) * 2 * s * L + eps / v_in
    if form == "proof":
        gap = (ball_volume(d, s) - v_in) * 2 * s * L
        return ratio * q + (gap + eps) / v_in
    raise ValueError(f"unknown form {form!r}")


def _cumulative_1d(density: GriddedDensity):
    v, h = density.values, density.spacing
    cum = np.concatenate([[0.0], np.cumsum((v[1:] + v[:-1]) * h / 2)])
    xs = density.coords(0)

    def cdf(t):
        # exact integral of the piecewise-linear interpolant
        t = np.clip(np.asarray(t, float), xs[0], xs[-1])
        i = np.clip(((t - xs[0]) / h).astype(int), 0, xs.size - 2)
        u = t - xs[i]
        slope = (v[i + 1] - v[i]) / h
        return cum[i] + v[i] * u + slope * u * u / 2

    return cdf


def ball_mass(density: GriddedDensity, center: np.ndarray, r: float) -> float:
    """Probability of the closed ball B_r(center) under the lattice density."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if density.dim == 1:
        cdf = _cumulative_1d(density)
        return float(cdf(center[0] + r) - cdf(center[0] - r))
    h = density.spacing
    w = _ball_mask(density.dim, r, h)
    k = (w.shape[0] - 1) // 2
    idx = np.round((center - np.asarray(density.origin)) / h).astype(int)
    sl = tuple(slice(i - k, i + k + 1) for i in idx)
    block = density.values[sl]
    if block.shape != w.shape:
        raise ValueError("ball leaves the lattice")
    return float(np.sum(block * w) / w.sum() * ball_volume(density.dim, r))


@dataclass
class VerificationReport:
    violations: int
    max_slack: float
    min_slack: float
    checked_points: int
    excluded_boundary_points: int
    ball_checks: int
    ball_violations: int
    ball_min_slack: float
    ratio_curve: list
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def verify_bound(
    p: GriddedDensity,
    q: GriddedDensity,
    config: SmoothingConfig,
    L: Optional[float] = None,
    ball_samples: int = 400,
    seed: int = 0,
    form: str = "theorem",
) -> VerificationReport:
    """Check the smoothed-density bound and the ball-probability inequality.

    ``config.w2_budget`` is the supplied eps with W2(p, q) < eps^2 assumed.
    A reported violation means that assumption (or the declared L) is false.
    """
    if p.shape != q.shape or p.spacing != q.spacing or p.origin != q.origin:
        raise ValueError("p and q must share a lattice")
    d = p.dim
    L = max(p.lipschitz, q.lipschitz) if L is None else L
    s, eps = config.radius, config.w2_budget
    ps, qs = smooth(p, s), smooth(q, s)
    inner = interior_mask(p, s)
    slack = theorem2_rhs(qs.values[inner], config, d, L, form) - ps.values[inner]
    viol = int(np.count_nonzero(slack < 0))

    # p(B_r(x)) <= q(B_{r+eps}(x)) + eps over random centres and radii
    rng = np.random.default_rng(seed)
    outer = interior_mask(p, s + eps)
    cand = np.argwhere(outer)
    ball_viol, ball_min = 0, math.inf
    n_ball = min(ball_samples, len(cand)) if len(cand) else 0
    for row in cand[rng.choice(len(cand), size=n_ball, replace=False)] if n_ball else []:
        x = np.asarray(p.origin) + p.spacing * row
        r = rng.uniform(p.spacing, s)
        gap = ball_mass(q, x, r + eps) + eps - ball_mass(p, x, r)
        ball_min = min(ball_min, gap)
        ball_viol += int(gap < 0)

    note = ""
    if viol or ball_viol:
        note = "bound violated: the supplied W2 budget or Lipschitz constant is too small for this pair"
    return VerificationReport(
        violations=viol,
        max_slack=float(slack.max()) if slack.size else math.nan,
        min_slack=float(slack.min()) if slack.size else math.nan,
        checked_points=int(inner.sum()),
        excluded_boundary_points=int(inner.size - inner.sum()),
        ball_checks=n_ball,
        ball_violations=ball_viol,
        ball_min_slack=float(ball_min),
        ratio_curve=ratio_curve(s, eps),
        note=note,
    )


def gaussian_lipschitz(sigma: float, d: int = 1) -> float:
    """Max gradient norm of an isotropic d-dimensional Gaussian density."""
    return math.exp(-0.5) / sigma * (2 * math.pi * sigma**2) ** (-d / 2)


def gaussian_density(mean: Sequence[float], sigma: float, lo: float, hi: float, spacing: float) -> GriddedDensity:
    """Isotropic Gaussian sampled on the cube [lo, hi]^d, renormalised on the lattice."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.size
    n = int(round((hi - lo) / spacing)) + 1
    ax = lo + spacing * np.arange(n)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    sq = sum((g - m) ** 2 for g, m in zip(grids, mean))
    v = np.exp(-sq / (2 * sigma**2)) / (2 * math.pi * sigma**2) ** (d / 2)
    mass = _integrate(v, spacing)
    # renormalising on a truncated cube scales the slope by the same factor
    return GriddedDensity(v / mass, (lo,) * d, spacing, gaussian_lipschitz(sigma, d) / mass * (1 + 1e-6))


def gaussian_w2(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    return math.sqrt((mu1 - mu2) ** 2 + (sigma1 - sigma2) ** 2)
