"""Bayesian linear regression model, restricted data domain and adversarial datasets.

The model is ``y = theta * x + xi`` with prior ``theta ~ N(0, 1/alpha)`` and
noise precision ``beta``. Datasets are ordered because cyclic SGLD consumes
them in stored order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainViolation


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(alpha=float(d["alpha"]), beta=float(d["beta"]))


@dataclass(frozen=True)
class DomainSpec:
    """Restricted data domain.

    Points satisfy ``x_l <= x <= x_h`` and ``|y/x - c| <= n**gamma1``.
    ``gamma2`` is optional metadata read only by the parameter instantiation
    routine (where ``c = n**gamma2``).
    """

    n: int
    c: float
    gamma1: float
    x_l: float
    x_h: float
    gamma2: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not 0 < self.gamma1 < 0.5:
            raise ValueError(f"gamma1 must lie in (0, 1/2), got {self.gamma1}")
        if not 0 < self.x_l < self.x_h:
            raise ValueError(f"need 0 < x_l < x_h, got {self.x_l}, {self.x_h}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")

    @property
    def slope_tolerance(self) -> float:
        return self.n ** self.gamma1

    def check_model(self, model: ModelParams) -> None:
        """Raise DomainViolation unless ``x_h**2 * beta > 3``."""
        s = self.x_h**2 * model.beta
        if not s > 3:
            raise DomainViolation(f"x_h^2 * beta = {s:.6g} must exceed 3")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["gamma2"] is None:
            del d["gamma2"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        g2 = d.get("gamma2")
        return cls(
            n=int(d["n"]),
            c=float(d["c"]),
            gamma1=float(d["gamma1"]),
            x_l=float(d["x_l"]),
            x_h=float(d["x_h"]),
            gamma2=None if g2 is None else float(g2),
        )


@dataclass(frozen=True)
class DataPoint:
    x: float
    y: float


@dataclass(frozen=True)
class SufficientStats:
    z: float  # sum of x^2
    q: float  # sum of x*y

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(self.z + other.z, self.q + other.q)


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of points stored as two float arrays."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise ValueError("x and y must have the same length")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset values must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_points(cls, points: Iterable[DataPoint | tuple[float, float]]) -> "Dataset":
        pts = [(p.x, p.y) if isinstance(p, DataPoint) else tuple(p) for p in points]
        if not pts:
            return cls.empty()
        arr = np.asarray(pts, dtype=float)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.empty(0), np.empty(0))

    def __len__(self) -> int:
        return self.x.size

    def __iter__(self):
        for xi, yi in zip(self.x, self.y):
            yield DataPoint(float(xi), float(yi))

    def __getitem__(self, i: int) -> DataPoint:
        return DataPoint(float(self.x[i]), float(self.y[i]))

    @property
    def points(self) -> list[DataPoint]:
        return list(self)

    def stats(self) -> SufficientStats:
        return SufficientStats(z=float(np.dot(self.x, self.x)), q=float(np.dot(self.x, self.y)))

    def rotate(self, offset: int) -> "Dataset":
        """Cyclic rotation so that consumption starts at index ``offset``."""
        if len(self) == 0:
            return self
        return Dataset(np.roll(self.x, -offset), np.roll(self.y, -offset))

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.x[mask], self.y[mask])

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"])
        for xi, yi in zip(self.x, self.y):
            w.writerow([repr(float(xi)), repr(float(yi))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> "Dataset":
        """Parse a ``x,y`` CSV file. Errors name the offending (1-based) row."""
        text = Path(source).read_text()
        return cls.from_csv_text(text)

    @classmethod
    def from_csv_text(cls, text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != ["x", "y"]:
            raise ConfigError("row 1: expected header 'x,y'")
        xs, ys = [], []
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise ConfigError(f"row {lineno}: expected 2 fields, got {len(row)}")
            try:
                xv, yv = float(row[0]), float(row[1])
            except ValueError:
                raise ConfigError(f"row {lineno}: non-numeric value {row!r}") from None
            if not (math.isfinite(xv) and math.isfinite(yv)):
                raise ConfigError(f"row {lineno}: non-finite value {row!r}")
            xs.append(xv)
            ys.append(yv)
        return cls(np.asarray(xs), np.asarray(ys))


@dataclass(frozen=True)
class Gaussian1D:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class GaussianMixture1D:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float).reshape(-1)
        v = np.asarray(self.variances, dtype=float).reshape(-1)
        if m.size == 0 or m.shape != v.shape:
            raise ValueError("mixture needs a nonempty set of matching means and variances")
        if np.any(v <= 0):
            raise ValueError("component variances must be positive")
        w = np.full(m.size, 1.0 / m.size) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != m.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, match components and sum to 1")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)
        object.__setattr__(self, "weights", w)

    @property
    def components(self) -> list[Gaussian1D]:
        return [Gaussian1D(float(a), float(b)) for a, b in zip(self.means, self.variances)]

    def sf(self, t: float) -> float:
        """Mass above ``t``."""
        from scipy.special import ndtr

        return float(np.dot(self.weights, ndtr((self.means - t) / np.sqrt(self.variances))))

    def cdf(self, t):
        from scipy.special import ndtr

        t = np.asarray(t, dtype=float)
        z = (t[..., None] - self.means) / np.sqrt(self.variances)
        return ndtr(z) @ self.weights


def in_domain(point: DataPoint | tuple[float, float], spec: DomainSpec) -> bool:
    """Membership in the restricted domain. Sharp comparisons, no slack.

    Raises:
        DomainViolation: if ``x <= 0`` (slope undefined).
    """
    x, y = (point.x, point.y) if isinstance(point, DataPoint) else point
    if x <= 0:
        raise DomainViolation(f"x = {x} must be positive for the slope y/x to be defined")
    return spec.x_l <= x <= spec.x_h and abs(y / x - spec.c) <= spec.n**spec.gamma1


def make_d1(spec: DomainSpec) -> Dataset:
    return Dataset(np.full(spec.n, spec.x_h), np.full(spec.n, spec.c * spec.x_h))


def make_d2(spec: DomainSpec) -> Dataset:
    """Like ``make_d1`` but the last record is ``(x_h/2, c*x_h/2)``."""
    x = np.full(spec.n, spec.x_h)
    x[-1] = spec.x_h / 2
    return Dataset(x, spec.c * x)


def make_d3_d4(n1: int, rho3: float, x_h: float) -> tuple[Dataset, Dataset]:
    if not rho3 > 1:
        raise ValueError(f"rho3 must exceed 1, got {rho3}")
    if n1 < 1:
        raise ValueError("n1 must be positive")
    slope = float(n1) ** rho3
    x3 = np.full(n1, float(x_h))
    x4 = x3.copy()
    x4[-1] = x_h / 2
    return Dataset(x3, slope * x3), Dataset(x4, slope * x4)


def load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def hamming(a: Dataset, b: Dataset) -> int:
    if len(a) != len(b):
        raise ValueError("datasets must have the same length")
    return int(np.count_nonzero((a.x != b.x) | (a.y != b.y)))


def stats_of(points: Sequence[DataPoint]) -> SufficientStats:
    total = SufficientStats(0.0, 0.0)
    for p in points:
        total = total + SufficientStats(p.x * p.x, p.x * p.y)
    return total
