"""Pooled empirical distributions, exact quantiles and finite-sample forecast intervals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .transfer import TransferErrorTensor


class Side(str, enum.Enum):
    ONE_SIDED_UPPER = "one_sided_upper"
    TWO_SIDED = "two_sided"

    @classmethod
    def parse(cls, value) -> "Side":
        aliases = {"one": cls.ONE_SIDED_UPPER, "upper": cls.ONE_SIDED_UPPER, "two": cls.TWO_SIDED}
        if isinstance(value, str) and value.lower() in aliases:
            return aliases[value.lower()]
        return cls(value)


def as_fraction(x) -> Fraction:
    """Exact rational for ``x``; floats go through their shortest decimal repr so 0.95 is 19/20."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def _check_tau(tau) -> Fraction:
    t = as_fraction(tau)
    if not 0 < t <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    return t


@dataclass(frozen=True, eq=False)
class WeightedEmpirical:
    """Finite measure with atoms at ``values`` carrying positive ``weights``.

    Atoms are kept sorted by value (stable, so tied atoms keep input order).
    When every weight is equal the quantiles are computed with exact
    rational arithmetic on atom counts.
    """

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if v.shape != w.shape:
            raise ValueError("values and weights differ in length")
        if np.isnan(v).any():
            raise ValueError("atom values must not be NaN")
        if (w <= 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be positive and finite")
        order = np.argsort(v, kind="stable")
        object.__setattr__(self, "values", v[order])
        object.__setattr__(self, "weights", w[order])

    @classmethod
    def uniform(cls, values) -> "WeightedEmpirical":
        values = np.asarray(values, dtype=float).reshape(-1)
        return cls(values, np.full(len(values), 1.0 / max(len(values), 1)))

    def __len__(self):
        return len(self.values)

    @property
    def total(self) -> float:
        return float(math.fsum(self.weights))

    @property
    def is_uniform(self) -> bool:
        return len(self.weights) > 0 and bool((self.weights == self.weights[0]).all())

    def cdf(self, b: float) -> float:
        return float(math.fsum(self.weights[self.values <= b]))


def upper_quantile(dist: WeightedEmpirical, tau) -> float:
    """Smallest atom ``b`` with ``P((-inf, b]) >= tau``."""
    t = _check_tau(tau)
    if len(dist) == 0:
        raise ValueError("empty distribution")
    J = len(dist)
    if dist.is_uniform:
        k = math.ceil(t * J)  # 1-based rank
        return float(dist.values[k - 1])
    total = dist.total
    cum = np.cumsum(dist.weights)
    idx = int(np.argmax(cum >= float(t) * total - 1e-12 * total))
    return float(dist.values[idx])


def lower_quantile(dist: WeightedEmpirical, tau) -> float:
    """Largest atom ``b`` with ``P([b, inf)) >= 1 - tau``; ``-inf`` at ``tau = 0`` edge is not reachable.

    Returns ``+inf`` when ``tau = 1`` since every real satisfies the condition.
    """
    t = as_fraction(tau)
    if not 0 <= t <= 1:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if len(dist) == 0:
        raise ValueError("empty distribution")
    J = len(dist)
    if t == 1:
        return math.inf
    if dist.is_uniform:
        return float(dist.values[J - math.ceil((1 - t) * J)])
    total = dist.total
    tail = total - np.concatenate([[0.0], np.cumsum(dist.weights)[:-1]])
    ok = np.flatnonzero(tail >= float(1 - t) * total - 1e-12 * total)
    return float(dist.values[ok[-1]])


def coverage_level(n: int, r: int, tau, side) -> Fraction:
    """Guaranteed coverage of the pooled forecast interval, as an exact rational."""
    side = Side.parse(side)
    t = _check_tau(tau)
    if not 1 <= r <= n - 1:
        raise ValueError(f"need 1 <= r <= n-1, got r={r}, n={n}")
    one = t * Fraction(n - r, n + 1)
    return one if side is Side.ONE_SIDED_UPPER else 2 * one - 1


def coverage_upper_bound(n: int, r: int, tau, side) -> Fraction:
    """Largest coverage the pooled interval can have when transfer errors have no ties."""
    side = Side.parse(side)
    slack = Fraction(r + 1, n + 1) + Fraction(math.factorial(n - r), math.factorial(n + 1))
    base = coverage_level(n, r, tau, side)
    return base + (slack if side is Side.ONE_SIDED_UPPER else 2 * slack)


def level_label(level: Fraction | float | None) -> str:
    """Whole-percent label, rounding half up on the exact value."""
    if level is None:
        return "not identified"
    pct = as_fraction(level) * 100
    return f"{math.floor(pct + Fraction(1, 2))}%"


@dataclass(frozen=True)
class ForecastInterval:
    lower: float
    upper: float
    tau: float
    side: Side
    n: int
    r: int
    nominal_level: Fraction | None
    excluded_entries: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def level(self) -> float | None:
        return None if self.nominal_level is None else float(self.nominal_level)

    @property
    def label(self) -> str:
        return level_label(self.nominal_level)

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "r": self.r,
            "tau": self.tau,
            "side": self.side.value,
            "level_exact": None if self.nominal_level is None else f"{self.nominal_level.numerator}/{self.nominal_level.denominator}",
            "level": self.level,
            "level_label": self.label,
            "lower": self.lower,
            "upper": self.upper,
            "excluded_entries": self.excluded_entries,
        }
        out.update(self.extra)
        return out


def empirical(tensor: TransferErrorTensor) -> WeightedEmpirical:
    """Uniform distribution over the valid entries of ``tensor``."""
    values = tensor.valid_values()
    if len(values) == 0:
        raise ValueError("tensor has no valid entries")
    return WeightedEmpirical.uniform(values)


def interval_from(dist: WeightedEmpirical, tau, side) -> tuple[float, float]:
    side = Side.parse(side)
    upper = upper_quantile(dist, tau)
    if side is Side.ONE_SIDED_UPPER:
        return -math.inf, upper
    return lower_quantile(dist, 1 - as_fraction(tau)), upper


def forecast_interval(tensor: TransferErrorTensor, tau, side) -> ForecastInterval:
    """Pooled-quantile forecast interval for the transfer error on a new domain.

    Raises:
        ValueError: if the two-sided level is not positive.
    """
    side = Side.parse(side)
    level = coverage_level(tensor.n, tensor.r, tau, side)
    if level <= 0:
        raise ValueError(f"two-sided level {float(level):.4f} <= 0; increase tau or the number of domains")
    lower, upper = interval_from(empirical(tensor), tau, side)
    return ForecastInterval(lower, upper, float(tau), side, tensor.n, tensor.r, level, tensor.excluded, provenance(tensor))


def provenance(tensor: TransferErrorTensor) -> dict:
    """Measure and rule recorded on ``tensor``, for interval reports."""
    return {"measure": tensor.info.get("measure"), "rule": tensor.info.get("rule")}
