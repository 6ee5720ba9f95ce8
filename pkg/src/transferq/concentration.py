"""Tail bounds for U-statistics and confidence intervals for transfer-error quantiles and means.

The pooled transfer error and the fraction of entries below a level are both
U-statistics of degree ``k = r + 1`` over the ``n`` domains.  ``bound_B``
bounds their lower tail; the intervals invert it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp, xlogy

from .errors import TensorError
from .transfer import TransferErrorTensor

LAMBDA_GRID = np.geomspace(1e-6, 50.0, 200)


def kl_bernoulli(x: float, y: float) -> float:
    """``x log(x/y) + (1-x) log((1-x)/(1-y))`` with ``0 log 0 = 0``."""
    return float(xlogy(x, x) - xlogy(x, y) + xlogy(1 - x, 1 - x) - xlogy(1 - x, 1 - y))


def hoeffding_term(n: int, k: int, x: float, y: float) -> float:
    m = n // k
    return math.exp(-m * kl_bernoulli(min(x, y), y))


def binomial_log_cdf(m: int, y: float, upto: int) -> float:
    """``log P(Binom(m, y) <= upto)`` by summing point masses in log space."""
    if upto < 0:
        return -math.inf
    if upto >= m:
        return 0.0
    i = np.arange(upto + 1)
    logpmf = gammaln(m + 1) - gammaln(i + 1) - gammaln(m - i + 1) + xlogy(i, y) + xlogy(m - i, 1 - y)
    return float(min(logsumexp(logpmf), 0.0))


def bentkus_term(n: int, k: int, x: float, y: float) -> float:
    m = n // k
    # round before ceil so that m*x landing a hair above an integer does not jump a step
    return math.e * math.exp(binomial_log_cdf(m, y, math.ceil(round(m * x, 12))))


def _g(lam):
    return (np.expm1(lam) - lam) / lam


def _maurer_exponent(lam, n: int, k: int, x: float, y: float):
    return (n * lam / k) * (x - lam / (lam + k * _g(lam)) * y)


def maurer_term(n: int, k: int, x: float, y: float) -> float:
    """Exponentiated infimum over ``lambda > 0``; equals 1 outside ``0 < x < y``."""
    if not 0 < x < y:
        return 1.0
    vals = _maurer_exponent(LAMBDA_GRID, n, k, x, y)
    i = int(np.argmin(vals))
    best = float(vals[i])
    if 0 < i < len(LAMBDA_GRID) - 1:
        f = lambda lam: float(_maurer_exponent(lam, n, k, x, y))  # noqa: E731
        res = minimize_scalar(
            f,
            bracket=(LAMBDA_GRID[i - 1], LAMBDA_GRID[i], LAMBDA_GRID[i + 1]),
            method="golden",
            options={"xtol": 1e-10},
        )
        if LAMBDA_GRID[i - 1] <= res.x <= LAMBDA_GRID[i + 1]:
            best = min(best, float(res.fun))
    return math.exp(min(best, 0.0))


@dataclass(frozen=True)
class BoundTerms:
    b1: float
    b2: float
    b3: float

    @property
    def value(self) -> float:
        return min(self.b1, self.b2, self.b3)

    def to_dict(self) -> dict:
        return {"b1": self.b1, "b2": self.b2, "b3": self.b3}


def bound_terms(n: int, k: int, x: float, y: float) -> BoundTerms:
    if not (n >= k >= 1):
        raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")
    if not 0 <= x <= 1:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if not 0 < y < 1:
        raise ValueError(f"y must be in (0, 1), got {y}")
    return BoundTerms(hoeffding_term(n, k, x, y), bentkus_term(n, k, x, y), maurer_term(n, k, x, y))


def bound_B(n: int, k: int, x: float, y: float) -> float:
    """Upper bound on ``P(U <= x)`` for a degree-``k`` U-statistic in [0, 1] with mean ``y``."""
    return bound_terms(n, k, x, y).value


def pooled_u_statistic(tensor: TransferErrorTensor) -> float:
    """Average of all tensor entries."""
    tensor.require_complete("the pooled U-statistic")
    return float(np.mean(tensor.values))


def indicator_fraction(tensor: TransferErrorTensor, q: float) -> float:
    """Fraction of tensor entries at or below ``q``."""
    tensor.require_complete("the indicator fraction")
    return float(np.count_nonzero(tensor.values <= q)) / tensor.size


class CiSide(str, enum.Enum):
    TWO_SIDED = "two_sided"
    UPPER = "upper"
    LOWER = "lower"


def lower_threshold(n: int, k: int, beta: float, alpha: float, iterations: int = 60) -> float:
    """``inf{u : B(u; beta) >= alpha}`` by bisection, rounded toward smaller ``u``."""
    if bound_B(n, k, 0.0, beta) >= alpha:
        return 0.0
    lo, hi = 0.0, beta  # B(beta; beta) = 1
    for _ in range(iterations):
        mid = (lo + hi) / 2
        if bound_B(n, k, mid, beta) >= alpha:
            hi = mid
        else:
            lo = mid
    return lo


@dataclass(frozen=True)
class ConfidenceInterval:
    target: str
    alpha: float
    side: CiSide
    lower: float
    upper: float
    beta: float | None = None
    statistic: float | None = None
    terms: BoundTerms | None = None

    def to_dict(self) -> dict:
        out = {"target": self.target, "alpha": self.alpha, "side": self.side.value, "lower": self.lower, "upper": self.upper}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.statistic is not None:
            out["statistic"] = self.statistic
        out["bound_terms"] = None if self.terms is None else self.terms.to_dict()
        return out


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")


def quantile_lower(sorted_values: np.ndarray, u_plus: float) -> float:
    """Smallest entry whose indicator fraction reaches ``u_plus``; ``-inf`` if every real does."""
    if u_plus <= 0:
        return -math.inf
    J = len(sorted_values)
    need = math.ceil(u_plus * J - 1e-9)  # entries at or below q
    need = max(need, 1)
    return float(sorted_values[need - 1]) if need <= J else math.inf


def quantile_upper(sorted_values: np.ndarray, u_minus: float) -> float:
    """Supremum of levels whose indicator fraction stays at or below ``u_minus``."""
    J = len(sorted_values)
    allowed = math.floor(u_minus * J + 1e-9)  # entries that may sit at or below q
    if allowed >= J:
        return math.inf
    return float(sorted_values[allowed])


def quantile_ci(tensor: TransferErrorTensor, beta: float, alpha: float, side=CiSide.TWO_SIDED) -> ConfidenceInterval:
    """Confidence interval for the ``beta`` quantile of the transfer-error distribution.

    Two-sided intervals spend ``alpha/2`` on each side.
    """
    tensor.require_complete("quantile confidence intervals")
    if not 0 < beta < 1:
        raise ValueError(f"beta must be in (0, 1), got {beta}")
    _check_alpha(alpha)
    side = CiSide(side)
    n, k = tensor.n, tensor.r + 1
    a = alpha / 2 if side is CiSide.TWO_SIDED else alpha
    values = np.sort(tensor.values)
    lower, upper = -math.inf, math.inf
    if side in (CiSide.TWO_SIDED, CiSide.LOWER):
        lower = quantile_lower(values, lower_threshold(n, k, beta, a))
    if side in (CiSide.TWO_SIDED, CiSide.UPPER):
        upper = quantile_upper(values, 1.0 - lower_threshold(n, k, 1.0 - beta, a))
    return ConfidenceInterval("quantile", alpha, side, lower, upper, beta=beta)


def upper_mean(n: int, k: int, u: float, alpha: float, tol: float = 1e-8) -> float:
    """``sup{mu : B(u; mu) >= alpha}`` by bisection, rounded toward larger ``mu``."""
    if alpha >= 1 or u >= 1:
        return min(u, 1.0) if alpha >= 1 else 1.0
    lo, hi = u, 1.0
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if bound_B(n, k, u, mid) >= alpha:
            lo = mid
        else:
            hi = mid
    return hi


def mean_ci(tensor: TransferErrorTensor, alpha: float, side=CiSide.TWO_SIDED) -> ConfidenceInterval:
    """Confidence interval for the expected transfer error; entries must lie in [0, 1]."""
    tensor.require_complete("mean confidence intervals")
    bad = np.flatnonzero((tensor.values < 0) | (tensor.values > 1))
    if len(bad):
        j = int(bad[0])
        raise TensorError(f"entry {j} has value {tensor.values[j]!r} outside [0, 1]; rescale first")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    side = CiSide(side)
    n, k = tensor.n, tensor.r + 1
    u = pooled_u_statistic(tensor)
    a = alpha / 2 if side is CiSide.TWO_SIDED else alpha
    lower, upper, terms = 0.0, 1.0, None
    if side in (CiSide.TWO_SIDED, CiSide.UPPER):
        upper = upper_mean(n, k, u, a)
        if 0 < upper < 1:
            terms = bound_terms(n, k, u, upper)
    if side in (CiSide.TWO_SIDED, CiSide.LOWER):
        lower = 1.0 - upper_mean(n, k, 1.0 - u, a)
    return ConfidenceInterval("mean", alpha, side, max(lower, 0.0), min(upper, 1.0), statistic=u, terms=terms)
