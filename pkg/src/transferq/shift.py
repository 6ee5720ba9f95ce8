"""Forecast intervals when target domains are not exchangeable with training domains.

Target domains are reweighted by a likelihood ratio ``omega``.  With explicit
weights the pooled distribution simply reweights atoms by target.  With
only a bound ``1/Gamma <= omega <= Gamma`` the worst case over the box is
computed exactly from per-target running counts of the sorted tensor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .errors import TensorError
from .intervals import (
    provenance,
    ForecastInterval,
    Side,
    WeightedEmpirical,
    as_fraction,
    coverage_level,
    forecast_interval,
    interval_from,
    upper_quantile,
)
from .transfer import TransferErrorTensor, per_target_count

CDF_TOL = 1e-12


def default_gamma_grid() -> list[float]:
    """``100 / i`` for ``i = 1..100`` in increasing order, then infinity."""
    return sorted(100.0 / i for i in range(1, 101)) + [math.inf]


def _weight_vector(weights, ids: Sequence[str]) -> np.ndarray:
    if isinstance(weights, Mapping):
        missing = [i for i in ids if i not in weights]
        if missing:
            raise ValueError(f"no weight for domains {missing}")
        w = np.array([float(weights[i]) for i in ids])
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
        if len(w) != len(ids):
            raise ValueError(f"expected {len(ids)} weights, got {len(w)}")
    if not (np.isfinite(w).all() and (w > 0).all()):
        raise ValueError("weights must be positive and finite")
    return w


def domain_weights(weights, n: int, r: int) -> np.ndarray:
    """Per-target atom weight ``(n-r-1)!/(n-1)! * omega_d / sum(omega)``.

    ``weights`` is a sequence of ``n`` positive numbers; each target owns
    ``(n-1)!/(n-r-1)!`` tuples, so the atoms carry total mass 1.
    """
    w = _weight_vector(weights, [str(i) for i in range(n)])
    return w / w.sum() / per_target_count(n, r)


def weighted_distribution(tensor: TransferErrorTensor, weights) -> WeightedEmpirical:
    tensor.require_complete("a weighted distribution")
    w = _weight_vector(weights, tensor.ids)
    W = w / w.sum() / per_target_count(tensor.n, tensor.r)
    return WeightedEmpirical(tensor.values, W[tensor.targets])


def gamma_level(n: int, r: int, tau, gamma, side) -> Fraction:
    """Coverage guaranteed for every likelihood ratio within ``[1/gamma, gamma]``."""
    side = Side.parse(side)
    t = as_fraction(tau)
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if math.isinf(gamma):
        one = Fraction(0)
    else:
        g = as_fraction(gamma)
        one = t * Fraction(n - r) / (n + g * g)
    return one if side is Side.ONE_SIDED_UPPER else 2 * one - 1


def weighted_forecast_interval(
    tensor: TransferErrorTensor, weights, tau, side, gamma: float | None = None
) -> ForecastInterval:
    """Forecast interval from the target-reweighted pooled distribution.

    The level is reported when ``weights`` are constant (then the interval is
    the unweighted one) or when a bound ``gamma`` on the weights is supplied;
    otherwise it is left unidentified.
    """
    side = Side.parse(side)
    w = _weight_vector(weights, tensor.ids)
    if (w == w[0]).all():
        out = forecast_interval(tensor, tau, side)
        if gamma is None:
            return out
    dist = weighted_distribution(tensor, w)
    lower, upper = interval_from(dist, tau, side)
    level = None
    if gamma is not None:
        ratio = w.max() / w.min()
        if ratio > gamma * gamma * (1 + 1e-12):
            raise ValueError(f"weights span a ratio {ratio:.4g} wider than gamma^2")
        level = gamma_level(tensor.n, tensor.r, tau, gamma, side)
    elif (w == w[0]).all():
        level = coverage_level(tensor.n, tensor.r, tau, side)
    extra = dict(provenance(tensor), weighted=True, gamma=gamma)
    return ForecastInterval(lower, upper, float(tau), side, tensor.n, tensor.r, level, tensor.excluded, extra)


@dataclass(frozen=True, eq=False)
class SortedTensorView:
    """Tensor values sorted ascending with the target of each sorted entry.

    Ties are ordered by target id, then training ids, so the order does not
    depend on tuple enumeration.
    """

    values: np.ndarray
    targets: np.ndarray
    n: int
    r: int

    @classmethod
    def from_tensor(cls, tensor: TransferErrorTensor) -> "SortedTensorView":
        tensor.require_complete("the worst-case analysis")
        rank = np.empty(tensor.n, dtype=np.int64)
        rank[np.argsort(np.array(tensor.ids), kind="stable")] = np.arange(tensor.n)
        ranked = rank[tensor.tuples]
        keys = [ranked[:, i] for i in range(tensor.r - 1, -1, -1)] + [ranked[:, -1], tensor.values]
        order = np.lexsort(keys)
        return cls(tensor.values[order], tensor.tuples[order, -1], tensor.n, tensor.r)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def per_target(self) -> int:
        return per_target_count(self.n, self.r)

    def counts(self, j: int) -> np.ndarray:
        """Running target counts after the ``j`` smallest entries."""
        return np.bincount(self.targets[:j], minlength=self.n)

    def count_rows(self, start: int, stop: int) -> np.ndarray:
        """Running counts for ``j = start+1 .. stop`` as rows."""
        base = self.counts(start)
        onehot = np.zeros((stop - start, self.n), dtype=np.int64)
        onehot[np.arange(stop - start), self.targets[start:stop]] = 1
        return base[None, :] + np.cumsum(onehot, axis=0)


def worst_case_counts(psi: np.ndarray, gamma: float) -> np.ndarray:
    """Smallest weighted count ``min_w w.psi / mean(w)`` over ``w`` in the gamma box, per row.

    Rows of ``psi`` are running target counts summing to ``j``.  Equals
    ``j/n`` at ``gamma = 1`` and the smallest coordinate at ``gamma = inf``.
    """
    psi = np.atleast_2d(psi).astype(float)
    n = psi.shape[1]
    j = psi.sum(axis=1)
    if gamma == 1:
        return j / n
    srt = np.sort(psi, axis=1)
    if math.isinf(gamma):
        return srt[:, 0]
    k = np.arange(1, n + 1)
    avg = np.cumsum(srt, axis=1) / k
    damp = 1.0 / (1.0 + n / (k * (gamma * gamma - 1.0)))
    return j / n + np.minimum(((avg - (j / n)[:, None]) * damp).min(axis=1), 0.0)


def _check_gamma(gamma) -> float:
    gamma = float(gamma)
    if not gamma >= 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    return gamma


def worst_case_index(view: SortedTensorView, tau, gamma: float) -> int:
    """1-based rank of the worst-case upper quantile in ``view``."""
    t = as_fraction(tau)
    if not 0 < t <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    gamma = _check_gamma(gamma)
    J, c = view.size, view.per_target
    first = math.ceil(t * J)
    if gamma == 1:
        return first
    threshold = float(t) - CDF_TOL

    def reached(j: int) -> bool:
        return worst_case_counts(view.counts(j)[None, :], gamma)[0] / c >= threshold

    lo, hi = first, J
    if not reached(hi):
        raise ArithmeticError("worst-case count never reaches the threshold")
    while lo < hi:
        mid = (lo + hi) // 2
        if reached(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def worst_case_upper_bound(tensor: TransferErrorTensor | SortedTensorView, tau, gamma: float) -> float:
    """Largest upper ``tau``-quantile over all target reweightings with ratio bound ``gamma``."""
    view = tensor if isinstance(tensor, SortedTensorView) else SortedTensorView.from_tensor(tensor)
    return float(view.values[worst_case_index(view, tau, gamma) - 1])


def worst_case_cdf(view: SortedTensorView, gamma: float, block: int = 50_000) -> np.ndarray:
    """Worst-case cumulative mass after each sorted entry, shape ``(J,)``."""
    gamma = _check_gamma(gamma)
    J, c = view.size, view.per_target
    if gamma == 1:
        return np.arange(1, J + 1) / J
    out = np.empty(J)
    for start in range(0, J, block):
        stop = min(J, start + block)
        out[start:stop] = worst_case_counts(view.count_rows(start, stop), gamma) / c
    return out


def worst_case_curve(tensor: TransferErrorTensor | SortedTensorView, gamma: float) -> WeightedEmpirical:
    """Distribution whose upper quantiles are the worst-case bounds at every ``tau``.

    Atom ``j`` carries the increment of the worst-case cumulative mass;
    atoms with zero increment are dropped since they never set a quantile.
    """
    view = tensor if isinstance(tensor, SortedTensorView) else SortedTensorView.from_tensor(tensor)
    if _check_gamma(gamma) == 1:
        return WeightedEmpirical.uniform(view.values)
    cdf = worst_case_cdf(view, gamma)
    inc = np.diff(np.concatenate([[0.0], cdf]))
    keep = inc > 0
    return WeightedEmpirical(view.values[keep], inc[keep])


def _check_pair(a: TransferErrorTensor, b: TransferErrorTensor) -> None:
    if a.n != b.n or a.r != b.r:
        raise TensorError(f"tensors differ in shape: (n={a.n}, r={a.r}) vs (n={b.n}, r={b.r})")
    ka = a.info.get("measure", {}).get("kind")
    kb = b.info.get("measure", {}).get("kind")
    if ka and kb and ka != kb:
        raise TensorError(f"tensors use different measures: {ka} vs {kb}")


@dataclass(frozen=True)
class WorstCaseReport:
    tau: float
    gamma_grid: tuple[float, ...]
    bounds_a: tuple[float, ...]
    bounds_b: tuple[float, ...]
    dominates_on_grid: bool
    violations: tuple[float, ...]
    crossings: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "mode": "worst_case",
            "dominates": self.dominates_on_grid,
            "gamma_grid": list(self.gamma_grid),
            "upper_a": list(self.bounds_a),
            "upper_b": list(self.bounds_b),
            "violations": list(self.violations),
            "crossings": list(self.crossings),
        }


def worst_case_dominates(
    tensor_a: TransferErrorTensor, tensor_b: TransferErrorTensor, tau, gamma_grid: Sequence[float] | None = None
) -> WorstCaseReport:
    """Check ``worst-case bound of A <= that of B`` at each gamma on the grid.

    ``crossings`` lists grid values where the comparison flips relative to the
    previous grid point.
    """
    _check_pair(tensor_a, tensor_b)
    grid = tuple(default_gamma_grid() if gamma_grid is None else sorted(float(g) for g in gamma_grid))
    va, vb = SortedTensorView.from_tensor(tensor_a), SortedTensorView.from_tensor(tensor_b)
    ea = tuple(worst_case_upper_bound(va, tau, g) for g in grid)
    eb = tuple(worst_case_upper_bound(vb, tau, g) for g in grid)
    ok = [x <= y for x, y in zip(ea, eb)]
    violations = tuple(g for g, good in zip(grid, ok) if not good)
    crossings = tuple(grid[i] for i in range(1, len(grid)) if ok[i] != ok[i - 1])
    return WorstCaseReport(float(tau), grid, ea, eb, all(ok), violations, crossings)


def lp_min_vertex(a: np.ndarray, b: np.ndarray, tau: float) -> tuple[float, np.ndarray] | None:
    """Minimize ``v.a`` over the simplex subject to ``v.b >= tau``.

    The feasible set is a simplex cut by one halfspace, so an optimum sits on
    a vertex with at most two positive coordinates: a corner ``e_i`` with
    ``b_i >= tau`` or the point on edge ``(i, k)`` where ``v.b = tau`` with
    ``b_i > tau > b_k``.  Returns ``None`` when infeasible.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(a)
    best_val, best_v = math.inf, None
    corners = np.flatnonzero(b >= tau)
    if len(corners) == 0:
        return None
    i = corners[np.argmin(a[corners])]
    best_val = float(a[i])
    best_v = np.zeros(n)
    best_v[i] = 1.0
    hi = np.flatnonzero(b > tau)
    lo = np.flatnonzero(b < tau)
    if len(hi) and len(lo):
        bi, bk = b[hi][:, None], b[lo][None, :]
        vi = (tau - bk) / (bi - bk)
        vals = vi * a[hi][:, None] + (1 - vi) * a[lo][None, :]
        p, q = np.unravel_index(np.argmin(vals), vals.shape)
        if vals[p, q] < best_val:
            best_val = float(vals[p, q])
            best_v = np.zeros(n)
            best_v[hi[p]] = vi[p, q]
            best_v[lo[q]] = 1 - vi[p, q]
    return best_val, best_v


def _weighted_upper(view_values, view_targets, w, tau) -> float:
    return upper_quantile(WeightedEmpirical(view_values, w[view_targets]), tau)


@dataclass(frozen=True)
class EverywhereReport:
    tau: float
    dominates: bool
    violated_j: tuple[int, ...] = ()
    witness_omega: tuple[float, ...] | None = None
    witness_strictly_positive: bool = False
    checked: int = 0
    pruned: int = 0
    infeasible: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "mode": "everywhere",
            "dominates": self.dominates,
            "violated_j": list(self.violated_j),
            "witness_omega": None if self.witness_omega is None else list(self.witness_omega),
            "witness_strictly_positive": self.witness_strictly_positive,
            "checked": self.checked,
            "pruned": self.pruned,
            "infeasible": self.infeasible,
        }


def _positive_witness(va, vb, v, tau) -> np.ndarray | None:
    """Nudge a violating vertex into the open orthant and confirm the violation directly."""
    n = len(v)
    for eps in (1e-3, 1e-5, 1e-7, 1e-9):
        for target in [None] + list(np.argsort(-v)):
            base = v.copy()
            if target is not None:
                base = (1 - eps) * base
                base[target] += eps
            w = (1 - eps) * base + eps / n
            if (w <= 0).any():
                continue
            if _weighted_upper(va.values, va.targets, w, tau) > _weighted_upper(vb.values, vb.targets, w, tau):
                return w
    return None


def everywhere_dominates(tensor_a: TransferErrorTensor, tensor_b: TransferErrorTensor, tau) -> EverywhereReport:
    """Does A's reweighted upper quantile stay at or below B's for every target reweighting?

    For each rank ``j`` of B, a violation needs weights putting mass at least
    ``tau`` on B's ``j`` smallest entries but less than ``tau`` on A's entries
    not exceeding B's ``j``-th value.  Each such check is a small linear
    program solved by vertex enumeration.
    """
    _check_pair(tensor_a, tensor_b)
    t = float(tau)
    if not 0 < t <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    va, vb = SortedTensorView.from_tensor(tensor_a), SortedTensorView.from_tensor(tensor_b)
    J, c = va.size, va.per_target
    # m(j) - 1 = number of A entries <= B's j-th value
    below = np.searchsorted(va.values, vb.values, side="right")
    start = max(1, math.ceil(as_fraction(tau) * c))
    checked = pruned = infeasible = 0
    violated, witness_v = [], None
    for j in range(start, J + 1):
        m_minus_1 = int(below[j - 1])
        if m_minus_1 >= J:
            continue  # no A entry exceeds B's j-th value
        a = va.counts(m_minus_1) / c
        b = vb.counts(j) / c
        checked += 1
        if (a >= b).all():
            pruned += 1
            continue
        sol = lp_min_vertex(a, b, t)
        if sol is None:
            infeasible += 1
            continue
        if sol[0] < t - CDF_TOL:
            violated.append(j)
            if witness_v is None:
                witness_v = sol[1]
    if not violated:
        return EverywhereReport(t, True, checked=checked, pruned=pruned, infeasible=infeasible)
    w = _positive_witness(va, vb, witness_v, t)
    positive = w is not None
    if w is None:
        w = witness_v
    w = w / w[w > 0].min()
    return EverywhereReport(t, False, tuple(violated), tuple(float(x) for x in w), positive, checked, pruned, infeasible)


def brute_force_worst_case(tensor: TransferErrorTensor, tau, gamma: float) -> float:
    """Largest weighted upper quantile over the corners ``{1/gamma, gamma}^n`` (small ``n`` only)."""
    view = SortedTensorView.from_tensor(tensor)
    best = -math.inf
    for corner in itertools.product((1.0 / gamma, gamma), repeat=view.n):
        w = np.array(corner)
        best = max(best, _weighted_upper(view.values, view.targets, w / w.sum() / view.per_target, tau))
    return best
