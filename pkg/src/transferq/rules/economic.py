"""Certainty-equivalent models for binary lotteries and their ERM fits.

Two parametric families are provided:

* ``EuRule``: expected utility with CRRA curvature ``eta``.
* ``CptRule``: cumulative prospect theory with power value function
  (``alpha`` on gains, ``beta`` on losses) and the two-parameter weighting
  function ``w(p) = delta p^gamma / (delta p^gamma + (1 - p)^gamma)``.

Predictions are vectorized over parameter vectors and lotteries, which the
ERM grid search relies on.  Undefined predictions come back as NaN and are
treated as infinite loss during fitting.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..core import MSE, DomainSample, LossSpec
from ..errors import FitError
from .base import as_features, encode, fmt_real

CPT_PARAMS = ("alpha", "beta", "gamma", "delta")
CPT_VARIANTS: dict[str, tuple[str, ...]] = {
    "g": ("gamma",),
    "ab": ("alpha", "beta"),
    "dg": ("gamma", "delta"),
    "abg": ("alpha", "beta", "gamma"),
    "abdg": ("alpha", "beta", "gamma", "delta"),
}
# Grid box per parameter; refinement may leave it only where the parameter is unbounded.
GRID_BOX = {"eta": (0.0, 2.0), "alpha": (0.0, 1.0), "beta": (0.0, 1.0), "gamma": (0.0, 1.0), "delta": (0.0, 5.0)}
HARD_BOUNDS = {"eta": (0.0, None), "alpha": (0.0, 1.0), "beta": (0.0, 1.0), "gamma": (0.0, 1.0), "delta": (0.0, None)}


def eu_certainty_equivalent(eta, z1, z2, p) -> np.ndarray:
    """CRRA certainty equivalent, broadcasting over all arguments.

    For ``eta < 1`` the utility is the odd power ``sign(z)|z|^(1-eta)``, which
    agrees with the textbook CRRA form on same-sign lotteries and stays
    invertible across zero.  For ``eta >= 1`` every prize drawn with positive
    probability must be nonzero and share one sign; otherwise NaN.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.size == 1:
        # one parameter value: evaluate only its branch
        z1, z2, p = (np.asarray(a, dtype=float) for a in (z1, z2, p))
        shape = np.broadcast_shapes(eta.shape, z1.shape, z2.shape, p.shape)
        e = eta.reshape(-1)[0]
        branch = _eu_below_one if e < 1.0 else _eu_at_least_one
        return np.broadcast_to(branch(e, z1, z2, p), shape).copy()
    eta, z1, z2, p = np.broadcast_arrays(eta, *(np.asarray(a, dtype=float) for a in (z1, z2, p)))
    return np.where(eta < 1.0, _eu_below_one(eta, z1, z2, p), _eu_at_least_one(eta, z1, z2, p))


def _eu_below_one(eta, z1, z2, p):
    a = 1.0 - eta
    with np.errstate(all="ignore"):
        u = p * np.sign(z1) * np.abs(z1) ** a + (1.0 - p) * np.sign(z2) * np.abs(z2) ** a
        return np.sign(u) * np.abs(u) ** (1.0 / a)


def _eu_at_least_one(eta, z1, z2, p):
    """Power mean (geometric mean at eta = 1) of |prizes|, signed; NaN when undefined."""
    q = 1.0 - p
    a = 1.0 - eta
    with np.errstate(all="ignore"):
        live1, live2 = p > 0, q > 0
        s1 = np.where(live1, np.sign(z1), 0.0)
        s2 = np.where(live2, np.sign(z2), 0.0)
        sign = np.where(live1, s1, s2)
        ok = (~live1 | (s1 != 0)) & (~live2 | (s2 != 0)) & (~(live1 & live2) | (s1 == s2))
        m1, m2 = np.abs(z1), np.abs(z2)
        log_mean = np.where(live1, p * np.log(m1), 0.0) + np.where(live2, q * np.log(m2), 0.0)
        geo = np.exp(log_mean)
        pow_mean = (np.where(live1, p * m1**a, 0.0) + np.where(live2, q * m2**a, 0.0)) ** (1.0 / a)
        high = sign * np.where(eta == 1.0, geo, pow_mean)
        return np.where(ok, high, np.nan)


def cpt_value(z, alpha, beta) -> np.ndarray:
    with np.errstate(all="ignore"):
        return np.where(z > 0, np.abs(z) ** alpha, np.where(z < 0, -(np.abs(z) ** beta), 0.0))


def cpt_weight(p, gamma, delta) -> np.ndarray:
    """Probability weight; NaN at the 0/0 corner ``delta = 0, p = 1``."""
    with np.errstate(all="ignore"):
        num = delta * p**gamma
        return num / (num + (1.0 - p) ** gamma)


def cpt_certainty_equivalent(alpha, beta, gamma, delta, z1, z2, p) -> np.ndarray:
    """CPT certainty equivalent, broadcasting over all arguments.

    A zero curvature exponent has no inverse, so ``alpha = 0`` with a positive
    prize (or ``beta = 0`` with a negative prize) yields NaN.
    """
    args = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, beta, gamma, delta, z1, z2, p)))
    alpha, beta, gamma, delta, z1, z2, p = args
    w = cpt_weight(p, gamma, delta)
    with np.errstate(all="ignore"):
        u = w * cpt_value(z1, alpha, beta) + (1.0 - w) * cpt_value(z2, alpha, beta)
        ce = np.where(u > 0, np.abs(u) ** (1.0 / alpha), np.where(u < 0, -(np.abs(u) ** (1.0 / beta)), 0.0))
    degenerate = ((alpha == 0) & ((z1 > 0) | (z2 > 0))) | ((beta == 0) & ((z1 < 0) | (z2 < 0)))
    return np.where(degenerate, np.nan, ce)


@dataclass(frozen=True)
class EuRule:
    eta: float
    kind = "eu"

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")

    def predict(self, X) -> np.ndarray:
        X = as_features(X)
        return eu_certainty_equivalent(self.eta, X[:, 0], X[:, 1], X[:, 2])

    def to_text(self) -> str:
        return encode(self.kind, {"eta": fmt_real(self.eta)})


@dataclass(frozen=True)
class CptRule:
    """CPT prediction rule; components not free under ``variant`` must equal 1."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    variant: str = "abdg"
    kind = "cpt"

    def __post_init__(self):
        if self.variant not in CPT_VARIANTS:
            raise ValueError(f"unknown CPT variant {self.variant!r}")
        free = CPT_VARIANTS[self.variant]
        for name in CPT_PARAMS:
            value = getattr(self, name)
            if name not in free and value != 1.0:
                raise ValueError(f"{name} is fixed at 1 in variant {self.variant!r}, got {value}")
            lo, hi = HARD_BOUNDS[name]
            if not (value >= lo and (hi is None or value <= hi)):
                raise ValueError(f"{name}={value} outside its admissible range")

    @property
    def params(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.delta)

    def predict(self, X) -> np.ndarray:
        X = as_features(X)
        return cpt_certainty_equivalent(*self.params, X[:, 0], X[:, 1], X[:, 2])

    def to_text(self) -> str:
        fields = {name: fmt_real(getattr(self, name)) for name in CPT_PARAMS}
        fields["variant"] = self.variant
        return encode(self.kind, fields)


@dataclass(frozen=True)
class FitConfig:
    """Grid-then-refine settings for ERM fits.

    Attributes:
        resolution: grid points per free parameter over its box.
        tolerance: Nelder-Mead ``xatol``/``fatol``.
        max_iter: Nelder-Mead iteration cap per start.
        restarts: number of best grid points used as refinement starts.
        tie_break: only ``"lexicographic_smallest"`` is supported.
        chunk: parameter vectors evaluated per vectorized grid block.
    """

    resolution: int = 25
    tolerance: float = 1e-10
    max_iter: int = 2000
    restarts: int = 3
    tie_break: str = "lexicographic_smallest"
    chunk: int = 4000

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("resolution must be >= 2")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tie_break != "lexicographic_smallest":
            raise ValueError(f"unsupported tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class ErmFit:
    rule: EuRule | CptRule
    objective: float
    grid_best_objective: float
    pinned: tuple[str, ...] = ()
    evaluations: int = field(default=0, compare=False)


class _Training:
    """Training samples compressed to unique lotteries with per-sample sufficient statistics."""

    def __init__(self, samples: list[DomainSample]):
        if not samples or sum(len(s) for s in samples) == 0:
            raise FitError("no training observations")
        X = np.concatenate([s.X for s in samples])
        self.y = np.concatenate([s.y for s in samples])
        self.owner = np.repeat(np.arange(len(samples)), [len(s) for s in samples])
        self.lotteries, self.index = np.unique(X, axis=0, return_inverse=True)
        self.index = self.index.reshape(-1)
        n_s, n_u = len(samples), len(self.lotteries)
        self.size = np.array([len(s) for s in samples], dtype=float)
        self.count = np.zeros((n_s, n_u))
        self.sum_y = np.zeros((n_s, n_u))
        np.add.at(self.count, (self.owner, self.index), 1.0)
        np.add.at(self.sum_y, (self.owner, self.index), self.y)
        self.sum_y2 = np.bincount(self.owner, weights=self.y**2, minlength=n_s)
        self.has_gains = bool((X[:, :2] > 0).any())
        self.has_losses = bool((X[:, :2] < 0).any())

    @property
    def n_samples(self) -> int:
        return len(self.size)

    def predict(self, family: str, params: np.ndarray) -> np.ndarray:
        """Predictions, shape (P, U), for full parameter rows ``params`` (P, d)."""
        z1, z2, p = (self.lotteries[:, j][None, :] for j in range(3))
        if family == "eu":
            return eu_certainty_equivalent(params[:, :1], z1, z2, p)
        cols = [params[:, j : j + 1] for j in range(4)]
        return cpt_certainty_equivalent(*cols, z1, z2, p)

    def sample_mse_batch(self, pred: np.ndarray) -> np.ndarray:
        """Per-sample MSE (P, S) from sufficient statistics; rows with any NaN become inf."""
        bad = ~np.isfinite(pred).all(axis=1)
        pred = np.where(np.isfinite(pred), pred, 0.0)
        sse = (pred**2) @ self.count.T - 2.0 * pred @ self.sum_y.T + self.sum_y2[None, :]
        mse = np.maximum(sse, 0.0) / self.size[None, :]
        mse[bad] = np.inf
        return mse

    def sample_mse_exact(self, pred_unique: np.ndarray) -> np.ndarray:
        """Per-sample MSE (S,) computed from residuals, for one parameter vector."""
        if not np.isfinite(pred_unique).all():
            return np.full(self.n_samples, np.inf)
        resid = pred_unique[self.index] - self.y
        return np.bincount(self.owner, weights=resid**2, minlength=self.n_samples) / self.size


def _aggregate(mse: np.ndarray, spec: LossSpec) -> np.ndarray:
    """Average over samples (last axis) of the transformed per-sample MSE."""
    with np.errstate(invalid="ignore"):
        return np.mean(spec.apply(mse), axis=-1)


def _family_names(family: str) -> tuple[str, tuple[str, ...], tuple[str, ...]]:
    """Return (model, all parameter names, free names) for a family string."""
    if family == "eu":
        return "eu", ("eta",), ("eta",)
    variant = family.split("-", 1)[1] if "-" in family else "abdg"
    if not family.startswith("cpt") or variant not in CPT_VARIANTS:
        raise ValueError(f"unknown family {family!r}")
    return "cpt", CPT_PARAMS, CPT_VARIANTS[variant]


def _variant_of(family: str) -> str:
    return family.split("-", 1)[1] if "-" in family else "abdg"


class _Problem:
    """Minimize the sample-averaged loss over ``free`` with the rest held at ``fixed``."""

    def __init__(self, model, names, free, fixed, data: _Training, spec, cfg: FitConfig):
        self.model, self.names, self.free = model, names, tuple(free)
        self.fixed = dict(fixed)
        self.data, self.spec, self.cfg = data, spec, cfg
        self.evaluations = 0

    def full(self, free_values: np.ndarray) -> np.ndarray:
        """Expand (P, k) free values to (P, d) full parameter rows."""
        free_values = np.atleast_2d(free_values)
        out = np.empty((free_values.shape[0], len(self.names)))
        for j, name in enumerate(self.names):
            out[:, j] = free_values[:, self.free.index(name)] if name in self.free else self.fixed[name]
        return out

    def objective(self, free_values) -> float:
        self.evaluations += 1
        x = np.asarray(free_values, dtype=float).reshape(1, -1)
        pred = self.data.predict(self.model, self.full(x))[0]
        return float(_aggregate(self.data.sample_mse_exact(pred), self.spec))

    def grid(self) -> np.ndarray:
        axes = [np.linspace(*GRID_BOX[name], self.cfg.resolution) for name in self.free]
        return np.array(list(itertools.product(*axes)), dtype=float).reshape(-1, len(self.free))

    def grid_mse(self, points: np.ndarray) -> np.ndarray:
        """Per-sample MSE (P, S) on grid points, in vectorized chunks."""
        out = np.empty((len(points), self.data.n_samples))
        for start in range(0, len(points), self.cfg.chunk):
            block = points[start : start + self.cfg.chunk]
            out[start : start + len(block)] = self.data.sample_mse_batch(self.data.predict(self.model, self.full(block)))
        self.evaluations += len(points)
        return out

    def bounds(self):
        return [HARD_BOUNDS[name] for name in self.free]

    def clip(self, x: np.ndarray) -> np.ndarray:
        lo = np.array([b[0] for b in self.bounds()])
        hi = np.array([np.inf if b[1] is None else b[1] for b in self.bounds()])
        return np.clip(x, lo, hi)

    def refine(self, start: np.ndarray, fun=None) -> np.ndarray:
        fun = fun or self.objective
        capped = lambda x: min(fun(x), 1e300)  # noqa: E731
        res = minimize(
            capped,
            start,
            method="Nelder-Mead",
            bounds=self.bounds(),
            options={"xatol": self.cfg.tolerance, "fatol": self.cfg.tolerance, "maxiter": self.cfg.max_iter},
        )
        return self.clip(np.asarray(res.x, dtype=float))


def _select(candidates: list[tuple[np.ndarray, float]]) -> tuple[np.ndarray, float]:
    """Minimum objective, ties (1e-12 relative) broken by the lexicographically smallest vector."""
    best = min(obj for _, obj in candidates)
    if not np.isfinite(best):
        raise FitError("objective undefined at every evaluated parameter")
    tol = 1e-12 * abs(best) + 1e-300
    tied = [(tuple(x), obj) for x, obj in candidates if obj <= best + tol]
    x, obj = min(tied, key=lambda t: t[0])
    return np.array(x), obj


def _solve(problem: _Problem, fun=None, grid_objectives=None) -> tuple[np.ndarray, float, float]:
    """Grid search then Nelder-Mead from the best ``restarts`` grid points."""
    fun = fun or problem.objective
    if not problem.free:
        empty = np.empty(0)
        value = fun(empty)
        if not np.isfinite(value):
            raise FitError("objective undefined at the fixed parameters")
        return empty, value, value
    points = problem.grid()
    if grid_objectives is None:
        grid_objectives = _aggregate(problem.grid_mse(points), problem.spec)
    grid_objectives = np.where(np.isnan(grid_objectives), np.inf, grid_objectives)
    order = np.lexsort((*points.T[::-1], grid_objectives))
    grid_best = float(grid_objectives[order[0]])
    if not np.isfinite(grid_best):
        raise FitError("objective undefined at every grid point")
    candidates = []
    for i in order[: problem.cfg.restarts]:
        if not np.isfinite(grid_objectives[i]):
            break
        start = points[i]
        candidates.append((start, fun(start)))
        x = problem.refine(start, fun)
        candidates.append((x, fun(x)))
    x, obj = _select(candidates)
    return x, obj, grid_best


def _pins(model: str, data: _Training) -> dict[str, float]:
    """Curvature parameters the data cannot identify are fixed at 1."""
    if model != "cpt":
        return {}
    pins = {}
    if not data.has_gains:
        pins["alpha"] = 1.0
    if not data.has_losses:
        pins["beta"] = 1.0
    return pins


def _make_rule(model: str, family: str, names, values: np.ndarray):
    params = dict(zip(names, (float(v) for v in values)))
    if model == "eu":
        return EuRule(params["eta"])
    return CptRule(**params, variant=_variant_of(family))


def fit_erm(family: str, train: list[DomainSample], spec: LossSpec = MSE, cfg: FitConfig = FitConfig()) -> ErmFit:
    """Fit ``family`` (``"eu"`` or ``"cpt-<variant>"``) by empirical risk minimization.

    The objective is the unweighted mean over training samples of the
    per-sample error, so each domain counts once regardless of its size.

    Raises:
        FitError: if every evaluated parameter vector gives an undefined prediction.
    """
    model, names, free = _family_names(family)
    data = _Training(list(train))
    fixed = {name: 1.0 for name in names if name not in free}
    pins = _pins(model, data)
    fixed.update({k: v for k, v in pins.items() if k in free})
    free = tuple(n for n in free if n not in pins)
    problem = _Problem(model, names, free, fixed, data, spec, cfg)
    x, obj, grid_best = _solve(problem)
    values = problem.full(x.reshape(1, -1) if free else np.empty((1, 0)))[0]
    rule = _make_rule(model, family, names, values)
    pinned = tuple(k for k in pins if k in CPT_VARIANTS.get(_variant_of(family), ()))
    return ErmFit(rule, obj, grid_best, pinned, problem.evaluations)


def fit_with_fixed(
    family: str,
    train: list[DomainSample],
    fixed: dict[str, float],
    spec: LossSpec = MSE,
    cfg: FitConfig = FitConfig(),
) -> ErmFit:
    """ERM over the free parameters of ``family`` not listed in ``fixed``."""
    model, names, free = _family_names(family)
    data = _Training(list(train))
    base = {name: 1.0 for name in names if name not in free}
    base.update(fixed)
    pins = {k: v for k, v in _pins(model, data).items() if k in free and k not in fixed}
    base.update(pins)
    rest = tuple(n for n in free if n not in base)
    problem = _Problem(model, names, rest, base, data, spec, cfg)
    x, obj, grid_best = _solve(problem)
    values = problem.full(x.reshape(1, -1) if rest else np.empty((1, 0)))[0]
    return ErmFit(_make_rule(model, family, names, values), obj, grid_best, tuple(pins), problem.evaluations)


@dataclass(frozen=True)
class PartialFit:
    transferred: dict[str, float]
    objective: float
    grid_best_objective: float


def fit_partial(
    family: str,
    transferred: tuple[str, ...],
    train: list[DomainSample],
    spec: LossSpec = MSE,
    cfg: FitConfig = FitConfig(),
) -> PartialFit:
    """Fit the ``transferred`` parameters so that refitting the rest per sample is best on average.

    The objective at a transferred vector is the mean over training samples of
    the minimum, over the remaining free parameters, of that sample's error.
    """
    model, names, free = _family_names(family)
    unknown = set(transferred) - set(free)
    if unknown:
        raise ValueError(f"{sorted(unknown)} are not free in {family!r}")
    data = _Training(list(train))
    fixed = {name: 1.0 for name in names if name not in free}
    pins = {k: v for k, v in _pins(model, data).items() if k in free}
    fixed.update(pins)
    theta = tuple(n for n in free if n in transferred and n not in pins)
    lam = tuple(n for n in free if n not in transferred and n not in pins)
    outer = _Problem(model, names, theta, fixed, data, spec, cfg)
    samples = list(train)

    def profile(theta_values) -> float:
        fixed_theta = dict(fixed)
        fixed_theta.update(zip(theta, (float(v) for v in theta_values)))
        total = 0.0
        for sample in samples:
            inner = _Problem(model, names, lam, fixed_theta, _Training([sample]), spec, cfg)
            try:
                total += _solve(inner)[1]
            except FitError:
                return np.inf
        return total / len(samples)

    if not theta:
        obj = profile(np.empty(0))
        return PartialFit({k: v for k, v in pins.items() if k in transferred}, obj, obj)
    grid_objectives = None
    if lam:
        joint = _Problem(model, names, theta + lam, fixed, data, spec, cfg)
        mse = joint.grid_mse(joint.grid()).reshape(cfg.resolution ** len(theta), cfg.resolution ** len(lam), -1)
        grid_objectives = _aggregate(mse.min(axis=1), spec)
        x, obj, grid_best = _solve(outer, fun=profile, grid_objectives=grid_objectives)
    else:
        x, obj, grid_best = _solve(outer)
    values = dict(zip(theta, (float(v) for v in x)))
    values.update({k: v for k, v in pins.items() if k in transferred})
    return PartialFit(values, obj, grid_best)
