"""Synthetic meta-data from a CPT population, and Monte Carlo coverage of pooled forecast intervals."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import MSE, DomainSample, LossSpec, MetaData, sample_error
from .errors import FitError, RuleEvaluationError
from .intervals import Side, coverage_level, coverage_upper_bound, upper_quantile, WeightedEmpirical
from .rules.configs import seeded
from .rules.economic import HARD_BOUNDS, cpt_certainty_equivalent

PROBABILITY_GRID = np.array([0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95])


class MarginalMode(str, enum.Enum):
    SHARED_GRID = "shared_grid"
    PER_DOMAIN_RANDOM = "per_domain_random"
    FIXED_PRIZES = "fixed_prizes"


@dataclass(frozen=True)
class SyntheticMetaSpec:
    """Population of domains with CPT decision makers.

    Each domain draws its CPT parameters ``(alpha, beta, gamma, delta)`` from
    independent normals around ``param_means`` with sds ``param_spreads``,
    truncated to the admissible box.  Lotteries come from ``mode``:

    * ``shared_grid``: every domain samples rows from one common lottery grid.
    * ``per_domain_random``: every observation gets a fresh random lottery.
    * ``fixed_prizes``: one prize pair per domain, probabilities vary.

    Outcomes are the CPT certainty equivalent plus ``N(0, noise_sd^2)``.
    """

    n_domains: int = 10
    obs_min: int = 10
    obs_max: int = 20
    param_means: tuple[float, float, float, float] = (0.8, 0.9, 0.6, 0.8)
    param_spreads: tuple[float, float, float, float] = (0.05, 0.05, 0.1, 0.1)
    mode: MarginalMode = MarginalMode.SHARED_GRID
    noise_sd: float = 1.0
    prize_max: float = 100.0
    loss_share: float = 0.0
    grid_size: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", MarginalMode(self.mode))
        object.__setattr__(self, "param_means", tuple(float(v) for v in self.param_means))
        object.__setattr__(self, "param_spreads", tuple(float(v) for v in self.param_spreads))
        if self.n_domains < 1:
            raise ValueError("n_domains must be >= 1")
        if not 1 <= self.obs_min <= self.obs_max:
            raise ValueError("need 1 <= obs_min <= obs_max")
        if any(s < 0 for s in self.param_spreads) or self.noise_sd < 0:
            raise ValueError("spreads and noise sd must be >= 0")
        if not 0 <= self.loss_share <= 1:
            raise ValueError("loss_share must be in [0, 1]")


def _truncated_params(rng: np.random.Generator, means, spreads) -> np.ndarray:
    out = np.empty(4)
    for i, name in enumerate(("alpha", "beta", "gamma", "delta")):
        lo, hi = HARD_BOUNDS[name]
        hi = math.inf if hi is None else hi
        lo = max(lo, 1e-3)  # keep curvature invertible
        for _ in range(1000):
            v = rng.normal(means[i], spreads[i])
            if lo <= v <= hi:
                break
        out[i] = min(max(v, lo), hi)
    return out


def _random_lotteries(rng: np.random.Generator, size: int, spec: SyntheticMetaSpec, continuous_p: bool = True):
    z1 = np.round(rng.uniform(0.1, 1.0, size) * spec.prize_max, 2)
    z2 = np.round(z1 * rng.uniform(0.0, 0.9, size), 2)
    loss = rng.random(size) < spec.loss_share
    mixed = rng.random(size) < 0.5
    z1 = np.where(loss, -z1, z1)
    z2 = np.where(loss & ~mixed, -z2, np.where(loss & mixed, z2, z2))
    p = np.round(rng.uniform(0.05, 0.95, size), 2) if continuous_p else rng.choice(PROBABILITY_GRID, size)
    return z1, z2, p


def simulate_metadata(spec: SyntheticMetaSpec) -> MetaData:
    """Draw ``spec.n_domains`` domains iid from ``spec``; deterministic given ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    grid = None
    if spec.mode is MarginalMode.SHARED_GRID:
        grid = _random_lotteries(rng, spec.grid_size, spec, continuous_p=False)
    samples = []
    for d in range(spec.n_domains):
        m = int(rng.integers(spec.obs_min, spec.obs_max + 1))
        theta = _truncated_params(rng, spec.param_means, spec.param_spreads)
        if spec.mode is MarginalMode.SHARED_GRID:
            rows = rng.integers(0, spec.grid_size, m)
            z1, z2, p = (g[rows] for g in grid)
        elif spec.mode is MarginalMode.PER_DOMAIN_RANDOM:
            z1, z2, p = _random_lotteries(rng, m, spec)
        else:
            a, b, _ = _random_lotteries(rng, 1, spec)
            z1, z2 = np.full(m, a[0]), np.full(m, b[0])
            p = np.round(rng.uniform(0.05, 0.95, m), 2)
        ce = cpt_certainty_equivalent(*theta, z1, z2, p)
        y = ce + (rng.normal(0.0, spec.noise_sd, m) if spec.noise_sd > 0 else 0.0)
        samples.append(DomainSample(f"D{d + 1:03d}", z1, z2, p, y))
    return MetaData(tuple(samples))


@dataclass(frozen=True)
class CoverageReport:
    empirical_coverage: float
    guarantee: float
    upper_bound: float
    mc_se: float
    replications: int
    n: int
    r: int
    tau: float
    failures: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def within_bounds(self) -> bool:
        return self.guarantee - 3 * self.mc_se <= self.empirical_coverage <= self.upper_bound + 3 * self.mc_se

    def to_dict(self) -> dict:
        return {
            "empirical_coverage": self.empirical_coverage,
            "guarantee": self.guarantee,
            "upper_bound": self.upper_bound,
            "mc_se": self.mc_se,
            "replications": self.replications,
            "n": self.n,
            "r": self.r,
            "tau": self.tau,
            "failed_replications": self.failures,
            "within_bounds": self.within_bounds,
        }


def _error(rule, sample, spec) -> float:
    try:
        return sample_error(rule, sample, spec)
    except RuleEvaluationError:
        return math.inf


def coverage_replication(meta: MetaData, rule, r: int, tau, rng: np.random.Generator, spec: LossSpec = MSE) -> bool:
    """One draw: does the new domain's transfer error fall at or below the pooled upper quantile?

    ``meta`` holds ``n + 1`` domains; the last one is the unseen target.
    """
    import itertools

    n = meta.n - 1
    fits: dict[tuple[int, ...], object] = {}
    values = []
    for combo in itertools.combinations(range(n), r):
        fits[combo] = rule.fit(meta.select(combo), spec)
        errs = [_error(fits[combo], meta[d], spec) for d in range(n) if d not in combo]
        # every ordering of a training set shares the same value
        values += errs * math.factorial(r)
    bound = upper_quantile(WeightedEmpirical.uniform(values), tau)
    train = tuple(sorted(rng.choice(n, size=r, replace=False).tolist()))
    return _error(fits[train], meta[n], spec) <= bound


def simulate_coverage(
    spec: SyntheticMetaSpec,
    rule,
    r: int,
    tau,
    replications: int,
    seed: int,
    loss: LossSpec = MSE,
) -> CoverageReport:
    """Monte Carlo frequency with which the one-sided pooled interval covers a new domain's error.

    ``spec.n_domains`` is the number of observed domains ``n``; each
    replication draws ``n + 1`` domains with its own seed.
    """
    if replications < 100:
        raise ValueError("replications must be >= 100")
    n = spec.n_domains
    children = np.random.SeedSequence(seed).spawn(replications)
    hits = failures = 0
    for child in children:
        data_seed, pick_seed, rule_seed = child.generate_state(3)
        meta = simulate_metadata(replace(spec, n_domains=n + 1, seed=int(data_seed)))
        try:
            hit = coverage_replication(meta, seeded(rule, int(rule_seed)), r, tau, np.random.default_rng(int(pick_seed)), loss)
        except FitError:
            failures += 1
            continue
        hits += bool(hit)
    done = replications - failures
    freq = hits / done if done else math.nan
    se = math.sqrt(freq * (1 - freq) / done) if done else math.nan
    return CoverageReport(
        freq,
        float(coverage_level(n, r, tau, Side.ONE_SIDED_UPPER)),
        float(coverage_upper_bound(n, r, tau, Side.ONE_SIDED_UPPER)),
        se,
        done,
        n,
        r,
        float(tau),
        failures,
    )
