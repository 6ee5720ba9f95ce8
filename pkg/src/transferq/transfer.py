"""Transfer errors over every ordered (training set, target) tuple, and within-domain CV."""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MSE, DomainSample, LossSpec, MetaData, sample_error
from .errors import FitError, RuleEvaluationError, TensorError
from .rules.base import fmt_real
from .rules.configs import seeded
from .rules.economic import fit_partial, fit_with_fixed


class MeasureKind(str, enum.Enum):
    TRANSFER_ERROR = "transfer_error"
    NORMALIZED = "normalized"
    DETERIORATION = "deterioration"
    RATIO = "ratio"
    PARTIAL_TRANSFER = "partial_transfer"
    INVERSE_NORMALIZED = "inverse_normalized"
    INVERSE_DETERIORATION = "inverse_deterioration"


@dataclass(frozen=True)
class PartialSplit:
    """CPT family plus the parameters carried over from training; the rest are refit on the target."""

    family: str
    transferred: tuple[str, ...]


@dataclass(frozen=True)
class MeasureSpec:
    kind: MeasureKind = MeasureKind.TRANSFER_ERROR
    reference_rules: tuple = ()
    ratio_pair: tuple | None = None
    partial_split: PartialSplit | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MeasureKind(self.kind))
        object.__setattr__(self, "reference_rules", tuple(self.reference_rules))
        if self.kind in (MeasureKind.NORMALIZED, MeasureKind.INVERSE_NORMALIZED) and not self.reference_rules:
            raise ValueError(f"{self.kind.value} needs at least one reference rule")
        if self.kind is MeasureKind.RATIO and (self.ratio_pair is None or len(self.ratio_pair) != 2):
            raise ValueError("ratio needs a pair of rules")
        if self.kind is MeasureKind.PARTIAL_TRANSFER and self.partial_split is None:
            raise ValueError("partial_transfer needs a parameter split")

    @property
    def needs_rule(self) -> bool:
        return self.kind not in (MeasureKind.RATIO, MeasureKind.PARTIAL_TRANSFER)

    def describe(self) -> dict:
        out = {"kind": self.kind.value}
        if self.reference_rules:
            out["reference_rules"] = [r.name for r in self.reference_rules]
        if self.ratio_pair:
            out["ratio_pair"] = [r.name for r in self.ratio_pair]
        if self.partial_split:
            out["partial_split"] = {
                "family": self.partial_split.family,
                "transferred": list(self.partial_split.transferred),
            }
        return out


FLAG_FIT_FAILURE = "fit_failure"
FLAG_ZERO_DENOMINATOR = "zero_denominator"
FLAG_UNDEFINED = "undefined"


def tuple_count(n: int, r: int) -> int:
    """Number of ordered tuples of r + 1 distinct indices out of n."""
    return math.perm(n, r + 1)


def per_target_count(n: int, r: int) -> int:
    """Number of tuples sharing one target."""
    return math.perm(n - 1, r)


@dataclass(frozen=True, eq=False)
class TransferErrorTensor:
    """Measure values for every ordered tuple ``(t_1, ..., t_r, d)``.

    ``tuples[j]`` holds the training indices followed by the target index,
    in lexicographic order of the tuple.  ``flags[j]`` is empty for a valid
    entry and names the reason otherwise; flagged values are NaN.
    """

    ids: tuple[str, ...]
    r: int
    tuples: np.ndarray
    values: np.ndarray
    flags: tuple[str, ...]
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "flags", tuple(self.flags))
        tuples = np.asarray(self.tuples, dtype=np.int64).reshape(-1, self.r + 1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        tuples.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "tuples", tuples)
        object.__setattr__(self, "values", values)
        n = len(self.ids)
        if not 1 <= self.r <= n - 1:
            raise TensorError(f"r={self.r} needs 1 <= r <= n-1 with n={n}")
        if len(tuples) != tuple_count(n, self.r) or len(values) != len(tuples) or len(self.flags) != len(tuples):
            raise TensorError(f"expected {tuple_count(n, self.r)} entries, got {len(tuples)}")
        if len(set(self.ids)) != n:
            raise TensorError("duplicate domain ids")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def targets(self) -> np.ndarray:
        return self.tuples[:, -1]

    @property
    def valid(self) -> np.ndarray:
        return np.array([not f for f in self.flags], dtype=bool)

    @property
    def excluded(self) -> int:
        return int((~self.valid).sum())

    @property
    def complete(self) -> bool:
        return self.excluded == 0

    def require_complete(self, what: str = "this operation") -> None:
        if not self.complete:
            raise TensorError(f"{what} needs a complete tensor; {self.excluded} entries are flagged")

    def valid_values(self) -> np.ndarray:
        return self.values[self.valid]

    def entry(self, train: Sequence[int], target: int) -> float:
        key = (*train, target)
        hit = np.flatnonzero((self.tuples == np.array(key)).all(axis=1))
        if len(hit) == 0:
            raise KeyError(key)
        return float(self.values[hit[0]])

    def with_values(self, values, info: dict | None = None) -> "TransferErrorTensor":
        return TransferErrorTensor(self.ids, self.r, self.tuples, values, self.flags, dict(info or self.info))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["train_ids", "target_id", "value", "flag"])
        for row, value, flag in zip(self.tuples, self.values, self.flags):
            writer.writerow(["+".join(self.ids[i] for i in row[:-1]), self.ids[row[-1]], fmt_real(value), flag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, info: dict | None = None) -> "TransferErrorTensor":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header != ["train_ids", "target_id", "value", "flag"]:
            raise TensorError(f"unexpected tensor header {header}")
        ids: dict[str, int] = {}
        rows, values, flags = [], [], []
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise TensorError(f"line {line}: expected 4 fields")
            names = rec[0].split("+") + [rec[1]]
            for name in names:
                ids.setdefault(name, len(ids))
            rows.append([ids[name] for name in names])
            values.append(float(rec[2]))
            flags.append(rec[3])
        if not rows:
            raise TensorError("tensor file has no entries")
        r = len(rows[0]) - 1
        if any(len(row) != r + 1 for row in rows):
            raise TensorError("rows have different training-set sizes")
        tuples = np.array(rows, dtype=np.int64)
        order = np.lexsort(tuples.T[::-1])
        return cls(
            tuple(ids),
            r,
            tuples[order],
            np.array(values)[order],
            tuple(flags[i] for i in order),
            dict(info or {}),
        )


def _error_or_inf(rule, sample: DomainSample, spec: LossSpec) -> float:
    """Undefined predictions count as infinite loss."""
    try:
        return sample_error(rule, sample, spec)
    except RuleEvaluationError:
        return math.inf


def _quotient(num: float, den: float) -> tuple[float, str]:
    if not math.isfinite(den):
        return math.nan, FLAG_UNDEFINED
    if den == 0:
        return math.nan, FLAG_ZERO_DENOMINATOR
    return num / den, ""


@dataclass
class _Job:
    samples: tuple[DomainSample, ...]
    rule: object
    measure: MeasureSpec
    spec: LossSpec
    denominators: dict[int, float]


def _evaluate_training_set(job: _Job, train_idx: tuple[int, ...]) -> dict[int, tuple[float, str]]:
    """Fit once on ``train_idx`` and score every other domain as target."""
    samples, measure, spec = job.samples, job.measure, job.spec
    train = [samples[i] for i in train_idx]
    targets = [d for d in range(len(samples)) if d not in train_idx]
    kind = measure.kind
    out: dict[int, tuple[float, str]] = {}
    try:
        if kind is MeasureKind.RATIO:
            rules = [cfg.fit(train, spec) for cfg in measure.ratio_pair]
        elif kind is MeasureKind.PARTIAL_TRANSFER:
            split = measure.partial_split
            theta = fit_partial(split.family, split.transferred, train, spec).transferred
        else:
            rule = job.rule.fit(train, spec)
    except (FitError, np.linalg.LinAlgError):
        return {d: (math.nan, FLAG_FIT_FAILURE) for d in targets}

    for d in targets:
        target = samples[d]
        if kind is MeasureKind.RATIO:
            out[d] = _quotient(_error_or_inf(rules[0], target, spec), _error_or_inf(rules[1], target, spec))
            continue
        if kind is MeasureKind.PARTIAL_TRANSFER:
            try:
                out[d] = (fit_with_fixed(split.family, [target], theta, spec).objective, "")
            except FitError:
                out[d] = (math.nan, FLAG_FIT_FAILURE)
            continue
        err = _error_or_inf(rule, target, spec)
        if kind is MeasureKind.TRANSFER_ERROR:
            out[d] = (err, "")
            continue
        den = job.denominators[d]
        if kind in (MeasureKind.INVERSE_NORMALIZED, MeasureKind.INVERSE_DETERIORATION):
            if not math.isfinite(den):
                out[d] = (math.nan, FLAG_UNDEFINED)
            else:
                out[d] = _quotient(den, err) if math.isfinite(err) else (0.0, "")
        else:
            out[d] = _quotient(err, den)
    return out


def _in_sample(config, sample: DomainSample, spec: LossSpec) -> float:
    try:
        return _error_or_inf(config.fit([sample], spec), sample, spec)
    except FitError:
        return math.inf


def target_denominators(
    samples: Sequence[DomainSample], rule, measure: MeasureSpec, spec: LossSpec = MSE
) -> dict[int, float]:
    """In-sample reference error on each target for normalized and deterioration measures."""
    kind = measure.kind
    if kind in (MeasureKind.NORMALIZED, MeasureKind.INVERSE_NORMALIZED):
        return {d: min(_in_sample(c, s, spec) for c in measure.reference_rules) for d, s in enumerate(samples)}
    if kind in (MeasureKind.DETERIORATION, MeasureKind.INVERSE_DETERIORATION):
        return {d: _in_sample(rule, s, spec) for d, s in enumerate(samples)}
    return {}


def _run_job(args):
    job, train_idx = args
    return train_idx, _evaluate_training_set(job, train_idx)


def pooled_transfer_errors(
    meta: MetaData,
    rule,
    r: int,
    measure: MeasureSpec = MeasureSpec(),
    spec: LossSpec = MSE,
    seed: int | None = None,
    workers: int = 1,
) -> TransferErrorTensor:
    """Evaluate ``measure`` on every ordered tuple of ``r`` training domains and one target.

    Each unordered training set is fitted once, on its samples in index
    order, and shared by all orderings.  ``seed`` overrides the seed of
    stochastic rule configs.  Entries whose fit fails or whose denominator is
    zero are flagged and counted in ``info["excluded_entries"]``.
    """
    samples = tuple(meta.samples)
    n = len(samples)
    if not 1 <= r <= n - 1:
        raise ValueError(f"need 1 <= r <= n-1, got r={r}, n={n}")
    if measure.needs_rule and rule is None:
        raise ValueError(f"measure {measure.kind.value} needs a rule")
    rule = seeded(rule, seed)
    if measure.ratio_pair:
        measure = MeasureSpec(measure.kind, measure.reference_rules, tuple(seeded(c, seed) for c in measure.ratio_pair), measure.partial_split)
    if measure.reference_rules:
        measure = MeasureSpec(measure.kind, tuple(seeded(c, seed) for c in measure.reference_rules), measure.ratio_pair, measure.partial_split)
    job = _Job(samples, rule, measure, spec, target_denominators(samples, rule, measure, spec))
    combos = list(itertools.combinations(range(n), r))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_run_job, [(job, c) for c in combos], chunksize=max(1, len(combos) // (4 * workers))))
    else:
        results = {c: _evaluate_training_set(job, c) for c in combos}

    tuples = np.array(list(itertools.permutations(range(n), r + 1)), dtype=np.int64)
    values = np.empty(len(tuples))
    flags = []
    for j, row in enumerate(tuples):
        value, flag = results[tuple(sorted(row[:-1]))][int(row[-1])]
        values[j] = value
        flags.append(flag)
    info = {
        "rule": None if rule is None else rule.name,
        "measure": measure.describe(),
        "loss": {"loss": spec.loss.value, "transform": spec.transform.value},
        "seed": seed,
        "excluded_entries": sum(1 for f in flags if f),
    }
    return TransferErrorTensor(tuple(s.id for s in samples), r, tuples, values, tuple(flags), info)


def partial_transfer_error(
    split: PartialSplit,
    train: list[DomainSample],
    target: DomainSample,
    spec: LossSpec = MSE,
    cfg=None,
) -> float:
    """Target error after transferring ``split.transferred`` and refitting the rest on the target."""
    from .rules.economic import FitConfig

    cfg = cfg or FitConfig()
    theta = fit_partial(split.family, split.transferred, train, spec, cfg).transferred
    return fit_with_fixed(split.family, [target], theta, spec, cfg).objective


def kfold_partition(size: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle ``range(size)`` with ``seed`` and deal the indices round-robin into ``k`` folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if size < k:
        raise ValueError(f"sample size {size} is smaller than k={k}")
    perm = np.random.default_rng(seed).permutation(size)
    return [np.sort(perm[i::k]) for i in range(k)]


def kfold_cv_error(sample: DomainSample, rule, k: int = 10, spec: LossSpec = MSE, seed: int = 0) -> float:
    """Average over ``k`` folds of the held-out error of ``rule`` fitted on the other folds.

    Raises:
        FitError: naming the fold whose fit or evaluation failed.
    """
    folds = kfold_partition(len(sample), k, seed)
    rule = seeded(rule, seed)
    everything = np.arange(len(sample))
    errors = []
    for i, held in enumerate(folds):
        train = sample.subset(np.setdiff1d(everything, held))
        try:
            fitted = rule.fit([train], spec)
            errors.append(sample_error(fitted, sample.subset(held), spec))
        except (FitError, RuleEvaluationError) as exc:
            raise FitError(f"fold {i}: {exc}") from exc
    return float(np.mean(errors))


@dataclass(frozen=True)
class WithinDomainTable:
    domain_ids: tuple[str, ...]
    rule_names: tuple[str, ...]
    errors: np.ndarray  # (domains, rules)
    baseline: str

    def mean_ratios(self) -> dict[str, float]:
        """Average over domains of each rule's error divided by the baseline rule's error."""
        b = self.rule_names.index(self.baseline)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = self.errors / self.errors[:, [b]]
        return {name: float(np.nanmean(ratios[:, j])) for j, name in enumerate(self.rule_names)}


def within_domain_table(
    meta: MetaData, rules: Sequence, k: int = 10, spec: LossSpec = MSE, seed: int = 0, baseline: str = "forest"
) -> WithinDomainTable:
    """k-fold CV error of every rule on every domain, with ratios against ``baseline``."""
    names = tuple(r.name for r in rules)
    if baseline not in names:
        baseline = names[0]
    errors = np.full((meta.n, len(rules)), np.nan)
    for i, sample in enumerate(meta):
        for j, rule in enumerate(rules):
            try:
                errors[i, j] = kfold_cv_error(sample, rule, min(k, len(sample)), spec, seed)
            except (FitError, ValueError):
                pass
    return WithinDomainTable(tuple(meta.ids), names, errors, baseline)
