"""Rule selection by leave-one-domain-out cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MSE, DomainSample, LossSpec, sample_error
from ..errors import FitError, RuleEvaluationError


@dataclass(frozen=True)
class DomainCvResult:
    rule: object
    chosen: int
    scores: tuple[float, ...]  # NaN for excluded candidates
    fold_errors: tuple[tuple[float, ...], ...]  # NaN for failed folds


def leave_one_domain_out(config, train: list[DomainSample], spec: LossSpec = MSE) -> list[float]:
    """Held-out error of ``config`` on each domain when fitted on the others; NaN on failure."""
    errors = []
    for i, held in enumerate(train):
        rest = train[:i] + train[i + 1 :]
        try:
            errors.append(sample_error(config.fit(rest, spec), held, spec))
        except (FitError, RuleEvaluationError):
            errors.append(float("nan"))
    return errors


def fit_domain_cv(candidates: list, train: list[DomainSample], spec: LossSpec = MSE) -> DomainCvResult:
    """Pick the candidate with the best average leave-one-domain-out error and refit it on all domains.

    Failed folds are skipped in a candidate's average; a candidate failing on
    every fold is excluded.  Ties go to the earlier candidate.
    """
    train = list(train)
    if len(train) < 2:
        raise ValueError("domain cross-validation needs at least 2 training samples")
    if not candidates:
        raise ValueError("no candidates")
    folds, scores = [], []
    for config in candidates:
        errs = leave_one_domain_out(config, train, spec)
        folds.append(tuple(errs))
        ok = [e for e in errs if np.isfinite(e)]
        scores.append(float(np.mean(ok)) if ok else float("nan"))
    chosen = None
    for i, score in enumerate(scores):
        if np.isfinite(score) and (chosen is None or score < scores[chosen]):
            chosen = i
    if chosen is None:
        raise FitError("every candidate failed on every fold")
    rule = candidates[chosen].fit(train, spec)
    return DomainCvResult(rule, chosen, tuple(scores), tuple(folds))
