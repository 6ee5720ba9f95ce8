"""Observations, domain samples, meta-data and the per-sample error."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import RuleEvaluationError


class Loss(str, enum.Enum):
    SQUARED_ERROR = "squared_error"


class Transform(str, enum.Enum):
    IDENTITY = "identity"
    SQRT = "sqrt"


@dataclass(frozen=True)
class LossSpec:
    """Loss function plus the strictly increasing reporting transform ``g``.

    ``sample_error`` returns ``g(mean loss)``; ``Transform.SQRT`` gives RMSE.
    """

    loss: Loss = Loss.SQUARED_ERROR
    transform: Transform = Transform.IDENTITY

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "transform", Transform(self.transform))

    def pointwise(self, pred, y):
        return (np.asarray(pred, dtype=float) - np.asarray(y, dtype=float)) ** 2

    def apply(self, mean_loss):
        if self.transform is Transform.SQRT:
            return np.sqrt(mean_loss)
        return mean_loss


MSE = LossSpec()
RMSE = LossSpec(transform=Transform.SQRT)


@dataclass(frozen=True)
class Lottery:
    """Binary lottery paying ``z1`` with probability ``p`` and ``z2`` otherwise."""

    z1: float
    z2: float
    p: float

    def oriented(self) -> tuple["Lottery", bool]:
        """Return the lottery with ``|z1| >= |z2|`` and whether a swap happened."""
        if abs(self.z1) < abs(self.z2):
            return Lottery(self.z2, self.z1, 1.0 - self.p), True
        return self, False

    @property
    def expected_value(self) -> float:
        return self.p * self.z1 + (1.0 - self.p) * self.z2


@dataclass(frozen=True)
class Observation:
    features: Lottery
    outcome: float


def _readonly(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DomainSample:
    """All observations from one domain, stored column-wise.

    Columns are read-only float arrays of equal length.  Use
    :meth:`from_observations` to build from :class:`Observation` records.
    """

    id: str
    z1: np.ndarray
    z2: np.ndarray
    p: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        for name in ("z1", "z2", "p", "y"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        sizes = {len(self.z1), len(self.z2), len(self.p), len(self.y)}
        if len(sizes) != 1:
            raise ValueError(f"domain {self.id!r}: column lengths differ {sorted(sizes)}")

    @classmethod
    def from_observations(cls, id: str, observations: Iterable[Observation]) -> "DomainSample":
        obs = list(observations)
        return cls(
            id,
            [o.features.z1 for o in obs],
            [o.features.z2 for o in obs],
            [o.features.p for o in obs],
            [o.outcome for o in obs],
        )

    def __len__(self):
        return len(self.y)

    @property
    def X(self) -> np.ndarray:
        """Feature matrix with columns ``(z1, z2, p)``."""
        return np.column_stack([self.z1, self.z2, self.p])

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(Lottery(float(a), float(b), float(c)), float(d))
            for a, b, c, d in zip(self.z1, self.z2, self.p, self.y)
        ]

    def subset(self, index) -> "DomainSample":
        index = np.asarray(index)
        return DomainSample(self.id, self.z1[index], self.z2[index], self.p[index], self.y[index])

    def oriented(self) -> tuple["DomainSample", list[int]]:
        """Swap rows violating ``|z1| >= |z2|``; return the new sample and swapped rows."""
        swap = np.abs(self.z1) < np.abs(self.z2)
        if not swap.any():
            return self, []
        z1 = np.where(swap, self.z2, self.z1)
        z2 = np.where(swap, self.z1, self.z2)
        p = np.where(swap, 1.0 - self.p, self.p)
        return DomainSample(self.id, z1, z2, p, self.y), [int(i) for i in np.flatnonzero(swap)]


def pool(samples: Sequence[DomainSample], id: str = "pooled") -> DomainSample:
    """Concatenate the observations of several samples, in the given order."""
    return DomainSample(
        id,
        np.concatenate([s.z1 for s in samples]),
        np.concatenate([s.z2 for s in samples]),
        np.concatenate([s.p for s in samples]),
        np.concatenate([s.y for s in samples]),
    )


@dataclass(frozen=True, eq=False)
class MetaData:
    samples: tuple[DomainSample, ...]

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i) -> DomainSample:
        return self.samples[i]

    def __iter__(self):
        return iter(self.samples)

    def select(self, indices: Iterable[int]) -> list[DomainSample]:
        return [self.samples[i] for i in indices]


@dataclass(frozen=True)
class Violation:
    domain_id: str
    row: int | None
    rule: str

    def __str__(self):
        where = self.domain_id if self.row is None else f"{self.domain_id} row {self.row}"
        return f"{where}: {self.rule}"


def validate_metadata(meta: MetaData) -> list[Violation]:
    """List every violated type invariant; an empty list means ``meta`` is well formed."""
    report: list[Violation] = []
    if meta.n < 2:
        report.append(Violation("<metadata>", None, f"need at least 2 domains, got {meta.n}"))
    seen: set[str] = set()
    for s in meta.samples:
        if s.id in seen:
            report.append(Violation(s.id, None, "duplicate id"))
        seen.add(s.id)
        if len(s) == 0:
            report.append(Violation(s.id, None, "no observations"))
        for i in range(len(s)):
            z1, z2, p, y = s.z1[i], s.z2[i], s.p[i], s.y[i]
            if not (math.isfinite(z1) and math.isfinite(z2)):
                report.append(Violation(s.id, i, "prize not finite"))
            elif abs(z1) < abs(z2):
                report.append(Violation(s.id, i, "|z1| < |z2|"))
            if not (0.0 <= p <= 1.0):
                report.append(Violation(s.id, i, "p out of [0,1]"))
            if not math.isfinite(y):
                report.append(Violation(s.id, i, "outcome not finite"))
    return report


def sample_error(rule, sample: DomainSample, spec: LossSpec = MSE) -> float:
    """Average loss of ``rule`` on ``sample`` passed through ``spec.transform``.

    Raises :class:`RuleEvaluationError` naming the first observation at which
    the rule has no finite prediction.
    """
    if len(sample) == 0:
        raise ValueError(f"sample {sample.id!r} is empty")
    pred = np.asarray(rule.predict(sample.X), dtype=float)
    bad = ~np.isfinite(pred)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise RuleEvaluationError(
            f"{rule.kind} rule undefined at observation {i} of domain {sample.id!r}", index=i
        )
    return float(spec.apply(np.mean(spec.pointwise(pred, sample.y))))
