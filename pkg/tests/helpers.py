"""Shared builders for the test suite."""

from __future__ import annotations

import itertools

import numpy as np

from transferq.core import DomainSample, MetaData
from transferq.transfer import TransferErrorTensor


def make_sample(id: str, rows) -> DomainSample:
    """Sample from ``(z1, z2, p, y)`` rows."""
    arr = np.asarray(rows, dtype=float).reshape(-1, 4)
    return DomainSample(id, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


def make_meta(*row_lists) -> MetaData:
    return MetaData(tuple(make_sample(f"D{i}", rows) for i, rows in enumerate(row_lists)))


def tensor_from(values, n: int, r: int = 1, ids=None) -> TransferErrorTensor:
    """Tensor whose entries, in lexicographic tuple order, are ``values``."""
    tuples = np.array(list(itertools.permutations(range(n), r + 1)), dtype=np.int64)
    ids = ids or tuple(f"D{i}" for i in range(n))
    return TransferErrorTensor(tuple(ids), r, tuples, np.asarray(values, dtype=float), ("",) * len(tuples))


def random_tensor(rng: np.random.Generator, n: int, r: int = 1, ties: bool = False) -> TransferErrorTensor:
    size = len(list(itertools.permutations(range(n), r + 1)))
    values = rng.integers(0, 5, size).astype(float) if ties else rng.random(size)
    return tensor_from(values, n, r)


def gains_lotteries(rng: np.random.Generator, size: int, top: float = 100.0) -> np.ndarray:
    z1 = rng.uniform(1.0, top, size)
    z2 = z1 * rng.uniform(0.0, 0.9, size)
    p = rng.uniform(0.05, 0.95, size)
    return np.column_stack([z1, z2, p])


class FixedConfig:
    """Ignores training data and predicts ``value``."""

    def __init__(self, value: float):
        self.value = value
        self.name = f"fixed({value})"

    def fit(self, train, spec=None):
        from transferq.rules import ConstantRule

        return ConstantRule(self.value)


class MeanConfig:
    """Predicts the pooled training mean outcome."""

    name = "mean"

    def fit(self, train, spec=None):
        from transferq.rules import ConstantRule

        return ConstantRule(float(np.concatenate([s.y for s in train]).mean()))


class FailingConfig:
    name = "failing"

    def fit(self, train, spec=None):
        from transferq.errors import FitError

        raise FitError("always fails")


class CountingConfig(MeanConfig):
    """MeanConfig that records the training sets it was fitted on."""

    name = "counting"

    def __init__(self):
        self.calls: list[tuple[str, ...]] = []

    def fit(self, train, spec=None):
        self.calls.append(tuple(s.id for s in train))
        return super().fit(train, spec)
