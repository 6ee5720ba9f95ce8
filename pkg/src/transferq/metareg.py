"""Predicting the ratio of two rules' transfer errors from lottery-set features alone."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import qr

from .core import MSE, DomainSample, LossSpec, MetaData, pool
from .rules.base import fmt_real
from .rules.trees import ForestConfig, best_split, forest_predict, grow_forest
from .transfer import MeasureKind, MeasureSpec, kfold_partition, pooled_transfer_errors

GROUPS = ("z1", "z2", "p", "q", "ev")
STATS = ("mean", "sd", "max", "min")
FEATURE_NAMES: tuple[str, ...] = tuple(f"{g}_{s}" for g in GROUPS for s in STATS) + ("sample_size", "gains_only")


@dataclass(frozen=True, eq=False)
class SampleFeatures:
    """Summary of a sample's lotteries, in the order of ``FEATURE_NAMES``."""

    values: np.ndarray

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(FEATURE_NAMES, self.values)}


def sample_features(sample: DomainSample) -> SampleFeatures:
    """Mean, population sd, max and min of z1, z2, p, 1-p and the expected value, plus size and a gains-only flag."""
    if len(sample) == 0:
        raise ValueError(f"sample {sample.id!r} is empty")
    groups = {
        "z1": sample.z1,
        "z2": sample.z2,
        "p": sample.p,
        "q": 1.0 - sample.p,
        "ev": sample.p * sample.z1 + (1.0 - sample.p) * sample.z2,
    }
    out = []
    for g in GROUPS:
        x = groups[g]
        out += [x.mean(), x.std(), x.max(), x.min()]
    out.append(float(len(sample)))
    out.append(float(bool((sample.z1 >= 0).all() and (sample.z2 >= 0).all())))
    return SampleFeatures(np.array(out, dtype=float))


class FeatureSet(str, enum.Enum):
    TRAIN_ONLY = "train_only"
    TEST_ONLY = "test_only"
    BOTH = "both"


@dataclass(frozen=True, eq=False)
class RatioDataset:
    """One row per (training set, target): features of both sides and the error ratio."""

    train_features: np.ndarray  # (rows, 22)
    test_features: np.ndarray  # (rows, 22)
    ratio: np.ndarray
    train_ids: tuple[str, ...] = ()
    target_ids: tuple[str, ...] = ()
    feature_set: FeatureSet = FeatureSet.BOTH
    excluded: int = 0

    def __post_init__(self):
        object.__setattr__(self, "feature_set", FeatureSet(self.feature_set))
        r = np.asarray(self.ratio, dtype=float)
        if not (np.isfinite(r).all() and (r > 0).all()):
            raise ValueError("ratios must be positive and finite")

    def __len__(self):
        return len(self.ratio)

    def with_feature_set(self, feature_set) -> "RatioDataset":
        return RatioDataset(
            self.train_features, self.test_features, self.ratio, self.train_ids, self.target_ids, feature_set, self.excluded
        )

    @property
    def column_names(self) -> list[str]:
        tr = [f"tr_{n}" for n in FEATURE_NAMES]
        te = [f"te_{n}" for n in FEATURE_NAMES]
        return {FeatureSet.TRAIN_ONLY: tr, FeatureSet.TEST_ONLY: te, FeatureSet.BOTH: tr + te}[self.feature_set]

    def design(self) -> np.ndarray:
        if self.feature_set is FeatureSet.TRAIN_ONLY:
            return np.asarray(self.train_features, dtype=float)
        if self.feature_set is FeatureSet.TEST_ONLY:
            return np.asarray(self.test_features, dtype=float)
        return np.hstack([self.train_features, self.test_features]).astype(float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [f"tr_{n}" for n in FEATURE_NAMES] + [f"te_{n}" for n in FEATURE_NAMES]
        writer.writerow(["train_ids", "target_id"] + names + ["ratio"])
        X = np.hstack([self.train_features, self.test_features])
        for i in range(len(self)):
            tid = self.train_ids[i] if self.train_ids else ""
            did = self.target_ids[i] if self.target_ids else ""
            writer.writerow([tid, did] + [fmt_real(v) for v in X[i]] + [fmt_real(self.ratio[i])])
        return buf.getvalue()


def build_ratio_dataset(
    meta: MetaData,
    numerator,
    denominator,
    r: int = 1,
    spec: LossSpec = MSE,
    seed: int | None = None,
    feature_set=FeatureSet.BOTH,
    workers: int = 1,
) -> RatioDataset:
    """Error ratio of ``numerator`` over ``denominator`` for every ordered tuple, with features.

    Training-side features describe the pooled training samples.  Flagged
    tuples are dropped and counted in ``excluded``.
    """
    tensor = pooled_transfer_errors(
        meta, None, r, MeasureSpec(MeasureKind.RATIO, ratio_pair=(numerator, denominator)), spec, seed, workers
    )
    keep = tensor.valid & np.isfinite(tensor.values) & (tensor.values > 0)
    cache: dict[tuple[int, ...], np.ndarray] = {}

    def train_feats(idx: tuple[int, ...]) -> np.ndarray:
        key = tuple(sorted(idx))
        if key not in cache:
            cache[key] = sample_features(pool(meta.select(key), id="+".join(meta.ids[i] for i in key))).values
        return cache[key]

    rows = np.flatnonzero(keep)
    tr = np.array([train_feats(tuple(tensor.tuples[j, :-1])) for j in rows]).reshape(-1, len(FEATURE_NAMES))
    te = np.array([sample_features(meta[int(tensor.tuples[j, -1])]).values for j in rows]).reshape(-1, len(FEATURE_NAMES))
    return RatioDataset(
        tr,
        te,
        tensor.values[rows],
        tuple("+".join(meta.ids[i] for i in tensor.tuples[j, :-1]) for j in rows),
        tuple(meta.ids[int(tensor.tuples[j, -1])] for j in rows),
        feature_set,
        int((~keep).sum()),
    )


class Method(str, enum.Enum):
    CONSTANT = "constant"
    LEAST_SQUARES = "least_squares"
    STUMP = "stump"
    FOREST = "forest"


@dataclass(frozen=True, eq=False)
class RatioPredictor:
    method: Method
    columns: tuple[str, ...]
    params: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        p = self.params
        if self.method is Method.CONSTANT:
            return np.full(X.shape[0], p["value"])
        if self.method is Method.LEAST_SQUARES:
            return p["intercept"] + X[:, p["kept"]] @ p["coef"]
        if self.method is Method.STUMP:
            if p["feature"] is None:
                return np.full(X.shape[0], p["left"])
            return np.where(X[:, p["feature"]] <= p["threshold"], p["left"], p["right"])
        return forest_predict(p["trees"], X)

    def describe(self) -> dict:
        p = self.params
        if self.method is Method.CONSTANT:
            return {"value": p["value"]}
        if self.method is Method.LEAST_SQUARES:
            return {
                "intercept": p["intercept"],
                "coefficients": {self.columns[i]: float(c) for i, c in zip(p["kept"], p["coef"])},
                "dropped_columns": [self.columns[i] for i in p["dropped"]],
            }
        if self.method is Method.STUMP:
            return {
                "feature": None if p["feature"] is None else self.columns[p["feature"]],
                "threshold": p["threshold"],
                "left": p["left"],
                "right": p["right"],
                "left_count": p["left_count"],
                "right_count": p["right_count"],
            }
        return {"n_trees": len(p["trees"])}


def _fit_least_squares(X: np.ndarray, y: np.ndarray, columns) -> RatioPredictor:
    """OLS with intercept; constant and linearly dependent columns are dropped and reported."""
    varying = [i for i in range(X.shape[1]) if np.ptp(X[:, i]) > 0]
    dropped = [i for i in range(X.shape[1]) if i not in varying]
    kept: list[int] = []
    if varying:
        Z = X[:, varying] - X[:, varying].mean(axis=0)
        _, R, piv = qr(Z, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = diag[0] * max(Z.shape) * np.finfo(float).eps if len(diag) else 0.0
        rank = int((diag > tol).sum())
        kept = sorted(varying[i] for i in piv[:rank])
        dropped = sorted(dropped + [varying[i] for i in piv[rank:]])
    A = np.hstack([np.ones((len(y), 1)), X[:, kept]])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return RatioPredictor(
        Method.LEAST_SQUARES,
        tuple(columns),
        {"intercept": float(sol[0]), "coef": sol[1:], "kept": kept, "dropped": dropped},
    )


def _fit_stump(X: np.ndarray, y: np.ndarray, columns) -> RatioPredictor:
    split = best_split(X, y, min_leaf=1)
    if split is None:
        m = float(y.mean())
        return RatioPredictor(
            Method.STUMP, tuple(columns), {"feature": None, "threshold": None, "left": m, "right": m, "left_count": len(y), "right_count": 0}
        )
    j, thr, _ = split
    left = X[:, j] <= thr
    return RatioPredictor(
        Method.STUMP,
        tuple(columns),
        {
            "feature": j,
            "threshold": thr,
            "left": float(y[left].mean()),
            "right": float(y[~left].mean()),
            "left_count": int(left.sum()),
            "right_count": int((~left).sum()),
        },
    )


def _fit(method: Method, X: np.ndarray, y: np.ndarray, columns, forest: ForestConfig) -> RatioPredictor:
    if method is Method.CONSTANT:
        return RatioPredictor(method, tuple(columns), {"value": float(y.mean())})
    if method is Method.LEAST_SQUARES:
        return _fit_least_squares(X, y, columns)
    if method is Method.STUMP:
        return _fit_stump(X, y, columns)
    return RatioPredictor(method, tuple(columns), {"trees": grow_forest(X, y, forest)})


@dataclass(frozen=True)
class RatioFit:
    predictor: RatioPredictor
    cv_mse: float
    train_mse: float
    k_folds: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "method": self.predictor.method.value,
            "cv_mse": self.cv_mse,
            "train_mse": self.train_mse,
            "k_folds": self.k_folds,
            "seed": self.seed,
            "model": self.predictor.describe(),
        }


def fit_ratio_predictor(
    data: RatioDataset, method, k_folds: int = 10, seed: int = 0, forest: ForestConfig | None = None
) -> RatioFit:
    """Fit ``method`` on all rows and report its seeded k-fold cross-validated MSE.

    ``cv_mse`` is the average over folds of the held-out mean squared error.
    """
    method = Method(method)
    if len(data) < 2:
        raise ValueError("need at least 2 rows")
    forest = forest or ForestConfig(seed=seed)
    X, y = data.design(), np.asarray(data.ratio, dtype=float)
    columns = data.column_names
    k = min(k_folds, len(y))
    fold_mse = []
    everything = np.arange(len(y))
    for held in kfold_partition(len(y), k, seed):
        train = np.setdiff1d(everything, held)
        model = _fit(method, X[train], y[train], columns, forest)
        fold_mse.append(float(np.mean((model.predict(X[held]) - y[held]) ** 2)))
    final = _fit(method, X, y, columns, forest)
    train_mse = float(np.mean((final.predict(X) - y) ** 2))
    return RatioFit(final, float(np.mean(fold_mse)), train_mse, k, seed)


def fit_all_methods(
    data: RatioDataset, methods: Sequence = tuple(Method), k_folds: int = 10, seed: int = 0
) -> dict[str, RatioFit]:
    return {Method(m).value: fit_ratio_predictor(data, m, k_folds, seed) for m in methods}
