"""Kernel ridge regression with a Gaussian (RBF) kernel on raw lottery features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ..core import DomainSample, pool
from ..errors import LinearSolveError
from .base import as_features, encode, fmt_real, fmt_reals, parse_reals


@dataclass(frozen=True)
class KernelRidgeConfig:
    """``ridge`` is the penalty added to the kernel diagonal; ``bandwidth`` scales squared distance."""

    ridge: float = 1.0
    bandwidth: float = 1.0 / 3.0

    def __post_init__(self):
        if not self.ridge >= 0:
            raise ValueError("ridge must be >= 0")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")


def rbf_kernel(A, B, bandwidth: float) -> np.ndarray:
    return np.exp(-bandwidth * cdist(A, B, "sqeuclidean"))


@dataclass(frozen=True, eq=False)
class KernelRidgeRule:
    centers: np.ndarray
    weights: np.ndarray
    bandwidth: float
    kind = "kernel_ridge"

    def predict(self, X) -> np.ndarray:
        return rbf_kernel(as_features(X), self.centers, self.bandwidth) @ self.weights

    def to_text(self) -> str:
        return encode(
            self.kind,
            {
                "bandwidth": fmt_real(self.bandwidth),
                "centers": fmt_reals(self.centers),
                "weights": fmt_reals(self.weights),
            },
        )

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "KernelRidgeRule":
        return cls(
            parse_reals(fields["centers"]).reshape(-1, 3),
            parse_reals(fields["weights"]),
            float(fields["bandwidth"]),
        )


def fit_kernel_ridge(train: list[DomainSample], cfg: KernelRidgeConfig = KernelRidgeConfig()) -> KernelRidgeRule:
    """Solve ``(K + ridge I) w = y`` on the pooled training observations.

    Raises:
        LinearSolveError: if the system is singular, e.g. ``ridge = 0`` with repeated rows.
    """
    data = pool(list(train))
    if len(data) == 0:
        raise ValueError("no training observations")
    X = data.X
    if cfg.ridge == 0 and len(np.unique(X, axis=0)) < len(X):
        raise LinearSolveError("ridge = 0 with duplicated feature rows gives a singular kernel matrix")
    K = rbf_kernel(X, X, cfg.bandwidth)
    try:
        w = np.linalg.solve(K + cfg.ridge * np.eye(len(X)), data.y)
    except np.linalg.LinAlgError as exc:
        raise LinearSolveError(f"kernel ridge system is singular: {exc}") from exc
    if not np.isfinite(w).all():
        raise LinearSolveError("kernel ridge solve produced non-finite weights")
    return KernelRidgeRule(X, w, cfg.bandwidth)
