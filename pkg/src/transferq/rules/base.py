"""Prediction-rule protocol and the canonical single-line text format.

A fitted rule is written as ``kind|key=value|key=value`` with reals printed
to 17 significant digits, so ``rule_from_text(rule.to_text())`` reproduces
predictions bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np


@runtime_checkable
class PredictionRule(Protocol):
    kind: str

    def predict(self, X) -> np.ndarray:
        """Predicted outcomes for rows ``(z1, z2, p)``; NaN where undefined."""

    def to_text(self) -> str: ...


def fmt_real(x: float) -> str:
    return format(float(x), ".17g")


def fmt_reals(values) -> str:
    return ",".join(fmt_real(v) for v in np.asarray(values, dtype=float).reshape(-1))


def parse_reals(text: str) -> np.ndarray:
    if not text:
        return np.empty(0)
    return np.array([float(v) for v in text.split(",")])


def encode(kind: str, fields: dict[str, str]) -> str:
    return "|".join([kind] + [f"{k}={v}" for k, v in fields.items()])


def decode(text: str) -> tuple[str, dict[str, str]]:
    kind, *parts = text.strip().split("|")
    fields = {}
    for part in parts:
        key, sep, value = part.partition("=")
        if not sep:
            raise ValueError(f"malformed rule field {part!r}")
        fields[key] = value
    return kind, fields


def as_features(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != 3:
        raise ValueError(f"expected feature rows (z1, z2, p), got shape {X.shape}")
    return X


@dataclass(frozen=True)
class ConstantRule:
    """Predicts the same value everywhere."""

    value: float
    kind = "constant"

    def predict(self, X) -> np.ndarray:
        return np.full(as_features(X).shape[0], float(self.value))

    def to_text(self) -> str:
        return encode(self.kind, {"value": fmt_real(self.value)})


def rule_from_text(text: str) -> PredictionRule:
    """Inverse of ``to_text`` for every shipped rule kind."""
    from .economic import CptRule, EuRule
    from .kernel import KernelRidgeRule
    from .trees import ForestRule

    kind, fields = decode(text)
    if kind == "constant":
        return ConstantRule(float(fields["value"]))
    if kind == "eu":
        return EuRule(float(fields["eta"]))
    if kind == "cpt":
        return CptRule(
            float(fields["alpha"]),
            float(fields["beta"]),
            float(fields["gamma"]),
            float(fields["delta"]),
            variant=fields.get("variant", "abdg"),
        )
    if kind == "kernel_ridge":
        return KernelRidgeRule.from_fields(fields)
    if kind == "forest":
        return ForestRule.from_fields(fields)
    raise ValueError(f"unknown rule kind {kind!r}")
