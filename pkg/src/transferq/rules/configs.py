"""Decision-rule configurations: the objects that turn training samples into rules.

Every config has a ``name`` used in reports and a ``fit(train, spec)`` method.
``parse_rule`` reads the command-line form, e.g. ``eu``, ``cpt-abdg``,
``forest:n_trees=50,seed=7``, ``kernel-ridge:ridge=0.5`` or
``domain-cv:forest+kernel-ridge``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..core import MSE, DomainSample, LossSpec
from .economic import CPT_VARIANTS, FitConfig, fit_erm
from .kernel import KernelRidgeConfig, fit_kernel_ridge
from .trees import ForestConfig, fit_random_forest


@dataclass(frozen=True)
class EuConfig:
    fit_config: FitConfig = FitConfig()

    @property
    def name(self) -> str:
        return "eu"

    def fit(self, train: list[DomainSample], spec: LossSpec = MSE):
        return fit_erm("eu", train, spec, self.fit_config).rule


@dataclass(frozen=True)
class CptConfig:
    variant: str = "abdg"
    fit_config: FitConfig = FitConfig()

    def __post_init__(self):
        if self.variant not in CPT_VARIANTS:
            raise ValueError(f"unknown CPT variant {self.variant!r}")

    @property
    def name(self) -> str:
        return f"cpt-{self.variant}"

    def fit(self, train: list[DomainSample], spec: LossSpec = MSE):
        return fit_erm(self.name, train, spec, self.fit_config).rule


@dataclass(frozen=True)
class ForestRuleConfig:
    forest: ForestConfig = ForestConfig()

    @property
    def name(self) -> str:
        return "forest"

    def fit(self, train: list[DomainSample], spec: LossSpec = MSE):
        return fit_random_forest(train, self.forest)

    def with_seed(self, seed: int) -> "ForestRuleConfig":
        return ForestRuleConfig(dataclasses.replace(self.forest, seed=int(seed)))


@dataclass(frozen=True)
class KernelRidgeRuleConfig:
    kernel: KernelRidgeConfig = KernelRidgeConfig()

    @property
    def name(self) -> str:
        return "kernel_ridge"

    def fit(self, train: list[DomainSample], spec: LossSpec = MSE):
        return fit_kernel_ridge(train, self.kernel)


@dataclass(frozen=True)
class DomainCvConfig:
    candidates: tuple = field(default_factory=tuple)

    @property
    def name(self) -> str:
        return "domain_cv(" + ",".join(c.name for c in self.candidates) + ")"

    def fit(self, train: list[DomainSample], spec: LossSpec = MSE):
        from .selection import fit_domain_cv

        return fit_domain_cv(list(self.candidates), train, spec).rule

    def with_seed(self, seed: int) -> "DomainCvConfig":
        return DomainCvConfig(tuple(seeded(c, seed) for c in self.candidates))


def seeded(config, seed: int | None):
    """Return ``config`` with its random seed replaced, if it has one."""
    if seed is None or not hasattr(config, "with_seed"):
        return config
    return config.with_seed(seed)


def _parse_value(text: str):
    low = text.lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_rule(text: str, fit_config: FitConfig = FitConfig()):
    """Build a rule config from ``name[:key=value,...]``.

    Domain cross-validation takes ``+``-separated candidates, e.g.
    ``domain-cv:forest+kernel-ridge``.
    """
    name, _, rest = text.strip().partition(":")
    name = name.strip().lower().replace("_", "-")
    if name == "domain-cv":
        candidates = [c for c in rest.split("+") if c.strip()]
        if not candidates:
            raise ValueError("domain-cv needs at least one candidate")
        return DomainCvConfig(tuple(parse_rule(c, fit_config) for c in candidates))
    options = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed option {item!r} in rule {text!r}")
        options[key.strip()] = _parse_value(value.strip())
    if name == "eu":
        return EuConfig(dataclasses.replace(fit_config, **options))
    if name == "cpt" or name.startswith("cpt-"):
        variant = name.split("-", 1)[1] if "-" in name else "abdg"
        return CptConfig(variant, dataclasses.replace(fit_config, **options))
    if name in ("forest", "rf", "random-forest"):
        return ForestRuleConfig(ForestConfig(**options))
    if name in ("kernel-ridge", "krr"):
        return KernelRidgeRuleConfig(KernelRidgeConfig(**options))
    raise ValueError(f"unknown rule {text!r}")
