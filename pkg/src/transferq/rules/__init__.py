"""Decision rules: fitting procedures that map training samples to prediction rules."""

from .base import ConstantRule, PredictionRule, rule_from_text
from .configs import (
    CptConfig,
    DomainCvConfig,
    EuConfig,
    ForestRuleConfig,
    KernelRidgeRuleConfig,
    parse_rule,
    seeded,
)
from .economic import (
    CPT_VARIANTS,
    CptRule,
    ErmFit,
    EuRule,
    FitConfig,
    PartialFit,
    cpt_certainty_equivalent,
    eu_certainty_equivalent,
    fit_erm,
    fit_partial,
    fit_with_fixed,
)
from .kernel import KernelRidgeConfig, KernelRidgeRule, fit_kernel_ridge
from .selection import DomainCvResult, fit_domain_cv
from .trees import ForestConfig, ForestRule, fit_random_forest, grow_tree


def predict_eu(eta: float, lottery) -> float:
    """Certainty equivalent of one lottery under CRRA expected utility (NaN if undefined)."""
    return float(eu_certainty_equivalent(eta, lottery.z1, lottery.z2, lottery.p))


def predict_cpt(params, lottery) -> float:
    """Certainty equivalent of one lottery under CPT with ``params = (alpha, beta, gamma, delta)``."""
    return float(cpt_certainty_equivalent(*params, lottery.z1, lottery.z2, lottery.p))


__all__ = [
    "CPT_VARIANTS",
    "ConstantRule",
    "CptConfig",
    "CptRule",
    "DomainCvConfig",
    "DomainCvResult",
    "ErmFit",
    "EuConfig",
    "EuRule",
    "FitConfig",
    "ForestConfig",
    "ForestRule",
    "ForestRuleConfig",
    "KernelRidgeConfig",
    "KernelRidgeRule",
    "KernelRidgeRuleConfig",
    "PartialFit",
    "PredictionRule",
    "cpt_certainty_equivalent",
    "eu_certainty_equivalent",
    "fit_domain_cv",
    "fit_erm",
    "fit_kernel_ridge",
    "fit_partial",
    "fit_random_forest",
    "fit_with_fixed",
    "grow_tree",
    "parse_rule",
    "predict_cpt",
    "predict_eu",
    "rule_from_text",
    "seeded",
]
