"""Closed-form design calculations for a partial human-coding budget.

With treated fraction p, coded fraction h and predictive R^2 (equal in both
arms, homoskedastic outcomes), the model-assisted variance is

    (1/N) (1/p + 1/(1-p)) (1 + (1-h)/h (1-R^2)) sigma^2

and the coded-subset-only variance is the same full-coding term divided by h.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Iterable

from scipy.stats import norm

from .errors import InvalidPlan

DEFAULT_MULTIPLIER = 2.80


class NegativeR2Warning(UserWarning):
    """The assumed R^2 is negative: the model would hurt precision relative to R^2 = 0."""


@dataclass(frozen=True)
class DesignPlan:
    N: int
    p: float = 0.5
    h: float = 1.0
    r2: float = 0.0
    sigma2: float = 1.0
    alpha: float = 0.05
    power: float = 0.80
    mdes_multiplier: float = DEFAULT_MULTIPLIER

    def __post_init__(self) -> None:
        checks = [
            (self.N >= 2, f"N must be >= 2 (got {self.N})"),
            (0 < self.p < 1, f"p must satisfy 0 < p < 1 (got {self.p})"),
            (0 < self.h <= 1, f"h must satisfy 0 < h <= 1 (got {self.h})"),
            (self.r2 <= 1, f"r2 must be <= 1 (got {self.r2})"),
            (self.sigma2 > 0, f"sigma2 must be > 0 (got {self.sigma2})"),
            (0 < self.alpha < 1, f"alpha must satisfy 0 < alpha < 1 (got {self.alpha})"),
            (0 < self.power < 1, f"power must satisfy 0 < power < 1 (got {self.power})"),
            (self.mdes_multiplier > 0, f"mdes_multiplier must be > 0 (got {self.mdes_multiplier})"),
        ]
        for ok, msg in checks:
            if not (ok and all(math.isfinite(v) for v in (self.p, self.h, self.r2, self.sigma2))):
                raise InvalidPlan(msg if not ok else "plan values must be finite")

    def with_h(self, h: float) -> "DesignPlan":
        return replace(self, h=h)

    def to_dict(self) -> dict:
        return asdict(self)


def normal_multiplier(alpha: float = 0.05, power: float = 0.80) -> float:
    """z_{1-alpha/2} + z_{power}; about 2.80 at the defaults."""
    return float(norm.ppf(1 - alpha / 2) + norm.ppf(power))


def _warn_r2(plan: DesignPlan) -> None:
    if plan.r2 < 0:
        warnings.warn(
            f"assumed R^2 = {plan.r2} is negative; the inflation exceeds the R^2 = 0 (no-gain) case",
            NegativeR2Warning,
            stacklevel=3,
        )


def full_coding_variance(plan: DesignPlan) -> float:
    return (1 / plan.N) * (1 / plan.p + 1 / (1 - plan.p)) * plan.sigma2


def inflation_factor(plan: DesignPlan) -> float:
    """Variance inflation over coding every document."""
    return 1 + (1 - plan.h) / plan.h * (1 - plan.r2)


def variance_ma(plan: DesignPlan) -> float:
    _warn_r2(plan)
    return full_coding_variance(plan) * inflation_factor(plan)


def variance_subset(plan: DesignPlan) -> float:
    return full_coding_variance(plan) / plan.h


def relative_variance(plan: DesignPlan) -> float:
    """Model-assisted over subset-only variance, 1 - R^2 (1 - h)."""
    _warn_r2(plan)
    return 1 - plan.r2 * (1 - plan.h)


def mdes(plan: DesignPlan) -> float:
    return plan.mdes_multiplier * math.sqrt(variance_ma(plan))


@dataclass(frozen=True)
class CurveRow:
    h: float
    se: float
    mdes: float
    inflation: float  # standard-error inflation over full coding
    variance_inflation: float
    relative_variance: float


def mdes_curve(plan: DesignPlan, h_grid: Iterable[float]) -> list[CurveRow]:
    rows = []
    _warn_r2(plan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NegativeR2Warning)
        for h in h_grid:
            p = plan.with_h(float(h))
            v = variance_ma(p)
            f = inflation_factor(p)
            rows.append(CurveRow(p.h, math.sqrt(v), plan.mdes_multiplier * math.sqrt(v), math.sqrt(f), f, relative_variance(p)))
    return rows


def default_h_grid(step: float = 0.05) -> list[float]:
    k = round(1 / step)
    return [round((i + 1) * step, 10) for i in range(k)]


@dataclass(frozen=True)
class RequiredFraction:
    h: float | None
    feasible: bool
    full_coding_mdes: float


def required_fraction(plan: DesignPlan, target_mdes: float) -> RequiredFraction:
    """Smallest coded fraction whose MDES does not exceed ``target_mdes``.

    With R^2 = 1 every positive fraction works and ``h`` is reported as 0.
    """
    if not (target_mdes > 0 and math.isfinite(target_mdes)):
        raise InvalidPlan(f"target MDES must be > 0 (got {target_mdes})")
    _warn_r2(plan)
    v1 = full_coding_variance(plan)
    full = plan.mdes_multiplier * math.sqrt(v1)
    ratio = (target_mdes / plan.mdes_multiplier) ** 2 / v1
    if ratio < 1 - 1e-12:
        return RequiredFraction(None, False, full)
    if plan.r2 >= 1:
        return RequiredFraction(0.0, True, full)
    x = max(ratio - 1, 0.0) / (1 - plan.r2)  # (1-h)/h
    return RequiredFraction(min(1.0, 1 / (1 + x)), True, full)
