"""Concave increasing utilities of stage wealth.

Every utility evaluates ``U(v + shift)``; the shift keeps the logarithmic and
hyperbolic variants defined when stage wealth can be zero or negative.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UtilityDomainError(ValueError):
    """Wealth (or utility level) outside the utility's domain."""


@dataclass(frozen=True)
class Utility:
    shift: float = 0.0
    name = "base"

    def _arg(self, v):
        return np.asarray(v, dtype=float) + self.shift

    def value(self, v):
        raise NotImplementedError

    def d1(self, v):
        raise NotImplementedError

    def d2(self, v):
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError

    def in_domain(self, v) -> np.ndarray:
        return np.isfinite(self._arg(v))

    def check_domain(self, v, where: str = "") -> None:
        ok = self.in_domain(v)
        if not np.all(ok):
            bad = np.asarray(v, dtype=float)[~ok] if np.ndim(v) else v
            loc = f" at {where}" if where else ""
            raise UtilityDomainError(
                f"{self.name} utility undefined{loc} for wealth {np.ravel(bad)[:5]} (shift={self.shift})")

    def certainty_equivalent(self, values, weights) -> float:
        """``U^{-1}(E[U(values)])`` under the given probability weights."""
        values = np.asarray(values, dtype=float)
        self.check_domain(values, "certainty equivalent")
        return float(self.inverse(np.dot(weights, self.value(values))))


@dataclass(frozen=True)
class Linear(Utility):
    name = "linear"

    def value(self, v):
        return self._arg(v)

    def d1(self, v):
        return np.ones_like(self._arg(v))

    def d2(self, v):
        return np.zeros_like(self._arg(v))

    def inverse(self, y):
        return np.asarray(y, dtype=float) - self.shift


@dataclass(frozen=True)
class Exponential(Utility):
    """``U(v) = 1 - exp(-alpha v)``."""

    alpha: float = 1.0
    name = "exponential"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    def value(self, v):
        return -np.expm1(-self.alpha * self._arg(v))

    def d1(self, v):
        return self.alpha * np.exp(-self.alpha * self._arg(v))

    def d2(self, v):
        return -self.alpha ** 2 * np.exp(-self.alpha * self._arg(v))

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y >= 1):
            raise UtilityDomainError("exponential utility inverse requires y < 1")
        return -np.log1p(-y) / self.alpha - self.shift


@dataclass(frozen=True)
class Logarithmic(Utility):
    name = "logarithmic"

    def in_domain(self, v):
        return self._arg(v) > 0

    def value(self, v):
        return np.log(self._arg(v))

    def d1(self, v):
        return 1.0 / self._arg(v)

    def d2(self, v):
        return -1.0 / self._arg(v) ** 2

    def inverse(self, y):
        return np.exp(np.asarray(y, dtype=float)) - self.shift


@dataclass(frozen=True)
class Hyperbolic(Utility):
    """``U(v) = v**gamma / gamma`` with ``0 < gamma < 1``."""

    gamma: float = 0.5
    name = "hyperbolic"

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    def in_domain(self, v):
        return self._arg(v) >= 0

    def value(self, v):
        return self._arg(v) ** self.gamma / self.gamma

    def d1(self, v):
        with np.errstate(divide="ignore"):
            return self._arg(v) ** (self.gamma - 1.0)

    def d2(self, v):
        with np.errstate(divide="ignore"):
            return (self.gamma - 1.0) * self._arg(v) ** (self.gamma - 2.0)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise UtilityDomainError("hyperbolic utility inverse requires y >= 0")
        return (self.gamma * y) ** (1.0 / self.gamma) - self.shift


_VARIANTS = {"linear": Linear, "exponential": Exponential,
             "logarithmic": Logarithmic, "hyperbolic": Hyperbolic}


def make_utility(name: str, **params) -> Utility:
    """Build a utility by name, e.g. ``make_utility("hyperbolic", gamma=0.95)``."""
    try:
        cls = _VARIANTS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown utility {name!r}; choose from {sorted(_VARIANTS)}") from None
    return cls(**params)
