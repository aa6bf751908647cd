"""Risk drivers and intraday price fields on the lattice.

Two price dynamics are supported:

* ``GBMModel``: driftless geometric Brownian motion with hourly log-return
  volatility ``sigma``.
* ``SpreadToSpotModel``: expected spot curve plus a driftless Gaussian spread
  with hourly volatility ``eta`` in EUR/MWh.

Drivers are filled layer by layer, one equiprobable standard normal value per
node.  A node's children see the drivers stored on them; the one-step move is
re-centred per parent so that the price is a martingale along the lattice
branches (the discrete counterpart of the ``-sigma**2/2`` compensation).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .lattice import Lattice, NodeField, propagate

ArrayLike = Union[float, Sequence[float], np.ndarray]


class PriceDataError(ValueError):
    """Malformed price input (model parameters or CSV data)."""


@dataclass
class DriverSample:
    """Standard normal driver values per layer ``1..T`` in canonical node order."""

    lattice: Lattice
    values: list  # values[t] for t = 0..T; layer 0 is an empty placeholder
    scheme: str = "quantile"

    def __getitem__(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.lattice.T:
            raise IndexError(f"drivers live on layers 1..{self.lattice.T}")
        return self.values[t]


def sample_drivers(lattice: Lattice, scheme: str = "quantile", seed: int = 0) -> DriverSample:
    """Attach ``N_t`` equiprobable standard normal values to every layer ``t >= 1``.

    ``quantile`` uses the midpoint quantiles ``Phi^{-1}((j - 1/2) / N_t)``
    (deterministic); ``monte_carlo`` draws i.i.d. normals from a seeded
    generator.
    """
    values = [np.zeros(0)]
    if scheme == "quantile":
        for t in range(1, lattice.T + 1):
            n = lattice.size(t)
            z = norm.ppf((np.arange(n) + 0.5) / n)
            # exact antisymmetry of the midpoint grid
            values.append(0.5 * (z - z[::-1]))
    elif scheme == "monte_carlo":
        rng = np.random.default_rng(seed)
        for t in range(1, lattice.T + 1):
            values.append(rng.standard_normal(lattice.size(t)))
    else:
        raise ValueError(f"unknown driver scheme {scheme!r}")
    return DriverSample(lattice, values, scheme)


def _per_hour(x: ArrayLike, T: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return np.full(T + 1, float(arr))
    if arr.shape != (T + 1,):
        raise PriceDataError(f"{name} needs one value per hour 0..{T}, got {arr.shape[0]}")
    return arr


@dataclass
class GBMModel:
    """Driftless geometric Brownian motion.

    Attributes
    ----------
    x0 : float
        Price at the valuation node, EUR/MWh. Must be positive.
    sigma : float or array
        Hourly log-return volatility; an array is indexed by the arrival hour.
    """

    x0: float
    sigma: ArrayLike

    def validate(self, T: int) -> None:
        if not self.x0 > 0:
            raise PriceDataError(f"GBM start price must be positive, got {self.x0}")
        if np.any(_per_hour(self.sigma, T, "sigma") < 0):
            raise PriceDataError("sigma must be non-negative")


@dataclass
class SpreadToSpotModel:
    """Intraday price as expected spot plus a driftless arithmetic spread.

    Attributes
    ----------
    expected_spot : array
        Expected spot price per hour ``0..T`` (EUR/MWh).
    eta : float or array
        Hourly spread volatility (EUR/MWh).
    spread0 : float, optional
        Spread at the valuation node. Defaults to ``x0 - expected_spot[0]``
        when ``x0`` is given, else zero.
    """

    expected_spot: ArrayLike
    eta: ArrayLike
    spread0: float = None
    x0: float = None

    def validate(self, T: int) -> None:
        _per_hour(self.expected_spot, T, "expected_spot")
        if np.any(_per_hour(self.eta, T, "eta") < 0):
            raise PriceDataError("eta must be non-negative")

    def initial_spread(self) -> float:
        if self.spread0 is not None:
            return float(self.spread0)
        if self.x0 is not None:
            return float(self.x0) - float(np.atleast_1d(self.expected_spot)[0])
        return 0.0


PriceModel = Union[GBMModel, SpreadToSpotModel]


def fill_prices(lattice: Lattice, model: PriceModel, drivers: DriverSample) -> NodeField:
    """Price field ``X_t(n)`` on every layer ``0..T`` (EUR/MWh)."""
    T = lattice.T
    model.validate(T)
    if isinstance(model, GBMModel):
        sigma = _per_hour(model.sigma, T, "sigma")
        layers = [np.array([float(model.x0)])]
        for t in range(T):
            z = drivers[t + 1]
            # log of the mean one-step growth seen from each parent
            parent, child, _ = lattice.edges(t)
            expo = (sigma[t + 1] * z[child]).reshape(-1, lattice.k)
            comp = logsumexp(expo, axis=1) - np.log(lattice.k)
            layers.append(propagate(
                lattice, t, layers[-1],
                lambda x, c, zc, s=sigma[t + 1]: x * np.exp(s * zc - c),
                parent_aux=[comp], child_aux=[z]))
        return NodeField(lattice, 0, layers, unit="EUR/MWh", name="price")
    if isinstance(model, SpreadToSpotModel):
        spot = _per_hour(model.expected_spot, T, "expected_spot")
        eta = _per_hour(model.eta, T, "eta")
        spread = [np.array([model.initial_spread()])]
        for t in range(T):
            z = drivers[t + 1]
            zbar = lattice.child_mean(t, z)
            spread.append(propagate(
                lattice, t, spread[-1],
                lambda s, zb, zc, e=eta[t + 1]: s + e * (zc - zb),
                parent_aux=[zbar], child_aux=[z]))
        return NodeField(lattice, 0, [spot[t] + spread[t] for t in range(T + 1)],
                         unit="EUR/MWh", name="price")
    raise TypeError(f"unsupported price model {type(model).__name__}")


def sample_path(model: PriceModel, T: int, seed: int = 0) -> np.ndarray:
    """One price path over hours ``0..T`` drawn from the continuous model (seeded).

    Used as a synthetic realized series for back tests.
    """
    model.validate(T)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(T)
    if isinstance(model, GBMModel):
        sigma = _per_hour(model.sigma, T, "sigma")[1:]
        steps = sigma * z - 0.5 * sigma ** 2
        return float(model.x0) * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    if isinstance(model, SpreadToSpotModel):
        spot = _per_hour(model.expected_spot, T, "expected_spot")
        eta = _per_hour(model.eta, T, "eta")[1:]
        spread = model.initial_spread() + np.concatenate([[0.0], np.cumsum(eta * z)])
        return spot + spread
    raise TypeError(f"unsupported price model {type(model).__name__}")


def log_return_volatility(prices: ArrayLike) -> float:
    """Sample standard deviation of consecutive log returns."""
    p = np.asarray(prices, dtype=float)
    if p.size < 3 or np.any(p <= 0):
        raise PriceDataError("need at least three positive prices")
    return float(np.std(np.diff(np.log(p)), ddof=1))


def read_hourly_csv(path, value_column: str = None) -> tuple[np.ndarray, np.ndarray]:
    """Read ``(hour, price)`` pairs from a CSV with a header row.

    The first column is the hour index (or a timestamp, replaced by its row
    position); the price column is ``value_column`` or the second column.
    Raises :class:`PriceDataError` naming the offending line.
    """
    hours, prices = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PriceDataError(f"{path}: empty file") from None
        col = 1 if value_column is None else header.index(value_column)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                price = float(row[col])
            except (ValueError, IndexError):
                raise PriceDataError(f"{path}:{lineno}: cannot read price from {row!r}") from None
            try:
                hour = int(row[0])
            except ValueError:
                hour = len(hours)
            hours.append(hour)
            prices.append(price)
    if not hours:
        raise PriceDataError(f"{path}: no data rows")
    h = np.asarray(hours)
    if np.any(np.diff(h) != 1):
        raise PriceDataError(f"{path}: hours must be consecutive")
    return h, np.asarray(prices)
