"""Replay optimal node rules against realized hourly prices.

The rule for hour ``t`` is read off the lattice as a function of the price
observed at decision time: the pairs ``(X_t(n), u*_t(n))`` over the nodes of
layer ``t`` are interpolated linearly (clamped outside the node price range).
Wealth arrives one hour later: the quantity decided at hour ``t`` is sold at
the realized price of hour ``t+1``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hydro import HydroSystem
from .lattice import NodeField
from .solver import OptimalPlan

logger = logging.getLogger(__name__)


class BacktestError(ValueError):
    """Realized series or rules do not fit the backtest window."""


@dataclass
class RuleInterpolator:
    """Piecewise-linear map ``price -> control`` per decision hour.

    ``prices[t]`` is strictly increasing; ``controls[t]`` has one row per
    price and one column per turbine.
    """

    hours: np.ndarray
    prices: dict
    controls: dict

    def __call__(self, t: int, price: float) -> np.ndarray:
        if t not in self.prices:
            raise BacktestError(f"no rule for hour {t}")
        xp, fp = self.prices[t], self.controls[t]
        # np.interp clamps to the end values outside [xp[0], xp[-1]]
        return np.array([np.interp(price, xp, fp[:, j]) for j in range(fp.shape[1])])


def fit_rules(plan: OptimalPlan, prices: NodeField) -> RuleInterpolator:
    """Express each layer's node controls as a function of the node price.

    Nodes that share a price (to rounding) are merged and their controls
    averaged, so the abscissae are strictly increasing.
    """
    out_p, out_u = {}, {}
    u = plan.u
    for t in u.times():
        x = np.asarray(prices[t], dtype=float)
        ctrl = np.asarray(u[t], dtype=float).reshape(x.size, -1)
        order = np.argsort(x, kind="stable")
        x, ctrl = x[order], ctrl[order]
        keys, inverse = np.unique(np.round(x, 12), return_inverse=True)
        sums = np.zeros((keys.size, ctrl.shape[1]))
        np.add.at(sums, inverse, ctrl)
        counts = np.bincount(inverse, minlength=keys.size)[:, None]
        xs = np.zeros(keys.size)
        np.add.at(xs, inverse, x)
        out_p[t] = xs / counts[:, 0]
        out_u[t] = sums / counts
    return RuleInterpolator(np.array(list(u.times())), out_p, out_u)


@dataclass
class BacktestResult:
    """Hour-by-hour replay.

    Row ``h`` holds the realized price of hour ``h``, the quantity decided at
    ``h`` (zero at the last hour), the wealth received at ``h`` from the
    previous hour's decision plus the cash term, its running sum and the
    basin levels at ``h``.
    """

    hours: np.ndarray
    price: np.ndarray
    dispatch: np.ndarray          # (H, N) per turbine
    wealth: np.ndarray
    cum_wealth: np.ndarray
    basin_level: np.ndarray       # (H, B)
    clamps: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = []
        for i, h in enumerate(self.hours):
            out.append({"hour": int(h), "price": float(self.price[i]),
                        "dispatch": float(self.dispatch[i].sum()),
                        "wealth": float(self.wealth[i]), "cum_wealth": float(self.cum_wealth[i]),
                        "basin_level": float(self.basin_level[i].sum())})
        return out

    def to_csv(self, path) -> None:
        names = ["hour", "price", "dispatch", "wealth", "cum_wealth", "basin_level"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=names, lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _clamp_to_basins(u: np.ndarray, level: np.ndarray, inflow: np.ndarray, system: HydroSystem,
                     lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, list]:
    """Scale each basin's turbines so the next level stays within bounds."""
    notes = []
    j = 0
    u = u.copy()
    for b, basin in enumerate(system.basins):
        sl = slice(j, j + len(basin.turbines))
        j += len(basin.turbines)
        total = u[sl].sum()
        nxt = level[b] - total + inflow[b]
        if nxt < basin.y_min:
            target = level[b] + inflow[b] - basin.y_min
        elif nxt > basin.y_max:
            target = level[b] + inflow[b] - basin.y_max
        else:
            continue
        # move turbines towards the target total inside their boxes
        target = float(np.clip(target, lo[sl].sum(), hi[sl].sum()))
        if target < total:
            room = u[sl] - lo[sl]
        else:
            room = hi[sl] - u[sl]
        share = room / room.sum() if room.sum() > 0 else np.full(room.size, 1.0 / room.size)
        u[sl] = u[sl] + (target - total) * share
        # the level update must not cross a bound through rounding
        last = sl.stop - 1
        for _ in range(64):
            nxt = level[b] - u[sl].sum() + inflow[b]
            if nxt < basin.y_min:
                u[last] = np.nextafter(u[last], -np.inf)
            elif nxt > basin.y_max:
                u[last] = np.nextafter(u[last], np.inf)
            else:
                break
        notes.append((b, float(total), float(u[sl].sum())))
    return u, notes


def run(interp: RuleInterpolator, realized: Sequence[float], system: HydroSystem,
        t0: int = 0, start_level: Sequence[float] = None) -> BacktestResult:
    """Pass through the hours ``t0..T`` of one day applying the interpolated rules.

    ``realized`` holds the realized price of every hour ``t0..T``.  The control
    decided at hour ``t`` uses the price of hour ``t`` and is clamped to the
    turbine boxes and to the basin bounds of the next level; each clamp is
    logged and recorded in :attr:`BacktestResult.clamps`.  Wealth of hour
    ``t+1`` is ``sum_j u_t^j X_{t+1}`` plus the spot cash term.
    """
    hours = np.arange(t0, t0 + len(realized))
    decision_hours = [int(h) for h in hours[:-1]]
    missing = [h for h in decision_hours if h not in interp.prices]
    if missing:
        raise BacktestError(f"realized series covers hours {hours[0]}..{hours[-1]} but rules miss {missing}")
    x = np.asarray(realized, dtype=float)
    if not np.all(np.isfinite(x)):
        raise BacktestError("realized prices contain missing values")
    T = int(hours[-1])
    lo, hi = system.bounds()
    G = system.aggregation()
    inflow = np.column_stack([b.inflow_table(T) for b in system.basins]) if system.basins else None
    cash = system.spot.cash(T) if system.spot is not None else np.zeros(T + 1)
    level = np.array([b.y0 for b in system.basins], float) if start_level is None else np.array(start_level, float)

    H, N = len(hours), lo.size
    dispatch = np.zeros((H, N))
    wealth = np.zeros(H)
    levels = np.zeros((H, len(system.basins)))
    levels[0] = level
    clamps = []
    for i, t in enumerate(decision_hours):
        rule = interp(t, x[i])
        u = np.clip(rule, lo, hi)
        if np.any(u != rule):
            clamps.append((t, "turbine", rule.tolist(), u.tolist()))
            logger.info("hour %d: rule %s clamped to turbine box %s", t, rule, u)
        u2, notes = _clamp_to_basins(u, levels[i], inflow[t + 1], system, lo, hi)
        for b, before, after in notes:
            clamps.append((t, f"basin {b}", before, after))
            logger.info("hour %d: basin %d dispatch %.6g clamped to %.6g", t, b, before, after)
        dispatch[i] = u2
        levels[i + 1] = levels[i] - G @ u2 + inflow[t + 1]
        wealth[i + 1] = float(u2.sum()) * x[i + 1] + cash[t + 1]
    # accumulate in plain left-to-right order so the sum is reproducible
    cum = np.zeros(H)
    run_total = 0.0
    for i in range(H):
        run_total += wealth[i]
        cum[i] = run_total
    return BacktestResult(hours, x, dispatch, wealth, cum, levels, clamps)


def run_days(days: Sequence[tuple], system: HydroSystem, t0: int = 0, mode: str = "carry-over") -> list:
    """Back test several consecutive days.

    ``days`` is a sequence of ``(interp, realized)`` pairs.  With
    ``mode="carry-over"`` each day starts from the previous day's final basin
    levels; ``mode="reset"`` restarts every day from the configured levels.
    """
    if mode not in ("carry-over", "reset"):
        raise ValueError("mode must be 'carry-over' or 'reset'")
    out, level = [], None
    for interp, realized in days:
        res = run(interp, realized, system, t0=t0, start_level=level if mode == "carry-over" else None)
        out.append(res)
        level = res.basin_level[-1]
    return out
