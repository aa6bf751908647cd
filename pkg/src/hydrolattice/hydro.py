"""Intraday dispatch of a hydro system and its water values.

Basin levels are in MWh of stored energy, turbine/pump quantities in MWh per
hour (negative lower bounds mean pumping) and prices in EUR/MWh.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .lattice import NodeField
from .solver import InfeasibleError, OptimalPlan, ProblemInstance
from .utility import Utility


@dataclass
class Turbine:
    u_min: float
    u_max: float
    name: str = ""


@dataclass
class Basin:
    """A basin with its turbines/pumps.

    ``inflow`` is a deterministic table indexed by hour ``0..T`` (only hours
    ``t0+1..T`` are used) or a scalar applied to every hour.
    ``inflow_field`` optionally replaces it with a per-node field.
    """

    y0: float
    y_min: float
    y_max: float
    turbines: list
    inflow: object = 0.0
    inflow_field: Optional[NodeField] = None
    name: str = ""

    def validate(self) -> None:
        if not self.y_min < self.y_max:
            raise ValueError(f"basin {self.name!r}: need y_min < y_max")
        if not self.y_min <= self.y0 <= self.y_max:
            raise ValueError(f"basin {self.name!r}: initial level {self.y0} outside [{self.y_min}, {self.y_max}]")
        if not self.turbines:
            raise ValueError(f"basin {self.name!r} has no turbine")
        for tb in self.turbines:
            if not tb.u_min <= tb.u_max:
                raise ValueError(f"turbine {tb.name!r}: u_min > u_max")

    def inflow_table(self, T: int) -> np.ndarray:
        arr = np.asarray(self.inflow, dtype=float)
        if arr.ndim == 0:
            return np.full(T + 1, float(arr))
        if arr.shape != (T + 1,):
            raise ValueError(f"basin {self.name!r}: inflow table needs hours 0..{T}")
        return arr


@dataclass
class SpotSchedule:
    """Exogenous day-ahead positions: quantities in MWh and prices in EUR/MWh per hour ``0..T``."""

    sell: Sequence[float]
    buy: Sequence[float]
    price: Sequence[float]

    def cash(self, T: int) -> np.ndarray:
        s, b, p = (np.asarray(x, dtype=float) for x in (self.sell, self.buy, self.price))
        for x in (s, b, p):
            if x.shape != (T + 1,):
                raise ValueError(f"spot schedule needs hours 0..{T}")
        return (s - b) * p


@dataclass
class HydroSystem:
    basins: list
    spot: Optional[SpotSchedule] = None

    @property
    def n_turbines(self) -> int:
        return sum(len(b.turbines) for b in self.basins)

    def aggregation(self) -> np.ndarray:
        """(B, N) matrix summing each basin's turbines."""
        G = np.zeros((len(self.basins), self.n_turbines))
        j = 0
        for b, basin in enumerate(self.basins):
            G[b, j:j + len(basin.turbines)] = 1.0
            j += len(basin.turbines)
        return G

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        tb = [t for b in self.basins for t in b.turbines]
        return np.array([t.u_min for t in tb], float), np.array([t.u_max for t in tb], float)

    def validate(self) -> None:
        if not self.basins:
            raise ValueError("hydro system has no basin")
        for b in self.basins:
            b.validate()


def feasibility_scan(system: HydroSystem, t0: int, T: int) -> None:
    """Interval check of reachable basin levels under deterministic inflows.

    Raises :class:`InfeasibleError` when some hour leaves no level strictly
    inside the basin bounds.
    """
    for basin in system.basins:
        if basin.inflow_field is not None:
            continue
        inflow = basin.inflow_table(T)
        umin = sum(tb.u_min for tb in basin.turbines)
        umax = sum(tb.u_max for tb in basin.turbines)
        lo = hi = basin.y0
        for t in range(t0, T):
            lo = max(lo - umax + inflow[t + 1], basin.y_min)
            hi = min(hi - umin + inflow[t + 1], basin.y_max)
            if not lo < hi:
                raise InfeasibleError(
                    f"basin {basin.name!r}: no admissible level at hour {t + 1} "
                    f"(reachable [{lo:.6g}, {hi:.6g}] vs bounds [{basin.y_min}, {basin.y_max}])")


def assemble(system: HydroSystem, prices: NodeField, utility: Utility, t0: int,
             beta: Optional[Sequence[float]] = None) -> ProblemInstance:
    """Build the dispatch problem on the price lattice.

    States are basin levels with ``Y_{t+1} = Y_t - u_t^b + i_{t+1}``.  Per
    stage the inequality rows are, in order: turbine lower bounds, turbine
    upper bounds, basin lower bounds and basin upper bounds on the expected
    next level ``Y_t - u_t^b + E_t[i_{t+1}]``.  Stage wealth is
    ``(sum_j u_{t-1}^j) X_t + (sell_t - buy_t) S_t``.
    """
    system.validate()
    lat = prices.lattice
    T = lat.T
    if prices.t_start > t0 or prices.t_end < T:
        raise ValueError(f"prices must cover layers {t0}..{T}")
    feasibility_scan(system, t0, T)
    G = system.aggregation()
    Bn, N = G.shape
    u_lo, u_hi = system.bounds()
    I_B, I_N = np.eye(Bn), np.eye(N)
    E = np.vstack([np.zeros((2 * N, Bn)), I_B, -I_B])
    F = np.vstack([I_N, -I_N, -G, G])
    y_min = np.array([b.y_min for b in system.basins])
    y_max = np.array([b.y_max for b in system.basins])

    # inflows at children (dynamics) and their conditional means at parents (constraints)
    b_layers, ibar_layers = [], []
    for t in range(t0, T):
        child = np.zeros((lat.size(t + 1), Bn))
        for k, basin in enumerate(system.basins):
            if basin.inflow_field is not None:
                child[:, k] = basin.inflow_field[t + 1]
            else:
                child[:, k] = basin.inflow_table(T)[t + 1]
        b_layers.append(child)
        ibar_layers.append(np.column_stack([lat.child_mean(t, child[:, k]) for k in range(Bn)]))
    e_layers = []
    for t, ibar in zip(range(t0, T), ibar_layers):
        n = lat.size(t)
        e_layers.append(np.hstack([np.tile(u_lo, (n, 1)), np.tile(-u_hi, (n, 1)),
                                   y_min - ibar, -y_max + ibar]))
    cash = system.spot.cash(T) if system.spot is not None else np.zeros(T + 1)
    value_lin = [np.tile(prices[t][:, None], (1, N)) for t in range(t0 + 1, T + 1)]
    value_const = [np.full(lat.size(t), cash[t]) for t in range(t0 + 1, T + 1)]
    y0 = np.array([b.y0 for b in system.basins], float)
    return ProblemInstance(
        lattice=lat, t0=t0, y0=y0, A=I_B, B=-G, b=b_layers, E=E, F=F, e=e_layers,
        value_lin=value_lin, value_const=value_const, utility=utility,
        beta=None if beta is None else np.asarray(beta, float), u_lower=u_lo, u_upper=u_hi)


@dataclass
class WaterValues:
    """Stochastic water values ``gp`` per node and their certainty equivalents ``GP`` per hour.

    ``gp`` lives on layers ``t0+1..T``; ``expected`` holds the conditional
    expectation of next hour's ``gp`` at each decision node of layers
    ``t0..T-1``, which is the marginal value of one more MWh stored at that node.
    """

    hours: np.ndarray
    gp: NodeField
    GP: np.ndarray
    expected: NodeField

    def rows(self) -> list[dict]:
        out = []
        for h, GP in zip(self.hours, self.GP):
            g = self.gp[int(h)]
            out.append({"hour": int(h), "GP": float(GP), "gp_mean": float(self.gp.mean(int(h))),
                        "gp_min": float(g.min()), "gp_max": float(g.max())})
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=["hour", "GP", "gp_mean", "gp_min", "gp_max"], lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def edge_water_values(plan: OptimalPlan, prices: NodeField, utility: Utility = None) -> list:
    """``X_{t+1}(c) U'(V)`` on every edge ``n -> c``, per layer ``t0..T-1``, grouped by parent."""
    inst = plan.instance
    utility = utility or inst.utility
    lat = inst.lattice
    out = []
    for t in inst.control_times():
        V, _, parent = inst.stage_wealth(t, plan.u[t])
        utility.check_domain(V, f"hour {t + 1}")
        _, child, _ = lat.edges(t)
        out.append(prices[t + 1][child] * utility.d1(V))
    return out


def water_values(plan: OptimalPlan, prices: NodeField, utility: Utility = None) -> WaterValues:
    """Stochastic and certainty-equivalent water values of a solved plan.

    On the edge ``n -> c`` the marginal value is ``X_{t+1}(c) U'(V)`` with the
    control of the parent ``n``; a child's value is the parent-weighted average
    of its incoming edges, and ``GP_t = U^{-1}(E[U(gp_t)])`` over the layer.
    """
    inst = plan.instance
    utility = utility or inst.utility
    lat, t0, T = inst.lattice, inst.t0, inst.T
    edges = edge_water_values(plan, prices, utility)
    gp_layers, exp_layers, GP = [], [], []
    for t, ev in zip(inst.control_times(), edges):
        _, child, w = lat.edges(t)
        node = np.zeros(lat.size(t + 1))
        np.add.at(node, child, w * ev)
        gp_layers.append(node)
        exp_layers.append(ev.reshape(-1, lat.k).mean(axis=1))
        GP.append(utility.certainty_equivalent(node, lat.prob(t + 1)))
    return WaterValues(
        hours=np.arange(t0 + 1, T + 1),
        gp=NodeField(lat, t0 + 1, gp_layers, unit="EUR/MWh", name="gp"),
        GP=np.array(GP),
        expected=NodeField(lat, t0, exp_layers, unit="EUR/MWh", name="expected gp"))
