"""CSV and JSON artifacts of a run.

All CSVs are comma separated, UTF-8, LF line endings, with a header row;
floats are written with ``repr`` so a file round-trips exactly and two runs
with the same inputs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from typing import Iterable

import numpy as np

from .lattice import NodeField
from .solver import OptimalPlan


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_rows(path, fieldnames: list, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _names(prefix: str, n: int) -> list:
    return [prefix] if n == 1 else [f"{prefix}_{i}" for i in range(n)]


def plan_rows(plan: OptimalPlan, prices: NodeField) -> tuple[list, list]:
    """One row per node of layers ``t0..T``: node id, hour, level, price, controls, levels.

    Controls are empty on the last layer, which has no decision.
    """
    inst = plan.instance
    lat = inst.lattice
    N, K = inst.n_controls, inst.n_states
    ucols, ycols = _names("u", N), _names("y", K)
    rows = []
    for t in range(inst.t0, inst.T + 1):
        y = plan.y[t]
        u = plan.u[t] if t < inst.T else None
        for j in range(lat.size(t)):
            r = {"node": lat.node_id(t, j), "t": t, "j": j, "price": float(prices[t][j])}
            for m, c in enumerate(ucols):
                r[c] = float(u[j, m]) if u is not None else ""
            for m, c in enumerate(ycols):
                r[c] = float(y[j, m])
            rows.append(r)
    return ["node", "t", "j", "price"] + ucols + ycols, rows


def write_plan(path, plan: OptimalPlan, prices: NodeField) -> None:
    names, rows = plan_rows(plan, prices)
    write_rows(path, names, rows)


LOG_COLUMNS = ["iter", "j", "mu", "objective", "barrier_objective", "newton_du", "max_du",
               "min_slack", "decrement", "backtracks", "eps"]


def write_iterations(path, plan: OptimalPlan) -> None:
    write_rows(path, LOG_COLUMNS, ({k: r[k] for k in LOG_COLUMNS} for r in plan.log))


def write_node_water_values(path, wv, prices: NodeField) -> None:
    """Stochastic water value per node of layers ``t0+1..T``."""
    lat = wv.gp.lattice
    rows = []
    for t in wv.gp.times():
        for j, g in enumerate(wv.gp[t]):
            rows.append({"node": lat.node_id(t, j), "t": t, "j": j, "price": float(prices[t][j]),
                         "gp": float(g)})
    write_rows(path, ["node", "t", "j", "price", "gp"], rows)


def write_summary(path, summary: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
