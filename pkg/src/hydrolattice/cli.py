"""Command-line front end.

``hydrolattice solve|watervalues|backtest --config run.toml --out DIR``

Exit codes: 0 success, 2 configuration or input data error, 3 infeasible
instance, 4 no convergence (artifacts of the best iterate are still written).
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import BacktestError, fit_rules, run as run_backtest
from .config import ConfigError, RunConfig, load_config
from .hydro import assemble, water_values
from .lattice import build_lattice
from .outputs import write_iterations, write_node_water_values, write_plan, write_summary
from .processes import PriceDataError, fill_prices, read_hourly_csv, sample_drivers, sample_path
from .solver import InfeasibleError, solve
from .utility import UtilityDomainError

logger = logging.getLogger("hydrolattice")

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NOT_CONVERGED = 0, 2, 3, 4


def _realized(cfg: RunConfig) -> tuple[np.ndarray, str]:
    if cfg.realized_csv is None:
        return sample_path(cfg.price_model, cfg.T, seed=cfg.seed)[cfg.t0:], "synthetic"
    hours, prices = read_hourly_csv(cfg.realized_csv, cfg.realized_column)
    lookup = dict(zip(hours.tolist(), prices.tolist()))
    missing = [h for h in range(cfg.t0, cfg.T + 1) if h not in lookup]
    if missing:
        raise PriceDataError(f"{cfg.realized_csv}: missing hours {missing[:5]}")
    return np.array([lookup[h] for h in range(cfg.t0, cfg.T + 1)]), str(cfg.realized_csv)


def execute(pipeline: str, cfg: RunConfig, out: Path) -> int:
    """Run one pipeline and write its artifacts to ``out``; returns the exit status."""
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t_start = time.perf_counter()
    lat = build_lattice(cfg.k, cfg.T)
    prices = fill_prices(lat, cfg.price_model, sample_drivers(lat, cfg.scheme, cfg.seed))
    inst = assemble(cfg.system, prices, cfg.utility, cfg.t0, beta=cfg.beta)
    timings["setup_s"] = time.perf_counter() - t_start

    t1 = time.perf_counter()
    plan = solve(inst, cfg.solver)
    timings["solve_s"] = time.perf_counter() - t1
    write_plan(out / "plan.csv", plan, prices)
    write_iterations(out / "iterations.csv", plan)
    files = ["plan.csv", "iterations.csv"]

    summary = {"pipeline": pipeline, "version": __version__, "seed": cfg.seed,
               "lattice": {"k": cfg.k, "t0": cfg.t0, "T": cfg.T, "nodes": lat.n_nodes},
               "utility": cfg.utility.name, "objective": plan.objective,
               "barrier_objective": plan.barrier_objective, "mu_final": plan.mu,
               "iterations": plan.iterations, "converged": plan.converged,
               "objective_decreases": plan.decreases}

    wv = water_values(plan, prices)
    wv.to_csv(out / "water_values.csv")
    files.append("water_values.csv")
    summary["GP"] = [float(g) for g in wv.GP]
    if pipeline == "watervalues":
        write_node_water_values(out / "node_water_values.csv", wv, prices)
        files.append("node_water_values.csv")

    if pipeline == "backtest":
        t2 = time.perf_counter()
        realized, source = _realized(cfg)
        res = run_backtest(fit_rules(plan, prices), realized, cfg.system, t0=cfg.t0)
        res.to_csv(out / "backtest.csv")
        files.append("backtest.csv")
        timings["backtest_s"] = time.perf_counter() - t2
        summary["backtest"] = {"realized": source, "cum_wealth": float(res.cum_wealth[-1]),
                               "clamps": len(res.clamps)}

    timings["total_s"] = time.perf_counter() - t_start
    summary["timings"] = timings
    summary["files"] = files
    write_summary(out / "summary.json", summary)
    if not plan.converged:
        print(f"error: no convergence after {plan.iterations} iterations; best iterate written to {out}",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrolattice", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="pipeline", required=True)
    for name, help_ in [("solve", "optimal dispatch plan and water values"),
                        ("watervalues", "water values including the per-node field"),
                        ("backtest", "replay the optimal rules on realized prices")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, type=Path, help="TOML run configuration")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        s.add_argument("--seed", type=int, default=None, help="override the configured seed")
        s.add_argument("--verbose", "-v", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        return execute(args.pipeline, cfg, args.out)
    except (ConfigError, PriceDataError, BacktestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"error: infeasible instance: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except UtilityDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
