"""Run configuration read from a TOML file.

Example::

    seed = 7

    [lattice]
    k = 4
    t0 = 0
    T = 6

    [prices]
    model = "gbm"           # or "spread"
    x0 = 37.40
    sigma = 0.1997
    scheme = "quantile"     # or "monte_carlo" (uses the seed)

    [utility]
    name = "hyperbolic"
    gamma = 0.95

    [[basins]]
    name = "upper"
    y0 = 41.5
    y_min = 40.0
    y_max = 160000.0
    inflow = 0.0
      [[basins.turbines]]
      u_min = 0.0
      u_max = 500.0

    [solver]
    mu0 = 1.0
    centering_steps = 50

    [backtest]
    realized_csv = "realized.csv"   # optional; a seeded synthetic path otherwise

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .hydro import Basin, HydroSystem, SpotSchedule, Turbine
from .processes import GBMModel, SpreadToSpotModel, read_hourly_csv
from .solver import SolverConfig
from .utility import make_utility


class ConfigError(ValueError):
    """Unreadable or inconsistent run configuration."""


@dataclass
class RunConfig:
    k: int
    t0: int
    T: int
    price_model: object
    scheme: str
    utility: object
    system: HydroSystem
    solver: SolverConfig
    seed: int = 0
    beta: Optional[list] = None
    realized_csv: Optional[Path] = None
    realized_column: Optional[str] = None
    backtest_mode: str = "carry-over"
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict)


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing key '{key}' in [{where}]")
    return section[key]


def _series(value, base: Path, where: str):
    """A number, a list, or ``{csv = "...", column = "..."}`` read through the hourly CSV reader."""
    if isinstance(value, dict):
        path = base / _require(value, "csv", where)
        return read_hourly_csv(path, value.get("column"))[1]
    if isinstance(value, (list, int, float)):
        return np.asarray(value, dtype=float)
    raise ConfigError(f"[{where}] expects a number, a list or a csv table")


def _prices(sec: dict, base: Path, T: int):
    model = str(_require(sec, "model", "prices")).lower()
    if model == "gbm":
        return GBMModel(x0=float(_require(sec, "x0", "prices")),
                        sigma=_series(_require(sec, "sigma", "prices"), base, "prices.sigma"))
    if model == "spread":
        spot = _series(_require(sec, "expected_spot", "prices"), base, "prices.expected_spot")
        if spot.ndim == 1 and spot.size > T + 1:
            spot = spot[:T + 1]
        return SpreadToSpotModel(expected_spot=spot,
                                 eta=_series(_require(sec, "eta", "prices"), base, "prices.eta"),
                                 spread0=sec.get("spread0"), x0=sec.get("x0"))
    raise ConfigError(f"unknown price model '{model}' (use 'gbm' or 'spread')")


def _system(data: dict, base: Path, T: int) -> HydroSystem:
    basins = []
    for i, b in enumerate(_require(data, "basins", "root")):
        where = f"basins[{i}]"
        turbines = [Turbine(float(_require(tb, "u_min", where + ".turbines")),
                            float(_require(tb, "u_max", where + ".turbines")), str(tb.get("name", "")))
                    for tb in _require(b, "turbines", where)]
        inflow = _series(b.get("inflow", 0.0), base, where + ".inflow")
        basins.append(Basin(float(_require(b, "y0", where)), float(_require(b, "y_min", where)),
                            float(_require(b, "y_max", where)), turbines, inflow=inflow,
                            name=str(b.get("name", f"basin{i}"))))
    spot = None
    if "spot" in data:
        s = data["spot"]
        spot = SpotSchedule(_series(_require(s, "sell", "spot"), base, "spot.sell"),
                            _series(_require(s, "buy", "spot"), base, "spot.buy"),
                            _series(_require(s, "price", "spot"), base, "spot.price"))
        try:
            spot.cash(T)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    system = HydroSystem(basins, spot)
    try:
        system.validate()
        for b in basins:
            b.inflow_table(T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return system


def parse_config(data: dict, base: Path = Path("."), source: Path = None) -> RunConfig:
    """Build a :class:`RunConfig` from an already parsed TOML mapping."""
    lat = _require(data, "lattice", "root")
    k, t0, T = (int(_require(lat, key, "lattice")) for key in ("k", "t0", "T"))
    if k < 2 or T < 1 or not 0 <= t0 < T:
        raise ConfigError(f"[lattice] needs k >= 2, T >= 1 and 0 <= t0 < T (got k={k}, t0={t0}, T={T})")
    psec = _require(data, "prices", "root")
    usec = dict(_require(data, "utility", "root"))
    try:
        utility = make_utility(str(usec.pop("name", "linear")), **usec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[utility] {exc}") from None
    allowed = {f.name for f in fields(SolverConfig)}
    ssec = data.get("solver", {})
    unknown = set(ssec) - allowed
    if unknown:
        raise ConfigError(f"[solver] unknown keys {sorted(unknown)}")
    try:
        solver = SolverConfig(**ssec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[solver] {exc}") from None
    bt = data.get("backtest", {})
    realized = bt.get("realized_csv")
    beta = data.get("beta")
    if beta is not None and len(beta) != T + 1:
        raise ConfigError(f"beta needs {T + 1} entries (hours 0..{T})")
    mode = str(bt.get("mode", "carry-over"))
    if mode not in ("carry-over", "reset"):
        raise ConfigError("[backtest] mode must be 'carry-over' or 'reset'")
    try:
        model = _prices(psec, base, T)
        model.validate(T)
    except ValueError as exc:
        raise ConfigError(f"[prices] {exc}") from None
    scheme = str(psec.get("scheme", "quantile"))
    if scheme not in ("quantile", "monte_carlo"):
        raise ConfigError("[prices] scheme must be 'quantile' or 'monte_carlo'")
    return RunConfig(k=k, t0=t0, T=T, price_model=model, scheme=scheme, utility=utility,
                     system=_system(data, base, T), solver=solver, seed=int(data.get("seed", 0)),
                     beta=beta, realized_csv=(base / realized) if realized else None,
                     realized_column=bt.get("column"), backtest_mode=mode, source=source, raw=data)


def load_config(path) -> RunConfig:
    """Read and validate a TOML run configuration."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data, base=path.parent, source=path)
