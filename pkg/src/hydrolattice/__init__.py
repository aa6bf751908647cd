"""Risk-averse hydro dispatch and water values on recombining lattices."""
from .lattice import Lattice, LatticeError, NodeField, build_lattice, node_probabilities, propagate
from .processes import (DriverSample, GBMModel, PriceDataError, SpreadToSpotModel, fill_prices,
                        log_return_volatility, read_hourly_csv, sample_drivers, sample_path)
from .utility import Exponential, Hyperbolic, Linear, Logarithmic, Utility, UtilityDomainError, make_utility
from .solver import (InfeasibleError, InteriorityError, NumericalError, OptimalPlan, ProblemInstance,
                     SolverConfig, SolverError, feasibility_step, newton_direction, riccati_backward, solve,
                     stage_blocks)
from .hydro import (Basin, HydroSystem, SpotSchedule, Turbine, WaterValues, assemble, edge_water_values,
                    water_values)
from .backtest import BacktestResult, RuleInterpolator, fit_rules, run_days
from .backtest import run as run_backtest

__version__ = "0.1.0"
