"""Water values along the day for several attitudes to risk.

The stochastic water value gp_t(n) is the marginal utility of one more MWh
sold at node n, expressed in money: X_t(n) U'(u*_{t-1} X_t(n)).  Its
certainty equivalent GP_t = U^{-1}(E[U(gp_t)]) condenses the node values into
one ask price per hour.  For a linear utility under driftless GBM the curve
is flat at the start price; a concave utility pulls GP below the mean of gp.

Run:  python3 demos/03_water_values.py
"""
from hydrolattice import (Basin, GBMModel, HydroSystem, SolverConfig, Turbine, assemble, build_lattice,
                          fill_prices, make_utility, sample_drivers, solve, water_values)

lat = build_lattice(4, 6)
prices = fill_prices(lat, GBMModel(37.40, 0.1997), sample_drivers(lat))
system = HydroSystem([Basin(y0=80000.0, y_min=40.0, y_max=160000.0, turbines=[Turbine(0.0, 500.0)])])

menu = {
    "linear": make_utility("linear"),
    "exponential a=1e-4": make_utility("exponential", alpha=1e-4),
    "logarithmic": make_utility("logarithmic"),
    "hyperbolic g=0.95": make_utility("hyperbolic", gamma=0.95),
}
print("hour " + "".join(f"{name:>22s}" for name in menu))
curves = {}
for name, utility in menu.items():
    plan = solve(assemble(system, prices, utility, t0=0), SolverConfig.recommended())
    curves[name] = water_values(plan, prices)
for i, h in enumerate(curves["linear"].hours):
    print(f"{h:4d} " + "".join(f"{curves[n].GP[i]:22.6g}" for n in menu))

wv = curves["hyperbolic g=0.95"]
print("\nhyperbolic utility: certainty equivalent vs mean of the node values")
for i, h in enumerate(wv.hours):
    mean = wv.gp.mean(int(h))
    print(f"  hour {h}: GP {wv.GP[i]:.6g}  E[gp] {mean:.6g}  risk add-on {wv.GP[i] - mean:+.3e}")
print("The add-on is never positive for a concave utility (Jensen's inequality).")
print("\nNote that gp is in utility units per MWh: only the linear curve is directly in EUR/MWh.")
