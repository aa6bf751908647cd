"""Recombining lattices and the two price models.

A k-ary recombining lattice keeps the node count polynomial: layer t has
(k-1)t + 1 nodes instead of k**t.  Node probabilities follow from counting
the equiprobable paths that end in a node, so the extreme nodes become rare
quickly while the middle of the layer carries most of the mass.

Run:  python3 demos/01_lattice_and_prices.py
"""
import numpy as np

from hydrolattice import GBMModel, SpreadToSpotModel, build_lattice, fill_prices, sample_drivers

lat = build_lattice(4, 6)
print(f"k=4, T=6: {lat.n_nodes} nodes in total")
for t in range(lat.T + 1):
    p = lat.prob(t)
    print(f"  layer {t}: {lat.size(t):2d} nodes, probabilities {p.min():.2e} .. {p.max():.3f}")

print("\n24 hours with k=15 branches:", build_lattice(15, 24).n_nodes, "nodes",
      f"(a full tree would have {sum(15 ** t for t in range(25)):.2e})")

# --- driftless GBM: the layer mean stays at the start price ---------------------
drivers = sample_drivers(lat, "quantile")
gbm = fill_prices(lat, GBMModel(x0=37.40, sigma=0.1997), drivers)
print("\nGBM (x0 = 37.40 EUR/MWh, sigma = 0.1997 per hour)")
for t in range(lat.T + 1):
    x = gbm[t]
    print(f"  hour {t}: mean {gbm.mean(t):7.3f}   range [{x.min():6.2f}, {x.max():6.2f}]")

# --- spread to an expected spot curve: prices fan out around the curve -----------
hours = np.arange(lat.T + 1)
spot = 37.40 + 6.0 * np.sin(np.pi * hours / 6.0)
spread = fill_prices(lat, SpreadToSpotModel(expected_spot=spot, eta=4.12, x0=37.40), drivers)
print("\nSpread model (additive noise eta = 4.12 EUR/MWh around an intraday shape)")
for t in range(lat.T + 1):
    x = spread[t]
    print(f"  hour {t}: spot {spot[t]:6.2f}  mean {spread.mean(t):6.2f}  range [{x.min():6.2f}, {x.max():6.2f}]")
print("\nUnlike GBM, the spread model can produce negative prices when eta is large.")
