from types import SimpleNamespace

import numpy as np
import pytest

from instances import TOY_X0, oracle_for, single_basin, toy_instance, toy_prices

from hydrolattice import (Basin, HydroSystem, InfeasibleError, NodeField, SolverConfig, SpotSchedule,
                          Turbine, UtilityDomainError, assemble, build_lattice, make_utility, solve,
                          water_values)
from hydrolattice.hydro import feasibility_scan


@pytest.fixture(scope="module")
def toy():
    lat, prices, system, inst = toy_instance(k=3, T=4)
    plan = solve(inst, SolverConfig.recommended())
    assert plan.converged
    return lat, prices, system, inst, plan


def _zero_plan(inst):
    """A plan-like object with all controls at zero."""
    lat = inst.lattice
    u = NodeField(lat, inst.t0, [np.zeros((lat.size(t), inst.n_controls)) for t in inst.control_times()])
    return SimpleNamespace(instance=inst, u=u)


def test_single_basin_dimensions():
    lat = build_lattice(2, 3)
    inst = assemble(single_basin(), toy_prices(lat), make_utility("linear"), 0)
    assert (inst.n_states, inst.n_controls, inst.n_constraints) == (1, 1, 4)
    np.testing.assert_array_equal(inst.A[0], [[1.0]])
    np.testing.assert_array_equal(inst.B[0], [[-1.0]])
    np.testing.assert_array_equal(inst.u_lower, [0.0])
    np.testing.assert_array_equal(inst.u_upper, [500.0])


def test_two_basins_aggregate_turbines():
    system = HydroSystem([Basin(100.0, 0.0, 200.0, [Turbine(-50.0, 80.0), Turbine(0.0, 40.0)]),
                          Basin(60.0, 10.0, 90.0, [Turbine(0.0, 30.0)])])
    lat = build_lattice(2, 2)
    inst = assemble(system, toy_prices(lat), make_utility("linear"), 0)
    assert (inst.n_states, inst.n_controls, inst.n_constraints) == (2, 3, 2 * 3 + 2 * 2)
    np.testing.assert_array_equal(inst.B[0], [[-1, -1, 0], [0, 0, -1]])
    lo, hi = system.bounds()
    np.testing.assert_array_equal(lo, [-50, 0, 0])
    np.testing.assert_array_equal(hi, [80, 40, 30])


def test_zero_spot_wealth_is_dispatch_times_price():
    lat = build_lattice(3, 3)
    prices = toy_prices(lat)
    inst = assemble(single_basin(), prices, make_utility("linear"), 0)
    rng = np.random.default_rng(2)
    for t in range(3):
        u = rng.uniform(0, 500, (lat.size(t), 1))
        V, _, parent = inst.stage_wealth(t, u)
        _, child, _ = lat.edges(t)
        np.testing.assert_array_equal(V, u[parent, 0] * prices[t + 1][child])


def test_spot_schedule_adds_cash():
    lat = build_lattice(2, 2)
    prices = toy_prices(lat)
    spot = SpotSchedule(sell=[0, 10, 0], buy=[0, 0, 4], price=[30.0, 35.0, 40.0])
    system = HydroSystem(single_basin().basins, spot)
    inst = assemble(system, prices, make_utility("linear"), 0)
    u = np.array([[2.0]])
    V, _, _ = inst.stage_wealth(0, u)
    np.testing.assert_allclose(V, 2.0 * prices[1] + 350.0)
    V2, _, _ = inst.stage_wealth(1, np.ones((2, 1)))
    assert np.all(V2 < prices[2][lat.edges(1)[1]])


def test_reference_system_from_demo_config():
    from pathlib import Path

    from hydrolattice.config import load_config
    cfg = load_config(Path(__file__).resolve().parents[1] / "demos" / "configs" / "toy.toml")
    (basin,) = cfg.system.basins
    assert (basin.y_min, basin.y_max, basin.y0) == (40.0, 160000.0, 41.5)
    assert [(t.u_min, t.u_max) for t in basin.turbines] == [(0.0, 500.0)]
    np.testing.assert_array_equal(basin.inflow_table(cfg.T), 0.0)


def test_conservation_and_bounds(toy):
    lat, prices, system, inst, plan = toy
    basin = system.basins[0]
    for t in range(lat.T):
        y, u = plan.y[t], plan.u[t]
        parent, child, w = lat.edges(t)
        nxt = np.zeros(lat.size(t + 1))
        np.add.at(nxt, child, w * (y[parent, 0] - u[parent, 0]))
        np.testing.assert_allclose(plan.y[t + 1][:, 0], nxt, atol=1e-9)
        assert np.all(u >= -1e-6) and np.all(u <= 500 + 1e-6)
    for t in range(lat.T + 1):
        assert np.all(plan.y[t] >= basin.y_min - 1e-6)
        assert np.all(plan.y[t] <= basin.y_max + 1e-6)


def test_non_binding_regime_turbines_at_max():
    for name, params in [("hyperbolic", {"gamma": 0.95}), ("logarithmic", {}), ("linear", {})]:
        _, _, _, inst = toy_instance(k=3, T=4, y0=80000.0, utility=make_utility(name, **params))
        plan = solve(inst, SolverConfig.recommended())
        for t in plan.u.times():
            np.testing.assert_allclose(plan.u[t], 500.0, atol=1e-6)


@pytest.mark.parametrize("model", ["gbm", "spread"])
def test_linear_water_values_are_prices(model):
    lat, prices, _, inst = toy_instance(k=4, T=6, model=model, utility=make_utility("linear"), y0=80000.0)
    plan = solve(inst, SolverConfig.recommended())
    wv = water_values(plan, prices)
    for t in range(1, 7):
        np.testing.assert_allclose(wv.gp[t], prices[t], rtol=1e-12)
        assert wv.GP[t - 1] == pytest.approx(prices.mean(t), rel=1e-12)
        assert wv.GP[t - 1] == pytest.approx(wv.gp.mean(t), rel=1e-12)
    if model == "gbm":
        np.testing.assert_allclose(wv.GP, TOY_X0, rtol=1e-6)


def test_zero_dispatch_exponential_water_value():
    alpha = 0.05
    lat, prices, _, inst = toy_instance(k=3, T=3, utility=make_utility("exponential", alpha=alpha))
    wv = water_values(_zero_plan(inst), prices)
    for t in range(1, 4):
        np.testing.assert_allclose(wv.gp[t], alpha * prices[t], rtol=1e-14)


def test_domain_violation_is_reported():
    lat, prices, _, inst = toy_instance(k=2, T=2, utility=make_utility("logarithmic"))
    with pytest.raises(UtilityDomainError, match="hour 1"):
        water_values(_zero_plan(inst), prices)


def test_certainty_equivalent_below_mean(toy):
    lat, prices, _, inst, plan = toy
    wv = water_values(plan, prices)
    for i, t in enumerate(wv.hours):
        assert wv.GP[i] <= wv.gp.mean(int(t)) * (1 + 1e-12)
    # the spread of the node values makes the inequality strict somewhere
    assert np.any(wv.GP < np.array([wv.gp.mean(int(t)) for t in wv.hours]) - 1e-9)


def test_single_water_value_field_for_two_basins():
    system = HydroSystem([Basin(41.5, 40.0, 1000.0, [Turbine(0.0, 5.0)], name="a"),
                          Basin(80.0, 40.0, 1000.0, [Turbine(0.0, 3.0)], name="b")])
    lat = build_lattice(2, 3)
    prices = toy_prices(lat)
    inst = assemble(system, prices, make_utility("hyperbolic", gamma=0.9), 0)
    plan = solve(inst, SolverConfig.recommended())
    assert plan.converged
    wv = water_values(plan, prices)
    assert isinstance(wv.gp, NodeField)
    for t in range(1, 4):
        assert wv.gp[t].shape == (lat.size(t),)
    assert wv.GP.shape == (3,)


def test_water_values_csv(toy, tmp_path):
    _, prices, _, _, plan = toy
    wv = water_values(plan, prices)
    wv.to_csv(tmp_path / "wv.csv")
    raw = (tmp_path / "wv.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "hour,GP,gp_mean,gp_min,gp_max"
    assert len(lines) == 1 + 4 and lines[1].startswith("1,")


def test_feasibility_scan_detects_overflow():
    lat = build_lattice(2, 3)
    system = single_basin(y0=90.0, y_min=0.0, y_max=100.0, u_max=0.0, inflow=20.0)
    with pytest.raises(InfeasibleError, match="hour 1"):
        assemble(system, toy_prices(lat), make_utility("linear"), 0)
    # enough turbine capacity makes the same inflow admissible
    feasibility_scan(single_basin(y0=90.0, y_min=0.0, y_max=100.0, u_max=30.0, inflow=20.0), 0, 3)


def test_invalid_systems_rejected():
    with pytest.raises(ValueError):
        single_basin(y0=10.0).validate()
    with pytest.raises(ValueError):
        HydroSystem([Basin(1.0, 0.0, 2.0, [Turbine(3.0, 1.0)])]).validate()
    with pytest.raises(ValueError):
        Basin(1.0, 0.0, 2.0, [Turbine(0, 1)], inflow=[1.0, 2.0]).inflow_table(3)
    with pytest.raises(ValueError):
        HydroSystem([]).validate()


@pytest.mark.parametrize("model", ["gbm", "spread"])
def test_linear_binding_toy_matches_oracle(model):
    # a linear program: the barrier minimiser ends within rounding of the bound
    lat, prices, system, inst = toy_instance(model=model, utility=make_utility("linear"))
    plan = solve(inst, SolverConfig.recommended())
    assert plan.converged
    ref = oracle_for(lat, prices, system, inst.utility)
    for t in range(lat.T):
        np.testing.assert_allclose(plan.u[t], ref.u[t], atol=1e-6)
    assert plan.objective == pytest.approx(ref.objective, rel=1e-9)
