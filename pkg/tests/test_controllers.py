from dataclasses import replace

import numpy as np
import pytest

from buildings.model import BuildingDisturbance, BuildingParams, make_cluster
from config.settings import BoundConfig, CostConfig, HorizonConfig
from controllers.bang_bang import bang_bang, tune_bang_bang
from controllers.lopf import assemble_lopf
from controllers.mpc import (
    MpcAssembler, MpcState, assemble_btg_gmpc, assemble_building_mpc, assemble_grid_mpc, dimension_audit,
    dynamics_residual, expand_building_steps, hvac_cost,
)
from controllers.params import BoundParams, CostParams
from discretization.gear import constant_history, discretize_buildings, discretize_grid, gear_coefficients
from grid.dae import GridDisturbance, assemble_dae
from network.case import attach_buildings, parse_case
from network.ptdf import dc_power_flow
from optimization.solver import INFEASIBLE, OPTIMAL, solve
from simulation.engine import build_models, initial_state
from simulation.forecasts import ForecastSet, PriceSeries
from utils.errors import DimensionError, InfeasibleError, InputError

TWO_GENERATORS = """
[case]
units pu
[bus]
1 3 0
2 2 0
3 1 1.0
[gen]
1 1 0 2
2 2 0 2
[branch]
1 3 0.1 0
2 3 0.1 0
[gencost]
1 5 1 0
2 5 1 0
[dynamics]
1 0.1 0.2 0
2 0.1 0.2 0
"""


def _forecasts(net, base_load, misc_kw=0.0, t_amb=30.0, q_sol=0.0, q_int=0.0, price=0.1, start_hour=10.0):
    """Constant forecasts held from t = 0."""
    times = np.array([0.0])
    n_b = net.n_b
    grid = GridDisturbance(times, np.atleast_2d(np.asarray(base_load, dtype=float)), np.full((1, n_b), misc_kw))
    buildings = BuildingDisturbance(times, np.full((1, n_b), t_amb), np.full((1, n_b), q_sol),
                                    np.full((1, n_b), q_int))
    return ForecastSet(grid, buildings, PriceSeries(times, np.array([price])), start_hour)


def _params(net, fc, bound_cfg=None, start_hour=10.0):
    costs = CostParams.from_config(CostConfig(), net, fc.prices)
    bounds = BoundParams.from_config(bound_cfg or BoundConfig(), net, start_hour)
    return costs, bounds


# ─── LOPF ─────────────────────────────────────────────────────────────────────

def test_lopf_single_generator_meets_demand(twobus):
    fc = _forecasts(twobus, [0.0, 0.5])
    costs, bounds = _params(twobus, fc)
    sol = solve(assemble_lopf(twobus, np.zeros(0), np.array([0.0, 0.5]), np.zeros(0), costs, bounds))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(0.5, abs=1e-7)


def test_lopf_identical_generators_share_load():
    net = parse_case(TWO_GENERATORS)
    fc = _forecasts(net, [0.0, 0.0, 1.0])
    costs, bounds = _params(net, fc)
    qp = assemble_lopf(net, np.zeros(0), net.base_load, np.zeros(0), costs, bounds)
    sol = solve(qp)
    assert np.allclose(sol.x[qp.index.grid("ubar_g")[:, 0]], [0.5, 0.5], atol=1e-6)


def test_lopf_includes_building_load(twobus):
    net = attach_buildings(twobus, [(1, 2), (2, 2)])
    fc = _forecasts(net, [0.0, 0.5])
    costs, bounds = _params(net, fc)
    qp = assemble_lopf(net, np.array([1000.0, 500.0]), np.array([0.0, 0.5]), np.array([250.0, 250.0]),
                       costs, bounds)
    sol = solve(qp)
    # 2 MW of building load on a 100 MVA base
    assert sol.x[0] == pytest.approx(0.52, abs=1e-7)


def test_lopf_demand_above_capacity_infeasible(twobus):
    fc = _forecasts(twobus, [0.0, 3.0])
    costs, bounds = _params(twobus, fc)
    sol = solve(assemble_lopf(twobus, np.zeros(0), np.array([0.0, 3.0]), np.zeros(0), costs, bounds))
    assert sol.status == INFEASIBLE


def test_lopf_constrains_every_limited_branch(case9):
    fc = _forecasts(case9, case9.base_load)
    costs, bounds = _params(case9, fc)
    qp = assemble_lopf(case9, np.zeros(0), case9.base_load, np.zeros(0), costs, bounds)
    assert all(name[0] == "line_limit" for name in qp.in_names)
    assert len(qp.in_names) == 9
    sol = solve(qp)
    assert sol.status == OPTIMAL
    assert np.sum(sol.x) == pytest.approx(case9.base_load.sum(), abs=1e-6)


# ─── Building MPC ─────────────────────────────────────────────────────────────

def _single_building(twobus, x0, price=0.1, bound_cfg=None, t_amb=30.0):
    net = attach_buildings(twobus, [(1, 2)])
    horizon = HorizonConfig(prediction_horizon=300.0, grid_step=300.0, building_step=300.0)
    model = discretize_buildings(make_cluster([BuildingParams()]), 300.0, gear_coefficients(1))
    fc = _forecasts(net, [0.0, 0.5], t_amb=t_amb, price=price)
    costs, bounds = _params(net, fc, bound_cfg)
    state = MpcState(0.0, [], [np.asarray(x0, dtype=float)])
    return net, model, fc, costs, bounds, horizon, state


def test_building_mpc_pins_zone_to_upper_bound(twobus):
    x0 = np.array([23.0, 23.02])
    net, model, fc, costs, bounds, horizon, state = _single_building(twobus, x0)
    qp = assemble_building_mpc(net, model, state, fc, costs, bounds, horizon)
    sol = solve(qp)
    assert sol.status == OPTIMAL

    # Backward Euler by hand: x1 = Abar (x0 + h Bw w + h Bu u), zone at the 23 °C day limit
    abar = model.abar_blocks[0]
    free = abar @ (x0 + 300.0 * model.cluster.bw_blocks[0] @ np.array([30.0, 0.0, 0.0]))
    gain = abar @ (300.0 * model.cluster.bu_blocks[0])
    expected_kw = (23.0 - free[1]) / gain[1]
    assert 0.0 < expected_kw < 800.0
    assert sol.x[qp.index.lookup("u_b", 1, 1)] * 1000.0 == pytest.approx(expected_kw, rel=1e-5)
    assert sol.x[qp.index.lookup("t_zone", 1, 1)] == pytest.approx(23.0, abs=1e-6)
    assert qp.meta["kind"] == "building_mpc"


def test_building_mpc_zero_price_has_zero_objective(twobus):
    net, model, fc, costs, bounds, horizon, state = _single_building(twobus, [22.5, 22.5], price=0.0)
    sol = solve(assemble_building_mpc(net, model, state, fc, costs, bounds, horizon))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_building_mpc_expensive_power_wide_band_stays_off(twobus):
    wide = BoundConfig(day_band=(10.0, 40.0), night_band=(10.0, 40.0))
    net, model, fc, costs, bounds, horizon, state = _single_building(twobus, [22.5, 22.5], price=100.0,
                                                                     bound_cfg=wide)
    qp = assemble_building_mpc(net, model, state, fc, costs, bounds, horizon)
    sol = solve(qp)
    assert np.all(np.abs(sol.x[qp.index.grid("u_b")]) < 1e-7)


def test_building_mpc_unreachable_band_is_infeasible(twobus):
    net, model, fc, costs, bounds, horizon, state = _single_building(twobus, [30.0, 30.0])
    sol = solve(assemble_building_mpc(net, model, state, fc, costs, bounds, horizon))
    assert sol.status == INFEASIBLE


def test_building_history_length_checked(twobus):
    net, model, fc, costs, bounds, horizon, state = _single_building(twobus, [22.5, 22.5])
    state.building_history = []
    with pytest.raises(DimensionError):
        assemble_building_mpc(net, model, state, fc, costs, bounds, horizon)


# ─── Grid MPC ─────────────────────────────────────────────────────────────────

def _grid_setup(net, horizon, base_load, order=1):
    fc = _forecasts(net, base_load)
    costs, bounds = _params(net, fc)
    model = discretize_grid(assemble_dae(net), horizon.grid_step, gear_coefficients(order))
    return fc, costs, bounds, model


def test_grid_mpc_at_rest_stays_at_rest(twobus):
    horizon = HorizonConfig(prediction_horizon=30.0, grid_step=10.0, building_step=10.0)
    fc, costs, bounds, model = _grid_setup(twobus, horizon, [0.0, 0.0])
    state = MpcState(0.0, [np.zeros(4)])
    qp = assemble_grid_mpc(model, twobus, np.zeros((3, 0)), state, fc, costs, bounds, horizon)
    sol = solve(qp)
    assert sol.status == OPTIMAL
    assert np.allclose(sol.x, 0.0, atol=1e-6)
    assert sol.objective == pytest.approx(0.0, abs=1e-6)


def test_grid_mpc_without_penalties_is_dispatch_cost_only(twobus):
    horizon = HorizonConfig(prediction_horizon=30.0, grid_step=10.0, building_step=10.0)
    fc, costs, bounds, model = _grid_setup(twobus, horizon, [0.0, 0.5])
    theta, _ = dc_power_flow(twobus, np.array([0.5, -0.5]))
    state = MpcState(0.0, [np.concatenate([theta, np.zeros(2)])])
    qp = assemble_grid_mpc(model, twobus, np.zeros((3, 0)), state, fc, costs.scaled(q=0.0, r=0.0),
                           bounds, horizon)
    sol = solve(qp)
    terms = qp.objective_terms(sol.x)
    assert terms["frequency"] == 0.0
    assert terms["regulation"] == 0.0
    assert sol.objective == pytest.approx(terms["lopf"], abs=1e-6)


def test_grid_mpc_with_pinned_inputs_follows_the_discrete_model(twobus):
    horizon = HorizonConfig(prediction_horizon=50.0, grid_step=10.0, building_step=10.0)
    fc, costs, bounds, model = _grid_setup(twobus, horizon, [0.0, 0.6], order=2)
    bounds = replace(bounds, delta_min=np.zeros(1), delta_max=np.zeros(1))
    theta, _ = dc_power_flow(twobus, np.array([0.5, -0.5]))
    x0 = np.concatenate([theta, np.zeros(2)])
    history = constant_history(x0, 2)
    state = MpcState(0.0, list(history))

    asm = MpcAssembler(twobus, model, None, costs, bounds, horizon)
    qp = asm.grid(state, fc, np.zeros((5, 0)), ubar_fixed=np.array([0.5]))
    sol = solve(qp)
    assert sol.status == OPTIMAL
    plan = asm.plan(sol, ubar_fixed=np.array([0.5]))

    expected = []
    for k in range(5):
        x = model.step(history, np.array([0.5]), np.zeros(0), np.array([0.0, 0.6]))
        expected.append(x)
        history = [x] + history[:-1]
    assert np.allclose(plan.x_g, np.array(expected), atol=1e-6)
    assert plan.x_g[-1, 2] < 0.0
    assert dynamics_residual(qp, sol.x) < 1e-6


def test_grid_mpc_rejects_wrong_building_shape(twobus):
    net = attach_buildings(twobus, [(1, 2)])
    horizon = HorizonConfig(prediction_horizon=30.0, grid_step=10.0, building_step=10.0)
    fc, costs, bounds, model = _grid_setup(net, horizon, [0.0, 0.5])
    asm = MpcAssembler(net, model, None, costs, bounds, horizon)
    with pytest.raises(DimensionError):
        asm.grid(MpcState(0.0, [np.zeros(4)]), fc, np.zeros((2, 1)))
    with pytest.raises(InputError):
        asm.joint(MpcState(0.0, [np.zeros(4)], [np.full(2, 22.0)]), fc)


def test_expand_and_hvac_cost():
    u = np.array([[100.0, 0.0], [50.0, 50.0]])
    assert expand_building_steps(u, 3).shape == (6, 2)
    prices = PriceSeries(np.array([0.0, 300.0]), np.array([0.1, 0.2]))
    horizon = HorizonConfig(prediction_horizon=600.0, grid_step=10.0, building_step=300.0)
    assert hvac_cost(u, prices, 0.0, horizon) == pytest.approx(0.5 * (0.1 * 100.0 + 0.2 * 100.0))


# ─── Joint problem ────────────────────────────────────────────────────────────

def _joint_setup(twobus, horizon):
    net = attach_buildings(twobus, [(1, 2), (2, 2)])
    fc = _forecasts(net, [0.0, 0.5], misc_kw=100.0, q_int=2e5)
    costs, bounds = _params(net, fc)
    scheme = gear_coefficients(1)
    grid_model = discretize_grid(assemble_dae(net), horizon.grid_step, scheme)
    cluster = make_cluster([BuildingParams(), BuildingParams(c_zone=6e9)])
    building_model = discretize_buildings(cluster, horizon.building_step, scheme)
    theta, _ = dc_power_flow(net, np.array([0.502, -0.502]))
    state = MpcState(0.0, [np.concatenate([theta, np.zeros(2)])], [np.full(4, 22.25)])
    return net, fc, costs, bounds, grid_model, building_model, state


def test_joint_problem_dimensions(twobus):
    horizon = HorizonConfig(prediction_horizon=900.0, grid_step=10.0, building_step=300.0)
    net, fc, costs, bounds, grid_model, building_model, state = _joint_setup(twobus, horizon)
    qp = assemble_btg_gmpc(net, grid_model, building_model, state, fc, costs, bounds, horizon)
    counts = dimension_audit(qp, net, horizon)
    assert counts["u_b"] == 2 * 3
    assert counts["x_b"] == 4 * 3
    assert counts["du_g"] == 90
    assert counts["x_g"] == 4 * 90
    assert counts["ubar_g"] == 1
    assert qp.meta["kind"] == "btg_gmpc"
    # u_b variables shared by 30 grid steps each, not 10
    with pytest.raises(DimensionError):
        dimension_audit(qp, net, HorizonConfig(prediction_horizon=900.0, grid_step=10.0, building_step=100.0))


def test_joint_problem_equal_time_scales(twobus):
    horizon = HorizonConfig(prediction_horizon=30.0, grid_step=10.0, building_step=10.0)
    net, fc, costs, bounds, grid_model, building_model, state = _joint_setup(twobus, horizon)
    qp = assemble_btg_gmpc(net, grid_model, building_model, state, fc, costs, bounds, horizon)
    assert dimension_audit(qp, net, horizon)["u_b"] == 2 * 3
    sol = solve(qp)
    assert sol.status == OPTIMAL
    assert dynamics_residual(qp, sol.x) < 1e-6


def test_joint_not_worse_than_decoupled(twobus):
    horizon = HorizonConfig(prediction_horizon=300.0, grid_step=10.0, building_step=100.0)
    net, fc, costs, bounds, grid_model, building_model, state = _joint_setup(twobus, horizon)
    asm = MpcAssembler(net, grid_model, building_model, costs, bounds, horizon)
    building = solve(asm.building(state, fc))
    u_b = asm.plan(building).u_b_kw
    grid = solve(asm.grid(state, fc, expand_building_steps(u_b, horizon.ratio)))
    joint = solve(asm.joint(state, fc))
    assert OPTIMAL == building.status == grid.status == joint.status
    total = building.objective + grid.objective
    assert joint.objective <= total + 1e-6 * abs(total)


def test_diagnostic_slack_softens_bounds(twobus):
    horizon = HorizonConfig(prediction_horizon=300.0, grid_step=100.0, building_step=100.0)
    net, fc, costs, bounds, grid_model, building_model, _ = _joint_setup(twobus, horizon)
    hot = MpcState(0.0, [np.zeros(4)], [np.full(4, 30.0)])
    soft = assemble_btg_gmpc(net, grid_model, building_model, hot, fc, costs, bounds, horizon, slack_penalty=1e3)
    assert "slack_temp" in soft.index.kinds
    sol = solve(soft)
    assert sol.status == OPTIMAL
    assert soft.objective_terms(sol.x)["slack"] > 0.0


# ─── Bang-bang ────────────────────────────────────────────────────────────────

def _bb_model():
    return discretize_buildings(make_cluster([BuildingParams()]), 300.0, gear_coefficients(1))


def _weather(t_amb, q_int):
    return BuildingDisturbance(np.array([0.0]), np.array([[t_amb]]), np.array([[0.0]]), np.array([[q_int]]))


def test_bang_bang_idle_without_heat():
    model = _bb_model()
    result = bang_bang(model, [np.array([22.22, 22.22])], _weather(22.22, 0.0), 0.0, 20, 22.22, 0.5, 800.0)
    assert np.all(result.u_b_kw == 0.0)
    assert np.allclose(result.x_b, 22.22)


def test_bang_bang_without_capacity_never_cools():
    model = _bb_model()
    result = bang_bang(model, [np.array([24.0, 24.0])], _weather(35.0, 1e6), 0.0, 20, 22.22, 0.5, 0.0)
    assert np.all(result.u_b_kw == 0.0)
    assert np.all(np.diff(result.x_b[:, 1]) > 0.0)


def test_bang_bang_cycles_inside_deadband():
    model = _bb_model()
    result = bang_bang(model, [np.array([22.22, 22.22])], _weather(35.0, 1e6), 0.0, 300, 22.22, 0.5, 800.0)
    switches = np.count_nonzero(np.diff(result.u_b_kw[:, 0]) != 0)
    assert switches >= 2
    zone = result.x_b[:, 1]
    assert zone.min() >= 21.72 - 0.1
    assert zone.max() <= 22.72 + 0.1


def test_bang_bang_reports_violations():
    model = _bb_model()
    bounds = BoundParams.from_config(BoundConfig(), parse_case(TWO_GENERATORS), start_hour=10.0)
    result = bang_bang(model, [np.array([24.0, 24.0])], _weather(35.0, 1e6), 0.0, 5, 22.22, 0.5, 0.0, bounds)
    assert not result.feasible
    assert result.violations[0][1] == 1
    assert result.max_excursion > 1.0


def test_tune_bang_bang_gives_up_with_location():
    model = _bb_model()
    bounds = BoundParams.from_config(BoundConfig(), parse_case(TWO_GENERATORS), start_hour=10.0)
    with pytest.raises(InfeasibleError) as err:
        tune_bang_bang(model, [np.array([24.0, 24.0])], _weather(35.0, 1e6), 0.0, 5, 22.22, 0.5, 0.0,
                       bounds, max_halvings=2)
    assert err.value.constraint == "t_zone[building=1]"
    assert err.value.instant is not None


def test_bang_bang_rejects_bad_deadband():
    with pytest.raises(InputError):
        bang_bang(_bb_model(), [np.full(2, 22.0)], _weather(30.0, 0.0), 0.0, 1, 22.22, 0.0, 800.0)


# ─── Decomposition bounds on random instances ─────────────────────────────────

def _instances(case9_cfg, count=20):
    for seed in range(count):
        cfg = replace(
            case9_cfg,
            buildings=replace(case9_cfg.buildings, count=10 + (7 * seed) % 21, seed=100 + seed),
            simulation=replace(case9_cfg.simulation, start_hour=float(8 + seed % 10)),
        )
        models, fc = build_models(cfg)
        x_g0, x_b0 = initial_state(cfg, models, fc)
        order = cfg.horizon.order
        state = MpcState(0.0, constant_history(x_g0, order), constant_history(x_b0, order))
        yield cfg, models, fc, state


@pytest.mark.slow
def test_joint_optimum_bounded_by_sequential_design(case9_cfg):
    for cfg, models, fc, state in _instances(case9_cfg):
        asm = models.assembler()
        building = solve(asm.building(state, fc), cfg.solver)
        u_b = asm.plan(building).u_b_kw
        grid = solve(asm.grid(state, fc, expand_building_steps(u_b, cfg.horizon.ratio)), cfg.solver)
        joint = solve(asm.joint(state, fc), cfg.solver)
        assert OPTIMAL == building.status == grid.status == joint.status
        total = building.objective + grid.objective
        assert joint.objective <= total + 1e-6 * abs(total)


@pytest.mark.slow
def test_building_mpc_beats_feasible_bang_bang(case9_cfg):
    checked = 0
    for cfg, models, fc, state in _instances(case9_cfg):
        hz = cfg.horizon
        bb = bang_bang(models.building_model, state.building_history, fc.buildings, 0.0, hz.building_steps,
                       cfg.buildings.setpoint, cfg.buildings.deadband, models.bounds.hvac_max_kw, models.bounds)
        if not bb.feasible:
            continue
        asm = models.assembler()
        f_bb = hvac_cost(bb.u_b_kw, models.costs.prices, 0.0, hz)
        building = solve(asm.building(state, fc), cfg.solver)
        assert building.objective <= f_bb + 1e-6 * max(abs(f_bb), 1.0)
        grid_bb = solve(asm.grid(state, fc, expand_building_steps(bb.u_b_kw, hz.ratio)), cfg.solver)
        joint = solve(asm.joint(state, fc), cfg.solver)
        total = grid_bb.objective + f_bb
        assert joint.objective <= total + 1e-6 * abs(total)
        checked += 1
    assert checked > 0
