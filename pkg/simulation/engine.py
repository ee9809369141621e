"""
Closed-Loop Scenario Engine
Moving-horizon coupling of the joint BtG problem with the LOPF dispatch, plus the two
decoupled baselines:

    Scenario I    bang-bang HVAC, then grid MPC with the resulting building power fixed
    Scenario II   building MPC in closed loop, then grid MPC with its HVAC trajectory fixed
    Scenario III  joint building/grid MPC re-solved on the three-branch schedule

Schedule at grid instant k (t = k*h_g):
    k % (T_p/h_g) == 0   full joint problem, new ubar_g for the block
    k % (h_b/h_g) != 0   grid-only problem, ubar_g and U_b fixed
    otherwise            joint problem without ubar_g, LOPF limits and J(ubar_g)
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from buildings.model import BuildingCluster, BuildingParams, W_PER_KW, sample_cluster
from config.settings import HorizonConfig, RunConfig, SolverConfig, resolve_data_path
from controllers.bang_bang import tune_bang_bang
from controllers.lopf import assemble_lopf
from controllers.mpc import (
    BUILDING, FULL, GRID_ONLY, MpcAssembler, MpcPlan, MpcState, dynamics_residual,
)
from controllers.params import BoundParams, CostParams
from discretization.gear import (
    DiscreteBuildingModel, DiscreteGridModel, constant_history, discretize_buildings, discretize_grid,
    gear_coefficients,
)
from grid.dae import GridDae, assemble_dae
from network.case import PowerNetwork, attach_buildings, read_case, round_robin_assignment
from network.ptdf import dc_power_flow
from optimization.solver import require_optimal, solve
from reporting.costs import CostBreakdown, cost_breakdown
from simulation.forecasts import ForecastSet, build_forecasts
from utils.errors import InputError
from utils.logger import log


@dataclass(frozen=True, eq=False)
class ModelSet:
    """Everything a run needs besides forecasts, built once and shared read-only."""
    net: PowerNetwork
    dae: GridDae
    cluster: BuildingCluster
    grid_model: DiscreteGridModel
    building_model: DiscreteBuildingModel
    costs: CostParams
    bounds: BoundParams
    horizon: HorizonConfig

    def assembler(self, slack_penalty: Optional[float] = None) -> MpcAssembler:
        return MpcAssembler(self.net, self.grid_model, self.building_model, self.costs, self.bounds,
                            self.horizon, slack_penalty)


@dataclass
class ScenarioRun:
    """Closed-loop trajectories; grid quantities every h_g, building quantities every h_b."""
    scenario: str
    horizon: HorizonConfig
    start_hour: float
    grid_times: np.ndarray           # (K+1,)
    x_g: np.ndarray                  # (K+1, 2n)
    du: np.ndarray                   # (K, n_g), applied on [t_k, t_k + h_g)
    block_times: np.ndarray          # (K / N_g,)
    ubar: np.ndarray                 # (K / N_g, n_g)
    building_times: np.ndarray       # (K_b+1,)
    x_b: np.ndarray                  # (K_b+1, 2 n_b)
    u_b_kw: np.ndarray               # (K_b, n_b), applied on [t_j, t_j + h_b)
    prices: np.ndarray               # (K_b,) $/kWh at interval starts
    disturbances: Optional[ForecastSet] = None
    seed: Optional[int] = None
    branch_counts: Dict[str, int] = field(default_factory=dict)
    solver_stats: Dict[str, float] = field(default_factory=dict)
    plans: List[MpcPlan] = field(default_factory=list)
    breakdown: Optional[CostBreakdown] = None

    @property
    def n_steps(self) -> int:
        return len(self.du)

    def generation(self) -> np.ndarray:
        """(K, n_g) total mechanical power ubar + du per grid step."""
        n_g_steps = self.horizon.grid_steps
        return self.ubar[np.arange(self.n_steps) // n_g_steps] + self.du


# ─── Model construction ───────────────────────────────────────────────────────

def load_network(cfg: RunConfig) -> PowerNetwork:
    net = read_case(resolve_data_path(cfg.grid.case, "cases", ".case"))
    if cfg.grid.load_damping is not None:
        net = net.with_load_damping(cfg.grid.load_damping)
    if cfg.grid.slack_bus is not None:
        net = net.with_slack(cfg.grid.slack_bus)
    n_b = cfg.buildings.count
    return attach_buildings(net, round_robin_assignment(net, n_b, cfg.buildings.assignment_seed))


def build_models(cfg: RunConfig, net: Optional[PowerNetwork] = None,
                 forecasts: Optional[ForecastSet] = None) -> Tuple[ModelSet, ForecastSet]:
    cfg.validate()
    net = net or load_network(cfg)
    forecasts = forecasts or build_forecasts(cfg, net)
    b = cfg.buildings
    cluster = sample_cluster(BuildingParams.from_config(b), net.n_b, b.spread, b.seed)
    dae = assemble_dae(net)
    scheme = gear_coefficients(cfg.horizon.order)
    models = ModelSet(
        net=net,
        dae=dae,
        cluster=cluster,
        grid_model=discretize_grid(dae, cfg.horizon.grid_step, scheme),
        building_model=discretize_buildings(cluster, cfg.horizon.building_step, scheme),
        costs=CostParams.from_config(cfg.costs, net, forecasts.prices),
        bounds=BoundParams.from_config(cfg.bounds, net, cfg.simulation.start_hour),
        horizon=cfg.horizon,
    )
    log.debug(f"Models ready: n={net.n} n_g={net.n_g} n_l={net.n_l} n_b={net.n_b} s={scheme.order}")
    return models, forecasts


def initial_state(cfg: RunConfig, models: ModelSet, forecasts: ForecastSet,
                  settings: Optional[SolverConfig] = None) -> Tuple[np.ndarray, np.ndarray]:
    """x_g(0): DC angles of the t=0 dispatch with zero HVAC, zero frequency deviation. x_b(0): configured or mid-band."""
    net = models.net
    w = forecasts.grid.at(0.0)
    base, misc = w[:net.n], w[net.n:]
    lopf = assemble_lopf(net, np.zeros(net.n_b), base, misc, models.costs, models.bounds)
    sol = require_optimal(solve(lopf, settings), instant=0.0, what="initial LOPF")
    ubar0 = sol.x[lopf.index.grid("ubar_g")[:, 0]]
    injections = net.gen_incidence @ ubar0 - base - net.bldg_incidence @ misc / (W_PER_KW * net.base_mva)
    theta, _ = dc_power_flow(net, injections)
    x_g0 = np.concatenate([theta, np.zeros(net.n)])

    zone = cfg.buildings.initial_t_zone
    if zone is None:
        zone = float(np.mean(models.bounds.zone_band(0.0)))
    wall = zone if cfg.buildings.initial_t_wall is None else cfg.buildings.initial_t_wall
    x_b0 = np.tile([wall, zone], net.n_b).astype(float)
    return x_g0, x_b0


# ─── Schedule ─────────────────────────────────────────────────────────────────

def classify_instant(k: int, horizon: HorizonConfig) -> str:
    if k % horizon.grid_steps == 0:
        return FULL
    if k % horizon.ratio != 0:
        return GRID_ONLY
    return BUILDING


def schedule(final_time: float, horizon: HorizonConfig) -> List[Tuple[int, float, str]]:
    """(k, t, branch) for every decision instant in [0, final_time)."""
    n_steps = int(round(final_time / horizon.grid_step))
    return [(k, k * horizon.grid_step, classify_instant(k, horizon)) for k in range(n_steps)]


def _ub_window(lookup: Callable[[int], np.ndarray], t0: float, horizon: HorizonConfig) -> np.ndarray:
    """(N_g, n_b) building power per grid step of the horizon starting at t0."""
    hg, hb = horizon.grid_step, horizon.building_step
    intervals = [int(np.floor((t0 + (k - 1) * hg) / hb + 1e-9)) for k in range(1, horizon.grid_steps + 1)]
    return np.array([lookup(m) for m in intervals])


def _held(trajectory: np.ndarray) -> Callable[[int], np.ndarray]:
    """Index into a per-interval trajectory, holding its last row past the end."""
    def lookup(m: int) -> np.ndarray:
        if len(trajectory) == 0:
            raise InputError("empty HVAC trajectory")
        return trajectory[min(m, len(trajectory) - 1)]
    return lookup


def _rereference(history: List[np.ndarray], n: int, slack: int) -> List[np.ndarray]:
    """Shift every angle so the slack bus sits at zero (flows depend on differences only)."""
    offset = history[0][slack - 1]
    out = []
    for x in history:
        x = x.copy()
        x[:n] -= offset
        out.append(x)
    return out


# ─── Closed loop ──────────────────────────────────────────────────────────────

def run_closed_loop(cfg: RunConfig, models: ModelSet, forecasts: ForecastSet,
                   u_b_schedule: Optional[np.ndarray] = None, realized: Optional[ForecastSet] = None,
                   scenario: str = "III", keep_plans: bool = False) -> ScenarioRun:
    """
    Receding-horizon loop over [0, T_final). With `u_b_schedule` (K_b, n_b) kW the building
    power is fixed (Scenarios I and II) and only grid problems are solved.
    The MPC sees `forecasts`; states advance with the linear discrete models under `realized`.
    """
    hz = models.horizon
    net, n = models.net, models.net.n
    realized = realized or forecasts
    sim = cfg.simulation
    hg, hb, ratio, n_grid = hz.grid_step, hz.building_step, hz.ratio, hz.grid_steps
    n_steps = int(round(sim.final_time / hg))
    n_bsteps = n_steps // ratio
    asm = models.assembler(sim.slack_penalty if sim.diagnostic_slack else None)
    if u_b_schedule is not None and len(u_b_schedule) < n_bsteps:
        raise InputError(f"HVAC schedule covers {len(u_b_schedule)} of {n_bsteps} building steps")

    x_g0, x_b0 = initial_state(cfg, models, forecasts, cfg.solver)
    grid_hist = _rereference(constant_history(x_g0, models.grid_model.order), n, net.slack_bus)
    bldg_hist = constant_history(x_b0, models.building_model.order)

    x_g = [grid_hist[0]]
    x_b = [bldg_hist[0]]
    du_out, ubar_out, block_times, u_b_out, prices = [], [], [], [], []
    predicted: Dict[int, np.ndarray] = {}
    applied: Dict[int, np.ndarray] = {}
    counts = {FULL: 0, GRID_ONLY: 0, BUILDING: 0}
    stats = {"solves": 0, "iterations": 0, "solve_time": 0.0, "polished": 0,
             "max_dynamics_residual": 0.0, "max_prediction_gap": 0.0}
    warm: Dict[str, tuple] = {}
    plans: List[MpcPlan] = []
    ubar = None

    def planned(m: int) -> np.ndarray:
        if m in applied:
            return applied[m]
        if m in predicted:
            return predicted[m]
        return predicted[max(predicted)] if predicted else np.zeros(net.n_b)

    for k, t, branch in schedule(sim.final_time, hz):
        counts[branch] += 1
        state = MpcState(t, grid_hist, bldg_hist)
        m = k // ratio
        fixed_ub = None
        if u_b_schedule is not None:
            fixed_ub = _ub_window(_held(u_b_schedule), t, hz)
            qp = asm.grid(state, forecasts, fixed_ub, include_lopf=True,
                          ubar_fixed=None if branch == FULL else ubar)
        elif branch == FULL:
            qp = asm.joint(state, forecasts)
        elif branch == BUILDING:
            qp = asm.joint(state, forecasts, ubar_fixed=ubar)
        else:
            fixed_ub = _ub_window(planned, t, hz)
            qp = asm.grid(state, forecasts, fixed_ub, include_lopf=False, ubar_fixed=ubar)

        hint = warm.get(branch)
        sol = solve(qp, cfg.solver, hint if hint is not None and len(hint[0]) == qp.n else None)
        require_optimal(sol, instant=t, what=f"{branch} MPC")
        warm[branch] = (sol.x, sol.y)
        stats["solves"] += 1
        stats["iterations"] += sol.iterations
        stats["solve_time"] += sol.solve_time
        stats["polished"] += int(sol.polished)
        stats["max_dynamics_residual"] = max(stats["max_dynamics_residual"], dynamics_residual(qp, sol.x))

        plan = asm.plan(sol, ubar_fixed=ubar if branch != FULL else None, u_b_kw=fixed_ub)
        if keep_plans:
            plans.append(plan)
        if branch == FULL:
            ubar = plan.ubar
            ubar_out.append(ubar)
            block_times.append(t)
            log.info(f"t={t:>7.0f}s block {len(ubar_out)}: ubar={np.round(ubar, 4).tolist()} "
                     f"obj={sol.objective:.6g} iter={sol.iterations}")
        else:
            log.debug(f"t={t:>7.0f}s {branch:<8} obj={sol.objective:.6g} iter={sol.iterations}")

        # ── Apply first instances ─────────────────────────────────────────
        if k % ratio == 0:
            if u_b_schedule is not None:
                applied[m] = np.asarray(u_b_schedule[m], dtype=float)
            else:
                applied[m] = plan.u_b_kw[0]
                predicted.update({m + j: u for j, u in enumerate(plan.u_b_kw)})
            u_b_out.append(applied[m])
            prices.append(models.costs.prices.at(t))
            x_next_b = models.building_model.step(bldg_hist, applied[m], realized.buildings.at(t + hb))
            bldg_hist = [x_next_b] + bldg_hist[:-1]
            x_b.append(x_next_b)

        du = plan.du[0]
        du_out.append(du)
        x_next = models.grid_model.step(grid_hist, ubar + du, applied[m], realized.grid.at(t + hg))
        if realized is forecasts:
            stats["max_prediction_gap"] = max(stats["max_prediction_gap"],
                                              float(np.max(np.abs(x_next - plan.x_g[0]))))
        grid_hist = _rereference([x_next] + grid_hist[:-1], n, net.slack_bus)
        x_g.append(grid_hist[0])

    log.info(f"Scenario {scenario}: {counts[FULL]} full, {counts[BUILDING]} building, "
             f"{counts[GRID_ONLY]} grid-only solves in {stats['solve_time']:.1f}s")
    return ScenarioRun(
        scenario=scenario,
        horizon=hz,
        start_hour=sim.start_hour,
        grid_times=hg * np.arange(n_steps + 1),
        x_g=np.array(x_g).reshape(n_steps + 1, 2 * n),
        du=np.array(du_out).reshape(n_steps, net.n_g),
        block_times=np.array(block_times),
        ubar=np.array(ubar_out).reshape(len(ubar_out), net.n_g),
        building_times=hb * np.arange(n_bsteps + 1),
        x_b=np.array(x_b).reshape(n_bsteps + 1, 2 * net.n_b),
        u_b_kw=np.array(u_b_out).reshape(n_bsteps, net.n_b),
        prices=np.array(prices),
        disturbances=realized,
        branch_counts=counts,
        solver_stats=stats,
        plans=plans,
    )


# ─── Decoupled HVAC schedules ─────────────────────────────────────────────────

def bang_bang_schedule(cfg: RunConfig, models: ModelSet, forecasts: ForecastSet,
                       x_b0: np.ndarray) -> np.ndarray:
    """Tuned bang-bang HVAC over the whole run, (K_b, n_b) kW."""
    b = cfg.buildings
    steps = int(round(cfg.simulation.final_time / cfg.horizon.building_step))
    result = tune_bang_bang(models.building_model, constant_history(x_b0, models.building_model.order),
                            forecasts.buildings, 0.0, steps, b.setpoint, b.deadband,
                            models.bounds.hvac_max_kw, models.bounds, b.max_halvings)
    return result.u_b_kw


def building_mpc_schedule(cfg: RunConfig, models: ModelSet, forecasts: ForecastSet,
                          x_b0: np.ndarray) -> np.ndarray:
    """Building-only MPC in closed loop, (K_b, n_b) kW."""
    hb = cfg.horizon.building_step
    steps = int(round(cfg.simulation.final_time / hb))
    asm = models.assembler(cfg.simulation.slack_penalty if cfg.simulation.diagnostic_slack else None)
    history = constant_history(x_b0, models.building_model.order)
    out = np.zeros((steps, models.net.n_b))
    warm = None
    for j in range(steps):
        t = j * hb
        qp = asm.building(MpcState(t, [], history), forecasts)
        sol = require_optimal(solve(qp, cfg.solver, warm), instant=t, what="building MPC")
        warm = (sol.x, sol.y)
        out[j] = asm.plan(sol).u_b_kw[0]
        x_next = models.building_model.step(history, out[j], forecasts.buildings.at(t + hb))
        history = [x_next] + history[:-1]
    return out


def run_scenario(cfg: RunConfig, scenario: Optional[str] = None, models: Optional[ModelSet] = None,
                 forecasts: Optional[ForecastSet] = None, seed: Optional[int] = None,
                 keep_plans: bool = False) -> ScenarioRun:
    """Run one scenario end to end and attach its cost breakdown."""
    scenario = scenario or cfg.simulation.scenario
    if scenario not in ("I", "II", "III"):
        raise InputError(f"unknown scenario {scenario!r}")
    if models is None or forecasts is None:
        models, forecasts = build_models(cfg)

    log.info("=" * 60)
    log.info(f"  SCENARIO {scenario}")
    log.info(f"  Case:      {cfg.grid.case} (n={models.net.n}, n_g={models.net.n_g})")
    log.info(f"  Buildings: {models.net.n_b}")
    log.info(f"  Horizon:   T_p={cfg.horizon.prediction_horizon:g}s h_g={cfg.horizon.grid_step:g}s "
             f"h_b={cfg.horizon.building_step:g}s s={cfg.horizon.order}")
    log.info(f"  Duration:  {cfg.simulation.final_time / 3600:g} h from {cfg.simulation.start_hour:g}:00")
    log.info("=" * 60)

    schedule_kw = None
    if scenario != "III":
        _, x_b0 = initial_state(cfg, models, forecasts, cfg.solver)
        if scenario == "I":
            schedule_kw = bang_bang_schedule(cfg, models, forecasts, x_b0)
        else:
            schedule_kw = building_mpc_schedule(cfg, models, forecasts, x_b0)

    run = run_closed_loop(cfg, models, forecasts, u_b_schedule=schedule_kw, scenario=scenario,
                         keep_plans=keep_plans)
    run.seed = seed
    run.breakdown = cost_breakdown(run, models.costs)
    log.info(f"Scenario {scenario} total cost {run.breakdown.total / 1000:.4f} k$ "
             f"(grid {run.breakdown.total_grid / 1000:.4f}, HVAC {run.breakdown.hvac_cost / 1000:.4f})")
    return run
