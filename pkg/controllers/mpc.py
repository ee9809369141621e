"""
Model Predictive Control Problems
Builds the building-only, grid-only and joint Buildings-to-Grid QPs over one prediction horizon.

All problems share one layout: grid steps k = 1..N_g (time t0 + k*h_g), building steps
j = 1..N_b (time t0 + j*h_b), and one u_b variable per building step that every grid step inside
that building step refers to. Dynamics rows are the Gear recursion premultiplied by the pencil:

    (E - h*beta0*A) x_k - sum_i alpha_i E x_{k-i} - h*beta0 (B u_k + B_w w_k) = 0

Objective: J(ubar) + sum_j (h_b/T_p) c_b u_b + sum_k (h_g/T_p) (du' R du + x' Q x).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from buildings.model import W_PER_KW
from config.settings import HorizonConfig
from controllers.lopf import add_generation_cost, add_line_limits
from controllers.params import BoundParams, CostParams
from discretization.gear import DiscreteBuildingModel, DiscreteGridModel
from network.case import PowerNetwork
from network.ptdf import ptdf
from optimization.qp import QpBuilder, QuadraticProgram
from optimization.solver import QpSolution
from simulation.forecasts import ForecastSet, PriceSeries
from utils.errors import DimensionError, InputError, check_shape

FULL = "full"
GRID_ONLY = "grid"
BUILDING = "building"


@dataclass
class MpcState:
    """Measured state at t0; histories are newest first, spaced h_g (grid) and h_b (buildings)."""
    t0: float
    grid_history: List[np.ndarray]
    building_history: List[np.ndarray] = field(default_factory=list)


@dataclass
class MpcPlan:
    """Decoded optimal trajectories (fixed inputs copied in where they were not variables)."""
    ubar: np.ndarray                 # (n_g,)
    du: np.ndarray                   # (N_g, n_g)
    x_g: np.ndarray                  # (N_g, 2n)
    u_b_kw: np.ndarray               # (N_b, n_b)
    x_b: np.ndarray                  # (N_b, 2 n_b)
    objective: float = 0.0
    terms: Dict[str, float] = field(default_factory=dict)


def expand_building_steps(u_b_kw: np.ndarray, ratio: int) -> np.ndarray:
    """(N_b, n_b) per building step -> (N_b*ratio, n_b) per grid step."""
    return np.repeat(np.atleast_2d(u_b_kw), ratio, axis=0)


def hvac_cost(u_b_kw: np.ndarray, prices: PriceSeries, t0: float, horizon: HorizonConfig) -> float:
    """sum_j (h_b/T_p) c_b(t0 + (j-1) h_b) * sum of building kW in step j."""
    hb, tp = horizon.building_step, horizon.prediction_horizon
    u = np.atleast_2d(u_b_kw)
    price = np.array([prices.at(t0 + j * hb) for j in range(len(u))])
    return float((hb / tp) * np.sum(price * u.sum(axis=1)))


class MpcAssembler:
    """Assembles horizon QPs for one network / building cluster / parameter set."""

    def __init__(self, net: PowerNetwork, grid_model: Optional[DiscreteGridModel],
                 building_model: Optional[DiscreteBuildingModel], costs: CostParams,
                 bounds: BoundParams, horizon: HorizonConfig, slack_penalty: Optional[float] = None):
        horizon.validate()
        if grid_model is not None and abs(grid_model.h - horizon.grid_step) > 1e-9:
            raise InputError(f"grid model step {grid_model.h} differs from h_g={horizon.grid_step}")
        if building_model is not None and abs(building_model.h - horizon.building_step) > 1e-9:
            raise InputError(f"building model step {building_model.h} differs from h_b={horizon.building_step}")
        if building_model is not None and building_model.n_b != net.n_b:
            raise DimensionError(f"cluster has {building_model.n_b} buildings, network attaches {net.n_b}")
        self.net = net
        self.grid_model = grid_model
        self.building_model = building_model
        self.costs = costs
        self.bounds = bounds
        self.horizon = horizon
        self.slack_penalty = slack_penalty
        self.shift = ptdf(net) if net.n_l else np.zeros((0, net.n))

        if grid_model is not None:
            dae = grid_model.dae
            hb0 = grid_model.h * grid_model.scheme.beta0
            self._grid_pencil = grid_model.pencil.tocsr()
            self._grid_e = grid_model.E
            self._grid_bug = (-hb0 * dae.B_ug).tocsr()
            self._grid_aub = (-hb0 * W_PER_KW * dae.A_ub).tocsr()   # per MW of building power
        if building_model is not None:
            cluster = building_model.cluster
            bb0 = building_model.h * building_model.scheme.beta0
            self._bldg_pencil = building_model.pencil
            self._bldg_bub = (-bb0 * W_PER_KW * cluster.B_ub).tocsr()

    @property
    def n_b(self) -> int:
        return self.net.n_b

    # ── Public problems ───────────────────────────────────────────────────

    def building(self, state: MpcState, forecasts: ForecastSet) -> QuadraticProgram:
        """Building-only problem: minimize HVAC cost subject to building dynamics and bands."""
        builder = QpBuilder()
        self._building_part(builder, state, forecasts)
        builder.meta.update(kind="building_mpc", t0=state.t0)
        return builder.build()

    def grid(self, state: MpcState, forecasts: ForecastSet, u_b_kw: np.ndarray,
             include_lopf: bool = True, ubar_fixed: Optional[np.ndarray] = None) -> QuadraticProgram:
        """Grid-only problem with the building power fixed per grid step, u_b_kw of shape (N_g, n_b)."""
        u_b_kw = check_shape("fixed u_b", u_b_kw, (self.horizon.grid_steps, self.n_b))
        builder = QpBuilder()
        ubar = self._grid_part(builder, state, forecasts, ubar_fixed, None, u_b_kw)
        if ubar is not None and include_lopf:
            self._line_limits(builder, state, forecasts, ubar, None, u_b_kw)
        builder.meta.update(kind="grid_mpc", t0=state.t0)
        return builder.build()

    def joint(self, state: MpcState, forecasts: ForecastSet,
              ubar_fixed: Optional[np.ndarray] = None, include_lopf: bool = True) -> QuadraticProgram:
        """Joint problem over (U_b, dU_g, ubar_g, X_b, X_g)."""
        builder = QpBuilder()
        u_b = self._building_part(builder, state, forecasts)
        ubar = self._grid_part(builder, state, forecasts, ubar_fixed, u_b, None)
        if ubar is not None and include_lopf:
            self._line_limits(builder, state, forecasts, ubar, u_b, None)
        builder.meta.update(kind="btg_gmpc", t0=state.t0)
        return builder.build()

    # ── Pieces ────────────────────────────────────────────────────────────

    def _grid_part(self, builder: QpBuilder, state: MpcState, forecasts: ForecastSet,
                   ubar_fixed: Optional[np.ndarray], u_b: Optional[np.ndarray],
                   u_b_kw: Optional[np.ndarray]) -> Optional[np.ndarray]:
        net, hz, b = self.net, self.horizon, self.bounds
        model = self.grid_model
        if model is None:
            raise InputError("problem needs a grid model")
        n, n_g, n_x = net.n, net.n_g, 2 * net.n
        n_steps, ratio = hz.grid_steps, hz.ratio
        steps = range(1, n_steps + 1)
        hb0 = model.h * model.scheme.beta0
        history = self._history(state.grid_history, model.order, n_x, "grid")

        ubar = None
        if ubar_fixed is None:
            ubar = builder.variables("ubar_g", n_g, [1], b.p_min[:, None], b.p_max[:, None])[:, 0]
            add_generation_cost(builder, ubar, self.costs)
        else:
            ubar_fixed = check_shape("fixed ubar", ubar_fixed, (n_g,))
        du = builder.variables("du_g", n_g, steps, b.delta_min[:, None], b.delta_max[:, None])

        soft = self.slack_penalty is not None
        x_lo = np.concatenate([np.full(n, -np.inf), np.full(n, -np.inf if soft else b.omega_min)])
        x_hi = np.concatenate([np.full(n, np.inf), np.full(n, np.inf if soft else b.omega_max)])
        x_g = builder.variables("x_g", n_x, steps, x_lo[:, None], x_hi[:, None])
        if soft:
            self._soften(builder, "omega", "slack_freq", b.omega_min, b.omega_max)

        for k in steps:
            terms = [(self._grid_pencil, x_g[:, k - 1]), (self._grid_bug, du[:, k - 1])]
            rhs = hb0 * (model.dae.B_wg @ forecasts.grid.at(state.t0 + k * model.h))
            for i, alpha in enumerate(model.scheme.alphas, start=1):
                if k - i >= 1:
                    terms.append((-alpha * self._grid_e, x_g[:, k - i - 1]))
                else:
                    rhs = rhs + alpha * (self._grid_e @ history[i - k])
            if ubar is not None:
                terms.append((self._grid_bug, ubar))
            else:
                rhs = rhs - self._grid_bug @ ubar_fixed
            if self.n_b:
                if u_b is not None:
                    terms.append((self._grid_aub, u_b[:, (k - 1) // ratio]))
                else:
                    rhs = rhs - self._grid_aub @ (u_b_kw[k - 1] / W_PER_KW)
            builder.add_equality(terms, rhs, "grid_dynamics", range(1, n_x + 1), k)

            weight = model.h / hz.prediction_horizon
            builder.add_quadratic(x_g[:, k - 1], weight * self.costs.q_diag, term="frequency")
            builder.add_quadratic(du[:, k - 1], weight * self.costs.r_diag, term="regulation")
        return ubar

    def _building_part(self, builder: QpBuilder, state: MpcState, forecasts: ForecastSet) -> np.ndarray:
        if self.building_model is None:
            raise InputError("problem needs a building model")
        model, hz, b = self.building_model, self.horizon, self.bounds
        n_b, n_x = self.n_b, 2 * self.n_b
        n_steps = hz.building_steps
        steps = range(1, n_steps + 1)
        hb0 = model.h * model.scheme.beta0
        history = self._history(state.building_history, model.order, n_x, "building")
        times = state.t0 + model.h * np.arange(1, n_steps + 1)

        u_b = builder.variables("u_b", n_b, steps, b.hvac_min_kw / W_PER_KW, b.hvac_max_kw / W_PER_KW)
        soft = self.slack_penalty is not None
        zone_lo, zone_hi = b.zone_bounds(times)
        lo = np.full((n_x, n_steps), -np.inf)
        hi = np.full((n_x, n_steps), np.inf)
        if not soft:
            lo[1::2] = zone_lo[None, :]
            hi[1::2] = zone_hi[None, :]
        x_b = builder.variables("x_b", n_x, steps, lo, hi)
        if soft:
            self._soften(builder, "t_zone", "slack_temp", zone_lo[None, :], zone_hi[None, :])
        if n_b == 0:
            return u_b

        eye = sp.identity(n_x, format="csr")
        bw = model.cluster.B_wb
        for j in steps:
            terms = [(self._bldg_pencil, x_b[:, j - 1]), (self._bldg_bub, u_b[:, j - 1])]
            rhs = hb0 * (bw @ forecasts.buildings.at(times[j - 1]))
            for i, alpha in enumerate(model.scheme.alphas, start=1):
                if j - i >= 1:
                    terms.append((-alpha * eye, x_b[:, j - i - 1]))
                else:
                    rhs = rhs + alpha * history[i - j]
            builder.add_equality(terms, rhs, "building_dynamics", range(1, n_x + 1), j)

            price = self.costs.prices.at(state.t0 + (j - 1) * model.h)
            builder.add_linear(u_b[:, j - 1], (model.h / hz.prediction_horizon) * price * W_PER_KW, term="hvac")
        return u_b

    def _line_limits(self, builder: QpBuilder, state: MpcState, forecasts: ForecastSet,
                     ubar: np.ndarray, u_b: Optional[np.ndarray], u_b_kw: Optional[np.ndarray]) -> None:
        n, hz = self.net.n, self.horizon
        for j in range(1, hz.building_steps + 1):
            w = forecasts.grid.at(state.t0 + j * hz.building_step)
            if u_b is not None:
                add_line_limits(builder, self.net, self.shift, ubar, w[:n], w[n:], j, u_b_idx=u_b[:, j - 1])
            else:
                add_line_limits(builder, self.net, self.shift, ubar, w[:n], w[n:], j,
                                u_b_kw=u_b_kw[j * hz.ratio - 1])

    def _soften(self, builder: QpBuilder, kind: str, slack_kind: str, lower, upper) -> None:
        """Replace hard bounds on `kind` by x - s <= upper, x + s >= lower with s >= 0 penalized."""
        idx = builder.index.lookup(kind)
        times = builder.index.times(kind)
        if idx.size == 0:
            return
        slack = builder.variables(slack_kind, idx.shape[0], times, 0.0, np.inf)
        lower = np.broadcast_to(lower, idx.shape)
        upper = np.broadcast_to(upper, idx.shape)
        eye = sp.identity(idx.shape[0], format="csr")
        for col, t in enumerate(times):
            builder.add_inequality([(eye, idx[:, col]), (-eye, slack[:, col])], -np.inf, upper[:, col],
                                   f"{kind}_upper", time=t)
            builder.add_inequality([(eye, idx[:, col]), (eye, slack[:, col])], lower[:, col], np.inf,
                                   f"{kind}_lower", time=t)
        builder.add_linear(slack, self.slack_penalty, term="slack")

    @staticmethod
    def _history(history: Sequence[np.ndarray], order: int, n_x: int, what: str) -> List[np.ndarray]:
        if len(history) < order:
            raise DimensionError(f"{what} history: order {order} needs {order} states, got {len(history)}")
        return [check_shape(f"{what} history state", x, (n_x,)) for x in history[:order]]

    # ── Decoding ──────────────────────────────────────────────────────────

    def plan(self, sol: QpSolution, ubar_fixed: Optional[np.ndarray] = None,
             u_b_kw: Optional[np.ndarray] = None) -> MpcPlan:
        qp, x = sol.qp, sol.x
        kinds = qp.index.kinds
        hz, n, n_g, n_b = self.horizon, self.net.n, self.net.n_g, self.n_b

        def block(kind, rows, cols):
            if kind not in kinds:
                return np.zeros((rows, cols))
            return x[qp.index.grid(kind)].T

        ubar = x[qp.index.grid("ubar_g")[:, 0]] if "ubar_g" in kinds else (
            np.zeros(n_g) if ubar_fixed is None else np.asarray(ubar_fixed, dtype=float))
        if "u_b" in kinds:
            # solver tolerance can leave u_b a hair outside its box
            u_b = np.clip(block("u_b", hz.building_steps, n_b) * W_PER_KW,
                          self.bounds.hvac_min_kw, self.bounds.hvac_max_kw)
        elif u_b_kw is not None:
            u_b = np.asarray(u_b_kw, dtype=float)[hz.ratio - 1::hz.ratio]
        else:
            u_b = np.zeros((hz.building_steps, n_b))
        return MpcPlan(
            ubar=ubar,
            du=block("du_g", hz.grid_steps, n_g),
            x_g=block("x_g", hz.grid_steps, 2 * n),
            u_b_kw=u_b,
            x_b=block("x_b", hz.building_steps, 2 * n_b),
            objective=sol.objective,
            terms=qp.objective_terms(x),
        )


# ─── Audits ───────────────────────────────────────────────────────────────────

def dimension_audit(qp: QuadraticProgram, net: PowerNetwork, horizon: HorizonConfig) -> Dict[str, int]:
    """
    Variable counts per kind. Raises DimensionError when the decision count exceeds
    N_g (3 n_b + 2n + 2 n_g) or a u_b variable is not shared by exactly h_b/h_g grid steps.
    """
    counts = {kind: int(qp.index.grid(kind).size) for kind in qp.index.kinds}
    decisions = sum(v for k, v in counts.items() if not k.startswith("slack"))
    limit = horizon.grid_steps * (3 * net.n_b + 2 * net.n + 2 * net.n_g)
    if decisions > limit:
        raise DimensionError(f"{decisions} decision variables exceed the bound {limit}")
    if "u_b" in counts and "x_g" in counts and net.n_b:
        grid_rows = [i for i, name in enumerate(qp.eq_names) if name[0] == "grid_dynamics"]
        usage = qp.A_eq[grid_rows].tocsc()[:, qp.index.grid("u_b").ravel()]
        per_var = np.diff(usage.indptr)
        if np.any(per_var != horizon.ratio):
            raise DimensionError(f"u_b variables referenced by {sorted(set(per_var))} grid steps, "
                                 f"expected {horizon.ratio}")
    counts["total"] = qp.n
    return counts


def dynamics_residual(qp: QuadraticProgram, x: np.ndarray) -> float:
    """Largest |row residual| over the grid and building dynamics equalities."""
    rows = [i for i, name in enumerate(qp.eq_names) if name[0].endswith("_dynamics")]
    if not rows:
        return 0.0
    return float(np.max(np.abs(qp.A_eq[rows] @ x - qp.b_eq[rows])))


# ─── Functional entry points ──────────────────────────────────────────────────

def assemble_building_mpc(net: PowerNetwork, building_model: DiscreteBuildingModel, state: MpcState,
                          forecasts: ForecastSet, costs: CostParams, bounds: BoundParams,
                          horizon: HorizonConfig) -> QuadraticProgram:
    return MpcAssembler(net, None, building_model, costs, bounds, horizon).building(state, forecasts)


def assemble_grid_mpc(grid_model: DiscreteGridModel, net: PowerNetwork, u_b_kw: np.ndarray, state: MpcState,
                      forecasts: ForecastSet, costs: CostParams, bounds: BoundParams, horizon: HorizonConfig,
                      include_lopf: bool = True, ubar_fixed: Optional[np.ndarray] = None) -> QuadraticProgram:
    """u_b_kw: (N_g, n_b) per grid step or (N_b, n_b) per building step."""
    u_b_kw = np.atleast_2d(np.asarray(u_b_kw, dtype=float))
    if u_b_kw.shape[0] == horizon.building_steps and horizon.ratio > 1:
        u_b_kw = expand_building_steps(u_b_kw, horizon.ratio)
    return MpcAssembler(net, grid_model, None, costs, bounds, horizon).grid(
        state, forecasts, u_b_kw, include_lopf, ubar_fixed)


def assemble_btg_gmpc(net: PowerNetwork, grid_model: DiscreteGridModel, building_model: DiscreteBuildingModel,
                      state: MpcState, forecasts: ForecastSet, costs: CostParams, bounds: BoundParams,
                      horizon: HorizonConfig, ubar_fixed: Optional[np.ndarray] = None,
                      slack_penalty: Optional[float] = None) -> QuadraticProgram:
    return MpcAssembler(net, grid_model, building_model, costs, bounds, horizon, slack_penalty).joint(
        state, forecasts, ubar_fixed)
