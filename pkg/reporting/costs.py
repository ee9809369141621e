"""
Cost Breakdown
Closed-loop cost per category, weighted the same way as the MPC objective:
frequency and regulation terms by h_g/T_p per grid step, HVAC by h_b/T_p per building step,
generation cost J(ubar) once per prediction-horizon block. Dollars internally, k$ in reports.
"""
from dataclasses import dataclass, asdict
from typing import Dict

import numpy as np
import pandas as pd

from utils.errors import InputError

CATEGORIES = ("freq_cost", "regulation_cost", "lopf_cost", "hvac_cost", "total_grid", "total")
LABELS = {
    "freq_cost": "Frequency Deviation Cost",
    "regulation_cost": "Regulation Cost",
    "lopf_cost": "Generation Cost",
    "hvac_cost": "HVAC Cost",
    "total_grid": "Total Grid Cost",
    "total": "Total Cost",
}


@dataclass
class CostBreakdown:
    freq_cost: float = 0.0
    regulation_cost: float = 0.0
    lopf_cost: float = 0.0
    hvac_cost: float = 0.0

    @property
    def total_grid(self) -> float:
        return self.freq_cost + self.regulation_cost + self.lopf_cost

    @property
    def total(self) -> float:
        return self.total_grid + self.hvac_cost

    def as_dict(self) -> Dict[str, float]:
        """All categories in dollars, totals included."""
        out = asdict(self)
        out["total_grid"] = self.total_grid
        out["total"] = self.total
        return out

    def in_thousands(self) -> Dict[str, float]:
        return {k: v / 1000.0 for k, v in self.as_dict().items()}


def trajectory_costs(x_g: np.ndarray, du: np.ndarray, ubar: np.ndarray, u_b_kw: np.ndarray,
                     prices: np.ndarray, costs, horizon) -> CostBreakdown:
    """
    x_g (K, 2n) states reached after each applied step, du (K, n_g), ubar (blocks, n_g),
    u_b_kw (K_b, n_b), prices (K_b,) $/kWh. `costs` is a CostParams.
    """
    wg = horizon.grid_step / horizon.prediction_horizon
    wb = horizon.building_step / horizon.prediction_horizon
    x_g, du, ubar, u_b_kw = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x_g, du, ubar, u_b_kw))
    prices = np.asarray(prices, dtype=float)
    if u_b_kw.size and len(prices) != len(u_b_kw):
        raise InputError(f"{len(prices)} prices for {len(u_b_kw)} HVAC steps")
    freq = wg * float(np.sum((x_g ** 2) @ costs.q_diag)) if x_g.size else 0.0
    reg = wg * float(np.sum((du ** 2) @ costs.r_diag)) if du.size else 0.0
    lopf = sum(costs.lopf_cost(u) for u in ubar) if ubar.size else 0.0
    hvac = wb * float(np.sum(prices * u_b_kw.sum(axis=1))) if u_b_kw.size else 0.0
    return CostBreakdown(freq, reg, float(lopf), hvac)


def cost_breakdown(run, costs) -> CostBreakdown:
    """Breakdown of a ScenarioRun under the CostParams `costs`."""
    return trajectory_costs(run.x_g[1:], run.du, run.ubar, run.u_b_kw, run.prices, costs, run.horizon)


def percent_reduction(x: float, y: float) -> float:
    """(x - y) / x as a fraction."""
    if x <= 0:
        raise InputError(f"percent reduction needs a positive reference cost, got {x}")
    return (x - y) / x


def _wide(df: pd.DataFrame, kind: str) -> np.ndarray:
    rows = df[df["kind"] == kind]
    if rows.empty:
        return np.zeros((0, 0))
    return rows.pivot_table(index="time_s", columns="entity", values="value", aggfunc="last") \
               .sort_index().sort_index(axis=1).to_numpy(dtype=float)


def breakdown_from_trajectories(df: pd.DataFrame, costs, horizon) -> CostBreakdown:
    """Recompute the breakdown from a long-format trajectories table (see reporting.emit)."""
    delta, omega = _wide(df, "delta"), _wide(df, "omega")
    x_g = np.hstack([delta, omega])[1:] if delta.size else np.zeros((0, 0))
    price = _wide(df, "price")
    return trajectory_costs(x_g, _wide(df, "du_g"), _wide(df, "ubar_g"), _wide(df, "u_b"),
                            price[:, 0] if price.size else np.zeros(0), costs, horizon)
