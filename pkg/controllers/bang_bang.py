"""
Bang-Bang HVAC Control
On/off thermostat with a deadband around the zone set-point, simulated on the same discrete
building model the MPC uses. Band violations are reported, never clipped.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from buildings.model import BuildingDisturbance
from controllers.params import BoundParams
from discretization.gear import DiscreteBuildingModel
from utils.errors import InfeasibleError, InputError
from utils.logger import log


@dataclass
class BangBangResult:
    times: np.ndarray                # (steps,) state times t0 + j*h_b
    u_b_kw: np.ndarray               # (steps, n_b), applied on [t - h_b, t)
    x_b: np.ndarray                  # (steps, 2 n_b)
    deadband: float
    modes: np.ndarray                # (n_b,) cooling on/off after the last step
    violations: List[Tuple[float, int, float]] = field(default_factory=list)  # (t, building, °C)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def max_excursion(self) -> float:
        return max((v[2] for v in self.violations), default=0.0)


def bang_bang(model: DiscreteBuildingModel, history: Sequence[np.ndarray], disturbance: BuildingDisturbance,
              t0: float, steps: int, setpoint: float, deadband: float, u_max_kw: float,
              bounds: Optional[BoundParams] = None, initial_mode: Optional[np.ndarray] = None) -> BangBangResult:
    """
    Each step: cooling switches on above setpoint + deadband, off below setpoint - deadband,
    otherwise keeps its mode. history = [x_b(t0), x_b(t0 - h_b), ...].
    """
    if deadband <= 0:
        raise InputError(f"deadband must be positive, got {deadband}")
    if u_max_kw < 0:
        raise InputError(f"u_max must be >= 0, got {u_max_kw}")
    n_b, h = model.n_b, model.h
    mode = np.zeros(n_b, dtype=bool) if initial_mode is None else np.asarray(initial_mode, dtype=bool).copy()
    hist = [np.asarray(x, dtype=float) for x in history]

    times = t0 + h * np.arange(1, steps + 1)
    u_out = np.zeros((steps, n_b))
    x_out = np.zeros((steps, 2 * n_b))
    for j in range(steps):
        t_zone = hist[0][1::2]
        mode = np.where(t_zone > setpoint + deadband, True, np.where(t_zone < setpoint - deadband, False, mode))
        u_out[j] = mode * u_max_kw
        x_out[j] = model.step(hist, u_out[j], disturbance.at(times[j]))
        hist = [x_out[j]] + hist[:-1]

    result = BangBangResult(times, u_out, x_out, deadband, mode)
    if bounds is not None and steps:
        excursion = bounds.band_excursion(times, x_out[:, 1::2])
        for j, b in zip(*np.nonzero(excursion > 1e-9)):
            result.violations.append((float(times[j]), int(b) + 1, float(excursion[j, b])))
    return result


def tune_bang_bang(model: DiscreteBuildingModel, history: Sequence[np.ndarray], disturbance: BuildingDisturbance,
                   t0: float, steps: int, setpoint: float, deadband: float, u_max_kw: float,
                   bounds: BoundParams, max_halvings: int = 10) -> BangBangResult:
    """Halve the deadband until the trajectory stays inside the zone bands."""
    for attempt in range(max_halvings + 1):
        result = bang_bang(model, history, disturbance, t0, steps, setpoint, deadband, u_max_kw, bounds)
        if result.feasible:
            if attempt:
                log.info(f"Bang-bang deadband tuned to ±{deadband:.4g}°C after {attempt} halvings")
            return result
        log.debug(f"Bang-bang deadband ±{deadband:.4g}°C leaves {len(result.violations)} band violations "
                  f"(worst {result.max_excursion:.3f}°C)")
        deadband /= 2.0
    t, building, excess = max(result.violations, key=lambda v: v[2])
    raise InfeasibleError(f"bang-bang control leaves the zone band by {excess:.3f}°C after "
                          f"{max_halvings} deadband halvings", instant=t, constraint=f"t_zone[building={building}]")
