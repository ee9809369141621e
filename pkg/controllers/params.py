"""
Controller Parameters
Cost weights (Q, R, prices, generator cost curves) and box bounds of the MPC problems,
resolved from the run configuration against a concrete network.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from config.settings import BoundConfig, CostConfig
from network.case import PowerNetwork
from simulation.forecasts import PriceSeries, hour_of_day
from utils.errors import DimensionError, InputError


@dataclass(frozen=True, eq=False)
class CostParams:
    """Diagonal penalties and cost curves; J(u) = sum c2 u^2 + c1 u + c0 per generator."""
    q_diag: np.ndarray          # 2n, weights on [delta; omega]
    r_diag: np.ndarray          # n_g, weights on delta u_g
    prices: PriceSeries
    gen_quadratic: np.ndarray
    gen_linear: np.ndarray
    gen_constant: np.ndarray

    def __post_init__(self):
        if np.any(self.q_diag < 0) or np.any(self.r_diag < 0):
            raise InputError("Q and R must be positive semidefinite")
        if np.any(self.gen_quadratic < 0):
            raise InputError("generator cost curves must be convex")
        n_g = len(self.gen_quadratic)
        if len(self.r_diag) != n_g or len(self.gen_linear) != n_g or len(self.gen_constant) != n_g:
            raise DimensionError("cost vectors disagree on the generator count")

    @property
    def n_g(self) -> int:
        return len(self.r_diag)

    def lopf_cost(self, ubar: np.ndarray) -> float:
        ubar = np.asarray(ubar, dtype=float)
        return float(np.sum(self.gen_quadratic * ubar ** 2 + self.gen_linear * ubar + self.gen_constant))

    @classmethod
    def from_config(cls, cfg: CostConfig, net: PowerNetwork, prices: PriceSeries) -> "CostParams":
        quad = np.array([g.cost_quadratic for g in net.generators])
        q = np.concatenate([np.full(net.n, cfg.angle_weight), np.full(net.n, cfg.freq_weight)])
        return cls(
            q_diag=q,
            r_diag=cfg.regulation_scale * quad,
            prices=prices,
            gen_quadratic=quad,
            gen_linear=np.array([g.cost_linear for g in net.generators]),
            gen_constant=np.array([g.cost_constant for g in net.generators]),
        )

    def scaled(self, q: float = 1.0, r: float = 1.0, price: float = 1.0) -> "CostParams":
        """Copy with Q, R and prices multiplied by the given factors."""
        return CostParams(self.q_diag * q, self.r_diag * r,
                          PriceSeries(self.prices.times, self.prices.prices * price),
                          self.gen_quadratic, self.gen_linear, self.gen_constant)


@dataclass(frozen=True, eq=False)
class BoundParams:
    """Bounds in QP units: omega rad/s deviation, temperatures °C, HVAC kW, generation p.u."""
    omega_min: float
    omega_max: float
    day_band: Tuple[float, float]
    night_band: Tuple[float, float]
    day_start_hour: float
    day_end_hour: float
    hvac_min_kw: float
    hvac_max_kw: float
    p_min: np.ndarray
    p_max: np.ndarray
    delta_min: np.ndarray
    delta_max: np.ndarray
    start_hour: float = 0.0

    def __post_init__(self):
        if self.omega_min > self.omega_max or self.hvac_min_kw > self.hvac_max_kw:
            raise InputError("bounds: lower bound above upper bound")
        if np.any(self.p_min > self.p_max) or np.any(self.delta_min > self.delta_max):
            raise InputError("bounds: generator lower bound above upper bound")
        for band in (self.day_band, self.night_band):
            if band[0] > band[1]:
                raise InputError("bounds: temperature band lower bound above upper bound")

    @classmethod
    def from_config(cls, cfg: BoundConfig, net: PowerNetwork, start_hour: float = 0.0) -> "BoundParams":
        to_rad = 2 * np.pi
        return cls(
            omega_min=to_rad * (cfg.freq_min_hz - cfg.nominal_hz),
            omega_max=to_rad * (cfg.freq_max_hz - cfg.nominal_hz),
            day_band=tuple(cfg.day_band),
            night_band=tuple(cfg.night_band),
            day_start_hour=cfg.day_start_hour,
            day_end_hour=cfg.day_end_hour,
            hvac_min_kw=cfg.hvac_min_kw,
            hvac_max_kw=cfg.hvac_max_kw,
            p_min=np.array([g.p_min for g in net.generators]),
            p_max=np.array([g.p_max for g in net.generators]),
            delta_min=np.array([g.delta_min for g in net.generators]),
            delta_max=np.array([g.delta_max for g in net.generators]),
            start_hour=start_hour,
        )

    def zone_band(self, t: float) -> Tuple[float, float]:
        """(lower, upper) zone temperature at absolute time t."""
        hour = hour_of_day(t, self.start_hour)
        if self.day_start_hour <= hour < self.day_end_hour:
            return self.day_band
        return self.night_band

    def zone_bounds(self, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        bands = np.array([self.zone_band(t) for t in np.atleast_1d(times)]).reshape(-1, 2)
        return bands[:, 0], bands[:, 1]

    def band_excursion(self, times: np.ndarray, t_zone: np.ndarray) -> np.ndarray:
        """°C outside the scheduled band, per time and building (0 when inside)."""
        lo, hi = self.zone_bounds(times)
        t_zone = np.atleast_2d(t_zone)
        return np.maximum(lo[:, None] - t_zone, 0.0) + np.maximum(t_zone - hi[:, None], 0.0)

    def widened(self, amount: float) -> "BoundParams":
        """Every interval enlarged by `amount` on both sides (generation bounds in p.u.)."""
        return BoundParams(
            self.omega_min - amount, self.omega_max + amount,
            (self.day_band[0] - amount, self.day_band[1] + amount),
            (self.night_band[0] - amount, self.night_band[1] + amount),
            self.day_start_hour, self.day_end_hour,
            self.hvac_min_kw - amount, self.hvac_max_kw + amount,
            self.p_min - amount, self.p_max + amount,
            self.delta_min - amount, self.delta_max + amount,
            self.start_hour,
        )
