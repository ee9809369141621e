"""
Disturbance Forecasts
Grid loads, building weather/gains and electricity prices over a run, either read from CSV
or generated synthetically (diurnal profiles, seeded), plus noisy realizations of them.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import pandas as pd

from buildings.model import BuildingDisturbance, hold_index, load_building_disturbance
from config.settings import RunConfig, resolve_data_path
from grid.dae import GridDisturbance, load_grid_disturbance
from network.case import PowerNetwork
from utils.errors import DimensionError, InputError
from utils.logger import log

# Hourly multiplier of the nominal bus load (summer weekday shape, peak = 1)
LOAD_SHAPE = np.array([
    0.62, 0.59, 0.57, 0.56, 0.57, 0.61, 0.68, 0.76, 0.83, 0.88, 0.91, 0.94,
    0.96, 0.98, 0.99, 1.00, 1.00, 0.99, 0.96, 0.92, 0.87, 0.80, 0.72, 0.66,
])


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Electricity price in $/kWh, held between samples."""
    times: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        if self.prices.shape != self.times.shape:
            raise DimensionError("price series: times and prices differ in length")
        if np.any(self.prices < 0):
            raise InputError("price series: prices must be nonnegative")

    def at(self, t: float) -> float:
        return float(self.prices[hold_index(self.times, t)])


@dataclass(frozen=True, eq=False)
class ForecastSet:
    """Everything the controllers see about the future (or, realized, what actually happened)."""
    grid: GridDisturbance
    buildings: BuildingDisturbance
    prices: PriceSeries
    start_hour: float = 0.0

    def hour(self, t: float) -> float:
        return hour_of_day(t, self.start_hour)

    @property
    def horizon_end(self) -> float:
        return float(min(self.grid.times[-1], self.buildings.times[-1], self.prices.times[-1]))


def hour_of_day(t: float, start_hour: float) -> float:
    return (start_hour + t / 3600.0) % 24.0


# ─── Synthetic profiles ───────────────────────────────────────────────────────

def ambient_temperature(hours: np.ndarray) -> np.ndarray:
    """°C, peak 35 at 3PM, low 21 at 3AM."""
    return 28.0 + 7.0 * np.sin(2 * np.pi * (hours - 9.0) / 24.0)


def solar_gain(hours: np.ndarray) -> np.ndarray:
    """W, zero outside 6AM-6PM."""
    return 1.5e5 * np.maximum(0.0, np.sin(np.pi * (hours - 6.0) / 12.0))


def internal_gain(hours: np.ndarray) -> np.ndarray:
    """W, occupied 8AM-6PM."""
    return np.where((hours >= 8.0) & (hours < 18.0), 2.5e5, 5.0e4)


def load_multiplier(hours: np.ndarray) -> np.ndarray:
    return np.interp(hours, np.arange(24), LOAD_SHAPE, period=24)


def misc_load_shape(hours: np.ndarray) -> np.ndarray:
    return 0.85 + 0.35 * np.maximum(0.0, np.sin(np.pi * (hours - 7.0) / 13.0))


def tou_price(hours: np.ndarray, costs) -> np.ndarray:
    """Three-tier time-of-use price ($/kWh) from the CostConfig windows."""
    hours = np.asarray(hours, dtype=float)
    shoulder = (hours >= costs.shoulder_hours[0]) & (hours < costs.shoulder_hours[1])
    peak = (hours >= costs.peak_hours[0]) & (hours < costs.peak_hours[1])
    return np.where(peak, costs.price_peak, np.where(shoulder, costs.price_shoulder, costs.price_offpeak))


def synthetic_building_disturbance(times: np.ndarray, start_hour: float, n_b: int,
                                   rng: np.random.Generator) -> BuildingDisturbance:
    hours = hour_of_day(times, start_hour)
    occupancy = rng.uniform(0.9, 1.1, n_b)
    ones = np.ones(n_b)
    return BuildingDisturbance(
        times=times,
        t_amb=np.outer(ambient_temperature(hours), ones),
        q_sol=np.outer(solar_gain(hours), ones),
        q_int=np.outer(internal_gain(hours), occupancy),
    )


def synthetic_grid_disturbance(times: np.ndarray, start_hour: float, net: PowerNetwork,
                               misc_load_kw: float, rng: np.random.Generator) -> GridDisturbance:
    hours = hour_of_day(times, start_hour)
    base = np.outer(load_multiplier(hours), net.base_load)
    per_building = misc_load_kw * np.maximum(1.0 + 0.1 * rng.standard_normal(net.n_b), 0.0)
    misc = np.outer(misc_load_shape(hours), per_building)
    return GridDisturbance(times, base, misc)


def load_price_series(path: str) -> PriceSeries:
    """CSV with columns time_s, price_dollars_per_kWh."""
    df = pd.read_csv(path)
    missing = {"time_s", "price_dollars_per_kWh"} - set(df.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    df = df.sort_values("time_s")
    return PriceSeries(df["time_s"].to_numpy(dtype=float), df["price_dollars_per_kWh"].to_numpy(dtype=float))


# ─── Assembly ─────────────────────────────────────────────────────────────────

def build_forecasts(cfg: RunConfig, net: PowerNetwork, seed: Optional[int] = None) -> ForecastSet:
    """Forecasts covering [0, T_final + T_p + h_b] at h_g (grid) and h_b (buildings, prices)."""
    hz = cfg.horizon
    start = cfg.simulation.start_hour
    span = cfg.simulation.final_time + hz.prediction_horizon + hz.building_step
    grid_times = np.arange(0.0, span + 0.5 * hz.grid_step, hz.grid_step)
    bldg_times = np.arange(0.0, span + 0.5 * hz.building_step, hz.building_step)
    rng = np.random.default_rng(cfg.buildings.seed if seed is None else seed)

    if cfg.buildings.disturbance_csv:
        paths = [resolve_data_path(p, "weather", ".csv") for p in cfg.buildings.disturbance_csv.split(",")]
        buildings = load_building_disturbance(paths, net.n_b)
    else:
        buildings = synthetic_building_disturbance(bldg_times, start, net.n_b, rng)

    if cfg.grid.base_load_csv:
        misc_default = np.full(net.n_b, cfg.buildings.misc_load_kw)
        grid = load_grid_disturbance(resolve_data_path(cfg.grid.base_load_csv, "loads", ".csv"),
                                     cfg.grid.misc_load_csv and resolve_data_path(cfg.grid.misc_load_csv, "loads", ".csv"),
                                     net.n, net.n_b, misc_default)
    elif cfg.grid.misc_load_csv:
        raise InputError("grid: misc_load_csv is read together with base_load_csv")
    else:
        grid = synthetic_grid_disturbance(grid_times, start, net, cfg.buildings.misc_load_kw, rng)

    if cfg.costs.price_csv:
        prices = load_price_series(resolve_data_path(cfg.costs.price_csv, "prices", ".csv"))
    else:
        prices = PriceSeries(bldg_times, tou_price(hour_of_day(bldg_times, start), cfg.costs))

    fc = ForecastSet(grid, buildings, prices, start)
    if fc.horizon_end + 1e-9 < span - hz.building_step:
        log.warning(f"Forecast data ends at t={fc.horizon_end:g}s; later samples are held")
    return fc


def realize(fc: ForecastSet, load_std: float, rng: np.random.Generator) -> ForecastSet:
    """Multiplicative Gaussian noise (relative std `load_std`) on every load and weather sample."""
    if load_std < 0:
        raise InputError("noise std must be >= 0")
    if load_std == 0:
        return fc
    g, b = fc.grid, fc.buildings
    grid = g.realized(1.0 + load_std * rng.standard_normal(g.base_load.shape),
                      1.0 + load_std * rng.standard_normal(g.misc_load.shape))
    buildings = b.scaled(1.0 + load_std * rng.standard_normal((3,) + b.t_amb.shape))
    return replace(fc, grid=grid, buildings=buildings)
