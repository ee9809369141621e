"""
BtG Toolkit - Configuration Settings
Every tunable parameter of the network, building cluster, MPC horizon, bounds, costs,
noise model, simulation schedule and QP solver lives here with its default.
"""
import json
import os
from dataclasses import dataclass, field, fields, replace, asdict
from typing import List, Optional, Tuple

from utils.errors import InputError

# ─── Environment Detection ────────────────────────────────────────────────────
ENV = os.getenv("BTG_ENV", "dev")  # "dev" or "batch"
ROOT_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA_DIR = os.getenv("BTG_DATA_DIR", os.path.join(ROOT_DIR, "data"))
DB_NAME = os.getenv("BTG_DB_NAME", "results.db")


@dataclass
class GridConfig:
    """Power network selection and dynamics overrides"""
    case: str = "case9"                  # bundled case name or path to a case file
    load_damping: Optional[float] = None # D'_k for every bus (p.u./(rad/s)); None keeps the case values
    slack_bus: Optional[int] = None      # defaults to the first generator bus
    base_load_csv: Optional[str] = None  # time_s, bus, P_BL_pu
    misc_load_csv: Optional[str] = None  # time_s, building, P_misc_kW


@dataclass
class BuildingConfig:
    """Building cluster parameters (reference building + sampling)"""
    count: int = 30
    # ── Reference 3R-2C building ─────────────────────────────────────────
    r1: float = 1.16e-4                  # °C/W
    r2: float = 1.16e-4                  # °C/W
    r_win: float = 6.55e-3               # °C/W
    c_wall: float = 1.133e9              # J/°C
    c_zone: float = 7.033e9              # J/°C
    mu_hvac: float = 2.5                 # coefficient of performance (cooling)
    floor_area_m2: float = 10000.0       # metadata only

    # ── Sampling ──────────────────────────────────────────────────────────
    spread: float = 0.05                 # relative std of every RC parameter
    seed: int = 7
    assignment_seed: int = 11            # round-robin order over load buses

    # ── Initial state ─────────────────────────────────────────────────────
    initial_t_zone: Optional[float] = None   # °C; None = middle of the band at t=0
    initial_t_wall: Optional[float] = None   # °C; None = initial_t_zone

    # ── Bang-bang controller ──────────────────────────────────────────────
    setpoint: float = 22.22              # °C
    deadband: float = 0.5                # °C
    max_halvings: int = 10

    # ── Uncontrollable loads ──────────────────────────────────────────────
    misc_load_kw: float = 120.0          # mean miscellaneous load per building
    disturbance_csv: Optional[str] = None    # time_s, T_amb_C, Q_sol_W, Q_int_W


@dataclass
class HorizonConfig:
    """MPC time scales"""
    prediction_horizon: float = 900.0    # T_p (s)
    grid_step: float = 10.0              # h_g (s)
    building_step: float = 300.0         # h_b (s)
    order: int = 1                       # Gear order s used by the MPC

    def validate(self):
        for name, num, den in (("h_b/h_g", self.building_step, self.grid_step),
                               ("T_p/h_b", self.prediction_horizon, self.building_step),
                               ("T_p/h_g", self.prediction_horizon, self.grid_step)):
            if not den > 0:
                raise InputError(f"horizon: {name} needs a positive step, got {den:g}")
            ratio = num / den
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
                raise InputError(f"horizon: {name} must be a positive integer, got {ratio:g}")
        if not 1 <= self.order <= 6:
            raise InputError(f"horizon: Gear order must be in 1..6, got {self.order}")
        return self

    @property
    def grid_steps(self) -> int:
        return int(round(self.prediction_horizon / self.grid_step))

    @property
    def building_steps(self) -> int:
        return int(round(self.prediction_horizon / self.building_step))

    @property
    def ratio(self) -> int:
        return int(round(self.building_step / self.grid_step))


@dataclass
class BoundConfig:
    """Box constraints of the MPC problems"""
    nominal_hz: float = 60.0
    freq_min_hz: float = 59.0
    freq_max_hz: float = 61.0
    day_band: Tuple[float, float] = (21.5, 23.0)     # °C, 8AM-8PM
    night_band: Tuple[float, float] = (22.0, 25.0)   # °C, 8PM-8AM
    day_start_hour: float = 8.0
    day_end_hour: float = 20.0
    hvac_min_kw: float = 0.0
    hvac_max_kw: float = 800.0


@dataclass
class CostConfig:
    """Objective weights and electricity prices"""
    freq_weight: float = 50000.0         # Q_k ($/(rad/s)^2)
    angle_weight: float = 0.0            # angles carry no penalty
    regulation_scale: float = 1.0        # R = scale * diag(quadratic generator cost)
    # ── Time-of-use HVAC prices ($/kWh) ──────────────────────────────────
    price_offpeak: float = 0.04
    price_shoulder: float = 0.08
    price_peak: float = 0.16
    shoulder_hours: Tuple[float, float] = (7.0, 22.0)
    peak_hours: Tuple[float, float] = (12.0, 18.0)
    price_csv: Optional[str] = None      # time_s, price_dollars_per_kWh


@dataclass
class NoiseConfig:
    """Robustness replay perturbations (0 disables)"""
    load_std: float = 0.10               # relative std on w_g and w_b realizations
    model_std: float = 0.10              # relative std on A_b, B_ub, B_wb entries


@dataclass
class SimulationConfig:
    """Closed-loop schedule"""
    scenario: str = "III"                # I, II or III
    final_time: float = 4 * 3600.0       # T_final (s)
    start_hour: float = 10.0             # hour of day at t = 0
    seeds: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    replay_substeps: int = 10            # replay integrator step = h_g / substeps
    replay_order: int = 1
    diagnostic_slack: bool = False       # soften state bounds (exploratory runs only)
    slack_penalty: float = 1e6


@dataclass
class SolverConfig:
    """Operator-splitting QP solver settings"""
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    eps_prim_inf: float = 1e-5
    eps_dual_inf: float = 1e-5
    max_iter: int = 50000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    scaling_iter: int = 15
    check_every: int = 25
    adaptive_rho: bool = True
    polish: bool = True
    polish_rounds: int = 8
    polish_start: float = 1e-3           # try polishing once scaled residuals fall below this


@dataclass
class RunConfig:
    """Everything one run needs"""
    grid: GridConfig = field(default_factory=GridConfig)
    buildings: BuildingConfig = field(default_factory=BuildingConfig)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    bounds: BoundConfig = field(default_factory=BoundConfig)
    costs: CostConfig = field(default_factory=CostConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self) -> "RunConfig":
        self.horizon.validate()
        sim = self.simulation
        if sim.scenario not in ("I", "II", "III"):
            raise InputError(f"simulation: unknown scenario {sim.scenario!r}")
        blocks = sim.final_time / self.horizon.prediction_horizon
        if sim.final_time <= 0 or abs(blocks - round(blocks)) > 1e-9:
            raise InputError("simulation: final_time must be a positive multiple of the prediction horizon")
        if self.noise.load_std < 0 or self.noise.model_std < 0:
            raise InputError("noise: std fractions must be >= 0")
        if self.buildings.count < 0:
            raise InputError("buildings: count must be >= 0")
        for name, band in (("day_band", self.bounds.day_band), ("night_band", self.bounds.night_band)):
            if band[0] > band[1]:
                raise InputError(f"bounds: {name} lower bound exceeds upper bound")
        if self.bounds.hvac_min_kw > self.bounds.hvac_max_kw:
            raise InputError("bounds: hvac_min_kw exceeds hvac_max_kw")
        if not 0 <= self.bounds.day_start_hour < self.bounds.day_end_hour <= 24:
            raise InputError("bounds: day/night switch hours must satisfy 0 <= start < end <= 24")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# ─── Manifest Loading ─────────────────────────────────────────────────────────

_SECTIONS = {
    "grid": GridConfig, "buildings": BuildingConfig, "horizon": HorizonConfig,
    "bounds": BoundConfig, "costs": CostConfig, "noise": NoiseConfig,
    "simulation": SimulationConfig, "solver": SolverConfig,
}


def _merge(section: str, current, values: dict):
    known = {f.name: f for f in fields(current)}
    unknown = set(values) - set(known)
    if unknown:
        raise InputError(f"{section}: unknown keys {sorted(unknown)}")
    coerced = {}
    for key, value in values.items():
        if isinstance(getattr(current, key), tuple) and isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return replace(current, **coerced)


def run_config_from_dict(data: dict, base: Optional[RunConfig] = None) -> RunConfig:
    """Merge a manifest dict over `base` (defaults when omitted)."""
    cfg = base or RunConfig()
    data = dict(data)

    # Shorthand keys of the run manifest
    if "case" in data:
        case = data.pop("case")
        grid_values = case if isinstance(case, dict) else {"case": case}
        data["grid"] = {**data.get("grid", {}), **grid_values}
    for key in ("seeds", "scenario"):
        if key in data:
            data.setdefault("simulation", {})
            data["simulation"] = {**data["simulation"], key: data.pop(key)}

    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise InputError(f"manifest: unknown keys {sorted(unknown)}")

    updates = {name: _merge(name, getattr(cfg, name), values) for name, values in data.items()}
    return replace(cfg, **updates).validate()


def load_run_config(path: str) -> RunConfig:
    """Load a JSON run manifest."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read manifest {path}: {e}") from e
    if not isinstance(data, dict):
        raise InputError(f"manifest {path} must hold a JSON object")
    return run_config_from_dict(data)


def resolve_data_path(name: str, subdir: str, suffix: str) -> str:
    """Bundled file name (e.g. 'case9') or explicit path -> filesystem path."""
    if os.path.exists(name):
        return name
    candidate = os.path.join(DATA_DIR, subdir, name + suffix)
    if os.path.exists(candidate):
        return candidate
    raise InputError(f"cannot find {name!r} (looked for {candidate})")


# ─── Instantiate Configs ──────────────────────────────────────────────────────
grid = GridConfig()
buildings = BuildingConfig()
horizon = HorizonConfig()
bounds = BoundConfig()
costs = CostConfig()
noise = NoiseConfig()
simulation = SimulationConfig()
solver = SolverConfig()
