from config.settings import (
    ENV, DATA_DIR, DB_NAME,
    GridConfig, BuildingConfig, HorizonConfig, BoundConfig, CostConfig, NoiseConfig,
    SimulationConfig, SolverConfig, RunConfig,
    load_run_config, run_config_from_dict, resolve_data_path,
    grid, buildings, horizon, bounds, costs, noise, simulation, solver,
)
