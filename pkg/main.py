#!/usr/bin/env python3
"""
BtG Toolkit - Main Entry Point
Closed-loop Buildings-to-Grid simulations, scenario comparison and nonlinear validation.

Usage:
    python main.py run --scenario III --out results/      # one scenario
    python main.py compare --out results/                 # Scenarios I, II, III side by side
    python main.py validate --seed 1 --noise-load 0.1     # nonlinear replay under noise
    python main.py selftest                               # fast property suites
"""
import os
import sys
import argparse
from dataclasses import replace
from typing import Dict, List, Optional

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pandas as pd

from config.settings import RunConfig, load_run_config, ROOT_DIR
from reporting.costs import CostBreakdown
from reporting.emit import emit, write_comparison, comparison_table
from simulation.engine import build_models, load_network, run_scenario
from simulation.forecasts import build_forecasts
from simulation.replay import replay_nonlinear
from utils import database as db
from utils.errors import BtgError, InfeasibleError, InputError, EXIT_OK
from utils.logger import log

SCENARIOS = ("I", "II", "III")


def _config(args) -> RunConfig:
    """Manifest (or defaults) with command-line overrides applied."""
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.case:
        cfg = replace(cfg, grid=replace(cfg.grid, case=args.case))
    if args.scenario:
        cfg = replace(cfg, simulation=replace(cfg.simulation, scenario=args.scenario))
    if args.seed is not None:
        cfg = replace(cfg, simulation=replace(cfg.simulation, seeds=[args.seed]))
    if args.noise_load is not None:
        cfg = replace(cfg, noise=replace(cfg.noise, load_std=args.noise_load))
    if args.noise_model is not None:
        cfg = replace(cfg, noise=replace(cfg.noise, model_std=args.noise_model))
    return cfg.validate()


def _models(cfg: RunConfig, seed: Optional[int]):
    net = load_network(cfg)
    return build_models(cfg, net, build_forecasts(cfg, net, seed))


def cmd_run(cfg: RunConfig, outdir: str, seed: Optional[int]) -> int:
    models, forecasts = _models(cfg, seed)
    run = run_scenario(cfg, models=models, forecasts=forecasts, seed=seed)
    emit(run, run.breakdown, outdir, cfg.grid.case, models.bounds, cfg.bounds.nominal_hz)
    _log_costs(run.scenario, run.breakdown)
    return EXIT_OK


def cmd_compare(cfg: RunConfig, outdir: str, seed: Optional[int]) -> int:
    models, forecasts = _models(cfg, seed)
    breakdowns: Dict[str, CostBreakdown] = {}
    for scenario in SCENARIOS:
        run = run_scenario(cfg, scenario, models, forecasts, seed)
        subdir = os.path.join(outdir, f"scenario_{scenario}")
        emit(run, run.breakdown, subdir, cfg.grid.case, models.bounds, cfg.bounds.nominal_hz)
        # Read back from the ledger so the table reflects what was persisted
        stored = db.get_costs(subdir, db.get_runs(subdir)[-1]["run_id"])
        breakdowns[scenario] = CostBreakdown(stored["freq_cost"], stored["regulation_cost"],
                                             stored["lopf_cost"], stored["hvac_cost"])
    path = write_comparison(outdir, breakdowns)
    log.info(f"Cost comparison (k$) written to {path}")
    for line in comparison_table(breakdowns).to_string(index=False, float_format="{:.4f}".format).splitlines():
        log.info(f"  {line}")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, outdir: str, seed: Optional[int]) -> int:
    models, forecasts = _models(cfg, seed)
    run = run_scenario(cfg, models=models, forecasts=forecasts, seed=seed)
    sim = cfg.simulation
    rows: List[dict] = []
    for s in sim.seeds:
        result = replay_nonlinear(run, models, forecasts, cfg.noise.load_std, cfg.noise.model_std, s,
                                  sim.replay_substeps, sim.replay_order)
        rows.append({"seed": s, "max_freq_dev_hz": result.max_freq_dev_hz,
                     "max_band_excursion_c": result.max_band_excursion,
                     "newton_iterations": result.newton_iterations})
    os.makedirs(outdir, exist_ok=True)
    frame = pd.DataFrame(rows, columns=["seed", "max_freq_dev_hz", "max_band_excursion_c", "newton_iterations"])
    frame.to_csv(os.path.join(outdir, "validation.csv"), index=False)

    worst_f = float(frame["max_freq_dev_hz"].max()) if len(frame) else 0.0
    worst_t = float(frame["max_band_excursion_c"].max()) if len(frame) else 0.0
    log.info(f"Validation over {len(rows)} seeds: max |f-{cfg.bounds.nominal_hz:g}| = {worst_f:.4f} Hz, "
             f"worst band excursion {worst_t:.3f}°C")
    if worst_f > cfg.bounds.freq_max_hz - cfg.bounds.nominal_hz:
        log.warning("⚠️ Replayed frequency left the MPC frequency band")
    return EXIT_OK


def cmd_selftest() -> int:
    import pytest
    return int(pytest.main(["-q", "-m", "not slow", os.path.join(ROOT_DIR, "tests")]))


def _log_costs(scenario: str, breakdown: CostBreakdown):
    log.info(f"Scenario {scenario} costs (k$):")
    for category, value in breakdown.in_thousands().items():
        log.info(f"  {category:<16} {value:12.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Buildings-to-Grid MPC toolkit")
    parser.add_argument("command", choices=["run", "compare", "validate", "selftest"])
    parser.add_argument("--case", help="Case file path or bundled case name")
    parser.add_argument("--config", help="JSON run manifest")
    parser.add_argument("--scenario", choices=SCENARIOS, help="Scenario for run/validate")
    parser.add_argument("--out", default="results", help="Output directory")
    parser.add_argument("--seed", type=int, help="Seed for forecasts noise and replay")
    parser.add_argument("--noise-load", type=float, help="Relative std of load/weather noise in the replay")
    parser.add_argument("--noise-model", type=float, help="Relative std of building model noise in the replay")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest()

    commands = {"run": cmd_run, "compare": cmd_compare, "validate": cmd_validate}
    try:
        cfg = _config(args)
        return commands[args.command](cfg, args.out, args.seed)
    except InfeasibleError as e:
        log.error(f"❌ {args.command} aborted: {e}", exc_info=True)
        db.init_db(args.out)
        db.log_solver_event(args.out, None, e.instant if e.instant is not None else -1.0,
                            args.command, "infeasible", str(e), "error")
        return e.exit_code
    except BtgError as e:
        log.error(f"❌ {args.command} failed: {e}", exc_info=True)
        return e.exit_code
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        err = InputError(f"malformed CSV: {e}")
        log.error(f"❌ {args.command} failed: {err}", exc_info=True)
        return err.exit_code
    except KeyboardInterrupt:
        log.info("⚡ Keyboard interrupt received")
        return 130


if __name__ == "__main__":
    sys.exit(main())
