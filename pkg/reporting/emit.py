"""
Result Emission
Writes a run directory:

    costs.csv          scenario, category, dollars, kdollars
    trajectories.csv   time_s, kind, entity, value  (long format)
    summary.json       run metadata, costs in k$, schedule counts, solver statistics
    plotdata/*.csv     time_s, min, mean, max envelopes (frequency, temperature, hvac, generation)
    results.db         run ledger (see utils.database)
"""
import json
import os
from typing import Dict, Optional

import numpy as np
import pandas as pd

from reporting.costs import CATEGORIES, LABELS, CostBreakdown, percent_reduction
from utils import database as db
from utils.errors import InputError
from utils.logger import log

TRAJECTORY_COLUMNS = ["time_s", "kind", "entity", "value"]
ENVELOPE_COLUMNS = ["time_s", "min", "mean", "max"]


def _long(times: np.ndarray, values: np.ndarray, kind: str, entities=None) -> pd.DataFrame:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    values = values.reshape(len(times), -1)
    n_t, n_e = values.shape
    entities = np.arange(1, n_e + 1) if entities is None else np.asarray(entities)
    return pd.DataFrame({
        "time_s": np.repeat(np.asarray(times, dtype=float), n_e),
        "kind": kind,
        "entity": np.tile(entities, n_t).astype(int),
        "value": values.ravel(),
    }, columns=TRAJECTORY_COLUMNS)


def trajectories_frame(run) -> pd.DataFrame:
    n = run.x_g.shape[1] // 2
    frames = [
        _long(run.grid_times, run.x_g[:, :n], "delta"),
        _long(run.grid_times, run.x_g[:, n:], "omega"),
        _long(run.grid_times[:-1], run.du, "du_g"),
        _long(run.block_times, run.ubar, "ubar_g"),
        _long(run.building_times, run.x_b[:, 0::2], "t_wall"),
        _long(run.building_times, run.x_b[:, 1::2], "t_zone"),
        _long(run.building_times[:-1], run.u_b_kw, "u_b"),
        _long(run.building_times[:-1], np.asarray(run.prices).reshape(-1, 1), "price", [0]),
    ]
    frames = [f for f in frames if not f.empty]
    if not frames:
        return pd.DataFrame(columns=TRAJECTORY_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def envelope(times: np.ndarray, values: np.ndarray) -> pd.DataFrame:
    """Min / mean / max across entities at each time."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return pd.DataFrame(columns=ENVELOPE_COLUMNS)
    values = values.reshape(len(times), -1)
    return pd.DataFrame({"time_s": times, "min": values.min(axis=1), "mean": values.mean(axis=1),
                         "max": values.max(axis=1)}, columns=ENVELOPE_COLUMNS)


def write_costs(path: str, breakdowns: Dict[str, CostBreakdown]) -> str:
    rows = [{"scenario": name, "category": cat, "dollars": value, "kdollars": value / 1000.0}
            for name, b in breakdowns.items() for cat, value in b.as_dict().items()]
    pd.DataFrame(rows, columns=["scenario", "category", "dollars", "kdollars"]).to_csv(path, index=False)
    return path


def read_costs(path: str) -> Dict[str, CostBreakdown]:
    df = pd.read_csv(path, dtype={"scenario": str}, float_precision="round_trip")
    out: Dict[str, CostBreakdown] = {}
    for name, group in df.groupby("scenario", sort=False):
        values = dict(zip(group["category"], group["dollars"]))
        out[name] = CostBreakdown(values.get("freq_cost", 0.0), values.get("regulation_cost", 0.0),
                                  values.get("lopf_cost", 0.0), values.get("hvac_cost", 0.0))
    return out


def read_trajectories(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def _run_id(run) -> str:
    return f"scenario_{run.scenario}" + (f"_seed{run.seed}" if run.seed is not None else "")


def emit(run, breakdown: CostBreakdown, outdir: str, case_name: str = "", bounds=None,
         nominal_hz: float = 60.0) -> Dict[str, str]:
    """Write every artifact of one run; returns {artifact: path}."""
    plotdir = os.path.join(outdir, "plotdata")
    os.makedirs(plotdir, exist_ok=True)
    paths = {
        "costs": os.path.join(outdir, "costs.csv"),
        "trajectories": os.path.join(outdir, "trajectories.csv"),
        "summary": os.path.join(outdir, "summary.json"),
    }
    write_costs(paths["costs"], {run.scenario: breakdown})
    trajectories_frame(run).to_csv(paths["trajectories"], index=False)

    n = run.x_g.shape[1] // 2
    frequency = nominal_hz + run.x_g[:, n:] / (2 * np.pi)
    generation = run.generation() if len(run.ubar) else np.zeros((0, 0))
    envelopes = {
        "frequency": envelope(run.grid_times, frequency),
        "temperature": envelope(run.building_times, run.x_b[:, 1::2]),
        "hvac": envelope(run.building_times[:-1], run.u_b_kw),
        "generation": envelope(run.grid_times[:-1], generation),
    }
    for name, frame in envelopes.items():
        paths[f"envelope_{name}"] = os.path.join(plotdir, f"envelope_{name}.csv")
        frame.to_csv(paths[f"envelope_{name}"], index=False)

    excursion = 0.0
    if bounds is not None and run.x_b.size:
        excursion = float(np.max(bounds.band_excursion(run.building_times, run.x_b[:, 1::2])))
    summary = {
        "run_id": _run_id(run),
        "scenario": run.scenario,
        "seed": run.seed,
        "case": case_name,
        "n_buildings": int(run.x_b.shape[1] // 2),
        "final_time_s": float(run.grid_times[-1]) if len(run.grid_times) else 0.0,
        "costs_kdollars": breakdown.in_thousands(),
        "branch_counts": run.branch_counts,
        "solver": {k: float(v) for k, v in run.solver_stats.items()},
        "max_freq_dev_hz": float(np.max(np.abs(frequency - nominal_hz))) if frequency.size else 0.0,
        "max_band_excursion_c": excursion,
    }
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)

    run_id = _run_id(run)
    db.init_db(outdir)
    db.start_run(outdir, {
        "run_id": run_id, "scenario": run.scenario, "case_name": case_name, "seed": run.seed,
        "n_buildings": summary["n_buildings"], "final_time": summary["final_time_s"],
    })
    db.record_costs(outdir, run_id, breakdown.as_dict())
    db.finish_run(outdir, run_id)
    log.info(f"Results written to {outdir}")
    return paths


def comparison_table(breakdowns: Dict[str, CostBreakdown]) -> pd.DataFrame:
    """Rows per cost category (k$), one column per scenario, plus pairwise percent reductions."""
    scenarios = [s for s in ("I", "II", "III") if s in breakdowns] or list(breakdowns)
    table = pd.DataFrame({"category": [LABELS[c] for c in CATEGORIES]})
    for s in scenarios:
        values = breakdowns[s].in_thousands()
        table[s] = [values[c] for c in CATEGORIES]
    for a, b in (("I", "II"), ("I", "III"), ("II", "III")):
        if a in breakdowns and b in breakdowns:
            ref, new = breakdowns[a].as_dict(), breakdowns[b].as_dict()
            table[f"reduction_{a}_{b}_pct"] = [
                100.0 * percent_reduction(ref[c], new[c]) if ref[c] > 0 else np.nan for c in CATEGORIES
            ]
    return table


def write_comparison(outdir: str, breakdowns: Dict[str, CostBreakdown]) -> str:
    if not breakdowns:
        raise InputError("nothing to compare")
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "cost_comparison.csv")
    comparison_table(breakdowns).to_csv(path, index=False)
    write_costs(os.path.join(outdir, "costs.csv"), breakdowns)
    return path
