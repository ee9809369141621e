"""
Run Ledger - SQLite storage for scenario runs, cost breakdowns and solver events.
One ledger lives inside each output directory.
"""
import sqlite3
import os
from datetime import datetime
from typing import List, Dict, Optional
from contextlib import contextmanager


def get_db_path(outdir: str) -> str:
    from config.settings import DB_NAME
    os.makedirs(outdir, exist_ok=True)
    return os.path.join(outdir, DB_NAME)


@contextmanager
def get_connection(outdir: str):
    conn = sqlite3.connect(get_db_path(outdir))
    conn.row_factory = sqlite3.Row
    try:
        yield conn
        conn.commit()
    finally:
        conn.close()


def init_db(outdir: str):
    """Initialize ledger tables."""
    with get_connection(outdir) as conn:
        conn.executescript("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT UNIQUE NOT NULL,
                scenario TEXT NOT NULL,
                case_name TEXT NOT NULL,
                seed INTEGER,
                n_buildings INTEGER,
                final_time REAL,
                status TEXT NOT NULL DEFAULT 'running',

                -- Timestamps
                start_time TEXT,
                end_time TEXT,

                -- Metadata
                notes TEXT,
                created_at TEXT DEFAULT CURRENT_TIMESTAMP
            );

            CREATE TABLE IF NOT EXISTS costs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                category TEXT NOT NULL,
                dollars REAL NOT NULL,
                UNIQUE(run_id, category)
            );

            CREATE TABLE IF NOT EXISTS solver_events (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT,
                instant REAL,
                branch TEXT,
                status TEXT,
                message TEXT,
                severity TEXT DEFAULT 'info',
                created_at TEXT DEFAULT CURRENT_TIMESTAMP
            );

            CREATE INDEX IF NOT EXISTS idx_runs_scenario ON runs(scenario);
            CREATE INDEX IF NOT EXISTS idx_costs_run ON costs(run_id);
        """)


def start_run(outdir: str, run: Dict) -> str:
    """Insert a new run record in 'running' state."""
    with get_connection(outdir) as conn:
        conn.execute("""
            INSERT INTO runs (run_id, scenario, case_name, seed, n_buildings, final_time, status, start_time, notes)
            VALUES (?, ?, ?, ?, ?, ?, 'running', ?, ?)
            ON CONFLICT(run_id) DO UPDATE SET
                status = 'running', start_time = excluded.start_time, end_time = NULL
        """, (
            run['run_id'], run['scenario'], run['case_name'], run.get('seed'),
            run.get('n_buildings'), run.get('final_time'), datetime.now().isoformat(), run.get('notes'),
        ))
    return run['run_id']


def finish_run(outdir: str, run_id: str, status: str = "completed"):
    """Close a run record."""
    with get_connection(outdir) as conn:
        conn.execute(
            "UPDATE runs SET status = ?, end_time = ? WHERE run_id = ?",
            (status, datetime.now().isoformat(), run_id),
        )


def record_costs(outdir: str, run_id: str, costs: Dict[str, float]):
    """Insert or update the per-category costs of a run (dollars)."""
    with get_connection(outdir) as conn:
        conn.executemany("""
            INSERT INTO costs (run_id, category, dollars) VALUES (?, ?, ?)
            ON CONFLICT(run_id, category) DO UPDATE SET dollars = excluded.dollars
        """, [(run_id, category, float(value)) for category, value in costs.items()])


def get_costs(outdir: str, run_id: str) -> Dict[str, float]:
    with get_connection(outdir) as conn:
        rows = conn.execute("SELECT category, dollars FROM costs WHERE run_id = ?", (run_id,)).fetchall()
        return {r['category']: r['dollars'] for r in rows}


def get_runs(outdir: str, status: Optional[str] = None) -> List[Dict]:
    """Get run records, optionally filtered by status."""
    with get_connection(outdir) as conn:
        if status is None:
            rows = conn.execute("SELECT * FROM runs ORDER BY id").fetchall()
        else:
            rows = conn.execute("SELECT * FROM runs WHERE status = ? ORDER BY id", (status,)).fetchall()
        return [dict(r) for r in rows]


def log_solver_event(outdir: str, run_id: Optional[str], instant: float, branch: str, status: str,
                     message: str = "", severity: str = "info"):
    """Log a non-optimal solve or an abort."""
    with get_connection(outdir) as conn:
        conn.execute("""
            INSERT INTO solver_events (run_id, instant, branch, status, message, severity)
            VALUES (?, ?, ?, ?, ?, ?)
        """, (run_id, instant, branch, status, message, severity))


def get_solver_events(outdir: str, run_id: Optional[str] = None, limit: int = 100) -> List[Dict]:
    with get_connection(outdir) as conn:
        if run_id is None:
            rows = conn.execute("SELECT * FROM solver_events ORDER BY id DESC LIMIT ?", (limit,)).fetchall()
        else:
            rows = conn.execute(
                "SELECT * FROM solver_events WHERE run_id = ? ORDER BY id DESC LIMIT ?", (run_id, limit)
            ).fetchall()
        return [dict(r) for r in rows]
