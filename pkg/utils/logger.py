"""
Logging configuration for the BtG toolkit.
"""
import logging
import os
from datetime import datetime

LOG_DIR = os.getenv("BTG_LOG_DIR", "logs")
LOG_LEVEL = os.getenv("BTG_LOG_LEVEL", "INFO")


def setup_logger(name: str = "btg", level: str = LOG_LEVEL, log_dir: str = LOG_DIR) -> logging.Logger:
    """Create and configure logger with console and (optional) file handlers."""
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level.upper()))

    if logger.handlers:
        return logger

    # Console handler
    console = logging.StreamHandler()
    console.setLevel(logging.INFO)
    console_fmt = logging.Formatter("%(asctime)s │ %(levelname)-7s │ %(message)s", datefmt="%H:%M:%S")
    console.setFormatter(console_fmt)
    logger.addHandler(console)

    # Empty BTG_LOG_DIR keeps everything on the console (tests, CI)
    if not log_dir:
        return logger
    os.makedirs(log_dir, exist_ok=True)

    # File handler (one file per day)
    log_file = os.path.join(log_dir, f"btg_{datetime.now().strftime('%Y%m%d')}.log")
    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(logging.DEBUG)
    file_fmt = logging.Formatter(
        "%(asctime)s │ %(levelname)-7s │ %(name)s │ %(funcName)s:%(lineno)d │ %(message)s"
    )
    file_handler.setFormatter(file_fmt)
    logger.addHandler(file_handler)

    # Solver-specific log: one line per QP solve
    solver_file = os.path.join(log_dir, "solver.log")
    solver_handler = logging.FileHandler(solver_file)
    solver_handler.setLevel(logging.DEBUG)
    solver_handler.setFormatter(file_fmt)
    solver_logger = logging.getLogger(f"{name}.solver")
    solver_logger.addHandler(solver_handler)

    return logger


log = setup_logger()
solver_log = logging.getLogger("btg.solver")
