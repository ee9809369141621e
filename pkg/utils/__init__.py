from utils.logger import log, solver_log
