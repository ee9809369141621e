"""
Operator-Splitting QP Solver
ADMM on   min ½xᵀPx + qᵀx  s.t.  l <= Ax <= u   with Ruiz equilibration, a per-row rho
(equality rows stiffer), over-relaxation, adaptive rho, infeasibility certificates and an
active-set polish once the active set settles. Fixed iteration order, no randomization.
Cached workspaces are read-only; rho updates live in each solve call.
"""
import hashlib
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from config.settings import SolverConfig
from optimization.qp import QuadraticProgram
from utils.errors import InfeasibleError, SolverLimitError
from utils.logger import solver_log

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
DUAL_INFEASIBLE = "dual-infeasible"
ITERATION_LIMIT = "iteration-limit"

RHO_MIN = 1e-6
RHO_MAX = 1e6
RHO_EQ_FACTOR = 1e3
SCALING_MIN = 1e-4
SCALING_MAX = 1e4
POLISH_DELTA = 1e-9
POLISH_REFINE_ITER = 8
POLISH_STABLE_CHECKS = 4   # unchanged active-set guesses before polishing regardless of residuals
RHO_MAX_UPDATES = 20       # rho is frozen afterwards so the iteration map stops changing
CACHE_SIZE = 16


@dataclass
class QpSolution:
    status: str
    x: np.ndarray
    y: np.ndarray                     # duals of the stacked rows [A_eq; A_in; bounds]
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    polished: bool = False
    certificate: float = 0.0
    most_violated: Optional[str] = None
    solve_time: float = 0.0
    qp: Optional[QuadraticProgram] = field(default=None, repr=False)

    @property
    def primal(self) -> np.ndarray:
        return self.x

    @property
    def is_optimal(self) -> bool:
        return self.status == OPTIMAL


# ─── Scaled workspace (cached) ────────────────────────────────────────────────

class _Workspace:
    """Scaled problem data and the initial KKT factorization for one (P, A, bound pattern)."""

    def __init__(self, P: sp.csc_matrix, A: sp.csc_matrix, eq: np.ndarray, free: np.ndarray,
                 settings: SolverConfig):
        self.n, self.m = P.shape[0], A.shape[0]
        self.sigma = settings.sigma
        self.D, self.E, self.c = _ruiz(P, A, settings.scaling_iter)
        Dm, Em = sp.diags(self.D), sp.diags(self.E)
        self.P = (self.c * (Dm @ P @ Dm)).tocsc()
        self.A = (Em @ A @ Dm).tocsc()
        self.eq = eq
        self.free = free
        self.rho = settings.rho
        self.rho_vec = self.rho_vector(self.rho)
        self.factor = self.factorize(self.rho_vec)

    def rho_vector(self, rho: float) -> np.ndarray:
        vec = np.full(self.m, rho)
        vec[self.eq] = min(RHO_EQ_FACTOR * rho, RHO_MAX)
        vec[self.free] = RHO_MIN
        return vec

    def factorize(self, rho_vec: np.ndarray):
        top = self.P + self.sigma * sp.identity(self.n)
        if self.m == 0:
            return splu(top.tocsc())
        kkt = sp.bmat([[top, self.A.T], [self.A, -sp.diags(1.0 / rho_vec)]], format="csc")
        return splu(kkt)


@dataclass
class _RhoState:
    """Step size and KKT factor of one solve call; starts from the workspace's initial rho."""
    rho: float
    rho_vec: np.ndarray
    factor: object
    updates: int = 0

    @classmethod
    def initial(cls, work: _Workspace) -> "_RhoState":
        return cls(work.rho, work.rho_vec, work.factor)

    def update(self, work: _Workspace, rho: float):
        self.rho = float(np.clip(rho, RHO_MIN, RHO_MAX))
        self.rho_vec = work.rho_vector(self.rho)
        self.factor = work.factorize(self.rho_vec)
        self.updates += 1


def _inf_norm_cols(M: sp.spmatrix, size: int) -> np.ndarray:
    if M.shape[0] == 0 or M.nnz == 0:
        return np.zeros(size)
    return np.asarray(abs(M).max(axis=0).toarray()).ravel()


def _ruiz(P, A, iters: int):
    n, m = P.shape[0], A.shape[0]
    D, E = np.ones(n), np.ones(m)
    Ps, As = P.copy().tocsc(), A.copy().tocsc()
    for _ in range(iters):
        norm_x = np.maximum(_inf_norm_cols(Ps, n), _inf_norm_cols(As, n))
        norm_y = _inf_norm_cols(As.T.tocsc(), m)
        dx = 1.0 / np.sqrt(np.clip(np.where(norm_x < SCALING_MIN, 1.0, norm_x), SCALING_MIN, SCALING_MAX))
        dy = 1.0 / np.sqrt(np.clip(np.where(norm_y < SCALING_MIN, 1.0, norm_y), SCALING_MIN, SCALING_MAX))
        Ps = (sp.diags(dx) @ Ps @ sp.diags(dx)).tocsc()
        As = (sp.diags(dy) @ As @ sp.diags(dx)).tocsc()
        D *= dx
        E *= dy
    p_norm = float(np.mean(_inf_norm_cols(Ps, n))) if n else 0.0
    c = 1.0 / np.clip(max(p_norm, 1.0), SCALING_MIN, SCALING_MAX)
    return D, E, c


_cache: "OrderedDict[str, _Workspace]" = OrderedDict()
_cache_lock = threading.Lock()


def _cache_key(P, A, eq, free, settings: SolverConfig) -> str:
    h = hashlib.sha1()
    for mat in (P, A):
        h.update(np.asarray(mat.shape).tobytes())
        h.update(mat.indptr.tobytes())
        h.update(mat.indices.tobytes())
        h.update(mat.data.tobytes())
    h.update(eq.tobytes())
    h.update(free.tobytes())
    h.update(repr((settings.rho, settings.sigma, settings.scaling_iter)).encode())
    return h.hexdigest()


def _workspace(P, A, eq, free, settings: SolverConfig) -> _Workspace:
    key = _cache_key(P, A, eq, free, settings)
    with _cache_lock:
        work = _cache.get(key)
        if work is not None:
            _cache.move_to_end(key)
            return work
    work = _Workspace(P, A, eq, free, settings)
    with _cache_lock:
        _cache[key] = work
        if len(_cache) > CACHE_SIZE:
            _cache.popitem(last=False)
    return work


def clear_cache():
    with _cache_lock:
        _cache.clear()


# ─── Solve ────────────────────────────────────────────────────────────────────

def solve(qp: QuadraticProgram, settings: Optional[SolverConfig] = None,
          warm_start: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> QpSolution:
    """Solve `qp`; returns a QpSolution whose status is optimal, infeasible or iteration-limit."""
    settings = settings or SolverConfig()
    started = time.perf_counter()
    qp.validate_psd()

    A_raw, l_raw, u_raw, row_names = qp.stacked()
    P_raw = qp.hessian.tocsc()
    P_raw.sort_indices()
    A_raw.sort_indices()
    eq = np.abs(u_raw - l_raw) < 1e-12
    free = ~np.isfinite(l_raw) & ~np.isfinite(u_raw)
    work = _workspace(P_raw, A_raw, eq, free, settings)
    state = _RhoState.initial(work)

    n, m = work.n, work.m
    D, E, c = work.D, work.E, work.c
    q = c * D * qp.linear
    l, u = E * l_raw, E * u_raw

    if warm_start is not None:
        x = np.asarray(warm_start[0], dtype=float) / D
        y = c * np.asarray(warm_start[1], dtype=float) / E if len(warm_start[1]) == m else np.zeros(m)
        z = np.clip(work.A @ x, l, u)
    else:
        x, y, z = np.zeros(n), np.zeros(m), np.zeros(m)

    alpha, sigma = settings.alpha, settings.sigma
    status, polished, certificate, worst = ITERATION_LIMIT, False, 0.0, None
    prim = dual = np.inf
    next_polish = settings.polish_start
    guess, stable, tried = None, 0, set()
    it = 0
    for it in range(1, settings.max_iter + 1):
        rho_vec = state.rho_vec
        rhs = np.concatenate([sigma * x - q, z - y / rho_vec])
        sol = state.factor.solve(rhs)
        x_tilde, nu = sol[:n], sol[n:]
        z_tilde = z + (nu - y) / rho_vec
        x_new = alpha * x_tilde + (1.0 - alpha) * x
        z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
        z_new = np.clip(z_relaxed + y / rho_vec, l, u)
        y_new = y + rho_vec * (z_relaxed - z_new)
        delta_x, delta_y = x_new - x, y_new - y
        x, z, y = x_new, z_new, y_new

        if it % settings.check_every and it != settings.max_iter:
            continue

        prim, dual, eps_prim, eps_dual = _residuals(work, q, x, z, y, settings)
        if prim <= eps_prim and dual <= eps_dual:
            status = OPTIMAL
            break
        certificate_y = _primal_infeasible(work, l, u, delta_y, settings.eps_prim_inf)
        if certificate_y is not None:
            status, certificate = INFEASIBLE, certificate_y[0]
            worst = _name(row_names, int(np.argmax(np.abs(certificate_y[1]))))
            break
        if _dual_infeasible(work, q, l, u, delta_x, settings.eps_dual_inf):
            status = DUAL_INFEASIBLE
            break
        if settings.polish:
            signature = _active_signature(*_guess_active(work, l, u, z, y))
            stable = stable + 1 if signature == guess else 0
            guess = signature
            settled = stable >= POLISH_STABLE_CHECKS and signature not in tried
            if max(prim, dual) < next_polish or settled:
                tried.add(signature)
                result = _polish(work, q, l, u, x, z, y, settings)
                if result is not None:
                    x, z, y, prim, dual = result
                    status, polished = OPTIMAL, True
                    break
                next_polish = min(next_polish, max(prim, dual) / 10.0)
        if settings.adaptive_rho and state.updates < RHO_MAX_UPDATES:
            _adapt_rho(work, state, q, x, z, y)

    if status == ITERATION_LIMIT and settings.polish:
        result = _polish(work, q, l, u, x, z, y, settings)
        if result is not None:
            x, z, y, prim, dual = result
            status, polished = OPTIMAL, True
    elif status == OPTIMAL and settings.polish and not polished:
        result = _polish(work, q, l, u, x, z, y, settings)
        if result is not None:
            x, z, y, prim, dual = result
            polished = True

    x_out = D * x
    y_out = E * y / c
    if status == ITERATION_LIMIT:
        viol = np.maximum(l_raw - A_raw @ x_out, 0) + np.maximum(A_raw @ x_out - u_raw, 0)
        worst = _name(row_names, int(np.argmax(viol))) if m else None
    objective = qp.objective(x_out) if status in (OPTIMAL, ITERATION_LIMIT) else np.inf
    result = QpSolution(status, x_out, y_out, objective, float(prim), float(dual), it, polished,
                        certificate, worst, time.perf_counter() - started, qp)
    solver_log.debug(
        f"{status:<15} n={n} m={m} iter={it} prim={prim:.2e} dual={dual:.2e} rho={state.rho:.1e} "
        f"polished={polished} obj={objective:.6g} t={result.solve_time:.3f}s"
    )
    return result


def _name(row_names: Sequence, i: int) -> str:
    kind, entity, t = row_names[i]
    return f"{kind}[entity={entity}, t={t}]"


def _residuals(work: _Workspace, q, x, z, y, settings: SolverConfig):
    Ax = work.A @ x
    Px = work.P @ x
    Aty = work.A.T @ y
    prim = float(np.max(np.abs(Ax - z))) if work.m else 0.0
    dual = float(np.max(np.abs(Px + q + Aty))) if work.n else 0.0
    eps_prim = settings.eps_abs + settings.eps_rel * max(_norm(Ax), _norm(z))
    eps_dual = settings.eps_abs + settings.eps_rel * max(_norm(Px), _norm(Aty), _norm(q))
    return prim, dual, eps_prim, eps_dual


def _norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if len(v) else 0.0


def _support(l, u, v) -> float:
    """sum u_i max(v_i,0) + l_i min(v_i,0), +inf where an unbounded side is hit."""
    v = np.where(np.abs(v) <= 1e-12 * max(_norm(v), 1.0), 0.0, v)
    pos, neg = np.maximum(v, 0), np.minimum(v, 0)
    if np.any((pos > 0) & ~np.isfinite(u)) or np.any((neg < 0) & ~np.isfinite(l)):
        return np.inf
    return float(np.dot(np.where(pos > 0, u, 0), pos) + np.dot(np.where(neg < 0, l, 0), neg))


def _primal_infeasible(work: _Workspace, l, u, delta_y, eps):
    norm = _norm(delta_y)
    if norm <= eps:
        return None
    v = delta_y / norm
    if _support(l, u, v) < -eps and _norm(work.A.T @ v) < eps:
        return _norm(work.A.T @ v), v
    return None


def _dual_infeasible(work: _Workspace, q, l, u, delta_x, eps) -> bool:
    norm = _norm(delta_x)
    if norm <= eps:
        return False
    v = delta_x / norm
    if q @ v >= -eps or _norm(work.P @ v) >= eps:
        return False
    Av = work.A @ v
    bad = (np.isfinite(u) & (Av > eps)) | (np.isfinite(l) & (Av < -eps))
    return not np.any(bad)


def _adapt_rho(work: _Workspace, state: _RhoState, q, x, z, y):
    Ax, Px, Aty = work.A @ x, work.P @ x, work.A.T @ y
    prim = _norm(Ax - z) / max(_norm(Ax), _norm(z), 1e-10)
    dual = _norm(Px + q + Aty) / max(_norm(Px), _norm(Aty), _norm(q), 1e-10)
    if prim == 0 or dual == 0:
        return
    new_rho = float(np.clip(state.rho * np.sqrt(prim / dual), RHO_MIN, RHO_MAX))
    if new_rho > 5.0 * state.rho or new_rho < state.rho / 5.0:
        state.update(work, new_rho)


def _guess_active(work: _Workspace, l, u, z, y):
    """Rows whose dual pushes z onto a bound; equality rows count as lower-active."""
    low = (((z - l) < -y) | work.eq) & np.isfinite(l)
    upp = ((u - z) < y) & ~work.eq & np.isfinite(u)
    return low, upp


def _active_signature(low: np.ndarray, upp: np.ndarray) -> bytes:
    return (low.astype(np.int8) - upp.astype(np.int8)).tobytes()


def _polish(work: _Workspace, q, l, u, x, z, y, settings: SolverConfig):
    """Active-set refinement: solve the equality QP on the guessed active rows and fix the guess."""
    low, upp = _guess_active(work, l, u, z, y)
    for _ in range(settings.polish_rounds):
        rows = np.flatnonzero(low | upp)
        target = np.where(low[rows], l[rows], u[rows])
        a_red = work.A[rows]
        x_p, y_red = _solve_reduced(work.P, q, a_red, target)
        Ax = work.A @ x_p
        y_full = np.zeros(work.m)
        y_full[rows] = y_red

        tol_p = settings.eps_abs + settings.eps_rel * _norm(Ax)
        too_low = ~(low | upp) & (Ax < l - tol_p)
        too_high = ~(low | upp) & (Ax > u + tol_p)
        wrong_low = low & ~work.eq & ~upp & (y_full > settings.eps_abs)
        wrong_upp = upp & ~work.eq & ~low & (y_full < -settings.eps_abs)
        if not (too_low.any() or too_high.any() or wrong_low.any() or wrong_upp.any()):
            z_p = np.clip(Ax, l, u)
            prim, dual, eps_prim, eps_dual = _residuals(work, q, x_p, z_p, y_full, settings)
            if prim <= eps_prim and dual <= eps_dual:
                return x_p, z_p, y_full, prim, dual
            return None
        low = (low & ~wrong_low) | too_low
        upp = (upp & ~wrong_upp) | too_high
    return None


def _solve_reduced(P, q, a_red, target):
    n, k = P.shape[0], a_red.shape[0]
    kkt = sp.bmat([[P, a_red.T], [a_red, None]], format="csc") if k else P.tocsc()
    reg = sp.diags(np.concatenate([np.full(n, POLISH_DELTA), np.full(k, -POLISH_DELTA)]))
    rhs = np.concatenate([-q, target])
    try:
        factor = splu((kkt + reg).tocsc())
    except RuntimeError:
        return np.zeros(n), np.zeros(k)
    sol = factor.solve(rhs)
    for _ in range(POLISH_REFINE_ITER):
        sol = sol + factor.solve(rhs - kkt @ sol)
    return sol[:n], sol[n:]


# ─── Helpers ──────────────────────────────────────────────────────────────────

def variable_slice(sol: QpSolution, kind: str, entity: Union[None, int, Sequence[int]] = None,
                   time: Union[None, int, Sequence[int]] = None) -> np.ndarray:
    """Values of a named block (see VariableIndex.lookup for the shape rules)."""
    if sol.qp is None:
        raise KeyError("solution carries no variable names")
    return sol.x[sol.qp.index.lookup(kind, entity, time)]


def duality_gap(qp: QuadraticProgram, sol: QpSolution) -> float:
    """Primal minus dual objective at (x, y)."""
    A, l, u, _ = qp.stacked()
    x, y = sol.x, sol.y
    xPx = float(x @ (qp.hessian @ x))
    return abs(xPx + float(qp.linear @ x) + _support(l, u, y))


def require_optimal(sol: QpSolution, instant: Optional[float] = None, what: str = "QP") -> QpSolution:
    """Raise InfeasibleError / SolverLimitError unless `sol` is optimal."""
    if sol.status == OPTIMAL:
        return sol
    if sol.status == ITERATION_LIMIT:
        where = f" at t={instant:g}s" if instant is not None else ""
        raise SolverLimitError(f"{what} hit the iteration limit{where} "
                               f"(prim={sol.primal_residual:.2e}, dual={sol.dual_residual:.2e}, "
                               f"worst row {sol.most_violated})")
    raise InfeasibleError(f"{what} {sol.status} (certificate {sol.certificate:.2e})",
                          instant=instant, constraint=sol.most_violated)
