"""
Grid Descriptor Dynamics
Swing-equation DAE  E_g x_g' = A_g x_g + Phi(delta) + A_ub u_b + B_ug u_g + B_wg w_g
with x_g = [delta (rad); omega (rad/s deviation)], u_b in kW and w_g = [P_BL (p.u.); P_misc (kW)].
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from buildings.model import W_PER_KW, hold_index
from network.case import PowerNetwork
from utils.errors import DimensionError, InputError, check_shape


@dataclass(frozen=True, eq=False)
class GridDae:
    n: int
    n_g: int
    n_b: int
    E_g: sp.csr_matrix
    A_g_linear: sp.csr_matrix
    A_g_flowless: sp.csr_matrix     # A_g without the -L block; the nonlinear model adds Phi instead
    A_ub: sp.csr_matrix
    B_ug: sp.csr_matrix
    B_wg: sp.csr_matrix
    branch_incidence: sp.csr_matrix
    susceptances: np.ndarray
    base_mva: float
    omega0: float

    @property
    def n_x(self) -> int:
        return 2 * self.n

    @property
    def n_w(self) -> int:
        return self.n + self.n_b

    @property
    def algebraic_rows(self) -> np.ndarray:
        """Row indices whose E_g diagonal entry is zero."""
        return np.flatnonzero(self.E_g.diagonal() == 0)


def assemble_dae(net: PowerNetwork) -> GridDae:
    n, n_g, n_b = net.n, net.n_g, net.n_b
    eye = sp.identity(n, format="csr")
    zero = sp.csr_matrix((n, n))
    kw_to_pu = 1.0 / (W_PER_KW * net.base_mva)
    pi = net.bldg_incidence

    e_g = sp.diags(np.concatenate([np.ones(n), net.inertia])).tocsr()
    damping = sp.diags(-net.total_damping)
    a_flowless = sp.bmat([[zero, eye], [zero, damping]], format="csr")
    a_linear = sp.bmat([[zero, eye], [-net.laplacian, damping]], format="csr")
    a_ub = sp.vstack([sp.csr_matrix((n, n_b)), -pi * kw_to_pu], format="csr")
    b_ug = sp.vstack([sp.csr_matrix((n, n_g)), net.gen_incidence], format="csr")
    b_wg = sp.bmat([[sp.csr_matrix((n, n)), sp.csr_matrix((n, n_b))],
                    [-eye, -pi * kw_to_pu]], format="csr")
    return GridDae(
        n=n, n_g=n_g, n_b=n_b, E_g=e_g, A_g_linear=a_linear, A_g_flowless=a_flowless,
        A_ub=a_ub, B_ug=b_ug, B_wg=b_wg,
        branch_incidence=net.branch_incidence, susceptances=net.susceptances,
        base_mva=net.base_mva, omega0=net.omega0,
    )


def phi(dae: GridDae, delta: np.ndarray) -> np.ndarray:
    """[0; -sum_j b_kj sin(delta_k - delta_j)]: sine flows leaving each bus."""
    delta = check_shape("delta", delta, (dae.n,))
    flows = dae.susceptances * np.sin(dae.branch_incidence @ delta)
    return np.concatenate([np.zeros(dae.n), -(dae.branch_incidence.T @ flows)])


def phi_jacobian(dae: GridDae, delta: np.ndarray) -> sp.csr_matrix:
    """d Phi / d x_g: cos-weighted Laplacian in the frequency/angle block."""
    inc = dae.branch_incidence
    weighted = inc.T @ sp.diags(dae.susceptances * np.cos(inc @ delta)) @ inc
    zero = sp.csr_matrix((dae.n, dae.n))
    return sp.bmat([[zero, zero], [-weighted, zero]], format="csr")


def forcing(dae: GridDae, u_g: np.ndarray, u_b: np.ndarray, w_g: np.ndarray) -> np.ndarray:
    """A_ub u_b + B_ug u_g + B_wg w_g."""
    u_g = check_shape("u_g", u_g, (dae.n_g,))
    u_b = check_shape("u_b", u_b, (dae.n_b,))
    w_g = check_shape("w_g", w_g, (dae.n_w,))
    return dae.A_ub @ u_b + dae.B_ug @ u_g + dae.B_wg @ w_g


def grid_residual(dae: GridDae, x_g, xdot_g, u_g, u_b, w_g, nonlinear: bool = True) -> np.ndarray:
    """E_g x' - RHS; zero iff (x, x') satisfies the DAE."""
    x = check_shape("x_g", x_g, (dae.n_x,))
    xdot = check_shape("xdot_g", xdot_g, (dae.n_x,))
    if nonlinear:
        rhs = dae.A_g_flowless @ x + phi(dae, x[:dae.n])
    else:
        rhs = dae.A_g_linear @ x
    return dae.E_g @ xdot - rhs - forcing(dae, u_g, u_b, w_g)


# ─── Disturbances ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GridDisturbance:
    """w_g samples: base_load (n_t, n) p.u., misc_load (n_t, n_b) kW, held between samples."""
    times: np.ndarray
    base_load: np.ndarray
    misc_load: np.ndarray
    forecast: bool = True

    def __post_init__(self):
        if self.base_load.shape[0] != len(self.times) or self.misc_load.shape[0] != len(self.times):
            raise DimensionError("grid disturbance series lengths differ")
        if np.any(self.base_load < 0) or np.any(self.misc_load < 0):
            raise InputError("grid disturbance loads must be nonnegative")

    @property
    def n(self) -> int:
        return self.base_load.shape[1]

    @property
    def n_b(self) -> int:
        return self.misc_load.shape[1]

    def at(self, t: float) -> np.ndarray:
        k = hold_index(self.times, t)
        return np.concatenate([self.base_load[k], self.misc_load[k]])

    def realized(self, base_factor: np.ndarray, misc_factor: np.ndarray) -> "GridDisturbance":
        """Realization = forecast * factors, loads clipped at zero."""
        return GridDisturbance(self.times, np.maximum(self.base_load * base_factor, 0.0),
                               np.maximum(self.misc_load * misc_factor, 0.0), forecast=False)


def _pivot(path: str, entity: str, value: str, width: int) -> tuple:
    df = pd.read_csv(path)
    missing = {"time_s", entity, value} - set(df.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    table = df.pivot_table(index="time_s", columns=entity, values=value, aggfunc="last").sort_index()
    expected = list(range(1, width + 1))
    if sorted(int(c) for c in table.columns) != expected:
        raise InputError(f"{path}: {entity} ids must cover 1..{width}")
    if table.isna().any().any():
        raise InputError(f"{path}: every {entity} needs a value at every time")
    table = table[sorted(table.columns)]
    return table.index.to_numpy(dtype=float), table.to_numpy(dtype=float)


def load_grid_disturbance(base_load_csv: str, misc_load_csv: Optional[str], n: int, n_b: int,
                          misc_default: Optional[np.ndarray] = None) -> GridDisturbance:
    """Read base-load (time_s, bus, P_BL_pu) and misc-load (time_s, building, P_misc_kW) CSVs."""
    times, base = _pivot(base_load_csv, "bus", "P_BL_pu", n)
    if misc_load_csv:
        misc_times, misc = _pivot(misc_load_csv, "building", "P_misc_kW", n_b)
        misc = np.array([misc[hold_index(misc_times, t)] for t in times]).reshape(len(times), n_b)
    else:
        row = np.zeros(n_b) if misc_default is None else misc_default
        misc = np.tile(row, (len(times), 1))
    return GridDisturbance(times, base, misc)
