"""
Building Thermal Model
3R-2C lumped model per building (state [T_wall, T_zone], input P_HVAC in kW,
disturbance [T_amb, Q_sol, Q_int]) and the block-diagonal cluster built from it.

Cooling convention: u_b >= 0 is electric HVAC power and removes mu*u_b watts from the zone.
"""
from dataclasses import dataclass, fields, replace
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from utils.errors import DimensionError, InputError, check_shape

W_PER_KW = 1000.0
_RC_FIELDS = ("r1", "r2", "r_win", "c_wall", "c_zone")


@dataclass(frozen=True)
class BuildingParams:
    """RC parameters of one building (resistances in °C/W, capacitances in J/°C)."""
    r1: float = 1.16e-4
    r2: float = 1.16e-4
    r_win: float = 6.55e-3
    c_wall: float = 1.133e9
    c_zone: float = 7.033e9
    mu_hvac: float = 2.5

    def __post_init__(self):
        for name in _RC_FIELDS:
            if not getattr(self, name) > 0:
                raise InputError(f"building parameter {name} must be positive, got {getattr(self, name)}")
        if not self.mu_hvac > 0:
            raise InputError(f"mu_hvac must be positive, got {self.mu_hvac}")

    @classmethod
    def from_config(cls, cfg) -> "BuildingParams":
        return cls(**{f.name: getattr(cfg, f.name) for f in fields(cls)})


def building_matrices(p: BuildingParams):
    """(A 2x2, B_u 2x1 per watt of HVAC power, B_w 2x3) of one building."""
    a = np.array([
        [-(1.0 / p.c_wall) * (1.0 / p.r1 + 1.0 / p.r2), 1.0 / (p.c_wall * p.r1)],
        [1.0 / (p.c_zone * p.r1), -(1.0 / p.c_zone) * (1.0 / p.r1 + 1.0 / p.r_win)],
    ])
    b_u = np.array([[0.0], [-p.mu_hvac / p.c_zone]])
    b_w = np.array([
        [1.0 / (p.c_wall * p.r2), 1.0 / p.c_wall, 0.0],
        [1.0 / (p.c_zone * p.r_win), 0.0, 1.0 / p.c_zone],
    ])
    return a, b_u, b_w


@dataclass(frozen=True, eq=False)
class BuildingCluster:
    """
    Cluster of n_b buildings held as stacked blocks:
    a_blocks (n_b,2,2), bu_blocks (n_b,2) per kW, bw_blocks (n_b,2,3).
    """
    params: tuple
    a_blocks: np.ndarray
    bu_blocks: np.ndarray
    bw_blocks: np.ndarray

    @property
    def n_b(self) -> int:
        return len(self.a_blocks)

    @property
    def A_b(self) -> sp.csr_matrix:
        return _block_diag(self.a_blocks)

    @property
    def B_ub(self) -> sp.csr_matrix:
        return _block_diag(self.bu_blocks[:, :, None])

    @property
    def B_wb(self) -> sp.csr_matrix:
        return _block_diag(self.bw_blocks)

    def subset(self, index: Sequence[int]) -> "BuildingCluster":
        """Cluster restricted to the 0-based building positions in `index`."""
        idx = np.asarray(index, dtype=int)
        return BuildingCluster(tuple(self.params[i] for i in idx),
                               self.a_blocks[idx], self.bu_blocks[idx], self.bw_blocks[idx])


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    if len(blocks) == 0:
        return sp.csr_matrix((0, 0))
    return sp.block_diag(list(blocks), format="csr")


def make_cluster(params: Sequence[BuildingParams]) -> BuildingCluster:
    mats = [building_matrices(p) for p in params]
    if not mats:
        return BuildingCluster((), np.zeros((0, 2, 2)), np.zeros((0, 2)), np.zeros((0, 2, 3)))
    return BuildingCluster(
        params=tuple(params),
        a_blocks=np.stack([m[0] for m in mats]),
        bu_blocks=np.stack([m[1][:, 0] * W_PER_KW for m in mats]),
        bw_blocks=np.stack([m[2] for m in mats]),
    )


def sample_cluster(reference: BuildingParams, n_b: int, spread: float, seed: int) -> BuildingCluster:
    """Draw n_b buildings with RC parameters Gaussian around `reference` (relative std `spread`)."""
    if spread < 0:
        raise InputError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    params: List[BuildingParams] = []
    for _ in range(n_b):
        drawn = {}
        for name in _RC_FIELDS:
            mean = getattr(reference, name)
            value = mean * (1.0 + spread * rng.standard_normal())
            while value < 0.01 * mean:  # resample to keep positivity
                value = mean * (1.0 + spread * rng.standard_normal())
            drawn[name] = value
        params.append(replace(reference, **drawn))
    return make_cluster(params)


# ─── Evaluation ───────────────────────────────────────────────────────────────

def cluster_derivative(c: BuildingCluster, x_b: np.ndarray, u_b: np.ndarray, w_b: np.ndarray) -> np.ndarray:
    """x_b' = A_b x_b + B_ub u_b + B_wb w_b, evaluated blockwise (u_b in kW)."""
    x = check_shape("x_b", x_b, (2 * c.n_b,)).reshape(c.n_b, 2)
    u = check_shape("u_b", u_b, (c.n_b,))
    w = check_shape("w_b", w_b, (3 * c.n_b,)).reshape(c.n_b, 3)
    dx = (np.einsum("nij,nj->ni", c.a_blocks, x)
          + c.bu_blocks * u[:, None]
          + np.einsum("nij,nj->ni", c.bw_blocks, w))
    return dx.ravel()


def steady_state(c: BuildingCluster, u_b: np.ndarray, w_b: np.ndarray) -> np.ndarray:
    """x_ss = -A^-1 (B_u u + B_w w) per block."""
    u = check_shape("u_b", u_b, (c.n_b,))
    w = check_shape("w_b", w_b, (3 * c.n_b,)).reshape(c.n_b, 3)
    rhs = c.bu_blocks * u[:, None] + np.einsum("nij,nj->ni", c.bw_blocks, w)
    if c.n_b == 0:
        return np.zeros(0)
    return -np.linalg.solve(c.a_blocks, rhs[:, :, None])[:, :, 0].ravel()


def perturb_cluster(c: BuildingCluster, std: float, rng: np.random.Generator) -> BuildingCluster:
    """Multiply every structural nonzero of the blocks by (1 + std*N(0,1)); one draw per call."""
    if std == 0:
        return c

    def noisy(blocks):
        factor = 1.0 + std * rng.standard_normal(blocks.shape)
        return np.where(blocks != 0, blocks * factor, 0.0)

    return BuildingCluster(c.params, noisy(c.a_blocks), noisy(c.bu_blocks), noisy(c.bw_blocks))


# ─── Disturbances ─────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class BuildingDisturbance:
    """w_b samples: times (n_t,), t_amb/q_sol/q_int (n_t, n_b); held constant between samples."""
    times: np.ndarray
    t_amb: np.ndarray
    q_sol: np.ndarray
    q_int: np.ndarray

    def __post_init__(self):
        shape = self.t_amb.shape
        if self.q_sol.shape != shape or self.q_int.shape != shape or shape[0] != len(self.times):
            raise DimensionError("building disturbance series lengths differ")
        if not all(np.all(np.isfinite(s)) for s in (self.t_amb, self.q_sol, self.q_int)):
            raise InputError("building disturbance contains non-finite values")

    @property
    def n_b(self) -> int:
        return self.t_amb.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Interleaved w_b vector [T_amb, Q_sol, Q_int] per building at time t."""
        k = hold_index(self.times, t)
        return np.column_stack([self.t_amb[k], self.q_sol[k], self.q_int[k]]).ravel()

    def scaled(self, factors: np.ndarray) -> "BuildingDisturbance":
        """Elementwise multiply by factors of shape (3, n_t, n_b)."""
        return BuildingDisturbance(self.times, self.t_amb * factors[0],
                                   self.q_sol * factors[1], self.q_int * factors[2])


def hold_index(times: np.ndarray, t: float) -> int:
    """Index of the last sample at or before t (first sample before the series starts)."""
    k = int(np.searchsorted(times, t + 1e-9, side="right")) - 1
    return max(k, 0)


_DISTURBANCE_COLUMNS = ["time_s", "T_amb_C", "Q_sol_W", "Q_int_W"]


def load_building_disturbance(paths: Union[str, Sequence[str]], n_b: int) -> BuildingDisturbance:
    """Read one shared CSV (broadcast to all buildings) or one CSV per building."""
    paths = [paths] if isinstance(paths, str) else list(paths)
    if len(paths) not in (1, n_b):
        raise InputError(f"expected 1 or {n_b} disturbance files, got {len(paths)}")
    frames = []
    for path in paths:
        df = pd.read_csv(path)
        missing = set(_DISTURBANCE_COLUMNS) - set(df.columns)
        if missing:
            raise InputError(f"{path}: missing columns {sorted(missing)}")
        frames.append(df.sort_values("time_s").reset_index(drop=True))
    times = frames[0]["time_s"].to_numpy(dtype=float)
    if any(not np.array_equal(f["time_s"].to_numpy(dtype=float), times) for f in frames):
        raise InputError("per-building disturbance files must share one time grid")

    def stack(col: str) -> np.ndarray:
        cols = np.column_stack([f[col].to_numpy(dtype=float) for f in frames])
        return np.repeat(cols, n_b, axis=1) if len(frames) == 1 else cols

    return BuildingDisturbance(times, stack("T_amb_C"), stack("Q_sol_W"), stack("Q_int_W"))
