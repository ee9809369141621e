"""
Gear (BDF) Discretization
Order-s backward differentiation for descriptor systems  E x' = A x + f(t):

    (E - h*beta0*A) x_k = sum_i alpha_i E x_{k-i} + h*beta0 f_k

The pencil is factorized once per (h, s) and reused for every step.
"""
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from buildings.model import BuildingCluster
from grid.dae import GridDae, forcing
from utils.errors import DimensionError, InputError, SingularPencilError, check_shape

MAX_ORDER = 6


@dataclass(frozen=True)
class GearScheme:
    order: int
    beta0_exact: Fraction
    alphas_exact: Tuple[Fraction, ...]

    @property
    def beta0(self) -> float:
        return float(self.beta0_exact)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([float(a) for a in self.alphas_exact])


def gear_coefficients(s: int) -> GearScheme:
    """beta0 = 1/sum(1/i), alpha_i = (-1)^(i+1) beta0 sum_{j=i..s} C(j,i)/j, in exact arithmetic."""
    if not isinstance(s, (int, np.integer)) or not 1 <= s <= MAX_ORDER:
        raise InputError(f"Gear order must be an integer in 1..{MAX_ORDER}, got {s}")
    beta0 = 1 / sum(Fraction(1, i) for i in range(1, s + 1))
    alphas = tuple(
        (-1) ** (i + 1) * beta0 * sum(Fraction(comb(j, i), j) for j in range(i, s + 1))
        for i in range(1, s + 1)
    )
    return GearScheme(int(s), beta0, alphas)


def constant_history(x0: np.ndarray, s: int) -> List[np.ndarray]:
    """History [x_{k-1}, ..., x_{k-s}] with every entry equal to x0."""
    return [np.array(x0, dtype=float) for _ in range(s)]


class DescriptorModel:
    """Factorized one-step map of E x' = A x + f for step h and scheme."""

    def __init__(self, E: sp.spmatrix, A: sp.spmatrix, h: float, scheme: GearScheme):
        if h <= 0:
            raise InputError(f"step size must be positive, got {h}")
        self.E = sp.csr_matrix(E)
        self.A = sp.csr_matrix(A)
        if self.E.shape != self.A.shape or self.E.shape[0] != self.E.shape[1]:
            raise DimensionError(f"E {self.E.shape} and A {self.A.shape} must be equal square shapes")
        self.h = float(h)
        self.scheme = scheme
        self.pencil = (self.E - self.h * scheme.beta0 * self.A).tocsc()
        self._lu = _factorize(self.pencil, self.h)

    @property
    def n_x(self) -> int:
        return self.E.shape[0]

    @property
    def order(self) -> int:
        return self.scheme.order

    def apply_abar(self, v: np.ndarray) -> np.ndarray:
        """(E - h beta0 A)^-1 v via the cached factorization."""
        return self._lu.solve(np.asarray(v, dtype=float))

    def history_term(self, history: Sequence[np.ndarray]) -> np.ndarray:
        """sum_i alpha_i E x_{k-i} for history = [x_{k-1}, x_{k-2}, ...]."""
        if len(history) < self.order:
            raise DimensionError(f"order {self.order} needs {self.order} history states, got {len(history)}")
        acc = np.zeros(self.n_x)
        for alpha, x in zip(self.scheme.alphas, history):
            acc += alpha * (self.E @ check_shape("history state", x, (self.n_x,)))
        return acc

    def step_forcing(self, history: Sequence[np.ndarray], f: np.ndarray) -> np.ndarray:
        """x_k given the forcing f_k = B u_k + B_w w_k."""
        f = check_shape("forcing", f, (self.n_x,))
        return self.apply_abar(self.history_term(history) + self.h * self.scheme.beta0 * f)


def _factorize(pencil: sp.csc_matrix, h: float):
    if pencil.shape[0] == 0:
        return _EmptyFactor()
    try:
        lu = splu(pencil)
    except RuntimeError as e:
        raise SingularPencilError(h, str(e)) from e
    diag = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(diag)) or diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise SingularPencilError(h, "numerically singular LU factor")
    return lu


class _EmptyFactor:
    def solve(self, v, trans="N"):
        return np.asarray(v, dtype=float)


class DiscreteGridModel(DescriptorModel):
    """Gear-discretized linearized grid DAE at step h_g."""

    def __init__(self, dae: GridDae, h_g: float, scheme: GearScheme):
        super().__init__(dae.E_g, dae.A_g_linear, h_g, scheme)
        self.dae = dae

    def step(self, history, u_g, u_b, w_g) -> np.ndarray:
        return self.step_forcing(history, forcing(self.dae, u_g, u_b, w_g))

    def b0(self, v: np.ndarray) -> np.ndarray:
        """B0 v = h beta0 Abar v."""
        return self.h * self.scheme.beta0 * self.apply_abar(v)


def discretize_grid(dae: GridDae, h_g: float, scheme: GearScheme) -> DiscreteGridModel:
    return DiscreteGridModel(dae, h_g, scheme)


class DiscreteBuildingModel:
    """Gear-discretized building cluster; pencil I - h beta0 A_b inverted blockwise."""

    def __init__(self, cluster: BuildingCluster, h_b: float, scheme: GearScheme):
        if h_b <= 0:
            raise InputError(f"step size must be positive, got {h_b}")
        self.cluster = cluster
        self.h = float(h_b)
        self.scheme = scheme
        hb = self.h * scheme.beta0
        self.pencil_blocks = np.eye(2)[None, :, :] - hb * cluster.a_blocks
        dets = np.linalg.det(self.pencil_blocks) if cluster.n_b else np.zeros(0)
        if np.any(np.abs(dets) < 1e-14):
            bad = int(np.argmin(np.abs(dets))) + 1
            raise SingularPencilError(self.h, f"building {bad}")
        self.abar_blocks = np.linalg.inv(self.pencil_blocks) if cluster.n_b else np.zeros((0, 2, 2))

    @property
    def n_b(self) -> int:
        return self.cluster.n_b

    @property
    def order(self) -> int:
        return self.scheme.order

    @property
    def pencil(self) -> sp.csr_matrix:
        if self.n_b == 0:
            return sp.csr_matrix((0, 0))
        return sp.block_diag(list(self.pencil_blocks), format="csr")

    def step(self, history: Sequence[np.ndarray], u_b: np.ndarray, w_b: np.ndarray) -> np.ndarray:
        n_b = self.n_b
        if len(history) < self.order:
            raise DimensionError(f"order {self.order} needs {self.order} history states, got {len(history)}")
        acc = np.zeros((n_b, 2))
        for alpha, x in zip(self.scheme.alphas, history):
            acc += alpha * check_shape("history state", x, (2 * n_b,)).reshape(n_b, 2)
        u = check_shape("u_b", u_b, (n_b,))
        w = check_shape("w_b", w_b, (3 * n_b,)).reshape(n_b, 3)
        f = self.cluster.bu_blocks * u[:, None] + np.einsum("nij,nj->ni", self.cluster.bw_blocks, w)
        rhs = acc + self.h * self.scheme.beta0 * f
        return np.einsum("nij,nj->ni", self.abar_blocks, rhs).ravel()


def discretize_buildings(cluster: BuildingCluster, h_b: float, scheme: GearScheme) -> DiscreteBuildingModel:
    return DiscreteBuildingModel(cluster, h_b, scheme)
