"""
Quadratic Program Model
Sparse convex QP   minimize ½ xᵀHx + qᵀx + c
                   subject to A_eq x = b_eq,  l_in <= A_in x <= u_in,  lb <= x <= ub
with a name map from every variable (and constraint row) to (kind, entity, time).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from utils.errors import DimensionError, InputError

Name = Tuple[str, int, int]  # (kind, entity, time), entity and time 1-based

# alias kind -> (storage kind, 1-based storage entity for alias entity e given n storage entities)
_ALIASES = {
    "delta": ("x_g", lambda e, n: e),
    "omega": ("x_g", lambda e, n: n // 2 + e),
    "t_wall": ("x_b", lambda e, n: 2 * e - 1),
    "t_zone": ("x_b", lambda e, n: 2 * e),
}


class VariableIndex:
    """Registry of variable blocks laid out time-major (entities contiguous per time)."""

    def __init__(self):
        self._blocks: Dict[str, Tuple[np.ndarray, Tuple[int, ...]]] = {}
        self.names: List[Name] = []

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def kinds(self) -> List[str]:
        return list(self._blocks)

    def add(self, kind: str, n_entities: int, times: Sequence[int]) -> np.ndarray:
        """Register kind x entities x times; returns the (n_entities, n_times) index grid."""
        if kind in self._blocks or kind in _ALIASES:
            raise InputError(f"variable kind {kind!r} already registered")
        times = tuple(int(t) for t in times)
        start = self.size
        grid = start + np.arange(n_entities * len(times)).reshape(len(times), n_entities).T
        self.names.extend((kind, e + 1, t) for t in times for e in range(n_entities))
        self._blocks[kind] = (grid, times)
        return grid

    def grid(self, kind: str) -> np.ndarray:
        return self._resolve(kind)[0]

    def times(self, kind: str) -> Tuple[int, ...]:
        return self._resolve(kind)[1]

    def _resolve(self, kind: str):
        if kind in _ALIASES:
            base, pick = _ALIASES[kind]
            if base not in self._blocks:
                raise KeyError(f"unknown variable kind {kind!r}")
            grid, times = self._blocks[base]
            n = grid.shape[0]
            rows = [pick(e, n) - 1 for e in range(1, n // 2 + 1)]
            return grid[rows], times
        if kind not in self._blocks:
            raise KeyError(f"unknown variable kind {kind!r}")
        return self._blocks[kind]

    def lookup(self, kind: str, entity: Union[None, int, Sequence[int]] = None,
               time: Union[None, int, Sequence[int]] = None) -> np.ndarray:
        """Global indices; an int entity (time) drops that axis, None selects all."""
        grid, times = self._resolve(kind)
        if entity is None:
            rows = np.arange(grid.shape[0])
        else:
            ents = np.atleast_1d(entity)
            if np.any(ents < 1) or np.any(ents > grid.shape[0]):
                raise KeyError(f"{kind}: entity {entity} outside 1..{grid.shape[0]}")
            rows = ents - 1
        if time is None:
            cols = np.arange(len(times))
        else:
            pos = {t: i for i, t in enumerate(times)}
            try:
                cols = np.array([pos[int(t)] for t in np.atleast_1d(time)], dtype=int)
            except KeyError:
                raise KeyError(f"{kind}: time {time} not in {times[0]}..{times[-1]}") from None
        out = grid[np.ix_(rows, cols)]
        if isinstance(entity, (int, np.integer)):
            out = out[0]
        if isinstance(time, (int, np.integer)):
            out = out[..., 0]
        return out


@dataclass
class ObjectiveTerm:
    """One named share of the objective, kept so results can be decomposed."""
    quad: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    lin: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        total = self.const
        for idx, w in self.quad:
            total += float(np.sum(w * x[idx] ** 2))
        for idx, c in self.lin:
            total += float(np.sum(c * x[idx]))
        return total


def _broadcast(idx, values):
    idx = np.asarray(idx, dtype=int)
    vals = np.asarray(values, dtype=float)
    if idx.ndim == 2 and idx.shape[1] == 1 and vals.shape == idx.shape[:1]:
        vals = vals[:, None]  # one weight per entity of a single-step grid
    try:
        vals = np.broadcast_to(vals, idx.shape)
    except ValueError:
        raise DimensionError(f"coefficients of shape {np.shape(values)} for variables of shape {idx.shape}") from None
    return idx.ravel(), vals.ravel()


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    hessian: sp.csc_matrix
    linear: np.ndarray
    constant: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    l_in: np.ndarray
    u_in: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    index: VariableIndex
    eq_names: List[Name] = field(default_factory=list)
    in_names: List[Name] = field(default_factory=list)
    terms: Dict[str, ObjectiveTerm] = field(default_factory=dict)
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.linear)
        checks = [
            ("hessian", self.hessian.shape, (n, n)),
            ("A_eq", self.A_eq.shape, (len(self.b_eq), n)),
            ("A_in", self.A_in.shape, (len(self.l_in), n)),
            ("u_in", self.u_in.shape, self.l_in.shape),
            ("lb", self.lb.shape, (n,)),
            ("ub", self.ub.shape, (n,)),
        ]
        for name, got, want in checks:
            if tuple(got) != tuple(want):
                raise DimensionError(f"QP {name}: expected shape {want}, got {got}")
        if np.any(self.lb > self.ub) or np.any(self.l_in > self.u_in):
            raise InputError("QP has a lower bound above its upper bound")

    @property
    def n(self) -> int:
        return len(self.linear)

    @property
    def names(self) -> List[Name]:
        return self.index.names

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.hessian @ x) + self.linear @ x + self.constant)

    def objective_terms(self, x: np.ndarray) -> Dict[str, float]:
        """Objective split by the term names given at assembly; sums to objective(x)."""
        return {name: term.value(x) for name, term in self.terms.items()}

    def validate_psd(self, tol: float = 1e-9):
        """Raise InputError unless the Hessian is symmetric PSD."""
        h = self.hessian
        scale = max(1.0, abs(h).max() if h.nnz else 0.0)
        if h.nnz and abs(h - h.T).max() > tol * scale:
            raise InputError("QP Hessian is not symmetric")
        off = h - sp.diags(h.diagonal())
        if off.nnz == 0 or abs(off).max() == 0:
            if np.any(h.diagonal() < -tol * scale):
                raise InputError("QP Hessian has a negative diagonal entry")
            return
        # coupled block: Cholesky of the shifted dense matrix
        rows = np.unique(np.concatenate([off.tocoo().row, off.tocoo().col]))
        block = h[rows][:, rows].toarray()
        try:
            np.linalg.cholesky(block + tol * scale * np.eye(len(rows)))
        except np.linalg.LinAlgError:
            raise InputError("QP Hessian is not positive semidefinite") from None

    def stacked(self):
        """OSQP form: rows [A_eq; A_in; I_bounded] with bounds l, u and row names."""
        bounded = np.flatnonzero(np.isfinite(self.lb) | np.isfinite(self.ub))
        box = sp.csr_matrix((np.ones(len(bounded)), (np.arange(len(bounded)), bounded)),
                            shape=(len(bounded), self.n))
        A = sp.vstack([self.A_eq, self.A_in, box], format="csc")
        l = np.concatenate([self.b_eq, self.l_in, self.lb[bounded]])
        u = np.concatenate([self.b_eq, self.u_in, self.ub[bounded]])
        names = list(self.eq_names) + list(self.in_names) + [("bound:" + self.names[i][0],) + self.names[i][1:]
                                                             for i in bounded]
        return A, l, u, names

    def equality_residual(self, x: np.ndarray) -> float:
        if len(self.b_eq) == 0:
            return 0.0
        return float(np.max(np.abs(self.A_eq @ x - self.b_eq)))


class QpBuilder:
    """Accumulates variables, cost terms and constraint rows as triplets."""

    def __init__(self):
        self.index = VariableIndex()
        self._lb: List[np.ndarray] = []
        self._ub: List[np.ndarray] = []
        self._h = ([], [], [])
        self._q: Dict[int, float] = {}
        self._constant = 0.0
        self._eq = _RowBlock()
        self._in = _RowBlock()
        self._terms: Dict[str, ObjectiveTerm] = {}
        self.meta: Dict[str, object] = {}

    def variables(self, kind: str, n_entities: int, times: Sequence[int],
                  lower=-np.inf, upper=np.inf) -> np.ndarray:
        grid = self.index.add(kind, n_entities, times)
        shape = grid.shape
        self._lb.append(np.broadcast_to(np.asarray(lower, dtype=float), shape).T.ravel())
        self._ub.append(np.broadcast_to(np.asarray(upper, dtype=float), shape).T.ravel())
        return grid

    def add_quadratic(self, idx: np.ndarray, weights, term: str = "objective") -> None:
        """Adds sum w_i x_i^2 (i.e. H_ii += 2 w_i)."""
        idx, w = _broadcast(idx, weights)
        keep = w != 0
        self._h[0].extend(idx[keep])
        self._h[1].extend(idx[keep])
        self._h[2].extend(2.0 * w[keep])
        self._term(term).quad.append((idx[keep], w[keep]))

    def add_linear(self, idx: np.ndarray, coef, term: str = "objective") -> None:
        idx, c = _broadcast(idx, coef)
        for i, v in zip(idx, c):
            if v != 0:
                self._q[int(i)] = self._q.get(int(i), 0.0) + float(v)
        self._term(term).lin.append((idx, c))

    def add_constant(self, value: float, term: str = "objective") -> None:
        self._constant += float(value)
        self._term(term).const += float(value)

    def _term(self, name: str) -> "ObjectiveTerm":
        return self._terms.setdefault(name, ObjectiveTerm())

    def add_equality(self, terms, rhs, name: str, entities=None, time: int = 0) -> None:
        """terms: [(matrix m x len(idx), idx), ...]; rows read sum M x[idx] = rhs."""
        self._eq.add(terms, rhs, rhs, name, entities, time)

    def add_inequality(self, terms, lower, upper, name: str, entities=None, time: int = 0) -> None:
        self._in.add(terms, lower, upper, name, entities, time)

    def build(self) -> QuadraticProgram:
        n = self.index.size
        lin = np.zeros(n)
        for i, v in self._q.items():
            lin[i] = v
        hessian = sp.csc_matrix((self._h[2], (self._h[0], self._h[1])), shape=(n, n))
        hessian.sum_duplicates()
        a_eq, b_eq, _, eq_names = self._eq.assemble(n)
        a_in, l_in, u_in, in_names = self._in.assemble(n)
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        return QuadraticProgram(hessian, lin, self._constant, a_eq, b_eq, a_in, l_in, u_in,
                                lb, ub, self.index, eq_names, in_names,
                                dict(self._terms), dict(self.meta))


class _RowBlock:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []
        self.lower, self.upper, self.names = [], [], []
        self.m = 0

    def add(self, terms, lower, upper, name, entities, time):
        m = None
        for matrix, idx in terms:
            mat = sp.coo_matrix(matrix)
            idx = np.ravel(idx)
            if mat.shape[1] != len(idx):
                raise DimensionError(f"{name}: block has {mat.shape[1]} columns for {len(idx)} variables")
            if m is not None and mat.shape[0] != m:
                raise DimensionError(f"{name}: blocks disagree on row count")
            m = mat.shape[0]
            self.rows.append(mat.row + self.m)
            self.cols.append(idx[mat.col])
            self.vals.append(mat.data)
        if m is None:
            raise DimensionError(f"{name}: no terms")
        self.lower.append(np.broadcast_to(np.asarray(lower, dtype=float), (m,)))
        self.upper.append(np.broadcast_to(np.asarray(upper, dtype=float), (m,)))
        ents = range(1, m + 1) if entities is None else entities
        self.names.extend((name, int(e), int(time)) for e in ents)
        self.m += m

    def assemble(self, n):
        if self.m == 0:
            return sp.csr_matrix((0, n)), np.zeros(0), np.zeros(0), []
        mat = sp.csr_matrix((np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
                            shape=(self.m, n))
        mat.sum_duplicates()
        return mat, np.concatenate(self.lower), np.concatenate(self.upper), self.names


def dump(qp: QuadraticProgram, path: str) -> None:
    """Write the QP as plain-text triplets for external cross-checking.

    Sections: `# n m_eq m_in`, then `H i j v`, `q i v`, `c v`, `Aeq i j v`, `beq i v`,
    `Ain i j v`, `lin i v`, `uin i v`, `lb i v`, `ub i v`, `name i kind entity time` (0-based i, j).
    """
    def triplets(tag, mat):
        coo = sp.coo_matrix(mat)
        return [f"{tag} {i} {j} {v!r}" for i, j, v in zip(coo.row, coo.col, coo.data)]

    def vector(tag, vec):
        return [f"{tag} {i} {v!r}" for i, v in enumerate(vec)]

    lines = [f"# {qp.n} {len(qp.b_eq)} {len(qp.l_in)}"]
    lines += triplets("H", qp.hessian) + vector("q", qp.linear) + [f"c {qp.constant!r}"]
    lines += triplets("Aeq", qp.A_eq) + vector("beq", qp.b_eq)
    lines += triplets("Ain", qp.A_in) + vector("lin", qp.l_in) + vector("uin", qp.u_in)
    lines += vector("lb", qp.lb) + vector("ub", qp.ub)
    lines += [f"name {i} {k} {e} {t}" for i, (k, e, t) in enumerate(qp.names)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
