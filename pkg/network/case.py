"""
Power Network Case Data
Parses and serializes the plain-text case format (a Matpower subset plus a dynamics table),
validates the network and carries the generator/building incidence matrices.

Case file layout (UTF-8, `#` starts a comment, whitespace-separated columns):

    [case]      key value           base_mva <MVA>, slack <bus id>, units mw|pu
    [bus]       bus_i type Pd       type 1 (PQ), 2 (PV) or 3 (reference)
    [gen]       id bus Pmin Pmax [dmin dmax]
    [branch]    fbus tbus x rateA   x reactance p.u., rateA 0 = unlimited
    [gencost]   gen c2 c1 c0        $/MW^2, $/MW, $  (or per p.u. with units pu)
    [dynamics]  bus M D Dprime      p.u.*s^2, p.u./(rad/s), p.u./(rad/s)

With `units mw` (the default) loads, generator limits, ramp bounds and flow limits are MW and the
cost coefficients refer to MW; everything is converted to p.u. on read. Buses absent from
[dynamics] get zero inertia and damping. Missing dmin/dmax default to -/+10% of Pmax.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from utils.errors import CaseSyntaxError, CaseValidationError
from utils.logger import log

NOMINAL_HZ = 60.0
DEFAULT_DELTA_FRACTION = 0.10

_SECTIONS = ("case", "bus", "gen", "branch", "gencost", "dynamics")
_COLUMNS = {  # (min, max) column counts
    "bus": (3, 3), "gen": (4, 6), "branch": (4, 4), "gencost": (4, 4), "dynamics": (4, 4),
}


@dataclass(frozen=True)
class Bus:
    """Network node with swing-equation coefficients."""
    id: int
    inertia: float = 0.0            # M_k, p.u.*s^2
    damping: float = 0.0            # D_k, p.u./(rad/s)
    load_damping: float = 0.0       # D'_k, p.u./(rad/s)
    is_generator_bus: bool = False
    base_load: float = 0.0          # nominal P_BL, p.u.
    bus_type: int = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float                # p.u.
    flow_limit: float = math.inf    # F_max, p.u.

    @property
    def susceptance(self) -> float:
        return 1.0 / self.reactance


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    cost_quadratic: float = 0.0     # $/p.u.^2
    cost_linear: float = 0.0        # $/p.u.
    cost_constant: float = 0.0      # $
    p_min: float = 0.0              # p.u.
    p_max: float = 0.0              # p.u.
    delta_min: float = 0.0          # bounds on delta u_g, p.u.
    delta_max: float = 0.0

    def cost(self, p: float) -> float:
        return self.cost_quadratic * p * p + self.cost_linear * p + self.cost_constant


@dataclass(frozen=True)
class PowerNetwork:
    """Validated network. Building attachment is a tuple of bus ids, one per building."""
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    base_mva: float = 100.0
    slack_bus: int = 1
    assignment: Tuple[int, ...] = ()
    omega0: float = field(default=2 * math.pi * NOMINAL_HZ)

    # ── Sizes ─────────────────────────────────────────────────────────────
    @property
    def n(self) -> int:
        return len(self.buses)

    @property
    def n_g(self) -> int:
        return len(self.generators)

    @property
    def n_l(self) -> int:
        return len(self.branches)

    @property
    def n_b(self) -> int:
        return len(self.assignment)

    # ── Incidence ─────────────────────────────────────────────────────────
    @property
    def gen_incidence(self) -> sp.csc_matrix:
        """Gamma: n x n_g, one 1 per column at the generator's bus."""
        rows = [g.bus - 1 for g in self.generators]
        return sp.csc_matrix((np.ones(self.n_g), (rows, range(self.n_g))), shape=(self.n, self.n_g))

    @property
    def bldg_incidence(self) -> sp.csc_matrix:
        """Pi: n x n_b, one 1 per column at the building's bus."""
        rows = [bus - 1 for bus in self.assignment]
        return sp.csc_matrix((np.ones(self.n_b), (rows, range(self.n_b))), shape=(self.n, self.n_b))

    @property
    def branch_incidence(self) -> sp.csr_matrix:
        """n_l x n, +1 at the from bus and -1 at the to bus."""
        rows = np.repeat(np.arange(self.n_l), 2)
        cols = np.array([[br.from_bus - 1, br.to_bus - 1] for br in self.branches], dtype=int).ravel()
        vals = np.tile([1.0, -1.0], self.n_l)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_l, self.n))

    @property
    def susceptances(self) -> np.ndarray:
        return np.array([br.susceptance for br in self.branches])

    @property
    def flow_limits(self) -> np.ndarray:
        return np.array([br.flow_limit for br in self.branches])

    @property
    def laplacian(self) -> sp.csr_matrix:
        """Weighted graph Laplacian A^T diag(b) A; rows sum to zero."""
        inc = self.branch_incidence
        return (inc.T @ sp.diags(self.susceptances) @ inc).tocsr()

    @property
    def base_load(self) -> np.ndarray:
        return np.array([b.base_load for b in self.buses])

    @property
    def inertia(self) -> np.ndarray:
        return np.array([b.inertia for b in self.buses])

    @property
    def total_damping(self) -> np.ndarray:
        return np.array([b.damping + b.load_damping for b in self.buses])

    @property
    def generator_buses(self) -> List[int]:
        return [b.id for b in self.buses if b.is_generator_bus]

    @property
    def load_buses(self) -> List[int]:
        return [b.id for b in self.buses if b.base_load > 0]

    def with_load_damping(self, value: float) -> "PowerNetwork":
        """Copy with D'_k = value on every bus."""
        if value < 0:
            raise CaseValidationError("load damping must be >= 0")
        return replace(self, buses=tuple(replace(b, load_damping=value) for b in self.buses))

    def with_slack(self, bus: int) -> "PowerNetwork":
        if not 1 <= bus <= self.n:
            raise CaseValidationError(f"slack bus {bus} out of range 1..{self.n}")
        return replace(self, slack_bus=bus)


# ─── Parsing ──────────────────────────────────────────────────────────────────

def _number(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CaseSyntaxError(f"not a number: {token!r}", lineno) from None


def _integer(token: str, lineno: int) -> int:
    value = _number(token, lineno)
    if value != int(value):
        raise CaseSyntaxError(f"expected an integer, got {token!r}", lineno)
    return int(value)


def _tokenize(text: str) -> Dict[str, List[Tuple[int, List[str]]]]:
    tables: Dict[str, List[Tuple[int, List[str]]]] = {name: [] for name in _SECTIONS}
    section: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise CaseSyntaxError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip().lower()
            if section not in tables:
                raise CaseSyntaxError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise CaseSyntaxError("data before the first section header", lineno)
        tokens = line.split()
        if section in _COLUMNS:
            lo, hi = _COLUMNS[section]
            if not lo <= len(tokens) <= hi:
                raise CaseSyntaxError(f"[{section}] expects {lo}-{hi} columns, got {len(tokens)}", lineno)
        elif len(tokens) != 2:
            raise CaseSyntaxError("[case] entries are 'key value' pairs", lineno)
        tables[section].append((lineno, tokens))
    return tables


def parse_case(text: str) -> PowerNetwork:
    """Parse case-file content into a validated PowerNetwork (no buildings attached)."""
    tables = _tokenize(text)

    header = {tokens[0].lower(): (lineno, tokens[1]) for lineno, tokens in tables["case"]}
    unknown = set(header) - {"base_mva", "slack", "units"}
    if unknown:
        key = sorted(unknown)[0]
        raise CaseSyntaxError(f"unknown [case] key {key!r}", header[key][0])
    base_mva = _number(header["base_mva"][1], header["base_mva"][0]) if "base_mva" in header else 100.0
    if base_mva <= 0:
        raise CaseValidationError("base_mva must be positive")
    units = header["units"][1].lower() if "units" in header else "mw"
    if units not in ("mw", "pu"):
        raise CaseSyntaxError(f"units must be 'mw' or 'pu', got {units!r}", header["units"][0])
    scale = base_mva if units == "mw" else 1.0

    if not tables["bus"]:
        raise CaseValidationError("case has no [bus] table")

    # ── Buses ──
    bus_rows: Dict[int, dict] = {}
    for lineno, t in tables["bus"]:
        bus_id = _integer(t[0], lineno)
        if bus_id in bus_rows:
            raise CaseValidationError(f"line {lineno}: duplicate bus {bus_id}")
        bus_type = _integer(t[1], lineno)
        if bus_type not in (1, 2, 3):
            raise CaseSyntaxError(f"bus type must be 1, 2 or 3, got {bus_type}", lineno)
        load = _number(t[2], lineno) / scale
        if load < 0:
            raise CaseValidationError(f"line {lineno}: negative load on bus {bus_id}")
        bus_rows[bus_id] = {"id": bus_id, "bus_type": bus_type, "base_load": load}
    n = len(bus_rows)
    if sorted(bus_rows) != list(range(1, n + 1)):
        raise CaseValidationError(f"bus ids must form 1..{n} without gaps")

    def known_bus(bus_id: int, lineno: int, what: str) -> int:
        if bus_id not in bus_rows:
            raise CaseValidationError(f"line {lineno}: {what} references unknown bus {bus_id}")
        return bus_id

    # ── Generators ──
    gens: Dict[int, dict] = {}
    for lineno, t in tables["gen"]:
        gen_id = _integer(t[0], lineno)
        if gen_id in gens:
            raise CaseValidationError(f"line {lineno}: duplicate generator {gen_id}")
        p_min, p_max = _number(t[2], lineno) / scale, _number(t[3], lineno) / scale
        if p_min > p_max:
            raise CaseValidationError(f"line {lineno}: generator {gen_id} has Pmin > Pmax")
        if len(t) == 6:
            d_min, d_max = _number(t[4], lineno) / scale, _number(t[5], lineno) / scale
        elif len(t) == 4:
            d_min, d_max = -DEFAULT_DELTA_FRACTION * p_max, DEFAULT_DELTA_FRACTION * p_max
        else:
            raise CaseSyntaxError("[gen] dmin and dmax must be given together", lineno)
        if d_min > d_max:
            raise CaseValidationError(f"line {lineno}: generator {gen_id} has dmin > dmax")
        gens[gen_id] = {"id": gen_id, "bus": known_bus(_integer(t[1], lineno), lineno, "generator"),
                        "p_min": p_min, "p_max": p_max, "delta_min": d_min, "delta_max": d_max}
    if not gens:
        raise CaseValidationError("case has no generators")
    if sorted(gens) != list(range(1, len(gens) + 1)):
        raise CaseValidationError(f"generator ids must form 1..{len(gens)} without gaps")

    for lineno, t in tables["gencost"]:
        gen_id = _integer(t[0], lineno)
        if gen_id not in gens:
            raise CaseValidationError(f"line {lineno}: gencost for unknown generator {gen_id}")
        c2, c1, c0 = (_number(v, lineno) for v in t[1:])
        if c2 < 0:
            raise CaseValidationError(f"line {lineno}: generator {gen_id} has negative quadratic cost")
        gens[gen_id].update(cost_quadratic=c2 * scale * scale, cost_linear=c1 * scale, cost_constant=c0)

    # ── Branches ──
    branches: List[Branch] = []
    seen = set()
    for lineno, t in tables["branch"]:
        f = known_bus(_integer(t[0], lineno), lineno, "branch")
        to = known_bus(_integer(t[1], lineno), lineno, "branch")
        if f == to:
            raise CaseValidationError(f"line {lineno}: branch connects bus {f} to itself")
        pair = frozenset((f, to))
        if pair in seen:
            raise CaseValidationError(f"line {lineno}: duplicate branch {f}-{to}")
        seen.add(pair)
        x = _number(t[2], lineno)
        if x <= 0:
            raise CaseValidationError(f"line {lineno}: branch {f}-{to} needs positive reactance")
        rate = _number(t[3], lineno)
        if rate < 0:
            raise CaseValidationError(f"line {lineno}: negative flow limit on branch {f}-{to}")
        branches.append(Branch(f, to, x, rate / scale if rate > 0 else math.inf))

    # ── Dynamics ──
    dyn: Dict[int, Tuple[float, float, float]] = {}
    for lineno, t in tables["dynamics"]:
        bus_id = known_bus(_integer(t[0], lineno), lineno, "dynamics row")
        values = tuple(_number(v, lineno) for v in t[1:])
        if min(values) < 0:
            raise CaseValidationError(f"line {lineno}: negative inertia or damping on bus {bus_id}")
        dyn[bus_id] = values

    gen_buses = {g["bus"] for g in gens.values()}
    buses = []
    for bus_id in range(1, n + 1):
        m, d, d_load = dyn.get(bus_id, (0.0, 0.0, 0.0))
        is_gen = bus_id in gen_buses
        if not is_gen and (m != 0 or d != 0):
            raise CaseValidationError(f"bus {bus_id} has inertia or damping but no generator")
        if is_gen and m <= 0:
            raise CaseValidationError(f"generator bus {bus_id} needs positive inertia in [dynamics]")
        buses.append(Bus(id=bus_id, inertia=m, damping=d, load_damping=d_load, is_generator_bus=is_gen,
                         **{k: bus_rows[bus_id][k] for k in ("base_load", "bus_type")}))

    if "slack" in header:
        slack = _integer(header["slack"][1], header["slack"][0])
        known_bus(slack, header["slack"][0], "slack")
    else:
        slack = gens[1]["bus"]

    net = PowerNetwork(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(Generator(**gens[i]) for i in sorted(gens)),
        base_mva=base_mva,
        slack_bus=slack,
    )
    _check_connected(net)
    return net


def _check_connected(net: PowerNetwork):
    if net.n == 1:
        return
    adjacency = abs(net.branch_incidence.T @ net.branch_incidence)
    count, _ = connected_components(adjacency, directed=False)
    if count != 1:
        raise CaseValidationError(f"network graph is disconnected ({count} islands)")


def read_case(path: str) -> PowerNetwork:
    """Read and parse a case file."""
    with open(path, "r", encoding="utf-8") as fh:
        net = parse_case(fh.read())
    log.debug(f"Loaded case {path}: n={net.n}, n_g={net.n_g}, n_l={net.n_l}")
    return net


def serialize_case(net: PowerNetwork) -> str:
    """Write `net` in p.u. so that parse_case(serialize_case(net)) == net (buildings excluded)."""
    out = [
        "[case]",
        f"base_mva {net.base_mva!r}",
        f"slack {net.slack_bus}",
        "units pu",
        "",
        "[bus]",
    ]
    out += [f"{b.id} {b.bus_type} {b.base_load!r}" for b in net.buses]
    out += ["", "[gen]"]
    out += [f"{g.id} {g.bus} {g.p_min!r} {g.p_max!r} {g.delta_min!r} {g.delta_max!r}" for g in net.generators]
    out += ["", "[branch]"]
    out += [f"{br.from_bus} {br.to_bus} {br.reactance!r} {br.flow_limit if math.isfinite(br.flow_limit) else 0!r}"
            for br in net.branches]
    out += ["", "[gencost]"]
    out += [f"{g.id} {g.cost_quadratic!r} {g.cost_linear!r} {g.cost_constant!r}" for g in net.generators]
    out += ["", "[dynamics]"]
    out += [f"{b.id} {b.inertia!r} {b.damping!r} {b.load_damping!r}" for b in net.buses]
    return "\n".join(out) + "\n"


# ─── Buildings ────────────────────────────────────────────────────────────────

def attach_buildings(net: PowerNetwork, assignment: Sequence[Tuple[int, int]]) -> PowerNetwork:
    """Attach buildings given as (building id, bus id) pairs covering 1..n_b exactly once."""
    by_building: Dict[int, int] = {}
    for building, bus in assignment:
        if building in by_building:
            raise CaseValidationError(f"building {building} assigned twice")
        if not 1 <= bus <= net.n:
            raise CaseValidationError(f"building {building}: bus {bus} out of range 1..{net.n}")
        by_building[building] = bus
    n_b = len(by_building)
    if sorted(by_building) != list(range(1, n_b + 1)):
        raise CaseValidationError(f"building ids must cover 1..{n_b} exactly once")
    return replace(net, assignment=tuple(by_building[i] for i in range(1, n_b + 1)))


def round_robin_assignment(net: PowerNetwork, n_b: int, seed: int) -> List[Tuple[int, int]]:
    """Deal buildings over the load buses (shuffled once by `seed`) in turn."""
    hosts = net.load_buses or [b.id for b in net.buses if b.id != net.slack_bus] or [net.slack_bus]
    order = np.random.default_rng(seed).permutation(hosts)
    return [(i + 1, int(order[i % len(order)])) for i in range(n_b)]
