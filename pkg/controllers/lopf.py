"""
Linearized Optimal Power Flow
Economic dispatch of the generator set-points with DC power balance and PTDF line limits.
"""
from typing import Optional

import numpy as np
import scipy.sparse as sp

from buildings.model import W_PER_KW
from controllers.params import BoundParams, CostParams
from network.case import PowerNetwork
from network.ptdf import ptdf
from optimization.qp import QpBuilder, QuadraticProgram
from utils.errors import check_shape


def add_generation_cost(builder: QpBuilder, ubar_idx: np.ndarray, costs: CostParams) -> None:
    """J(ubar) = sum c2 u^2 + c1 u + c0."""
    builder.add_quadratic(ubar_idx, costs.gen_quadratic, term="lopf")
    builder.add_linear(ubar_idx, costs.gen_linear, term="lopf")
    builder.add_constant(float(np.sum(costs.gen_constant)), term="lopf")


def add_line_limits(builder: QpBuilder, net: PowerNetwork, shift: np.ndarray, ubar_idx: np.ndarray,
                    base_load: np.ndarray, misc_kw: np.ndarray, time: int,
                    u_b_idx: Optional[np.ndarray] = None, u_b_kw: Optional[np.ndarray] = None) -> None:
    """
    -F <= H (Gamma ubar - P_BL - Pi (u_b + misc)/base) <= F on every limited branch.
    Building power enters either as MW variables `u_b_idx` or as fixed kW values `u_b_kw`.
    """
    limited = np.flatnonzero(np.isfinite(net.flow_limits))
    if len(limited) == 0:
        return
    h = shift[limited]
    kw_to_pu = 1.0 / (W_PER_KW * net.base_mva)
    pi = net.bldg_incidence
    fixed_kw = np.asarray(misc_kw, dtype=float).copy()
    if u_b_kw is not None:
        fixed_kw = fixed_kw + u_b_kw
    known = h @ (base_load + pi @ fixed_kw * kw_to_pu)
    limit = net.flow_limits[limited]
    terms = [(h @ net.gen_incidence.toarray(), ubar_idx)]
    if u_b_idx is not None and net.n_b:
        terms.append((-(h @ pi.toarray()) / net.base_mva, u_b_idx))
    builder.add_inequality(terms, known - limit, known + limit, "line_limit",
                           entities=limited + 1, time=time)


def assemble_lopf(net: PowerNetwork, u_b_kw: np.ndarray, base_load: np.ndarray, misc_kw: np.ndarray,
                  costs: CostParams, bounds: Optional[BoundParams] = None,
                  shift: Optional[np.ndarray] = None) -> QuadraticProgram:
    """
    minimize J(ubar)  s.t.  p_min <= ubar <= p_max,  sum ubar = total demand,  PTDF line limits.
    Loads: base_load p.u. per bus, u_b_kw and misc_kw per building.
    """
    u_b_kw = check_shape("u_b", u_b_kw, (net.n_b,))
    misc_kw = check_shape("misc load", misc_kw, (net.n_b,))
    base_load = check_shape("base load", base_load, (net.n,))
    p_min = bounds.p_min if bounds is not None else np.array([g.p_min for g in net.generators])
    p_max = bounds.p_max if bounds is not None else np.array([g.p_max for g in net.generators])

    builder = QpBuilder()
    ubar = builder.variables("ubar_g", net.n_g, [1], p_min[:, None], p_max[:, None])[:, 0]
    add_generation_cost(builder, ubar, costs)

    demand = base_load.sum() + (u_b_kw.sum() + misc_kw.sum()) / (W_PER_KW * net.base_mva)
    builder.add_equality([(sp.csr_matrix(np.ones((1, net.n_g))), ubar)], [demand], "power_balance", [0], 1)

    shift = ptdf(net) if shift is None else shift
    add_line_limits(builder, net, shift, ubar, base_load, misc_kw, 1, u_b_kw=u_b_kw)
    return builder.build()
