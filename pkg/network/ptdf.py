"""
DC network sensitivities: PTDF matrix and a direct DC power-flow solve.
"""
from typing import Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from network.case import PowerNetwork
from utils.errors import CaseValidationError, check_shape


def _reduced_factor(net: PowerNetwork):
    keep = np.array([k for k in range(net.n) if k != net.slack_bus - 1], dtype=int)
    b_red = net.laplacian[keep][:, keep].tocsc()
    try:
        lu = splu(b_red)
    except RuntimeError as e:
        raise CaseValidationError(f"reduced susceptance matrix is singular: {e}") from e
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) < 1e-12:
        raise CaseValidationError("reduced susceptance matrix is singular (disconnected network?)")
    return keep, lu


def ptdf(net: PowerNetwork) -> np.ndarray:
    """n_l x n map from nodal injections (withdrawn at the slack) to branch flows."""
    result = np.zeros((net.n_l, net.n))
    if net.n == 1 or net.n_l == 0:
        return result
    keep, lu = _reduced_factor(net)
    flow_map = sp.diags(net.susceptances) @ net.branch_incidence[:, keep]
    # PTDF_red = flow_map @ B_red^-1  ->  solve B_red^T X = flow_map^T
    result[:, keep] = lu.solve(np.asarray(flow_map.toarray()).T, trans="T").T
    return result


def dc_power_flow(net: PowerNetwork, injections: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Angles (slack = 0) and branch flows for balanced nodal injections in p.u."""
    p = check_shape("injections", injections, (net.n,))
    theta = np.zeros(net.n)
    if net.n > 1:
        keep, lu = _reduced_factor(net)
        theta[keep] = lu.solve(p[keep])
    flows = net.susceptances * (net.branch_incidence @ theta)
    return theta, flows
