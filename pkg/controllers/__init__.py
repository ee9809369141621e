from controllers.params import CostParams, BoundParams
from controllers.lopf import assemble_lopf, add_line_limits, add_generation_cost
from controllers.mpc import (
    MpcAssembler, MpcState, MpcPlan, assemble_building_mpc, assemble_grid_mpc, assemble_btg_gmpc,
    dimension_audit, dynamics_residual, expand_building_steps, hvac_cost, FULL, GRID_ONLY, BUILDING,
)
from controllers.bang_bang import BangBangResult, bang_bang, tune_bang_bang
