from grid.dae import (
    GridDae, GridDisturbance, assemble_dae, phi, phi_jacobian, forcing, grid_residual, load_grid_disturbance,
)
