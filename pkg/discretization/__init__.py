from discretization.gear import (
    GearScheme, DescriptorModel, DiscreteGridModel, DiscreteBuildingModel,
    gear_coefficients, constant_history, discretize_grid, discretize_buildings,
)
