from reporting.costs import (
    CostBreakdown, CATEGORIES, cost_breakdown, trajectory_costs, percent_reduction, breakdown_from_trajectories,
)
