from buildings.model import (
    BuildingParams, BuildingCluster, BuildingDisturbance,
    building_matrices, make_cluster, sample_cluster, cluster_derivative, steady_state,
    perturb_cluster, hold_index, load_building_disturbance, W_PER_KW,
)
