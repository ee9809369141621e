import numpy as np
import pandas as pd
import pytest

from buildings.model import (
    BuildingParams, building_matrices, cluster_derivative, load_building_disturbance, make_cluster,
    perturb_cluster, sample_cluster, steady_state,
)
from utils.errors import DimensionError, InputError

REF = BuildingParams()


def test_reference_coupling_entry():
    a, _, _ = building_matrices(REF)
    assert a[0, 1] == pytest.approx(1.0 / (1.133e9 * 1.16e-4))
    assert a[0, 1] == pytest.approx(7.609e-6, rel=1e-3)


def test_symmetric_building_is_symmetric():
    p = BuildingParams(r1=2e-4, r2=2e-4, c_wall=5e9, c_zone=5e9)
    a, _, _ = building_matrices(p)
    assert a[0, 1] * p.c_wall == pytest.approx(a[1, 0] * p.c_zone)


@pytest.mark.parametrize("mu", [0.0, -1.0])
def test_nonpositive_hvac_efficiency_rejected(mu):
    with pytest.raises(InputError):
        BuildingParams(mu_hvac=mu)


def test_nonpositive_rc_rejected():
    with pytest.raises(InputError):
        BuildingParams(r1=0.0)


def test_zero_spread_copies_reference():
    c = sample_cluster(REF, 4, 0.0, seed=1)
    a, b_u, b_w = building_matrices(REF)
    assert np.allclose(c.a_blocks, a)
    assert np.allclose(c.bu_blocks, b_u[:, 0] * 1000.0)
    assert np.allclose(c.bw_blocks, b_w)


def test_sampling_is_deterministic():
    c1 = sample_cluster(REF, 6, 0.05, seed=9)
    c2 = sample_cluster(REF, 6, 0.05, seed=9)
    assert np.array_equal(c1.a_blocks, c2.a_blocks)
    assert np.array_equal(c1.bw_blocks, c2.bw_blocks)
    assert c1.n_b == 6
    assert c1.A_b.shape == (12, 12)
    assert c1.B_ub.shape == (12, 6)
    assert c1.B_wb.shape == (12, 18)


def test_zero_state_zero_derivative():
    c = sample_cluster(REF, 3, 0.05, seed=2)
    assert np.allclose(cluster_derivative(c, np.zeros(6), np.zeros(3), np.zeros(9)), 0.0)


def test_thermal_equilibrium():
    c = sample_cluster(REF, 3, 0.05, seed=2)
    x = np.full(6, 30.0)
    w = np.tile([30.0, 0.0, 0.0], 3)
    assert np.allclose(cluster_derivative(c, x, np.zeros(3), w), 0.0, atol=1e-18)


def test_blockwise_matches_dense():
    c = make_cluster([REF])
    x = np.array([25.0, 22.0])
    w = np.array([35.0, 0.0, 0.0])
    dense = c.A_b @ x + c.B_ub @ np.zeros(1) + c.B_wb @ w
    assert np.allclose(cluster_derivative(c, x, np.zeros(1), w), dense)


def test_cooling_lowers_zone_temperature():
    c = make_cluster([REF])
    dx = cluster_derivative(c, np.array([22.0, 22.0]), np.array([100.0]), np.array([22.0, 0.0, 0.0]))
    assert dx[1] < 0.0
    assert dx[0] == pytest.approx(0.0)


def test_steady_state_has_zero_derivative():
    c = sample_cluster(REF, 2, 0.05, seed=4)
    u = np.array([50.0, 80.0])
    w = np.tile([30.0, 2e4, 1e4], 2)
    x_ss = steady_state(c, u, w)
    assert np.allclose(cluster_derivative(c, x_ss, u, w), 0.0, atol=1e-12)


def test_shape_mismatch_raises():
    c = sample_cluster(REF, 2, 0.0, seed=1)
    with pytest.raises(DimensionError):
        cluster_derivative(c, np.zeros(3), np.zeros(2), np.zeros(6))


def test_perturbation_keeps_sparsity_and_is_seeded():
    c = sample_cluster(REF, 3, 0.0, seed=1)
    p1 = perturb_cluster(c, 0.1, np.random.default_rng(5))
    p2 = perturb_cluster(c, 0.1, np.random.default_rng(5))
    assert np.array_equal(p1.bw_blocks, p2.bw_blocks)
    assert np.array_equal(p1.bw_blocks == 0, c.bw_blocks == 0)
    assert not np.allclose(p1.a_blocks, c.a_blocks)
    assert perturb_cluster(c, 0.0, np.random.default_rng(5)) is c


def test_disturbance_csv_broadcast_and_hold(tmp_path):
    path = tmp_path / "weather.csv"
    pd.DataFrame({"time_s": [0, 300], "T_amb_C": [30.0, 31.0], "Q_sol_W": [1.0, 2.0],
                  "Q_int_W": [5.0, 6.0]}).to_csv(path, index=False)
    dist = load_building_disturbance(str(path), 2)
    assert dist.n_b == 2
    assert np.allclose(dist.at(0.0), [30.0, 1.0, 5.0, 30.0, 1.0, 5.0])
    assert np.allclose(dist.at(299.0), dist.at(0.0))
    assert np.allclose(dist.at(1e6), [31.0, 2.0, 6.0, 31.0, 2.0, 6.0])


def test_disturbance_csv_missing_column(tmp_path):
    path = tmp_path / "weather.csv"
    pd.DataFrame({"time_s": [0], "T_amb_C": [30.0]}).to_csv(path, index=False)
    with pytest.raises(InputError, match="missing columns"):
        load_building_disturbance(str(path), 1)
