from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from buildings.model import BuildingParams, sample_cluster
from discretization.gear import (
    DescriptorModel, constant_history, discretize_buildings, discretize_grid, gear_coefficients,
)
from grid.dae import assemble_dae
from network.ptdf import dc_power_flow
from utils.errors import InputError, SingularPencilError


@pytest.mark.parametrize("s, beta0, alphas", [
    (1, Fraction(1), (Fraction(1),)),
    (2, Fraction(2, 3), (Fraction(4, 3), Fraction(-1, 3))),
    (3, Fraction(6, 11), (Fraction(18, 11), Fraction(-9, 11), Fraction(2, 11))),
])
def test_closed_form_coefficients(s, beta0, alphas):
    scheme = gear_coefficients(s)
    assert scheme.beta0_exact == beta0
    assert scheme.alphas_exact == alphas


@pytest.mark.parametrize("s", range(1, 7))
def test_alphas_sum_to_one(s):
    assert sum(gear_coefficients(s).alphas_exact) == 1


@pytest.mark.parametrize("s", [0, 7, 2.5])
def test_invalid_order(s):
    with pytest.raises(InputError):
        gear_coefficients(s)


def _decay_error(s: int, h: float) -> float:
    model = DescriptorModel(sp.identity(1), -sp.identity(1), h, gear_coefficients(s))
    history = [np.array([np.exp(i * h)]) for i in range(s)]
    steps = int(round(1.0 / h))
    for _ in range(steps):
        x = model.step_forcing(history, np.zeros(1))
        history = [x] + history[:-1]
    return abs(history[0][0] - np.exp(-1.0))


@pytest.mark.parametrize("s", [1, 2, 3])
def test_convergence_order(s):
    ratio = _decay_error(s, 1 / 50) / _decay_error(s, 1 / 100)
    assert ratio == pytest.approx(2 ** s, rel=0.15)


def test_wrong_history_forgotten_on_descriptor_system():
    E = sp.diags([1.0, 1.0, 1.0, 0.0])
    A = sp.csr_matrix(np.array([
        [-1.0, 0.5, 0.0, 0.0],
        [0.0, -2.0, 0.0, 0.0],
        [0.0, 0.0, -0.5, 1.0],
        [1.0, 0.0, 0.0, -1.0],
    ]))
    model = DescriptorModel(E, A, 2.0, gear_coefficients(2))
    f = np.array([1.0, 0.5, 0.0, 0.0])
    good = constant_history(np.array([1.0, 0.25, 2.0, 1.0]), 2)
    bad = [np.array([5.0, -3.0, 1.0, 7.0]), np.array([-2.0, 4.0, 0.0, 0.0])]
    for _ in range(50):
        good = [model.step_forcing(good, f)] + good[:-1]
        bad = [model.step_forcing(bad, f)] + bad[:-1]
    assert np.max(np.abs(good[0] - bad[0])) < 1e-8


def test_singular_pencil_reported():
    E = sp.diags([1.0, 0.0])
    A = sp.csr_matrix((2, 2))
    with pytest.raises(SingularPencilError) as err:
        DescriptorModel(E, A, 0.1, gear_coefficients(1))
    assert err.value.step == pytest.approx(0.1)


def test_blockwise_buildings_match_sparse_pencil():
    cluster = sample_cluster(BuildingParams(), 3, 0.05, seed=3)
    scheme = gear_coefficients(2)
    blockwise = discretize_buildings(cluster, 300.0, scheme)
    dense = DescriptorModel(sp.identity(6), cluster.A_b, 300.0, scheme)
    history = [np.full(6, 22.0), np.full(6, 22.5)]
    u = np.array([100.0, 0.0, 250.0])
    w = np.tile([32.0, 3e4, 2e4], 3)
    expected = dense.step_forcing(history, cluster.B_ub @ u + cluster.B_wb @ w)
    assert np.allclose(blockwise.step(history, u, w), expected, rtol=1e-12, atol=1e-10)


def test_grid_equilibrium_is_preserved(twobus):
    dae = assemble_dae(twobus)
    model = discretize_grid(dae, 10.0, gear_coefficients(2))
    theta, _ = dc_power_flow(twobus, np.array([0.5, -0.5]))
    x0 = np.concatenate([theta, np.zeros(2)])
    history = constant_history(x0, 2)
    for _ in range(5):
        history = [model.step(history, np.array([0.5]), np.zeros(0), np.array([0.0, 0.5]))] + history[:-1]
    assert np.allclose(history[0], x0, atol=1e-12)


def test_grid_step_responds_to_load_increase(twobus):
    dae = assemble_dae(twobus)
    model = discretize_grid(dae, 1.0, gear_coefficients(1))
    theta, _ = dc_power_flow(twobus, np.array([0.5, -0.5]))
    history = constant_history(np.concatenate([theta, np.zeros(2)]), 1)
    x1 = model.step(history, np.array([0.5]), np.zeros(0), np.array([0.0, 0.6]))
    # More load than generation: frequency falls
    assert x1[2] < 0.0
