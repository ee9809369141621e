import numpy as np
import pytest
import scipy.sparse as sp

from config.settings import SolverConfig
from optimization.qp import QpBuilder, QuadraticProgram, VariableIndex, dump
from optimization.solver import INFEASIBLE, OPTIMAL, clear_cache, require_optimal, solve, variable_slice
from utils.errors import DimensionError, InfeasibleError, InputError


def test_variable_index_layout_and_aliases():
    index = VariableIndex()
    index.add("u", 2, [1, 2, 3])
    grid = index.add("x_g", 4, [1, 2])
    # time-major: entities contiguous per time
    assert list(grid[:, 0]) == [6, 7, 8, 9]
    assert index.names[6] == ("x_g", 1, 1)
    assert list(index.lookup("omega", time=2)) == [12, 13]
    assert index.lookup("delta", entity=2, time=1) == 7
    with pytest.raises(KeyError):
        index.lookup("u", entity=3)
    with pytest.raises(InputError):
        index.add("u", 1, [1])


def test_equality_constrained_minimum():
    b = QpBuilder()
    x = b.variables("x", 2, [1])
    b.add_quadratic(x, 1.0)
    b.add_equality([(np.ones((1, 2)), x)], 1.0, "sum")
    sol = solve(b.build())
    assert sol.status == OPTIMAL
    assert np.allclose(sol.x, [0.5, 0.5], atol=1e-7)
    assert sol.objective == pytest.approx(0.5, abs=1e-7)


def test_box_bound_active():
    b = QpBuilder()
    x = b.variables("x", 1, [1], lower=-5.0, upper=1.0)
    b.add_quadratic(x, 1.0)
    b.add_linear(x, -6.0)
    b.add_constant(9.0)
    sol = solve(b.build())
    assert variable_slice(sol, "x", entity=1, time=1) == pytest.approx(1.0, abs=1e-7)
    assert sol.objective == pytest.approx(4.0, abs=1e-6)


def test_objective_terms_sum_to_objective():
    b = QpBuilder()
    x = b.variables("x", 3, [1, 2], lower=-1.0, upper=2.0)
    b.add_quadratic(x[:, 0], [1.0, 2.0, 3.0], term="first")
    b.add_quadratic(x[:, 1], 0.5, term="second")
    b.add_linear(x[:, 1], -1.0, term="second")
    b.add_constant(2.0, term="first")
    qp = b.build()
    sol = solve(qp)
    terms = qp.objective_terms(sol.x)
    assert set(terms) == {"first", "second"}
    assert sum(terms.values()) == pytest.approx(qp.objective(sol.x), abs=1e-9)
    assert terms["first"] == pytest.approx(2.0, abs=1e-6)


def test_coefficient_shape_mismatch():
    b = QpBuilder()
    x = b.variables("x", 3, [1])
    with pytest.raises(DimensionError):
        b.add_quadratic(x, [1.0, 2.0])


def test_infeasible_problem_reported():
    b = QpBuilder()
    x = b.variables("x", 1, [1], lower=1.0)
    b.add_quadratic(x, 1.0)
    b.add_inequality([(np.ones((1, 1)), x)], -np.inf, 0.0, "cap")
    sol = solve(b.build())
    assert sol.status == INFEASIBLE
    with pytest.raises(InfeasibleError) as err:
        require_optimal(sol, instant=30.0)
    assert err.value.instant == 30.0
    assert err.value.constraint is not None


def test_non_psd_hessian_rejected():
    b = QpBuilder()
    x = b.variables("x", 1, [1])
    b.add_quadratic(x, -1.0)
    with pytest.raises(InputError):
        solve(b.build())


def test_warm_start_reaches_same_point():
    b = QpBuilder()
    x = b.variables("x", 4, [1], lower=0.0, upper=1.0)
    b.add_quadratic(x, [1.0, 2.0, 3.0, 4.0])
    b.add_linear(x, [-3.0, 1.0, -2.0, -0.5])
    b.add_equality([(np.ones((1, 4)), x)], 1.5, "sum")
    qp = b.build()
    cold = solve(qp)
    warm = solve(qp, warm_start=(cold.x, cold.y))
    assert warm.status == OPTIMAL
    assert np.allclose(warm.x, cold.x, atol=1e-7)
    assert warm.iterations <= cold.iterations


def test_repeated_solves_are_identical():
    b = QpBuilder()
    x = b.variables("x", 3, [1], lower=-1.0, upper=1.0)
    b.add_quadratic(x, [1.0, 0.1, 5.0])
    b.add_linear(x, [1.0, -1.0, 2.0])
    qp = b.build()
    assert np.array_equal(solve(qp).x, solve(qp).x)


def test_dump_writes_header(tmp_path):
    b = QpBuilder()
    x = b.variables("x", 2, [1])
    b.add_quadratic(x, 1.0)
    b.add_equality([(np.ones((1, 2)), x)], 1.0, "sum")
    path = tmp_path / "qp.txt"
    dump(b.build(), str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "# 2 1 0"
    assert "name 1 x 2 1" in lines


def _box_qp(P, q, lb, ub) -> QuadraticProgram:
    n = len(q)
    index = VariableIndex()
    index.add("x", n, [1])
    return QuadraticProgram(sp.csc_matrix(P), q, 0.0, sp.csr_matrix((0, n)), np.zeros(0),
                            sp.csr_matrix((0, n)), np.zeros(0), np.zeros(0), lb, ub, index)


def _projected_gradient(P, q, lb, ub, iters=20000):
    step = 1.0 / np.linalg.eigvalsh(P).max()
    x = np.clip(np.zeros(len(q)), lb, ub)
    for _ in range(iters):
        x_new = np.clip(x - step * (P @ x + q), lb, ub)
        if np.max(np.abs(x_new - x)) < 1e-14:
            break
        x = x_new
    return x


def test_matches_projected_gradient_oracle():
    rng = np.random.default_rng(2024)
    settings = SolverConfig()
    for _ in range(100):
        n = int(rng.integers(2, 21))
        M = rng.normal(size=(n, n))
        P = M @ M.T / n + np.eye(n)
        q = rng.normal(size=n) * 3.0
        lb = -rng.uniform(0.1, 1.0, size=n)
        ub = rng.uniform(0.1, 1.0, size=n)
        sol = solve(_box_qp(P, q, lb, ub), settings)
        assert sol.status == OPTIMAL
        assert np.allclose(sol.x, _projected_gradient(P, q, lb, ub), atol=1e-6)


def _one_step_cooling_lp():
    """One building, one backward-Euler step, HVAC in MW: cheapest input that holds the zone at 23 °C."""
    wall_row = np.array([[0.0, 1.00457, -0.00228]])
    zone_row = np.array([[0.10664, -0.000368, 1.00037]])
    t_wall = (23.05 + 0.00228 * 23.0) / 1.00457
    expected = np.array([0.3, t_wall, 23.0])

    b = QpBuilder()
    u = b.variables("u", 1, [1], lower=0.0, upper=0.8)
    wall = b.variables("wall", 1, [1])
    zone = b.variables("zone", 1, [1], lower=21.5, upper=23.0)
    cols = np.concatenate([u.ravel(), wall.ravel(), zone.ravel()])
    b.add_linear(u, 100.0)
    b.add_equality([(wall_row, cols)], 23.05, "wall")
    b.add_equality([(zone_row, cols)], float((zone_row @ expected)[0]), "zone")
    return b.build(), cols, expected


def test_lp_with_binding_temperature_bound():
    qp, cols, expected = _one_step_cooling_lp()
    sol = solve(qp)
    assert sol.status == OPTIMAL
    assert np.allclose(sol.x[cols], expected, atol=1e-6)
    assert sol.objective == pytest.approx(30.0, abs=1e-5)


def test_solves_do_not_depend_on_previous_ones():
    lp, _, _ = _one_step_cooling_lp()
    b = QpBuilder()
    x = b.variables("x", 3, [1], lower=-1.0, upper=1.0)
    b.add_quadratic(x, [1.0, 0.1, 5.0])
    b.add_linear(x, [1.0, -1.0, 2.0])
    qp = b.build()

    clear_cache()
    lp_first, qp_second = solve(lp), solve(qp)
    clear_cache()
    qp_first, lp_second = solve(qp), solve(lp)
    assert np.array_equal(lp_first.x, lp_second.x)
    assert np.array_equal(qp_first.x, qp_second.x)
    assert lp_first.iterations == lp_second.iterations
    # a cached workspace is reused without carrying rho over from the last call
    assert np.array_equal(solve(lp).x, lp_first.x)
