import math
from collections import Counter

import numpy as np
import pytest

from network.case import attach_buildings, parse_case, round_robin_assignment, serialize_case
from network.ptdf import dc_power_flow, ptdf
from utils.errors import CaseSyntaxError, CaseValidationError, DimensionError

TRIANGLE = """
[case]
units pu
[bus]
1 3 0
2 1 0.4
3 1 0.6
[gen]
1 1 0 2
[branch]
1 2 0.1 0.5
2 3 0.2 0
1 3 0.25 0
[gencost]
1 1 2 0
[dynamics]
1 0.1 0.1 0.0
"""


def test_case9_sizes_and_units(case9):
    assert (case9.n, case9.n_g, case9.n_l) == (9, 3, 9)
    assert case9.slack_bus == 1
    assert case9.load_buses == [5, 7, 9]
    assert case9.base_load[4] == pytest.approx(0.9)
    # $/MW^2 -> $/p.u.^2
    assert case9.generators[0].cost_quadratic == pytest.approx(0.11 * 100 ** 2)
    assert case9.generators[1].delta_max == pytest.approx(0.3)
    assert case9.generator_buses == [1, 2, 3]


def test_incidence_shapes(case9):
    assert case9.gen_incidence.shape == (9, 3)
    assert np.allclose(case9.gen_incidence.sum(axis=0), 1.0)
    lap = case9.laplacian.toarray()
    assert np.allclose(lap.sum(axis=1), 0.0)
    assert np.allclose(lap, lap.T)


def test_unlimited_branch_is_infinite():
    net = parse_case(TRIANGLE)
    assert net.flow_limits[0] == pytest.approx(0.5)
    assert math.isinf(net.flow_limits[1])


def test_serialize_round_trip(case9):
    assert parse_case(serialize_case(case9)) == case9


@pytest.mark.parametrize("text, lineno", [
    ("[bus]\n1 3 0\n[bogus]\n", 3),
    ("1 3 0\n", 1),
    ("[bus]\n1 3 abc\n", 2),
    ("[bus]\n1 3\n", 2),
])
def test_syntax_errors_carry_line_numbers(text, lineno):
    with pytest.raises(CaseSyntaxError) as err:
        parse_case(text)
    assert err.value.lineno == lineno


def test_disconnected_network_rejected():
    text = TRIANGLE.replace("2 3 0.2 0\n1 3 0.25 0\n", "")
    with pytest.raises(CaseValidationError, match="disconnected"):
        parse_case(text)


def test_generator_bus_without_inertia_rejected():
    with pytest.raises(CaseValidationError, match="inertia"):
        parse_case(TRIANGLE.replace("1 0.1 0.1 0.0", "1 0 0.1 0.0"))


def test_ptdf_matches_brute_force_dc_flow(case9):
    rng = np.random.default_rng(3)
    H = ptdf(case9)
    keep = [k for k in range(case9.n) if k != case9.slack_bus - 1]
    lap = case9.laplacian.toarray()
    inc = case9.branch_incidence.toarray()
    for _ in range(20):
        p = rng.normal(size=case9.n)
        p[case9.slack_bus - 1] -= p.sum()
        theta = np.zeros(case9.n)
        theta[keep] = np.linalg.solve(lap[np.ix_(keep, keep)], p[keep])
        brute = case9.susceptances * (inc @ theta)
        assert np.allclose(H @ p, brute, atol=1e-9)
        assert np.allclose(dc_power_flow(case9, p)[1], brute, atol=1e-9)


def test_ptdf_slack_column_is_zero(case9):
    assert np.allclose(ptdf(case9)[:, case9.slack_bus - 1], 0.0)


def test_dc_power_flow_shape_checked(case9):
    with pytest.raises(DimensionError):
        dc_power_flow(case9, np.zeros(3))


def test_round_robin_spreads_over_load_buses(case9):
    assignment = round_robin_assignment(case9, 30, seed=11)
    counts = Counter(bus for _, bus in assignment)
    assert counts == {5: 10, 7: 10, 9: 10}
    net = attach_buildings(case9, assignment)
    assert net.n_b == 30
    assert net.bldg_incidence.shape == (9, 30)
    assert np.allclose(net.bldg_incidence.sum(axis=0), 1.0)


def test_attach_buildings_rejects_duplicates(case9):
    with pytest.raises(CaseValidationError):
        attach_buildings(case9, [(1, 5), (1, 7)])
    with pytest.raises(CaseValidationError):
        attach_buildings(case9, [(1, 5), (3, 7)])


def test_with_slack_bounds(case9):
    assert case9.with_slack(4).slack_bus == 4
    with pytest.raises(CaseValidationError):
        case9.with_slack(10)
