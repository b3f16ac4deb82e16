import numpy as np
import pytest

from purc import Network, Problem, SolverConfig, quadratic, solve
from purc.datasets import FOUR_NODE_COSTS, FOUR_NODE_JACOBIAN, four_node_network, four_node_problem, random_instance
from purc.sensitivity import (
    CurvatureUndefinedError,
    GenericityError,
    SupportChangedError,
    directional_flow_response,
    finite_difference_jacobian,
    genericity_margins,
    jacobian,
    jacobian_laplacian,
    jacobian_nullspace,
    jacobian_reduced,
    method_agreement,
    nullspace_basis,
)

TIGHT = SolverConfig(grad_tol=1e-12)


def test_four_node_jacobian_all_forms(four_node, four_node_solution):
    res = jacobian(four_node, four_node_solution, method="all")
    assert set(res) == {"nullspace", "laplacian", "reduced"}
    for r in res.values():
        np.testing.assert_allclose(r.matrix, FOUR_NODE_JACOBIAN, atol=1e-9)
        assert r.k == 2
    assert method_agreement(res) <= 1e-12


def test_four_node_jacobian_matches_finite_differences(four_node):
    F = finite_difference_jacobian(four_node)
    np.testing.assert_allclose(F, FOUR_NODE_JACOBIAN, atol=1e-8)


def test_jacobian_structure(rng):
    checked = 0
    for _ in range(40):
        p = random_instance(rng)
        s = solve(p, TIGHT)
        try:
            J = jacobian(p, s).matrix
        except (GenericityError, CurvatureUndefinedError):
            continue
        checked += 1
        np.testing.assert_allclose(J, J.T, atol=1e-12)
        assert np.max(np.linalg.eigvalsh(J)) <= 1e-10
        # demand is fixed, so every response is a circulation
        assert np.max(np.abs(p.A @ J)) <= 1e-10
        inactive = np.setdiff1d(np.arange(p.n_links), s.active_set)
        assert np.all(J[inactive] == 0) and np.all(J[:, inactive] == 0)
    assert checked >= 15


def test_qr_and_svd_bases_span_the_same_kernel(rng):
    for _ in range(30):
        n, m = rng.integers(2, 8), rng.integers(2, 12)
        A = rng.integers(-1, 2, size=(n, m)).astype(float)
        P = {}
        for method in ("svd", "qr"):
            N = nullspace_basis(A, method=method)
            assert np.max(np.abs(A @ N), initial=0.0) <= 1e-10
            np.testing.assert_allclose(N.T @ N, np.eye(N.shape[1]), atol=1e-10)
            P[method] = N @ N.T
        np.testing.assert_allclose(P["svd"], P["qr"], atol=1e-10)
    with pytest.raises(ValueError):
        nullspace_basis(np.eye(2), method="lu")


def test_tree_support_has_zero_jacobian():
    net = Network.from_links([("e1", "v1", "v2"), ("e2", "v2", "v1")])
    p = Problem.single_od(net, quadratic(), [1.0, 1.0], "v1", "v2")
    s = solve(p)
    for r in jacobian(p, s, method="all").values():
        assert r.k == 0
        assert np.all(r.matrix == 0)
    np.testing.assert_allclose(finite_difference_jacobian(p), 0.0, atol=1e-9)


def test_isolated_inactive_node():
    # node 5 hangs off the four-node network through two expensive links
    links = [(lid, v, w) for lid, v, w in four_node_network().links()]
    links += [("(4,5)", 4, 5), ("(5,1)", 5, 1)]
    net = Network.from_links(links, nodes=[1, 2, 3, 4, 5])
    p = Problem.single_od(net, quadratic(), [*FOUR_NODE_COSTS, 5.0, 5.0], 1, 4)
    s = solve(p, TIGHT)
    assert s.active_set.tolist() == [0, 1, 2, 3, 4]
    res = jacobian(p, s, method="all")
    assert method_agreement(res) <= 1e-12
    np.testing.assert_allclose(res["reduced"].matrix[:6, :6], FOUR_NODE_JACOBIAN, atol=1e-9)
    np.testing.assert_allclose(finite_difference_jacobian(p), res["laplacian"].matrix, atol=1e-8)
    for solver in ("dense", "cg"):
        dx = directional_flow_response(p, s, np.eye(8)[0], solver=solver)
        np.testing.assert_allclose(dx, res["laplacian"].matrix[:, 0], atol=1e-10)


def test_directional_response(rng):
    checked = 0
    for _ in range(40):
        p = random_instance(rng)
        s = solve(p, TIGHT)
        try:
            J = jacobian(p, s).matrix
        except (GenericityError, CurvatureUndefinedError):
            continue
        checked += 1
        dc = rng.normal(size=p.n_links)
        for solver in ("dense", "cg"):
            dx = directional_flow_response(p, s, dc, solver=solver)
            np.testing.assert_allclose(dx, J @ dc, atol=1e-9)
            assert np.max(np.abs(p.A @ dx)) <= 1e-10
        # cost changes on idle links do not move the flow
        idle = np.setdiff1d(np.arange(p.n_links), s.active_set)
        dc_idle = np.zeros(p.n_links)
        dc_idle[idle] = rng.normal(size=idle.size)
        assert np.all(directional_flow_response(p, s, dc_idle) == 0)
    assert checked >= 15


def test_degenerate_cost_trips_the_guard_and_fd_abstains():
    costs = FOUR_NODE_COSTS.copy()
    costs[5] = -4.0  # tension of (4,1) is then exactly at its activation threshold
    p = four_node_problem(costs=costs)
    s = solve(p, TIGHT)
    m = genericity_margins(p, s)
    assert abs(m["inactive"]) <= 1e-9
    with pytest.raises(GenericityError) as err:
        jacobian(p, s)
    assert err.value.margins["inactive"] == m["inactive"]
    with pytest.raises(SupportChangedError):
        finite_difference_jacobian(p)
    # the guard can be bypassed explicitly; the formula then gives one one-sided derivative
    J = jacobian(p, s, check_margin=False).matrix
    np.testing.assert_allclose(J, FOUR_NODE_JACOBIAN, atol=1e-9)


def test_flow_on_primal_kink_has_no_jacobian():
    from purc import piecewise_quadratic

    # on a single link the flow equals the demand 1, the kink of the piecewise family
    net = Network.from_links([("e1", "v1", "v2"), ("e2", "v2", "v1")])
    p = Problem.single_od(net, piecewise_quadratic(), [0.0, 1.0], "v1", "v2")
    s = solve(p)
    assert s.x[0] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(CurvatureUndefinedError):
        jacobian(p, s)


def test_reduced_form_requires_single_od(rng):
    from purc import Demand

    net = four_node_network()
    demand = Demand.balanced(net, {1: 1.0, 2: 0.5, 4: -1.5})
    p = Problem(net, quadratic(), FOUR_NODE_COSTS + 1.0, demand)
    s = solve(p)
    part_forms = jacobian(p, s, method="all")
    assert "reduced" not in part_forms
    with pytest.raises(ValueError):
        jacobian_reduced(p, s)
    assert method_agreement(part_forms) <= 1e-12
    np.testing.assert_allclose(jacobian_nullspace(p, s).matrix, jacobian_laplacian(p, s).matrix, atol=1e-12)
    with pytest.raises(ValueError):
        jacobian(p, s, method="spectral")
