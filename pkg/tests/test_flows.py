import numpy as np
import pytest

from purc import duality_gap, primal_value, recover_flow, solve, support
from purc.datasets import FOUR_NODE_FLOW, FOUR_NODE_POTENTIAL, random_instance
from purc.flows import NotOptimalError


def test_four_node_flow(four_node, four_node_solution):
    s = four_node_solution
    np.testing.assert_allclose(s.x, FOUR_NODE_FLOW, atol=1e-9)
    assert s.active_links(four_node) == [(1, 2), (1, 3), (2, 3), (2, 4), (3, 4)]
    assert s.x[5] == 0.0
    assert s.p == pytest.approx(3.4975, abs=1e-9)
    assert abs(s.gap) <= 1e-9
    assert s.conservation_residual <= 1e-12


def test_recover_flow_at_known_potential(four_node):
    s = recover_flow(four_node, FOUR_NODE_POTENTIAL)
    np.testing.assert_allclose(s.x, FOUR_NODE_FLOW, atol=1e-12)
    np.testing.assert_allclose(four_node.A @ s.x, four_node.b, atol=1e-12)


def test_recover_flow_refuses_non_optimal_potential(four_node):
    with pytest.raises(NotOptimalError):
        recover_flow(four_node, np.zeros(3))
    s = recover_flow(four_node, np.zeros(3), grad_tol=None)
    assert s.conservation_residual == 1.0


def test_primal_value_and_support():
    from purc.datasets import four_node_problem

    p = four_node_problem()
    assert primal_value(p, FOUR_NODE_FLOW) == pytest.approx(3.4975, abs=1e-12)
    assert primal_value(p, -FOUR_NODE_FLOW) == np.inf
    np.testing.assert_array_equal(support(np.array([0.0, 1e-9, 2e-8, 1.0])), [2, 3])
    np.testing.assert_array_equal(support(np.array([0.0, 1e-9, 2e-8, 1.0]), eps_supp=1e-10), [1, 2, 3])


def test_duality_gap_forms(four_node, four_node_solution):
    assert duality_gap(four_node, four_node_solution) == pytest.approx(four_node_solution.gap)
    assert duality_gap(four_node, FOUR_NODE_FLOW, FOUR_NODE_POTENTIAL) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TypeError):
        duality_gap(four_node, FOUR_NODE_FLOW)


def test_strong_duality_random(rng):
    for _ in range(25):
        p = random_instance(rng)
        s = solve(p)
        assert abs(s.gap) <= 1e-8
        assert s.conservation_residual <= 1e-8
        assert np.all(s.x >= 0)


def test_weak_duality(rng):
    # any potential bounds any feasible flow from below
    for _ in range(10):
        p = random_instance(rng)
        x = solve(p).x
        for _ in range(10):
            u = rng.normal(scale=2.0, size=p.n_potentials)
            assert primal_value(p, x) >= p.evaluate(u).value - 1e-12
