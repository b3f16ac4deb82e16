import math

import numpy as np
import pytest

from purc import Demand, Network, Problem, SolverConfig, entropy, piecewise_quadratic, quadratic, solve
from purc.datasets import FOUR_NODE_FLOW, four_node_problem, random_instance, two_link_problem
from purc.oracle import (
    EnumerationLimitError,
    _kkt_certificate,
    brute_force_primal,
    circuit_solve,
    two_link_closed_form,
    two_link_jacobian,
)
from purc.sensitivity import finite_difference_jacobian


def test_brute_force_four_node():
    o = brute_force_primal(four_node_problem())
    assert o.certified
    np.testing.assert_allclose(o.x, FOUR_NODE_FLOW, atol=1e-12)
    assert o.value == pytest.approx(3.4975, abs=1e-12)
    assert o.support.tolist() == [0, 1, 2, 3, 4]


def test_brute_force_piecewise_four_node():
    p = four_node_problem(perturbation=piecewise_quadratic())
    o = brute_force_primal(p)
    s = solve(p, SolverConfig(grad_tol=1e-12))
    assert o.certified
    np.testing.assert_allclose(o.x, s.x, atol=1e-9)


def test_certificate_rejects_a_suboptimal_flow():
    p = four_node_problem()
    o = brute_force_primal(p)
    x = o.x.copy()
    # push 0.05 more along 1-2-4 and less along 1-3-4: still feasible, not optimal
    x[[0, 3]] += 0.05
    x[[1, 4]] -= 0.05
    pattern = [("open", 0.0, math.inf)] * 5 + [("fix", 0.0)]
    assert not _kkt_certificate(p, x, pattern)
    assert _kkt_certificate(p, o.x, pattern)


def test_brute_force_matches_pipeline(rng):
    for _ in range(8):
        p = random_instance(rng, nodes=(4, 5), links=(6, 7))
        o = brute_force_primal(p)
        s = solve(p, SolverConfig(grad_tol=1e-12))
        assert o.certified
        np.testing.assert_allclose(o.x, s.x, atol=1e-7)
        assert o.value == pytest.approx(s.p, abs=1e-8)


def test_enumeration_limit():
    rng = np.random.default_rng(0)
    p = random_instance(rng, nodes=(8, 8), links=(17, 17))
    with pytest.raises(EnumerationLimitError):
        brute_force_primal(p)


@pytest.mark.parametrize("c1,c2", [(0.0, 0.0), (-2.0, 4.0), (3.0, -1.5), (1.0, 1.0)])
def test_two_link_closed_form(c1, c2):
    u, x = two_link_closed_form(c1, c2)
    # conservation and optimality of both links by hand
    assert x[0] - x[1] == pytest.approx(1.0, abs=1e-14)
    assert x[0] == pytest.approx(math.exp(-u - c1 - 1), rel=1e-13)
    assert x[1] == pytest.approx(math.exp(u - c2 - 1), rel=1e-13)
    o = brute_force_primal(two_link_problem(c1, c2))
    np.testing.assert_allclose(o.x, x, atol=1e-10)


def test_two_link_value_at_zero():
    u, x = two_link_closed_form(0.0, 0.0)
    assert x[0] == pytest.approx((math.sqrt(1 + 4 * math.exp(-2)) + 1) / 2, abs=1e-15)
    assert x[0] == pytest.approx(1.1207538, abs=1e-7)


def test_two_link_jacobian_matches_fd():
    for c1, c2 in [(0.0, 0.0), (-1.0, 2.0)]:
        F = finite_difference_jacobian(two_link_problem(c1, c2))
        np.testing.assert_allclose(F, two_link_jacobian(c1, c2), atol=1e-7)


def test_circuit_solve_kirchhoff():
    net = Network.from_links([("a", 0, 1), ("b", 1, 2), ("c", 0, 2), ("d", 2, 0)])
    R = np.array([1.0, 2.0, 4.0, 3.0])
    dem = Demand.single(net, 0, 2)
    u, x = circuit_solve(net, R, dem)
    # source to sink: a+b (3 ohm) parallel to c (4) parallel to reverse d (3)
    A, b = net_incidence(net, dem)
    np.testing.assert_allclose(A @ x, b, atol=1e-14)
    assert x[0] == pytest.approx(x[1])
    # Ohm's law on every link, currents may be negative
    assert x[3] < 0
    assert x[0] * 3.0 == pytest.approx(x[2] * 4.0)
    with pytest.raises(ValueError):
        circuit_solve(net, [1, 1, 1, 0], dem)


def net_incidence(net, dem):
    from purc import build_incidence, reduce

    inc, b = reduce(build_incidence(net), dem)
    return inc.toarray(), b


def test_circuit_disconnected():
    net = Network.from_links([("a", 0, 1), ("b", 2, 3)], nodes=range(4))
    with pytest.raises(np.linalg.LinAlgError):
        circuit_solve(net, 1.0, Demand.single(net, 0, 1))


def test_circuit_matches_purc_on_chain():
    net = Network.from_links([("a", 0, 1), ("b", 1, 2), ("s", 0, 2)])
    R = np.array([0.5, 1.0, 2.0])
    dem = Demand.single(net, 0, 2)
    u, x = circuit_solve(net, R, dem)
    p = Problem(net, [quadratic(beta=r) for r in R], np.zeros(3), dem, require_strongly_connected=False)
    s = solve(p, SolverConfig(grad_tol=1e-13))
    np.testing.assert_allclose(s.x, x, atol=1e-12)
    np.testing.assert_allclose(s.u, u, atol=1e-12)
