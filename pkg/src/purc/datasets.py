"""Small reference instances with known solutions."""

from __future__ import annotations

import numpy as np

from .network import Demand, Network
from .perturbation import entropy, entropy_like, piecewise_quadratic, quadratic
from .problem import Problem

__all__ = [
    "four_node_network",
    "four_node_problem",
    "FOUR_NODE_COSTS",
    "FOUR_NODE_POTENTIAL",
    "FOUR_NODE_FLOW",
    "FOUR_NODE_JACOBIAN",
    "two_link_network",
    "two_link_problem",
    "random_strongly_connected",
    "random_instance",
    "BUILTIN_FAMILIES",
]

FOUR_NODE_LINKS = [((1, 2), 1, 2), ((1, 3), 1, 3), ((2, 3), 2, 3), ((2, 4), 2, 4), ((3, 4), 3, 4), ((4, 1), 4, 1)]
FOUR_NODE_COSTS = np.array([1.0, 2.0, 0.9, 2.0, 1.0, 1.0])
FOUR_NODE_POTENTIAL = np.array([-4.0, -2.475, -1.525])
FOUR_NODE_FLOW = np.array([0.525, 0.475, 0.050, 0.475, 0.525, 0.0])
FOUR_NODE_JACOBIAN = np.array(
    [
        [-0.375, 0.375, -0.250, -0.125, 0.125, 0.0],
        [0.375, -0.375, 0.250, 0.125, -0.125, 0.0],
        [-0.250, 0.250, -0.500, 0.250, -0.250, 0.0],
        [-0.125, 0.125, 0.250, -0.375, 0.375, 0.0],
        [0.125, -0.125, -0.250, 0.375, -0.375, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    ]
)


def four_node_network() -> Network:
    """Four nodes, six links: (1,2), (1,3), (2,3), (2,4), (3,4), (4,1)."""
    return Network.from_links(FOUR_NODE_LINKS, nodes=[1, 2, 3, 4])


def four_node_problem(costs=None, perturbation=None) -> Problem:
    """Half-quadratic links, trip from node 1 to node 4."""
    net = four_node_network()
    return Problem.single_od(
        net,
        quadratic() if perturbation is None else perturbation,
        FOUR_NODE_COSTS if costs is None else costs,
        origin=1,
        destination=4,
    )


def two_link_network() -> Network:
    """Nodes v1, v2; link e1 from v1 to v2 and link e2 back."""
    return Network.from_links([("e1", "v1", "v2"), ("e2", "v2", "v1")])


def two_link_problem(c1: float, c2: float, perturbation=None) -> Problem:
    return Problem.single_od(
        two_link_network(), entropy() if perturbation is None else perturbation, [c1, c2], "v1", "v2"
    )


def random_strongly_connected(rng: np.random.Generator, n_nodes: int, n_links: int) -> Network:
    """Random cycle through all nodes plus extra random links (parallels allowed)."""
    if n_links < n_nodes:
        raise ValueError("need at least as many links as nodes")
    order = rng.permutation(n_nodes)
    links = [(f"e{k}", int(order[k]), int(order[(k + 1) % n_nodes])) for k in range(n_nodes)]
    while len(links) < n_links:
        v, w = rng.choice(n_nodes, size=2, replace=False)
        links.append((f"e{len(links)}", int(v), int(w)))
    perm = rng.permutation(n_links)
    links = [(f"e{k}", links[i][1], links[i][2]) for k, i in enumerate(perm)]
    return Network.from_links(links, nodes=range(n_nodes))


def demand_for(net: Network, origin, destination) -> Demand:
    return Demand.single(net, origin, destination)


BUILTIN_FAMILIES = (quadratic(), entropy(), entropy_like(), piecewise_quadratic())


def random_instance(rng: np.random.Generator, nodes=(4, 10), links=(6, 16), costs=(-1.0, 3.0),
                    families=BUILTIN_FAMILIES) -> Problem:
    """Random strongly connected single-OD problem with a random family per link.

    Node and link counts are drawn uniformly from the inclusive ranges
    (the link count is at least the node count), costs uniformly from ``costs``.
    """
    n = int(rng.integers(nodes[0], nodes[1] + 1))
    m = int(rng.integers(max(links[0], n), max(links[1], n) + 1))
    net = random_strongly_connected(rng, n, m)
    perts = [families[i] for i in rng.integers(0, len(families), size=m)]
    o, d = rng.choice(n, size=2, replace=False)
    return Problem.single_od(net, perts, rng.uniform(costs[0], costs[1], size=m), int(o), int(d))
