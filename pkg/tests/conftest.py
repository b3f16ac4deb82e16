import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("purc", deadline=None, max_examples=40, derandomize=True, print_blob=True)
settings.load_profile("purc")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def four_node():
    from purc.datasets import four_node_problem

    return four_node_problem()


@pytest.fixture
def four_node_solution(four_node):
    from purc import SolverConfig, solve

    return solve(four_node, SolverConfig(method="newton", grad_tol=1e-12))
