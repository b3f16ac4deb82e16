"""Perturbed utility route choice via its concave dual.

The package solves the traveler's flow problem by maximising the
unconstrained dual over node potentials, recovers the optimal link flows
through the conjugates of the link perturbations, and differentiates the
optimal flow with respect to link costs.
"""

from .dual import (
    DualReport,
    SolverConfig,
    dual_gradient,
    dual_hessian,
    dual_objective,
    solve_dual,
    solve_gradient_ascent,
    solve_newton,
)
from .flows import FlowSolution, duality_gap, primal_value, recover_flow, solve, support
from .kernels import BACKEND
from .network import (
    Demand,
    Incidence,
    Network,
    NetworkError,
    build_incidence,
    is_strongly_connected,
    positive_path_flow,
    reduce,
)
from .perturbation import (
    LinkPerturbation,
    entropy,
    entropy_like,
    piecewise_quadratic,
    quadratic,
    scaled,
    validate,
)
from .problem import ConnectivityError, Problem

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConnectivityError",
    "Demand",
    "DualReport",
    "FlowSolution",
    "Incidence",
    "LinkPerturbation",
    "Network",
    "NetworkError",
    "Problem",
    "SolverConfig",
    "build_incidence",
    "dual_gradient",
    "dual_hessian",
    "dual_objective",
    "duality_gap",
    "entropy",
    "entropy_like",
    "is_strongly_connected",
    "piecewise_quadratic",
    "positive_path_flow",
    "primal_value",
    "quadratic",
    "recover_flow",
    "reduce",
    "scaled",
    "solve",
    "solve_dual",
    "solve_gradient_ascent",
    "solve_newton",
    "support",
    "validate",
]
