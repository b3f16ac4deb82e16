"""Recovery of the optimal flow from an optimal potential, values and support."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dual import DualReport, SolverConfig, solve_dual
from .problem import Problem

__all__ = [
    "FlowSolution",
    "NotOptimalError",
    "NonConvergenceError",
    "recover_flow",
    "primal_value",
    "support",
    "duality_gap",
    "solve",
    "EPS_SUPPORT",
]

EPS_SUPPORT = 1e-8


class NotOptimalError(ValueError):
    """Flow recovery was asked for a potential with large excess demand."""


class NonConvergenceError(RuntimeError):
    def __init__(self, report: DualReport):
        self.report = report
        super().__init__(
            f"{report.method} did not converge in {report.iterations} iterations "
            f"(|grad| = {report.grad_norm:.3g})"
        )


@dataclass
class FlowSolution:
    x: np.ndarray
    u: np.ndarray
    p: float
    p_star: float
    active_set: np.ndarray
    conservation_residual: float
    eta: np.ndarray = field(repr=False)
    report: DualReport | None = field(default=None, repr=False)

    @property
    def gap(self) -> float:
        return self.p - self.p_star

    def active_links(self, problem: Problem) -> list:
        return [problem.network.link_ids[e] for e in self.active_set]


def primal_value(problem: Problem, x) -> float:
    """``<c, x> + H(x)`` with compensated summation; ``inf`` for negative flows."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        return math.inf
    terms = list(problem.costs * x)
    for e, p in enumerate(problem.perturbations):
        terms.append(float(np.asarray(p.eval(x[e : e + 1]))[0]))
    return math.fsum(terms)


def support(x, eps_supp: float = EPS_SUPPORT) -> np.ndarray:
    """Indices of links with flow above ``eps_supp``."""
    return np.flatnonzero(np.asarray(x) > eps_supp)


def recover_flow(
    problem: Problem,
    u,
    grad_tol: float | None = 1e-8,
    eps_supp: float = EPS_SUPPORT,
    report: DualReport | None = None,
) -> FlowSolution:
    """Link-by-link flow ``x_e = h_e*'(<a_e, u> - c_e)`` with values and residuals.

    Raises :class:`NotOptimalError` when the excess demand at ``u`` exceeds
    ``grad_tol`` (pass ``None`` to skip the check). No projection or repair
    of the conservation residual is performed.
    """
    u = np.asarray(u, dtype=float)
    ev = problem.evaluate(u)
    resid = float(np.max(np.abs(ev.grad))) if ev.grad.size else 0.0
    if grad_tol is not None and resid > grad_tol:
        raise NotOptimalError(f"excess demand {resid:.3g} exceeds {grad_tol:g}; potential is not optimal")
    x = ev.x.copy()
    return FlowSolution(
        x=x,
        u=u.copy(),
        p=primal_value(problem, x),
        p_star=ev.value,
        active_set=support(x, eps_supp),
        conservation_residual=resid,
        eta=ev.eta.copy(),
        report=report,
    )


def duality_gap(problem: Problem, x, u=None) -> float:
    """``p(x) - g(u)``; for a :class:`FlowSolution` uses its own potential."""
    if isinstance(x, FlowSolution):
        if u is None:
            return x.p - x.p_star
        x = x.x
    if u is None:
        raise TypeError("a potential is required when passing a bare flow")
    return primal_value(problem, x) - problem.evaluate(np.asarray(u, dtype=float)).value


def solve(problem: Problem, config: SolverConfig | None = None, raise_on_failure: bool = True) -> FlowSolution:
    """Maximise the dual and recover the optimal flow."""
    report = solve_dual(problem, config)
    if not report.converged and raise_on_failure:
        raise NonConvergenceError(report)
    tol = None if not report.converged else max(report.grad_norm, (config or SolverConfig()).grad_tol)
    return recover_flow(problem, report.u, grad_tol=tol, report=report)
