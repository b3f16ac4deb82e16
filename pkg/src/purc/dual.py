"""Dual objective, its derivatives, and ascent methods for optimal potentials.

The dual of the traveler's problem is the unconstrained concave program

    maximise g(u) = <b, u> - sum_e h_e*(<a_e, u> - c_e)

over potentials ``u`` on the non-reference nodes. Its gradient is the excess
demand ``b - A x(u)`` with ``x(u) = grad H*(A^T u - c)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .perturbation import DivergingDualError
from .problem import Problem

__all__ = [
    "SolverConfig",
    "DualReport",
    "dual_objective",
    "dual_gradient",
    "dual_hessian",
    "solve_gradient_ascent",
    "solve_newton",
    "solve_dual",
]

log = logging.getLogger(__name__)

DENSE_NODE_LIMIT = 400
_EPS = np.finfo(float).eps


@dataclass
class SolverConfig:
    method: str = "auto"
    grad_tol: float = 1e-10
    max_iter: int | None = None
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 80
    newton_regularization: float = 1e-10
    #: fixed gradient-ascent step; None selects Armijo backtracking from 1
    step_size: float | None = None
    u0: np.ndarray | None = None
    record_history: bool = False

    def __post_init__(self):
        if self.method not in ("auto", "newton", "damped_newton", "gradient_ascent", "ascent"):
            raise ValueError(f"unknown method {self.method!r}")
        for name in ("grad_tol", "armijo_c1", "newton_regularization"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be strictly positive")

    def resolved_method(self, problem: Problem) -> str:
        m = {"damped_newton": "newton", "ascent": "gradient_ascent"}.get(self.method, self.method)
        if m == "auto":
            m = "newton" if problem.has_hessian else "gradient_ascent"
        return m


@dataclass
class DualReport:
    u: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    method: str
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def p_star(self) -> float:
        return self.value


def dual_objective(problem: Problem, u) -> float:
    return problem.evaluate(u).value


def dual_gradient(problem: Problem, u) -> np.ndarray:
    """Excess demand ``b - A grad H*(A^T u - c)`` at every non-reference node."""
    return problem.evaluate(u).grad


def _curvature_matrix(problem: Problem, curv: np.ndarray, sparse: bool):
    """``A diag(curv) A^T`` assembled from link endpoints.

    Link ``e`` adds ``curv_e`` at (tail, tail) and (head, head) and subtracts
    it at (tail, head) and (head, tail); index ``n`` is the dropped reference
    row.
    """
    n = problem.n_potentials
    t, h = problem._tail, problem._head
    rows = np.concatenate([t, h, t, h])
    cols = np.concatenate([t, h, h, t])
    vals = np.concatenate([curv, curv, -curv, -curv])
    if sparse:
        keep = (rows < n) & (cols < n)
        return sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    M = np.zeros((n + 1) * (n + 1))
    np.add.at(M, rows * (n + 1) + cols, vals)
    return M.reshape(n + 1, n + 1)[:n, :n]


def dual_hessian(problem: Problem, u, sparse: bool = False, return_kinks: bool = False):
    """``-A diag(h*''(tension)) A^T``; kink tensions use the averaged one-sided curvature.

    With ``return_kinks`` also returns the boolean mask of links whose
    tension sits exactly on a kink of their conjugate.
    """
    ev = problem.evaluate(u, want_curv=True)
    H = -_curvature_matrix(problem, ev.curv, sparse)
    if return_kinks:
        return H, ev.kink
    return H


def _safe_eval(problem, u, want_curv=False):
    try:
        return problem.evaluate(u, want_curv=want_curv)
    except DivergingDualError:
        return None


def _line_search(problem, u, ev, direction, slope, cfg, want_curv, t0=1.0):
    """Backtracking Armijo search along ``direction`` with ``slope = <grad, direction>``.

    A trial step is accepted when the Armijo inequality holds for the values,
    or when the directional derivative at the trial point is still at least
    ``c1 * slope``; by concavity the latter implies the Armijo inequality and
    stays reliable when the predicted gain is below rounding level.
    Returns ``(t, evaluation)`` or ``(None, None)``.
    """
    g0 = ev.value
    target = cfg.armijo_c1 * slope
    noise = 8 * _EPS * (1.0 + abs(g0))
    t = t0
    for _ in range(cfg.max_backtracks):
        trial = _safe_eval(problem, u + t * direction, want_curv)
        if trial is not None and np.isfinite(trial.value):
            gain_ok = t * target > noise and trial.value >= g0 + t * target
            with np.errstate(over="ignore", invalid="ignore"):
                slope_t = float(trial.grad @ direction)
            if gain_ok or (np.isfinite(slope_t) and slope_t >= target):
                return t, trial
        t *= cfg.backtrack
    return None, None


def solve_gradient_ascent(problem: Problem, config: SolverConfig | None = None) -> DualReport:
    """Gradient ascent ``u <- u + alpha * grad g(u)`` from ``u0`` (default 0).

    ``config.step_size`` fixes alpha; otherwise alpha is chosen by Armijo
    backtracking from 1 at every iteration.
    """
    cfg = config or SolverConfig(method="gradient_ascent")
    max_iter = cfg.max_iter if cfg.max_iter is not None else 100_000
    u = np.zeros(problem.n_potentials) if cfg.u0 is None else np.array(cfg.u0, dtype=float)
    ev = problem.evaluate(u)
    trace, history = [], []
    it = 0
    while True:
        gnorm = float(np.max(np.abs(ev.grad))) if ev.grad.size else 0.0
        if cfg.record_history:
            history.append((it, ev.value, gnorm))
        log.debug("ascent iter %d: g = %.17g, |grad| = %.3g", it, ev.value, gnorm)
        if gnorm <= cfg.grad_tol:
            return DualReport(u, ev.value, it, gnorm, True, "gradient_ascent", trace, history)
        if it >= max_iter:
            break
        d = ev.grad
        if cfg.step_size is not None:
            u = u + cfg.step_size * d
            ev = problem.evaluate(u)
        else:
            t, trial = _line_search(problem, u, ev, d, float(d @ d), cfg, False)
            if t is None:
                trace.append({"iteration": it, "event": "line search failed"})
                break
            u = u + t * d
            ev = trial
        it += 1
    gnorm = float(np.max(np.abs(ev.grad)))
    log.warning("gradient ascent stopped after %d iterations with |grad| = %.3g", it, gnorm)
    return DualReport(u, ev.value, it, gnorm, False, "gradient_ascent", trace, history)


def _newton_direction(M, grad, lam0, dense):
    """Solve ``(M + lam I) du = grad`` escalating ``lam`` until an ascent direction results."""
    n = grad.shape[0]
    lam = lam0
    for _ in range(25):
        try:
            if dense:
                factor = sla.cho_factor(M + lam * np.eye(n), lower=True, check_finite=False)
                du = sla.cho_solve(factor, grad, check_finite=False)
            else:
                lu = spla.splu((M + lam * sp.identity(n, format="csc")).tocsc())
                du = lu.solve(grad)
        except (np.linalg.LinAlgError, RuntimeError):
            lam *= 10.0
            continue
        if np.all(np.isfinite(du)) and float(grad @ du) > 0:
            return du, lam
        lam *= 10.0
    return None, lam


def solve_newton(problem: Problem, config: SolverConfig | None = None) -> DualReport:
    """Damped Newton ascent on the dual.

    The direction solves ``(-hess g(u) + lam I) du = grad g(u)`` without
    forming an inverse; ``lam`` starts at ``config.newton_regularization`` and
    grows tenfold until the factorisation succeeds and ``du`` ascends. The step
    length comes from Armijo backtracking; when that fails a gradient step is
    tried instead and the event is recorded in the trace. Between iterations
    ``lam`` is adapted Levenberg-Marquardt style: a step shortened to ``t``
    starts the next solve at ``lam / t``, a full step resets it to
    ``config.newton_regularization``.
    """
    cfg = config or SolverConfig(method="newton")
    max_iter = cfg.max_iter if cfg.max_iter is not None else 200
    u = np.zeros(problem.n_potentials) if cfg.u0 is None else np.array(cfg.u0, dtype=float)
    dense = problem.n_potentials <= DENSE_NODE_LIMIT
    ev = problem.evaluate(u, want_curv=True)
    trace, history = [], []
    it = 0
    lam0 = cfg.newton_regularization
    lam_start = lam0
    while True:
        gnorm = float(np.max(np.abs(ev.grad))) if ev.grad.size else 0.0
        if cfg.record_history:
            history.append((it, ev.value, gnorm))
        log.debug("newton iter %d: g = %.17g, |grad| = %.3g", it, ev.value, gnorm)
        if gnorm <= cfg.grad_tol:
            return DualReport(u, ev.value, it, gnorm, True, "newton", trace, history)
        if it >= max_iter:
            break
        M = _curvature_matrix(problem, ev.curv, sparse=not dense)
        du, lam = _newton_direction(M, ev.grad, lam_start, dense)
        t = trial = None
        if du is not None:
            if lam > lam_start * 1.5:
                trace.append({"iteration": it, "event": "regularized", "lambda": lam})
            t, trial = _line_search(problem, u, ev, du, float(ev.grad @ du), cfg, True)
            if t is not None:
                # remember how much damping the last step needed: a step cut
                # to length t behaves like a regularisation of lam / t where
                # the curvature vanishes; full steps relax towards lam0
                lam_start = lam0 if t == 1.0 else lam / t
        if t is None:
            trace.append({"iteration": it, "event": "gradient fallback"})
            du = ev.grad
            t, trial = _line_search(problem, u, ev, du, float(du @ du), cfg, True)
            if t is None:
                trace.append({"iteration": it, "event": "line search failed"})
                break
        u = u + t * du
        ev = trial
        it += 1
    gnorm = float(np.max(np.abs(ev.grad)))
    log.warning("Newton stopped after %d iterations with |grad| = %.3g", it, gnorm)
    return DualReport(u, ev.value, it, gnorm, False, "newton", trace, history)


def solve_dual(problem: Problem, config: SolverConfig | None = None) -> DualReport:
    cfg = config or SolverConfig()
    if cfg.resolved_method(problem) == "newton":
        return solve_newton(problem, cfg)
    return solve_gradient_ascent(problem, cfg)
