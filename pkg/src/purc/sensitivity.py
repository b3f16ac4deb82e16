"""Jacobian of the optimal flow with respect to link costs.

On the active links the Jacobian block can be written three equivalent ways:

* nullspace form   ``-N (N^T D N)^{-1} N^T`` with ``N`` a basis of ker(A_act);
* Laplacian form   ``-[D^-1 - D^-1 A^T L^+ A D^-1]`` with ``L = A D^-1 A^T``;
* reduced form     as the Laplacian form restricted to nodes touched by
  active links, where ``L`` becomes invertible (single origin-destination).

``D`` is the diagonal of primal curvatures ``h_e''(x_e)`` on active links.
Rows and columns of inactive links are zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .dual import SolverConfig
from .flows import FlowSolution, solve, support
from .problem import Problem

__all__ = [
    "ActivePartition",
    "JacobianResult",
    "CurvatureUndefinedError",
    "GenericityError",
    "SupportChangedError",
    "InvariantViolation",
    "active_partition",
    "genericity_margins",
    "nullspace_basis",
    "jacobian_nullspace",
    "jacobian_laplacian",
    "jacobian_reduced",
    "jacobian",
    "directional_flow_response",
    "finite_difference_jacobian",
    "method_agreement",
]

log = logging.getLogger(__name__)

GENERICITY_MARGIN = 1e-6
SVD_RTOL = 1e-10
DENSE_LAPLACIAN_LIMIT = 500


class CurvatureUndefinedError(ValueError):
    """An active flow sits where its perturbation has no positive second derivative."""


class GenericityError(ValueError):
    """The cost vector is too close to a change of the active set."""

    def __init__(self, message, margins):
        super().__init__(message)
        self.margins = margins


class SupportChangedError(RuntimeError):
    """A finite-difference bump changed the set of active links."""


class InvariantViolation(RuntimeError):
    pass


@dataclass
class ActivePartition:
    active: np.ndarray
    inactive: np.ndarray
    A_act: np.ndarray
    curvature: np.ndarray
    margins: dict

    @property
    def permutation(self) -> np.ndarray:
        return np.concatenate([self.active, self.inactive])

    @property
    def inv_curvature(self) -> np.ndarray:
        return 1.0 / self.curvature


@dataclass
class JacobianResult:
    matrix: np.ndarray
    block: np.ndarray
    active: np.ndarray
    method: str
    k: int

    def apply(self, dc) -> np.ndarray:
        return self.matrix @ np.asarray(dc, dtype=float)


def genericity_margins(problem: Problem, solution: FlowSolution) -> dict:
    """Distances of the solution from a change of support.

    ``inactive`` is the smallest gap ``threshold_e - tension_e`` over inactive
    links, ``active`` the smallest active flow and ``kink`` the smallest
    distance of an active flow from a primal breakpoint.
    """
    act = solution.active_set
    inact = np.setdiff1d(np.arange(problem.n_links), act)
    thr = np.array([problem.perturbations[e].activation_threshold for e in inact])
    gaps = thr - solution.eta[inact]
    kink = np.inf
    for e in act:
        for t in problem.perturbations[e].primal_breakpoints:
            kink = min(kink, abs(solution.x[e] - t))
    return {
        "inactive": float(np.min(gaps)) if gaps.size else np.inf,
        "active": float(np.min(solution.x[act])) if act.size else np.inf,
        "kink": float(kink),
    }


def active_partition(
    problem: Problem, solution: FlowSolution, margin: float = GENERICITY_MARGIN, check_margin: bool = True
) -> ActivePartition:
    act = solution.active_set
    inact = np.setdiff1d(np.arange(problem.n_links), act)
    margins = genericity_margins(problem, solution)
    if margins["kink"] <= 1e-9 * max(1.0, float(np.max(solution.x, initial=0.0))):
        raise CurvatureUndefinedError("an active flow sits on a kink of its perturbation")
    curv = np.empty(act.size)
    for i, e in enumerate(act):
        curv[i] = float(np.asarray(problem.perturbations[e].hess_primal(solution.x[e : e + 1]))[0])
    bad = ~(np.isfinite(curv) & (curv > 0))
    if np.any(bad):
        lid = problem.network.link_ids[act[np.argmax(bad)]]
        raise CurvatureUndefinedError(f"no positive curvature at the flow of active link {lid!r}")
    if check_margin and min(margins.values()) <= margin:
        raise GenericityError(
            f"genericity guard failed: inactive margin {margins['inactive']:.3g}, "
            f"smallest active flow {margins['active']:.3g}, "
            f"distance to a primal kink {margins['kink']:.3g} (need > {margin:g})",
            margins,
        )
    A_act = problem.A[:, act].toarray()
    return ActivePartition(active=act, inactive=inact, A_act=A_act, curvature=curv, margins=margins)


def nullspace_basis(A_act: np.ndarray, method: str = "svd", rtol: float = SVD_RTOL) -> np.ndarray:
    """Orthonormal basis of ker(A_act) as columns; singular values below ``rtol * s_max`` count as zero."""
    A_act = np.atleast_2d(np.asarray(A_act, dtype=float))
    n_rows, n_cols = A_act.shape
    if n_cols == 0:
        return np.zeros((0, 0))
    if method == "svd":
        _, s, vt = np.linalg.svd(A_act, full_matrices=True)
        cut = rtol * (s[0] if s.size else 0.0)
        rank = int(np.count_nonzero(s > cut)) if s.size and s[0] > 0 else 0
        return vt[rank:].T.copy()
    if method == "qr":
        q, r, _ = sla.qr(A_act.T, mode="full", pivoting=True)
        diag = np.abs(np.diag(r)) if r.size else np.zeros(0)
        cut = rtol * (diag[0] if diag.size else 0.0)
        rank = int(np.count_nonzero(diag > cut)) if diag.size and diag[0] > 0 else 0
        return q[:, rank:].copy()
    raise ValueError(f"unknown nullspace method {method!r}")


def _embed(problem: Problem, part: ActivePartition, block: np.ndarray, method: str, k: int) -> JacobianResult:
    m = problem.n_links
    J = np.zeros((m, m))
    J[np.ix_(part.active, part.active)] = block
    return JacobianResult(matrix=J, block=block, active=part.active, method=method, k=k)


def _partition(problem, solution, partition, check_margin):
    if partition is not None:
        return partition
    return active_partition(problem, solution, check_margin=check_margin)


def jacobian_nullspace(problem: Problem, solution: FlowSolution, basis: str = "svd",
                       partition: ActivePartition | None = None, check_margin: bool = True) -> JacobianResult:
    part = _partition(problem, solution, partition, check_margin)
    N = nullspace_basis(part.A_act, method=basis)
    k = N.shape[1]
    na = part.active.size
    if k == 0:
        return _embed(problem, part, np.zeros((na, na)), "nullspace", 0)
    NtDN = N.T @ (part.curvature[:, None] * N)
    block = -N @ np.linalg.solve(NtDN, N.T)
    return _embed(problem, part, 0.5 * (block + block.T), "nullspace", k)


def _laplacian_block(A, dinv, solve_L):
    ADinv = A * dinv
    inner = ADinv.T @ solve_L(ADinv)
    block = -(np.diag(dinv) - inner)
    return 0.5 * (block + block.T)


def jacobian_laplacian(problem: Problem, solution: FlowSolution,
                       partition: ActivePartition | None = None, check_margin: bool = True) -> JacobianResult:
    part = _partition(problem, solution, partition, check_margin)
    A, dinv = part.A_act, part.inv_curvature
    L = (A * dinv) @ A.T
    Lp = np.linalg.pinv(L, rcond=SVD_RTOL, hermitian=True)
    block = _laplacian_block(A, dinv, lambda B: Lp @ B)
    k = part.active.size - np.linalg.matrix_rank(A, tol=SVD_RTOL * max(1.0, np.abs(A).max(initial=0.0)))
    return _embed(problem, part, block, "laplacian", int(k))


def jacobian_reduced(problem: Problem, solution: FlowSolution,
                     partition: ActivePartition | None = None, check_margin: bool = True) -> JacobianResult:
    """Laplacian form on the nodes touched by active links; needs single origin-destination demand."""
    if not problem.is_single_od:
        raise ValueError("the reduced-Laplacian form applies only to single origin-destination demand")
    part = _partition(problem, solution, partition, check_margin)
    rows = np.flatnonzero(np.any(part.A_act != 0, axis=1))
    A = part.A_act[rows]
    dinv = part.inv_curvature
    if rows.size == 0:
        raise InvariantViolation("no active link touches a non-destination node")
    LR = (A * dinv) @ A.T
    try:
        factor = sla.cho_factor(LR, lower=True)
    except np.linalg.LinAlgError:
        raise InvariantViolation("reduced Laplacian is singular") from None
    if np.linalg.cond(LR) > 1e12:
        raise InvariantViolation("reduced Laplacian is numerically singular")
    block = _laplacian_block(A, dinv, lambda B: sla.cho_solve(factor, B))
    k = part.active.size - rows.size
    return _embed(problem, part, block, "reduced_laplacian", int(k))


_METHODS = {
    "nullspace": jacobian_nullspace,
    "laplacian": jacobian_laplacian,
    "reduced": jacobian_reduced,
    "reduced_laplacian": jacobian_reduced,
}


def jacobian(problem: Problem, solution: FlowSolution, method: str = "laplacian", check_margin: bool = True):
    """One Jacobian, or with ``method="all"`` a dict of all applicable forms."""
    part = active_partition(problem, solution, check_margin=check_margin)
    if method == "all":
        out = {
            "nullspace": jacobian_nullspace(problem, solution, partition=part),
            "laplacian": jacobian_laplacian(problem, solution, partition=part),
        }
        if problem.is_single_od:
            out["reduced"] = jacobian_reduced(problem, solution, partition=part)
        return out
    try:
        fn = _METHODS[method]
    except KeyError:
        raise ValueError(f"unknown Jacobian method {method!r}") from None
    return fn(problem, solution, partition=part)


def method_agreement(results: dict) -> float:
    """Largest entrywise discrepancy among several Jacobians."""
    mats = [r.matrix for r in results.values()]
    worst = 0.0
    for i in range(len(mats)):
        for j in range(i + 1, len(mats)):
            worst = max(worst, float(np.max(np.abs(mats[i] - mats[j]))))
    return worst


def _kernel_indicators(problem: Problem, active: np.ndarray) -> np.ndarray:
    """Indicator vectors (columns) of active-subgraph components missing the reference node."""
    net = problem.network
    n = net.n_nodes
    t, h = net.tails[active], net.heads[active]
    g = sp.coo_matrix((np.ones(active.size), (t, h)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    rows = problem.incidence.rows
    ref_label = labels[problem.demand.reference]
    comps = [c for c in np.unique(labels[rows]) if c != ref_label]
    K = np.zeros((rows.size, len(comps)))
    for j, c in enumerate(comps):
        K[labels[rows] == c, j] = 1.0
        K[:, j] /= np.linalg.norm(K[:, j])
    return K


def directional_flow_response(problem: Problem, solution: FlowSolution, dc, solver: str = "auto",
                              check_margin: bool = True, partition: ActivePartition | None = None,
                              rtol: float = 1e-12) -> np.ndarray:
    """First-order flow change ``J @ dc`` without forming the Jacobian.

    Follows three steps on the active links: the link-wise response
    ``-D^-1 dc``, a minimum-norm potential solve ``L u = A dx``, and the
    feasibility correction ``dx - D^-1 A^T u``. ``solver`` is ``"dense"``
    (pseudoinverse), ``"cg"`` (conjugate gradients with the known kernel of
    ``L`` deflated) or ``"auto"``.
    """
    dc = np.asarray(dc, dtype=float)
    if dc.shape != (problem.n_links,):
        raise ValueError(f"cost perturbation must have shape ({problem.n_links},)")
    part = _partition(problem, solution, partition, check_margin)
    act = part.active
    dinv = part.inv_curvature
    dx_free = -dinv * dc[act]
    if solver == "auto":
        solver = "dense" if problem.n_potentials <= DENSE_LAPLACIAN_LIMIT else "cg"
    if solver == "dense":
        A = part.A_act
        rhs = A @ dx_free
        L = (A * dinv) @ A.T
        u = np.linalg.lstsq(L, rhs, rcond=SVD_RTOL)[0]
        corr = dinv * (A.T @ u)
    elif solver == "cg":
        A = problem.A[:, act].tocsr()
        rhs = A @ dx_free
        L = (A @ sp.diags(dinv) @ A.T).tocsr()
        K = _kernel_indicators(problem, act)

        def project(v):
            return v - K @ (K.T @ v) if K.shape[1] else v

        op = spla.LinearOperator(L.shape, matvec=lambda v: project(L @ project(v)), dtype=float)
        u, info = spla.cg(op, project(rhs), rtol=rtol, atol=0.0, maxiter=10 * L.shape[0])
        if info != 0:
            raise InvariantViolation(f"conjugate gradients did not converge (info={info})")
        u = project(u)
        corr = dinv * (A.T @ u)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    out = np.zeros(problem.n_links)
    out[act] = dx_free - corr
    return out


def finite_difference_jacobian(problem: Problem, costs=None, step: float = 1e-5,
                               config: SolverConfig | None = None) -> np.ndarray:
    """Central differences of the recovered flow over per-link cost bumps.

    Raises :class:`SupportChangedError` if any bump changes the active set,
    since the flow is then not differentiable along that direction.
    """
    base = problem if costs is None else problem.with_costs(costs)
    cfg = config or SolverConfig(method="auto", grad_tol=1e-12)
    ref = solve(base, cfg)
    S = set(ref.active_set.tolist())
    m = base.n_links
    J = np.zeros((m, m))
    warm = ref.u
    for j in range(m):
        cols = []
        for sign in (1.0, -1.0):
            c = base.costs.copy()
            c[j] += sign * step
            run = SolverConfig(**{**cfg.__dict__, "u0": warm})
            sol = solve(base.with_costs(c), run)
            if set(support(sol.x).tolist()) != S:
                raise SupportChangedError(f"bumping the cost of link {base.network.link_ids[j]!r} changes the support")
            cols.append(sol.x)
        J[:, j] = (cols[0] - cols[1]) / (2 * step)
    return J
