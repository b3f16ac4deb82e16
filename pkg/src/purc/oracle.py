"""Ground-truth solvers used to validate the dual pipeline.

None of these routines touch the conjugates: the brute-force solver works on
the primal perturbations only, the two-link solution is analytic, and the
circuit solver is a single linear solve.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .network import Demand, Network, build_incidence, reduce
from .problem import Problem

__all__ = [
    "OracleSolution",
    "EnumerationLimitError",
    "brute_force_primal",
    "two_link_closed_form",
    "two_link_jacobian",
    "circuit_solve",
]

MAX_LINKS = 16
KKT_TOL = 1e-9


class EnumerationLimitError(ValueError):
    pass


@dataclass
class OracleSolution:
    x: np.ndarray
    value: float
    support: np.ndarray
    certified: bool
    patterns: int
    candidates: int


def _link_states(p):
    """Faces of the nonnegative half-line on which ``p`` is smooth.

    ``("fix", t)`` pins the flow at ``t``; ``("open", lo, hi)`` keeps it in an
    open interval. Zero is skipped when the right derivative at zero is -inf,
    because such a link always carries positive flow at the optimum.
    """
    bps = sorted(t for t in p.primal_breakpoints if t > 0)
    states = []
    if np.isfinite(p.activation_threshold):
        states.append(("fix", 0.0))
    edges = [0.0, *bps, math.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        states.append(("open", lo, hi))
    states.extend(("fix", t) for t in bps)
    return states


def _interior_point(A, b, states):
    """Maximise the slack ``s`` over flows consistent with a partial assignment.

    ``states[e]`` is None for unassigned links (only ``x_e >= 0`` is imposed),
    ``("fix", t)`` pins ``x_e = t`` and ``("open", lo, hi)`` requires
    ``lo + s <= x_e <= hi - s``. Returns ``(x, s)``, with ``x`` None when the
    linear program is infeasible.
    """
    m = A.shape[1]
    cost = np.zeros(m + 1)
    cost[-1] = -1.0
    bounds = []
    rows, rhs = [], []
    for e, st in enumerate(states):
        if st is None:
            bounds.append((0.0, None))
        elif st[0] == "fix":
            bounds.append((st[1], st[1]))
        else:
            bounds.append((None, None))
            row = np.zeros(m + 1)
            row[e], row[-1] = -1.0, 1.0
            rows.append(row)
            rhs.append(-st[1])
            if np.isfinite(st[2]):
                row = np.zeros(m + 1)
                row[e], row[-1] = 1.0, 1.0
                rows.append(row)
                rhs.append(st[2])
    bounds.append((0.0, 1.0))
    A_eq = np.hstack([A, np.zeros((A.shape[0], 1))])
    res = linprog(cost, A_ub=np.array(rows) if rows else None, b_ub=np.array(rhs) if rows else None,
                  A_eq=A_eq, b_eq=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None, 0.0
    return res.x[:m], float(res.x[-1])


def _cells(A, b, per_link, min_slack=1e-9):
    """Yield ``(pattern, x0)`` for every state pattern with a nonempty relative interior.

    Depth-first over links; a prefix whose open states admit no interior point
    is pruned, since assigning further links only adds constraints. ``x0`` is a
    point of the cell with slack above ``min_slack``.
    """
    m = len(per_link)
    states = [None] * m

    def visit(e, x_parent, s_parent):
        if e == m:
            yield tuple(states), x_parent
            return
        for st in per_link[e]:
            states[e] = st
            xe = x_parent[e]
            # the parent's point often already lies strictly inside the child
            if st[0] == "open" and min(s_parent, xe - st[1], st[2] - xe) > min_slack:
                yield from visit(e + 1, x_parent, min(s_parent, xe - st[1], st[2] - xe))
                continue
            if st[0] == "fix" and xe == st[1] and s_parent > min_slack:
                yield from visit(e + 1, x_parent, s_parent)
                continue
            x, s = _interior_point(A, b, states)
            if x is not None and s > min_slack:
                yield from visit(e + 1, x, s)
        states[e] = None

    x, s = _interior_point(A, b, states)
    if x is None:
        return
    yield from visit(0, x, s)


def _nullspace(A):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.count_nonzero(s > 1e-10 * (s[0] if s.size else 0.0)))
    return vt[rank:].T


def _piece_newton(costs, perts, x0, lo, hi, N, tol=1e-12, max_iter=200):
    """Minimise the smooth objective over ``x0 + N z`` inside the open box."""
    x = x0.copy()

    def objective(v):
        return math.fsum(costs * v) + math.fsum(float(p.eval(v[i : i + 1])[0]) for i, p in enumerate(perts))

    f = objective(x)
    for _ in range(max_iter):
        g = costs + np.array([p.grad_primal(x[i : i + 1])[0] for i, p in enumerate(perts)])
        rg = N.T @ g
        if np.max(np.abs(rg)) <= tol * max(1.0, np.max(np.abs(g))):
            return x, True
        h = np.array([p.hess_primal(x[i : i + 1])[0] for i, p in enumerate(perts)])
        if not np.all(np.isfinite(h)):
            return x, False
        M = N.T @ (h[:, None] * N)
        try:
            dz = np.linalg.solve(M, -rg)
        except np.linalg.LinAlgError:
            return x, False
        dx = N @ dz
        # largest step keeping the iterate strictly inside the box
        t_max = math.inf
        for i in range(x.size):
            if dx[i] < 0:
                t_max = min(t_max, (x[i] - lo[i]) / -dx[i])
            elif dx[i] > 0 and np.isfinite(hi[i]):
                t_max = min(t_max, (hi[i] - x[i]) / dx[i])
        t = 1.0 if t_max > 1.0 else 0.99 * t_max
        slope = float(rg @ dz)
        while t > 1e-14:
            xn = x + t * dx
            fn = objective(xn)
            if fn <= f + 1e-4 * t * slope or (abs(t * slope) < 1e-15 * max(1.0, abs(f)) and fn <= f + 1e-14):
                break
            t *= 0.5
        else:
            return x, False
        x, f = xn, fn
    return x, False


def _kkt_certificate(problem, x, states):
    """Feasibility LP for potentials certifying optimality of ``x`` with tolerance ``KKT_TOL``."""
    A = problem.A.toarray()
    c = problem.costs
    n = A.shape[0]
    rows, rhs = [], []
    for e, st in enumerate(states):
        p = problem.perturbations[e]
        a = A[:, e]
        xe = x[e : e + 1]
        if st[0] == "open":
            d = float(p.grad_primal(xe)[0])
            lo_d, hi_d = d, d
        elif st[1] == 0.0:
            lo_d, hi_d = -math.inf, p.activation_threshold
        else:
            lo_d, hi_d = float(p.grad_primal(xe, side=-1)[0]), float(p.grad_primal(xe, side=1)[0])
        # lo_d - tol <= a.u - c_e <= hi_d + tol
        rows.append(a)
        rhs.append(hi_d + c[e] + KKT_TOL)
        if np.isfinite(lo_d):
            rows.append(-a)
            rhs.append(-(lo_d + c[e]) + KKT_TOL)
    res = linprog(np.zeros(n), A_ub=np.array(rows), b_ub=np.array(rhs), bounds=[(None, None)] * n, method="highs")
    return res.status == 0


def brute_force_primal(problem: Problem, max_links: int = MAX_LINKS, certify: bool = True) -> OracleSolution:
    """Solve the primal exactly by enumerating smooth faces of the feasible set.

    Every link is assigned a state (pinned at zero or at a breakpoint of its
    perturbation, or free inside an open smooth piece). For each pattern with
    a nonempty relative interior, damped Newton on the nullspace
    parameterisation ``x = x0 + N z`` finds the stationary point inside the
    face; the cheapest stationary point over all patterns is the optimum.
    """
    m = problem.n_links
    if m > max_links:
        raise EnumerationLimitError(f"{m} links exceed the enumeration bound {max_links}")
    A = problem.A.toarray()
    b = problem.b
    c = problem.costs
    perts = problem.perturbations
    per_link = [_link_states(p) for p in perts]
    best = None
    n_patterns = n_cand = 0
    for pattern, x0 in _cells(A, b, per_link):
        n_patterns += 1
        x = np.array([st[1] if st[0] == "fix" else 0.0 for st in pattern])
        free = [e for e, st in enumerate(pattern) if st[0] == "open"]
        if free:
            Af = A[:, free]
            lo = np.array([pattern[e][1] for e in free])
            hi = np.array([pattern[e][2] for e in free])
            N = _nullspace(Af)
            if N.shape[1] == 0:
                xf, ok = x0[free], True
            else:
                xf, ok = _piece_newton(c[free], [perts[e] for e in free], x0[free], lo, hi, N)
            if not ok or np.any(xf <= lo) or np.any(xf >= hi):
                continue
            x[free] = xf
        n_cand += 1
        val = math.fsum(c * x) + math.fsum(float(p.eval(x[e : e + 1])[0]) for e, p in enumerate(perts))
        if best is None or val < best[1]:
            best = (x.copy(), val, pattern)
    if best is None:
        raise AssertionError("no feasible pattern; the network admits no feasible flow")
    x, val, pattern = best
    certified = _kkt_certificate(problem, x, pattern) if certify else False
    return OracleSolution(
        x=x,
        value=val,
        support=np.flatnonzero(x > 0),
        certified=certified,
        patterns=n_patterns,
        candidates=n_cand,
    )


def _delta(c1, c2):
    return 1.0 + 4.0 * math.exp(-c1 - c2 - 2.0)


def two_link_closed_form(c1: float, c2: float) -> tuple[float, np.ndarray]:
    """Optimal potential of the origin and optimal flows on the two-node, two-link network.

    Both links carry negative-entropy perturbations; the destination
    potential is pinned at zero, so the origin potential is negative.
    """
    root = math.sqrt(_delta(c1, c2))
    u = -(1.0 + c1 + math.log((1.0 + root) / 2.0))
    x = np.array([0.5 * (root + 1.0), 0.5 * (root - 1.0)])
    return u, x


def two_link_jacobian(c1: float, c2: float) -> np.ndarray:
    w = math.exp(-c1 - c2 - 2.0)
    return -(w / math.sqrt(1.0 + 4.0 * w)) * np.ones((2, 2))


def circuit_solve(network: Network, resistances, demand: Demand) -> tuple[np.ndarray, np.ndarray]:
    """Resistive network with unrestricted (signed) currents and zero link costs.

    Solves ``(A R^-1 A^T) u = b`` and returns ``(u, R^-1 A^T u)``; the
    reference node is grounded.
    """
    R = np.broadcast_to(np.asarray(resistances, dtype=float), (network.n_links,))
    if np.any(R <= 0):
        raise ValueError("resistances must be positive")
    inc, b = reduce(build_incidence(network), demand)
    A = inc.toarray()
    L = (A / R) @ A.T
    if np.linalg.matrix_rank(L) < L.shape[0]:
        raise np.linalg.LinAlgError("conductance Laplacian is singular; the network is disconnected")
    u = np.linalg.solve(L, b)
    return u, (A.T @ u) / R
