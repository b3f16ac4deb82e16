"""Link perturbation functions and their convex conjugates.

Every perturbation ``h`` is convex on the nonnegative reals (``+inf`` below
zero) and superlinear, so its conjugate ``h*`` is finite and differentiable on
the whole real line and ``grad_conj`` maps a link's reduced tension to its flow.

All methods are vectorised over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

__all__ = [
    "LinkPerturbation",
    "BuiltinPerturbation",
    "Scaled",
    "DivergingDualError",
    "ValidationReport",
    "quadratic",
    "entropy",
    "entropy_like",
    "piecewise_quadratic",
    "scaled",
    "from_name",
    "validate",
    "FAMILIES",
    "EXP_CLAMP",
]

EXP_CLAMP = 700.0

QUADRATIC, ENTROPY, ENTROPY_LIKE, PIECEWISE_QUADRATIC = range(4)
CUSTOM = -1


class DivergingDualError(FloatingPointError):
    """A conjugate exponential was asked for an argument above ``EXP_CLAMP``."""


def _check_clamp(s):
    if np.any(s > EXP_CLAMP):
        worst = float(np.max(s))
        raise DivergingDualError(f"conjugate argument {worst:.6g} exceeds {EXP_CLAMP}; dual iterates diverge")


class LinkPerturbation:
    """Interface of a link perturbation ``h`` and its conjugate ``h*``.

    Subclasses must implement :meth:`eval`, :meth:`conj` and :meth:`grad_conj`.
    :meth:`hess_conj` is needed by the Newton solver, :meth:`hess_primal` by
    the sensitivity formulas and :meth:`grad_primal` by the brute-force oracle.
    """

    name = "custom"
    code = CUSTOM
    #: modulus of strong convexity, None if not strongly convex
    strong_convexity: float | None = None
    #: dual points where ``hess_conj`` is undefined
    kink_points: tuple = ()
    #: positive flows where ``h`` fails to be twice differentiable
    primal_breakpoints: tuple = ()

    def eval(self, xi):
        raise NotImplementedError

    def conj(self, eta):
        raise NotImplementedError

    def grad_conj(self, eta):
        raise NotImplementedError

    def hess_conj(self, eta):
        """Return ``(curvature, defined)``; at kinks curvature is the one-sided mean."""
        raise NotImplementedError

    def grad_primal(self, xi, side: int = 1):
        """One-sided derivative of ``h`` (right for ``side=1``, left for ``side=-1``)."""
        raise NotImplementedError

    def hess_primal(self, xi):
        """Second derivative of ``h``; NaN where it does not exist."""
        raise NotImplementedError

    @property
    def activation_threshold(self) -> float:
        """Right derivative of ``h`` at zero; links with tension at or below it carry no flow."""
        return float(self.grad_primal(np.array([0.0]), side=1)[0])

    @property
    def has_hessian(self) -> bool:
        try:
            self.hess_conj(np.zeros(1))
        except NotImplementedError:
            return False
        return True

    def describe(self) -> dict:
        return {"family": self.name}


# -- unit families ---------------------------------------------------------
# Each family is a table of unit (beta = gamma = 1) formulas.


def _q_eval(xi):
    return np.where(xi < 0, np.inf, 0.5 * xi * xi)


def _q_conj(eta):
    p = np.maximum(eta, 0.0)
    return 0.5 * p * p


def _q_grad_conj(eta):
    return np.maximum(eta, 0.0)


def _q_hess_conj(eta):
    curv = np.where(eta > 0, 1.0, 0.0)
    at = eta == 0
    return np.where(at, 0.5, curv), ~at


def _q_grad(xi, side):
    return np.where(xi < 0, np.nan, xi)


def _q_hess(xi):
    return np.where(xi > 0, 1.0, np.nan)


def _e_eval(xi):
    with np.errstate(invalid="ignore"):
        return np.where(xi < 0, np.inf, xlogy(xi, np.maximum(xi, 0.0)))


def _e_conj(eta):
    _check_clamp(eta)
    return np.exp(eta - 1.0)


def _e_hess_conj(eta):
    _check_clamp(eta)
    return np.exp(eta - 1.0), np.ones(np.shape(eta), dtype=bool)


def _e_grad(xi, side):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(xi < 0, np.nan, np.log(xi) + 1.0)


def _e_hess(xi):
    with np.errstate(divide="ignore"):
        return np.where(xi > 0, 1.0 / np.where(xi > 0, xi, 1.0), np.nan)


def _el_eval(xi):
    safe = np.maximum(xi, 0.0)
    return np.where(xi < 0, np.inf, (1.0 + safe) * np.log1p(safe) - safe)


def _el_conj(eta):
    _check_clamp(eta)
    p = np.maximum(eta, 0.0)
    return np.expm1(p) - p


def _el_grad_conj(eta):
    _check_clamp(eta)
    return np.expm1(np.maximum(eta, 0.0))


def _el_hess_conj(eta):
    _check_clamp(eta)
    curv = np.where(eta > 0, np.exp(np.maximum(eta, 0.0)), 0.0)
    at = eta == 0
    return np.where(at, 0.5, curv), ~at


def _el_grad(xi, side):
    return np.where(xi < 0, np.nan, np.log1p(np.maximum(xi, 0.0)))


def _el_hess(xi):
    return np.where(xi > 0, 1.0 / (1.0 + np.maximum(xi, 0.0)), np.nan)


def _pq_eval(xi):
    low = 0.5 * xi * xi
    d = xi - 1.0
    high = 0.5 + 1.5 * d + 0.5 * d * d
    return np.where(xi < 0, np.inf, np.where(xi < 1.0, low, high))


def _pq_conj(eta):
    return np.select(
        [eta < 0, eta < 1.0, eta < 1.5],
        [0.0, 0.5 * eta * eta, eta - 0.5],
        0.5 * eta * eta - 0.5 * eta + 0.625,
    )


def _pq_grad_conj(eta):
    return np.select([eta < 0, eta < 1.0, eta < 1.5], [0.0, eta, 1.0], eta - 0.5)


def _pq_hess_conj(eta):
    curv = np.select([eta < 0, eta < 1.0, eta < 1.5], [0.0, 1.0, 0.0], 1.0)
    at = (eta == 0) | (eta == 1.0) | (eta == 1.5)
    return np.where(at, 0.5, curv), ~at


def _pq_grad(xi, side):
    left = np.where(xi <= 1.0, xi, xi + 0.5)
    right = np.where(xi < 1.0, xi, xi + 0.5)
    return np.where(xi < 0, np.nan, right if side > 0 else left)


def _pq_hess(xi):
    return np.where((xi > 0) & (xi != 1.0), 1.0, np.nan)


@dataclass(frozen=True)
class _Family:
    name: str
    code: int
    eval: object
    conj: object
    grad_conj: object
    hess_conj: object
    grad: object
    hess: object
    mu: float | None
    kinks: tuple
    breakpoints: tuple
    exponential: bool


_TABLE = {
    QUADRATIC: _Family("quadratic", QUADRATIC, _q_eval, _q_conj, _q_grad_conj, _q_hess_conj,
                       _q_grad, _q_hess, 1.0, (0.0,), (), False),
    ENTROPY: _Family("entropy", ENTROPY, _e_eval, _e_conj, _e_conj, _e_hess_conj,
                     _e_grad, _e_hess, None, (), (), True),
    ENTROPY_LIKE: _Family("entropy_like", ENTROPY_LIKE, _el_eval, _el_conj, _el_grad_conj, _el_hess_conj,
                          _el_grad, _el_hess, None, (0.0,), (), True),
    PIECEWISE_QUADRATIC: _Family("piecewise_quadratic", PIECEWISE_QUADRATIC, _pq_eval, _pq_conj,
                                 _pq_grad_conj, _pq_hess_conj, _pq_grad, _pq_hess, 1.0,
                                 (0.0, 1.0, 1.5), (1.0,), False),
}

FAMILIES = {f.name: f.code for f in _TABLE.values()}


def unit_family(code: int) -> _Family:
    return _TABLE[code]


class BuiltinPerturbation(LinkPerturbation):
    """Built-in family scaled as ``beta * h(xi / gamma)``.

    The conjugate of the scaled function is ``beta * h*(gamma * eta / beta)``.
    """

    def __init__(self, code: int, beta: float = 1.0, gamma: float = 1.0):
        if not (beta > 0 and gamma > 0 and np.isfinite(beta) and np.isfinite(gamma)):
            raise ValueError(f"scale parameters must be positive and finite, got beta={beta}, gamma={gamma}")
        self.code = code
        self.beta = float(beta)
        self.gamma = float(gamma)
        fam = _TABLE[code]
        self._fam = fam
        self.name = fam.name
        self.strong_convexity = None if fam.mu is None else fam.mu * self.beta / self.gamma**2
        self.kink_points = tuple(self.beta * k / self.gamma for k in fam.kinks)
        self.primal_breakpoints = tuple(self.gamma * t for t in fam.breakpoints)

    def _inner(self, eta):
        return self.gamma * np.asarray(eta, dtype=float) / self.beta

    def eval(self, xi):
        return self.beta * self._fam.eval(np.asarray(xi, dtype=float) / self.gamma)

    def conj(self, eta):
        return self.beta * self._fam.conj(self._inner(eta))

    def grad_conj(self, eta):
        return self.gamma * self._fam.grad_conj(self._inner(eta))

    def hess_conj(self, eta):
        curv, ok = self._fam.hess_conj(self._inner(eta))
        return self.gamma**2 / self.beta * curv, ok

    def grad_primal(self, xi, side: int = 1):
        return self.beta / self.gamma * self._fam.grad(np.asarray(xi, dtype=float) / self.gamma, side)

    def hess_primal(self, xi):
        return self.beta / self.gamma**2 * self._fam.hess(np.asarray(xi, dtype=float) / self.gamma)

    @property
    def activation_threshold(self) -> float:
        if self.code == ENTROPY:
            return -np.inf
        return 0.0

    @property
    def has_hessian(self) -> bool:
        return True

    def describe(self) -> dict:
        return {"family": self.name, "beta": self.beta, "gamma": self.gamma}

    def __repr__(self):
        if self.beta == 1.0 and self.gamma == 1.0:
            return f"{self.name}()"
        return f"{self.name}(beta={self.beta!r}, gamma={self.gamma!r})"


class Scaled(LinkPerturbation):
    """``beta * base(xi / gamma)`` for an arbitrary (custom) base perturbation."""

    def __init__(self, base: LinkPerturbation, beta: float = 1.0, gamma: float = 1.0):
        if not (beta > 0 and gamma > 0):
            raise ValueError("scale parameters must be positive")
        self.base, self.beta, self.gamma = base, float(beta), float(gamma)
        self.name = base.name
        mu = base.strong_convexity
        self.strong_convexity = None if mu is None else mu * self.beta / self.gamma**2
        self.kink_points = tuple(self.beta * k / self.gamma for k in base.kink_points)
        self.primal_breakpoints = tuple(self.gamma * t for t in base.primal_breakpoints)

    def eval(self, xi):
        return self.beta * self.base.eval(np.asarray(xi, dtype=float) / self.gamma)

    def conj(self, eta):
        return self.beta * self.base.conj(self.gamma * np.asarray(eta, dtype=float) / self.beta)

    def grad_conj(self, eta):
        return self.gamma * self.base.grad_conj(self.gamma * np.asarray(eta, dtype=float) / self.beta)

    def hess_conj(self, eta):
        curv, ok = self.base.hess_conj(self.gamma * np.asarray(eta, dtype=float) / self.beta)
        return self.gamma**2 / self.beta * curv, ok

    def grad_primal(self, xi, side: int = 1):
        return self.beta / self.gamma * self.base.grad_primal(np.asarray(xi, dtype=float) / self.gamma, side)

    def hess_primal(self, xi):
        return self.beta / self.gamma**2 * self.base.hess_primal(np.asarray(xi, dtype=float) / self.gamma)

    @property
    def has_hessian(self) -> bool:
        return self.base.has_hessian

    def describe(self) -> dict:
        return {**self.base.describe(), "beta": self.beta, "gamma": self.gamma}


def quadratic(beta: float = 1.0, gamma: float = 1.0) -> BuiltinPerturbation:
    """Half quadratic ``xi**2 / 2`` on the nonnegative reals."""
    return BuiltinPerturbation(QUADRATIC, beta, gamma)


def entropy(beta: float = 1.0, gamma: float = 1.0) -> BuiltinPerturbation:
    """Negative entropy ``xi * log(xi)``; forces strictly positive flows."""
    return BuiltinPerturbation(ENTROPY, beta, gamma)


def entropy_like(beta: float = 1.0, gamma: float = 1.0) -> BuiltinPerturbation:
    """``(1 + xi) * log(1 + xi) - xi``, with conjugate zero on the negative reals."""
    return BuiltinPerturbation(ENTROPY_LIKE, beta, gamma)


def piecewise_quadratic(beta: float = 1.0, gamma: float = 1.0) -> BuiltinPerturbation:
    """Two quadratic pieces meeting with a kink at ``xi = 1`` (slopes 1 and 3/2)."""
    return BuiltinPerturbation(PIECEWISE_QUADRATIC, beta, gamma)


def scaled(base: LinkPerturbation, beta: float = 1.0, gamma: float = 1.0) -> LinkPerturbation:
    if isinstance(base, BuiltinPerturbation):
        return BuiltinPerturbation(base.code, base.beta * beta, base.gamma * gamma)
    return Scaled(base, beta, gamma)


def from_name(name: str, beta: float | None = None, gamma: float | None = None) -> BuiltinPerturbation:
    try:
        code = FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown perturbation family {name!r}; expected one of {sorted(FAMILIES)}") from None
    return BuiltinPerturbation(code, 1.0 if beta is None else beta, 1.0 if gamma is None else gamma)


# -- numerical audit --------------------------------------------------------


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    conjugacy_residual: float = 0.0
    monotonicity_violations: int = 0
    superlinearity_ratios: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": list(self.violations),
            "conjugacy_residual": self.conjugacy_residual,
            "monotonicity_violations": self.monotonicity_violations,
            "superlinearity_ratios": list(self.superlinearity_ratios),
        }


def validate(p: LinkPerturbation, dual_grid=None, primal_grid=None, tol: float = 1e-10) -> ValidationReport:
    """Audit the interface invariants of ``p`` numerically.

    Checks finiteness of the conjugate, the identity
    ``conj(eta) = grad_conj(eta) * eta - eval(grad_conj(eta))``, monotonicity
    and nonnegativity of ``grad_conj``, convexity of ``eval`` on the primal grid,
    ``eval = inf`` below zero, and superlinear growth. Never raises for a
    failed check; failures are collected in the report.
    """
    report = ValidationReport()
    eta = np.linspace(-10.0, 10.0, 201) if dual_grid is None else np.sort(np.asarray(dual_grid, dtype=float))
    xi = np.geomspace(1e-6, 1e4, 200) if primal_grid is None else np.sort(np.asarray(primal_grid, dtype=float))
    if len(eta) < 100 or len(xi) < 100:
        report.violations.append("grids must contain at least 100 points")

    try:
        hc = np.asarray(p.conj(eta), dtype=float)
        g = np.asarray(p.grad_conj(eta), dtype=float)
        hg = np.asarray(p.eval(g), dtype=float)
    except Exception as exc:  # noqa: BLE001 - audit reports, never aborts
        report.violations.append(f"evaluation failed: {exc!r}")
        return report

    if not np.all(np.isfinite(hc)):
        report.violations.append("conjugate is not finite on the dual grid")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        report.violations.append("grad_conj leaves the nonnegative reals")
    with np.errstate(invalid="ignore"):
        resid = np.abs(hc - (g * eta - hg)) / np.maximum(1.0, np.abs(hc))
    report.conjugacy_residual = float(np.nanmax(resid)) if resid.size else 0.0
    if not report.conjugacy_residual <= tol or np.any(np.isnan(resid)):
        report.violations.append(f"conjugacy identity residual {report.conjugacy_residual:.3g} exceeds {tol:g}")

    drops = np.diff(g) < -tol * np.maximum(1.0, np.abs(g[:-1]))
    report.monotonicity_violations = int(np.count_nonzero(drops))
    if report.monotonicity_violations:
        report.violations.append(f"grad_conj decreases at {report.monotonicity_violations} grid points")

    try:
        hneg = np.asarray(p.eval(np.array([-1.0, -1e-3])), dtype=float)
        if not np.all(np.isposinf(hneg)):
            report.violations.append("eval is finite for negative flow")
        hx = np.asarray(p.eval(xi), dtype=float)
        # convexity via slopes of secants on a nonuniform grid
        slopes = np.diff(hx) / np.diff(xi)
        if np.any(np.diff(slopes) < -tol * np.maximum(1.0, np.abs(slopes[:-1]))):
            report.violations.append("eval is not convex on the primal grid")
        probe = np.array([10.0, 1e2, 1e3, 1e4])
        ratios = np.asarray(p.eval(probe), dtype=float) / probe
        report.superlinearity_ratios = [float(r) for r in ratios]
        if not np.all(np.diff(ratios) > 0):
            report.violations.append("eval(xi)/xi is not strictly increasing (not superlinear)")
    except Exception as exc:  # noqa: BLE001
        report.violations.append(f"primal evaluation failed: {exc!r}")
    return report
