"""The traveler's problem: network, link costs, perturbations and demand."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from . import kernels
from .network import (
    Demand,
    Incidence,
    Network,
    NetworkError,
    build_incidence,
    reduce,
    unreachable_pair,
)
from .perturbation import CUSTOM, DivergingDualError, LinkPerturbation

__all__ = ["Problem", "ConnectivityError", "LinkEvaluation"]


class ConnectivityError(NetworkError):
    """The network is not strongly connected."""

    def __init__(self, pair):
        self.pair = pair
        super().__init__(f"network is not strongly connected: no positive path {pair[0]!r} -> {pair[1]!r}")


@dataclass
class LinkEvaluation:
    """Everything one pass over the links yields at a potential ``u``."""

    value: float
    grad: np.ndarray
    x: np.ndarray
    eta: np.ndarray
    curv: np.ndarray | None = None
    kink: np.ndarray | None = None


class Problem:
    """Minimise ``<c, x> + sum_e h_e(x_e)`` over nonnegative flows with ``A x = b``.

    Parameters
    ----------
    network : Network
    perturbations : LinkPerturbation or sequence of them, one per link
    costs : array_like, shape (n_links,)
    demand : Demand
    require_strongly_connected : bool
        Reject networks that are not strongly connected. Disable only for
        networks known to admit a strictly positive feasible flow.
    """

    def __init__(
        self,
        network: Network,
        perturbations: LinkPerturbation | Sequence[LinkPerturbation],
        costs,
        demand: Demand,
        require_strongly_connected: bool = True,
        _connected: bool | None = None,
    ):
        self.network = network
        m = network.n_links
        if isinstance(perturbations, LinkPerturbation):
            perturbations = [perturbations] * m
        self.perturbations = tuple(perturbations)
        if len(self.perturbations) != m:
            raise ValueError(f"expected {m} perturbations, got {len(self.perturbations)}")
        self.costs = np.array(costs, dtype=float).reshape(-1)
        if self.costs.shape != (m,):
            raise ValueError(f"expected {m} costs, got shape {self.costs.shape}")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("link costs must be finite")
        self.demand = demand
        self.full_incidence: Incidence = build_incidence(network)
        self.incidence, self.b = reduce(self.full_incidence, demand)
        self.A = self.incidence.matrix

        if _connected is None:
            pair = unreachable_pair(network)
            self.strongly_connected = pair is None
            if pair is not None and require_strongly_connected:
                raise ConnectivityError(pair)
        else:
            self.strongly_connected = _connected
        self.require_strongly_connected = require_strongly_connected

        # kernel arrays: the reference node maps to index n (potential 0)
        n = network.n_nodes - 1
        pos = np.full(network.n_nodes, n, dtype=np.intp)
        pos[self.incidence.rows] = np.arange(n)
        self._tail = np.ascontiguousarray(pos[network.tails])
        self._head = np.ascontiguousarray(pos[network.heads])
        self._code = np.array([p.code for p in self.perturbations], dtype=np.intc)
        self._beta = np.array([getattr(p, "beta", 1.0) for p in self.perturbations], dtype=float)
        self._gamma = np.array([getattr(p, "gamma", 1.0) for p in self.perturbations], dtype=float)
        self._custom = np.flatnonzero(self._code == CUSTOM)

    # -- construction helpers ---------------------------------------------

    @classmethod
    def single_od(cls, network, perturbations, costs, origin: Hashable, destination: Hashable, **kw) -> "Problem":
        return cls(network, perturbations, costs, Demand.single(network, origin, destination), **kw)

    def with_costs(self, costs) -> "Problem":
        """Same network, perturbations and demand with new link costs."""
        return Problem(
            self.network,
            self.perturbations,
            costs,
            self.demand,
            require_strongly_connected=self.require_strongly_connected,
            _connected=self.strongly_connected,
        )

    @property
    def n_potentials(self) -> int:
        return self.network.n_nodes - 1

    @property
    def n_links(self) -> int:
        return self.network.n_links

    @property
    def has_hessian(self) -> bool:
        return all(p.has_hessian for p in self.perturbations)

    @property
    def is_single_od(self) -> bool:
        return self.demand.is_single_od

    def links_of(self, code: int) -> np.ndarray:
        return np.flatnonzero(self._code == code)

    # -- evaluation ---------------------------------------------------------

    def tension(self, u) -> np.ndarray:
        """Reduced tensions ``<a_e, u> - c_e`` for all links."""
        u_ext = np.append(np.asarray(u, dtype=float), 0.0)
        return u_ext[self._head] - u_ext[self._tail] - self.costs

    def evaluate(self, u, want_curv: bool = False, backend=None) -> LinkEvaluation:
        """Dual value, excess demand, recovered flows and optionally curvatures at ``u``."""
        u = np.ascontiguousarray(u, dtype=float)
        if u.shape != (self.n_potentials,):
            raise ValueError(f"potential must have shape ({self.n_potentials},), got {u.shape}")
        fn = kernels.evaluate if backend is None else kernels.get_backend(backend)
        total, grad, x, eta, curv, kink, bad = fn(
            u, self.b, self._tail, self._head, self.costs, self._code, self._beta, self._gamma, want_curv
        )
        if bad >= 0:
            raise DivergingDualError(
                f"link {self.network.link_ids[bad]!r}: conjugate argument exceeds clamp (tension {eta[bad]:.6g})"
            )
        if want_curv:
            kink = kink.astype(bool)
        parts = [total]
        if self._custom.size:
            idx = self._custom
            for e in idx:
                p = self.perturbations[e]
                ee = eta[e : e + 1]
                xe = float(np.asarray(p.grad_conj(ee))[0])
                x[e] = xe
                parts.append(float(np.asarray(p.conj(ee))[0]))
                t, h = self._tail[e], self._head[e]
                if t < self.n_potentials:
                    grad[t] += xe
                if h < self.n_potentials:
                    grad[h] -= xe
                if want_curv:
                    cv, ok = p.hess_conj(ee)
                    curv[e] = float(np.asarray(cv)[0])
                    kink[e] = not bool(np.asarray(ok)[0])
        value = float(np.dot(self.b, u)) - math.fsum(parts)
        return LinkEvaluation(value=value, grad=grad, x=x, eta=eta, curv=curv, kink=kink)

    def describe(self) -> dict:
        net = self.network
        links = []
        for e, (lid, v, w) in enumerate(net.links()):
            links.append({"id": lid, "from": v, "to": w, "cost": float(self.costs[e]),
                          **self.perturbations[e].describe()})
        demand = {"nodes": list(net.nodes), "b": [float(v) for v in self.demand.full],
                  "reference": net.nodes[self.demand.reference]}
        if self.demand.is_single_od:
            demand["origin"] = net.nodes[self.demand.origin]
            demand["destination"] = net.nodes[self.demand.destination]
        return {"links": links, "demand": demand}
