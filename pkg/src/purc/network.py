"""Directed multigraph, incidence matrices, connectivity and demand vectors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Network",
    "Demand",
    "Incidence",
    "NetworkError",
    "build_incidence",
    "reduce",
    "is_strongly_connected",
    "unreachable_pair",
    "positive_path_flow",
]

DENSE_LINK_LIMIT = 64


class NetworkError(ValueError):
    """Invalid network topology or demand specification."""


@dataclass(frozen=True, eq=False)
class Network:
    """Directed multigraph with ordered nodes and links.

    Node and link ids are arbitrary hashables; dense indices follow
    first-appearance order so matrix layouts are reproducible.
    """

    nodes: tuple
    link_ids: tuple
    tails: np.ndarray = field(repr=False)
    heads: np.ndarray = field(repr=False)

    @classmethod
    def from_links(cls, links: Iterable[Sequence], nodes: Iterable | None = None) -> "Network":
        """Build from ``(link_id, from, to)`` triples.

        ``nodes`` fixes the node order (and may add nodes not touched by any
        link); otherwise nodes are ordered by first appearance in ``links``.
        """
        order: dict = {}
        if nodes is not None:
            for v in nodes:
                if v in order:
                    raise NetworkError(f"duplicate node id {v!r}")
                order[v] = len(order)
        ids, tails, heads = [], [], []
        seen = set()
        for lid, v, w in links:
            if lid in seen:
                raise NetworkError(f"duplicate link id {lid!r}")
            seen.add(lid)
            if v == w:
                raise NetworkError(f"link {lid!r} is a self-loop at node {v!r}")
            for node in (v, w):
                if node not in order:
                    if nodes is not None:
                        raise NetworkError(f"link {lid!r} references unknown node {node!r}")
                    order[node] = len(order)
            ids.append(lid)
            tails.append(order[v])
            heads.append(order[w])
        if len(order) < 2:
            raise NetworkError("a network needs at least two nodes")
        return cls(
            nodes=tuple(order),
            link_ids=tuple(ids),
            tails=np.asarray(tails, dtype=np.intp),
            heads=np.asarray(heads, dtype=np.intp),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_links(self) -> int:
        return len(self.link_ids)

    def node_index(self, node: Hashable) -> int:
        try:
            return self._node_lookup[node]
        except KeyError:
            raise NetworkError(f"unknown node {node!r}") from None

    def link_index(self, link: Hashable) -> int:
        try:
            return self._link_lookup[link]
        except KeyError:
            raise NetworkError(f"unknown link {link!r}") from None

    @property
    def _node_lookup(self) -> dict:
        cache = self.__dict__.get("_nl")
        if cache is None:
            cache = {v: i for i, v in enumerate(self.nodes)}
            object.__setattr__(self, "_nl", cache)
        return cache

    @property
    def _link_lookup(self) -> dict:
        cache = self.__dict__.get("_ll")
        if cache is None:
            cache = {e: i for i, e in enumerate(self.link_ids)}
            object.__setattr__(self, "_ll", cache)
        return cache

    def endpoints(self, link: Hashable) -> tuple:
        e = self.link_index(link)
        return self.nodes[self.tails[e]], self.nodes[self.heads[e]]

    def links(self):
        """Yield ``(link_id, from, to)`` in link order."""
        for lid, t, h in zip(self.link_ids, self.tails, self.heads):
            yield lid, self.nodes[t], self.nodes[h]

    def successors(self) -> list[list[tuple[int, int]]]:
        """Adjacency as ``succ[v] = [(link, w), ...]`` in link order."""
        succ: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
        for e, (t, h) in enumerate(zip(self.tails, self.heads)):
            succ[t].append((e, int(h)))
        return succ


@dataclass(frozen=True, eq=False)
class Demand:
    """Balanced demand over all nodes.

    ``full`` is indexed like ``network.nodes`` and sums to zero. ``reference``
    is the node index whose row is dropped when reducing (the destination in
    the single origin-destination case).
    """

    full: np.ndarray
    reference: int
    origin: int | None = None

    @classmethod
    def single(cls, net: Network, origin: Hashable, destination: Hashable) -> "Demand":
        o = net.node_index(origin)
        d = net.node_index(destination)
        if o == d:
            raise NetworkError("origin and destination must differ")
        b = np.zeros(net.n_nodes)
        b[o], b[d] = -1.0, 1.0
        return cls(full=b, reference=d, origin=o)

    @classmethod
    def balanced(cls, net: Network, values: dict, reference: Hashable | None = None) -> "Demand":
        """General balanced demand from ``{node: b_v}``.

        Unless given, the reference node is the first node with the largest
        entry. A vector with one -1 and one +1 entry is recognised as a single
        origin-destination demand.
        """
        b = np.zeros(net.n_nodes)
        for node, val in values.items():
            b[net.node_index(node)] = float(val)
        total = float(np.sum(b))
        if abs(total) > 1e-12 * max(1.0, float(np.abs(b).sum())):
            raise NetworkError(f"demand vector must sum to zero, got {total!r}")
        if not np.any(b):
            raise NetworkError("demand vector is identically zero")
        if reference is None:
            ref = int(np.argmax(b))
        else:
            ref = net.node_index(reference)
        neg, pos = np.flatnonzero(b == -1.0), np.flatnonzero(b == 1.0)
        origin = None
        if np.count_nonzero(b) == 2 and len(neg) == 1 and len(pos) == 1 and ref == pos[0]:
            origin = int(neg[0])
        return cls(full=b, reference=ref, origin=origin)

    @property
    def is_single_od(self) -> bool:
        return self.origin is not None

    @property
    def destination(self) -> int:
        return self.reference


@dataclass(frozen=True, eq=False)
class Incidence:
    """Node-link incidence matrix, full or with the reference row removed.

    ``rows`` lists the original node index of every matrix row.
    """

    matrix: sp.csc_matrix
    rows: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def column(self, e: int) -> np.ndarray:
        return self.matrix[:, [e]].toarray().ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dense_or_sparse(self):
        """Dense ndarray for small networks, the sparse matrix otherwise."""
        if self.matrix.shape[1] < DENSE_LINK_LIMIT:
            return self.matrix.toarray()
        return self.matrix


def build_incidence(net: Network) -> Incidence:
    """Full incidence: -1 at a link's initial node, +1 at its terminal node."""
    m = net.n_links
    cols = np.repeat(np.arange(m), 2)
    rows = np.empty(2 * m, dtype=np.intp)
    rows[0::2] = net.tails
    rows[1::2] = net.heads
    vals = np.tile([-1.0, 1.0], m)
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(net.n_nodes, m))
    return Incidence(matrix=mat, rows=np.arange(net.n_nodes))


def reduce(incidence: Incidence, demand: Demand) -> tuple[Incidence, np.ndarray]:
    """Drop the reference row from the incidence matrix and demand vector."""
    n = incidence.matrix.shape[0]
    d = demand.reference
    if not 0 <= d < n:
        raise NetworkError(f"reference node index {d} outside network")
    keep = np.array([i for i in incidence.rows if i != d], dtype=np.intp)
    pos = np.flatnonzero(incidence.rows != d)
    mat = sp.csc_matrix(incidence.matrix[pos, :])
    return Incidence(matrix=mat, rows=keep), demand.full[keep].copy()


def _reach(adj: list[list[int]], start: int) -> np.ndarray:
    seen = np.zeros(len(adj), dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                queue.append(w)
    return seen


def unreachable_pair(net: Network) -> tuple | None:
    """An ordered node pair ``(v, w)`` with no positive path v -> w, or None."""
    fwd: list[list[int]] = [[] for _ in net.nodes]
    bwd: list[list[int]] = [[] for _ in net.nodes]
    for t, h in zip(net.tails, net.heads):
        fwd[t].append(int(h))
        bwd[h].append(int(t))
    out = _reach(fwd, 0)
    if not out.all():
        return net.nodes[0], net.nodes[int(np.argmin(out))]
    back = _reach(bwd, 0)
    if not back.all():
        return net.nodes[int(np.argmin(back))], net.nodes[0]
    return None


def is_strongly_connected(net: Network) -> bool:
    """Forward and backward reachability from the first node covers all nodes."""
    return unreachable_pair(net) is None


def positive_path_flow(net: Network, origin: Hashable, destination: Hashable) -> np.ndarray:
    """Unit flow along one shortest (by hop count) positive origin-destination path."""
    o = net.node_index(origin)
    d = net.node_index(destination)
    if o == d:
        raise NetworkError("origin and destination must differ")
    succ = net.successors()
    pred_link = np.full(net.n_nodes, -1, dtype=np.intp)
    seen = np.zeros(net.n_nodes, dtype=bool)
    seen[o] = True
    queue = deque([o])
    while queue and not seen[d]:
        v = queue.popleft()
        for e, w in succ[v]:
            if not seen[w]:
                seen[w] = True
                pred_link[w] = e
                queue.append(w)
    if not seen[d]:
        raise NetworkError(f"no positive path from {origin!r} to {destination!r}")
    x = np.zeros(net.n_links)
    v = d
    while v != o:
        e = pred_link[v]
        x[e] += 1.0
        v = net.tails[e]
    return x
