"""File formats: link and demand CSVs, solution JSON and the run manifest.

Link CSV columns are ``link_id,from,to,cost,perturbation,param1,param2``.
``perturbation`` names a built-in family (``quadratic``, ``entropy``,
``entropy_like``, ``piecewise_quadratic``) or a custom factory written as
``python:module:callable``; ``param1`` (beta) and ``param2`` (gamma) are
optional scale parameters of ``beta * h(xi / gamma)`` and default to 1.
"""

from __future__ import annotations

import csv
import hashlib
import importlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .kernels import BACKEND
from .network import Demand, Network, NetworkError
from .perturbation import FAMILIES, LinkPerturbation, from_name, scaled

__all__ = [
    "InputError",
    "LINK_COLUMNS",
    "read_links",
    "read_demand",
    "read_link_vector",
    "load_custom",
    "problem_to_dict",
    "problem_from_dict",
    "file_sha256",
    "manifest",
    "to_jsonable",
    "dumps",
    "write_csv",
]

LINK_COLUMNS = ("link_id", "from", "to", "cost", "perturbation", "param1", "param2")
SCHEMA = "purc/1"


class InputError(ValueError):
    """Malformed input file."""


def _rows(path, required):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    with fh:
        reader = csv.DictReader(fh, skipinitialspace=True)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in required if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}; header is {header}")
        reader.fieldnames = header
        for row in reader:
            row = {k: (v.strip() if isinstance(v, str) else v) for k, v in row.items() if k is not None}
            if all(not v for v in row.values()):
                continue
            yield reader.line_num, row


def _float(path, line, name, text, default=None):
    if text in (None, ""):
        if default is None:
            raise InputError(f"{path}:{line}: column {name!r} is empty")
        return default
    try:
        value = float(text)
    except ValueError:
        raise InputError(f"{path}:{line}: column {name!r} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise InputError(f"{path}:{line}: column {name!r} must be finite")
    return value


def load_custom(spec: str) -> LinkPerturbation:
    """Instantiate ``python:module:callable``; the callable takes no arguments."""
    try:
        _, module, attr = spec.split(":", 2)
        obj = getattr(importlib.import_module(module), attr)
    except (ValueError, ImportError, AttributeError) as exc:
        raise InputError(f"cannot load custom perturbation {spec!r}: {exc}") from None
    p = obj() if callable(obj) and not isinstance(obj, LinkPerturbation) else obj
    if not isinstance(p, LinkPerturbation):
        raise InputError(f"{spec!r} did not produce a LinkPerturbation")
    return p


def _perturbation(spec, beta, gamma, cache):
    key = (spec, beta, gamma)
    if key not in cache:
        if spec.startswith("python:"):
            p = scaled(load_custom(spec), beta, gamma)
            p.source = spec
        else:
            p = from_name(spec, beta, gamma)
        cache[key] = p
    return cache[key]


def read_links(path) -> tuple[Network, list, np.ndarray]:
    """Parse a link CSV into ``(network, perturbations, costs)``.

    Nodes are labelled by their text and ordered by first appearance.
    """
    links, perts, costs = [], [], []
    cache = {}
    for line, row in _rows(path, LINK_COLUMNS[:5]):
        lid, v, w = row["link_id"], row["from"], row["to"]
        if not lid or not v or not w:
            raise InputError(f"{path}:{line}: link_id, from and to must be nonempty")
        cost = _float(path, line, "cost", row["cost"])
        fam = row["perturbation"]
        if fam not in FAMILIES and not fam.startswith("python:"):
            raise InputError(f"{path}:{line}: unknown perturbation {fam!r}; expected one of {sorted(FAMILIES)}")
        beta = _float(path, line, "param1", row.get("param1"), 1.0)
        gamma = _float(path, line, "param2", row.get("param2"), 1.0)
        if beta <= 0 or gamma <= 0:
            raise InputError(f"{path}:{line}: param1 and param2 must be positive")
        try:
            perts.append(_perturbation(fam, beta, gamma, cache))
        except ValueError as exc:
            raise InputError(f"{path}:{line}: {exc}") from None
        links.append((lid, v, w))
        costs.append(cost)
    if not links:
        raise InputError(f"{path}: no links")
    try:
        net = Network.from_links(links)
    except NetworkError as exc:
        raise InputError(f"{path}: {exc}") from None
    return net, perts, np.array(costs)


def read_demand(path, net: Network) -> Demand:
    """Balanced demand CSV with columns ``node,b``; unlisted nodes get zero."""
    values = {}
    for line, row in _rows(path, ("node", "b")):
        node = row["node"]
        if node not in net._node_lookup:
            raise InputError(f"{path}:{line}: unknown node {node!r}")
        if node in values:
            raise InputError(f"{path}:{line}: node {node!r} listed twice")
        values[node] = _float(path, line, "b", row["b"])
    try:
        return Demand.balanced(net, values)
    except (NetworkError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def read_link_vector(path, net: Network, column: str = "dc") -> np.ndarray:
    """Per-link values from a CSV with columns ``link_id,<column>``; unlisted links get zero."""
    out = np.zeros(net.n_links)
    seen = set()
    for line, row in _rows(path, ("link_id", column)):
        lid = row["link_id"]
        if lid not in net._link_lookup:
            raise InputError(f"{path}:{line}: unknown link {lid!r}")
        if lid in seen:
            raise InputError(f"{path}:{line}: link {lid!r} listed twice")
        seen.add(lid)
        out[net.link_index(lid)] = _float(path, line, column, row[column])
    return out


# -- JSON ------------------------------------------------------------------


def problem_to_dict(problem) -> dict:
    d = problem.describe()
    for entry, p in zip(d["links"], problem.perturbations):
        source = getattr(p, "source", None)
        if source is not None:
            entry["family"] = source
    return d


def problem_from_dict(d: dict):
    """Rebuild a :class:`~purc.problem.Problem` from :func:`problem_to_dict` output."""
    from .problem import Problem

    try:
        links = [(L["id"], L["from"], L["to"]) for L in d["links"]]
        net = Network.from_links(links, nodes=d["demand"]["nodes"])
        cache = {}
        perts = [
            _perturbation(L["family"], float(L.get("beta", 1.0)), float(L.get("gamma", 1.0)), cache)
            for L in d["links"]
        ]
        costs = [float(L["cost"]) for L in d["links"]]
        dem = d["demand"]
        full = np.array(dem["b"], dtype=float)
        demand = Demand(full=full, reference=net.node_index(dem["reference"]),
                        origin=net.node_index(dem["origin"]) if "origin" in dem else None)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed problem description: {exc!r}") from None
    return Problem(net, perts, costs, demand)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(command: str, inputs: dict, config: dict, timing: dict | None = None) -> dict:
    """Run manifest: tool version, kernel backend, input file hashes and config echo.

    ``timing`` (wall-clock seconds per phase) is included only when given,
    so that default outputs are reproducible byte for byte.
    """
    out = {
        "tool": "purc",
        "version": __version__,
        "schema": SCHEMA,
        "command": command,
        "backend": BACKEND,
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)} for name, p in sorted(inputs.items())},
        "config": config,
    }
    if timing is not None:
        out["timing"] = timing
    return out


def to_jsonable(obj):
    """Convert numpy data to JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
