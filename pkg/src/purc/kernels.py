"""Backend selection for the per-link evaluation kernel.

The compiled extension is used when it was built and ``PURC_PURE_PYTHON`` is
unset; otherwise the numpy implementation is used. Both have the signature::

    evaluate(u, b, tail, head, cost, code, beta, gamma, want_curv)
        -> (conj_sum, grad, x, eta, curv, kink, bad)
"""

from __future__ import annotations

import os

from . import _linkeval_py

try:
    from . import _linkeval as _compiled
except ImportError:  # extension not built
    _compiled = None

__all__ = ["BACKEND", "evaluate", "get_backend", "available_backends"]


def available_backends() -> list[str]:
    return ["numpy"] + (["compiled"] if _compiled is not None else [])


def get_backend(name: str):
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel purc._linkeval is not built")
        return _compiled.evaluate
    if name == "numpy":
        return _linkeval_py.evaluate
    raise ValueError(f"unknown backend {name!r}")


if _compiled is not None and not os.environ.get("PURC_PURE_PYTHON"):
    BACKEND = "compiled"
else:
    BACKEND = "numpy"

evaluate = get_backend(BACKEND)
