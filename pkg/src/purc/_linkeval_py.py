"""Pure numpy implementation of :func:`purc._linkeval.evaluate`."""

from __future__ import annotations

import math

import numpy as np

from .perturbation import EXP_CLAMP, unit_family


def evaluate(u, b, tail, head, cost, code, beta, gamma, want_curv):
    n = u.shape[0]
    m = cost.shape[0]
    u_ext = np.append(u, 0.0)
    eta = u_ext[head] - u_ext[tail] - cost
    x = np.zeros(m)
    conj = np.zeros(m)
    curv = np.zeros(m if want_curv else 0)
    kinks = np.zeros(m if want_curv else 0, dtype=np.uint8)
    s = gamma * eta / beta
    builtin = code >= 0

    hot = np.flatnonzero(((code == 1) | (code == 2)) & (s > EXP_CLAMP))
    bad = int(hot[0]) if hot.size else -1
    if bad >= 0:
        # the compiled kernel stops at the first offending link
        builtin = builtin & (np.arange(m) < bad)

    for c in np.unique(code[builtin]):
        idx = np.flatnonzero(builtin & (code == c))
        fam = unit_family(int(c))
        si = s[idx]
        x[idx] = gamma[idx] * fam.grad_conj(si)
        conj[idx] = beta[idx] * fam.conj(si)
        if want_curv:
            cv, ok = fam.hess_conj(si)
            curv[idx] = gamma[idx] ** 2 / beta[idx] * cv
            kinks[idx] = ~ok

    total = math.fsum(conj[builtin])
    flow = np.bincount(tail, weights=x, minlength=n + 1) - np.bincount(head, weights=x, minlength=n + 1)
    grad = b + flow[:n]
    return total, grad, x, eta, curv, kinks, bad
