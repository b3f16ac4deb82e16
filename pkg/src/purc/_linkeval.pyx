# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-link evaluation of the dual objective ingredients.

One pass over the links computes the reduced tension, the conjugate value,
the recovered flow, the conjugate curvature and the excess-demand scatter for
every built-in perturbation family. Links with a negative family code are
left to the caller (only their tension is filled in).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, fabs

cnp.import_array()

cdef double CLAMP = 700.0


def evaluate(double[::1] u, double[::1] b, cnp.intp_t[::1] tail, cnp.intp_t[::1] head,
             double[::1] cost, int[::1] code, double[::1] beta, double[::1] gamma,
             bint want_curv):
    cdef Py_ssize_t n = u.shape[0]
    cdef Py_ssize_t m = cost.shape[0]
    cdef Py_ssize_t e, t, h
    cdef double ut, uh, eta, s, gc, hc, cv, x, bt, gm, y, tmp
    cdef double total = 0.0, comp = 0.0
    cdef bint kink
    cdef Py_ssize_t bad = -1

    grad_arr = np.array(b, dtype=np.float64, copy=True)
    x_arr = np.zeros(m, dtype=np.float64)
    eta_arr = np.empty(m, dtype=np.float64)
    curv_arr = np.zeros(m if want_curv else 0, dtype=np.float64)
    kink_arr = np.zeros(m if want_curv else 0, dtype=np.uint8)
    cdef double[::1] grad = grad_arr
    cdef double[::1] xs = x_arr
    cdef double[::1] etas = eta_arr
    cdef double[::1] curv = curv_arr
    cdef unsigned char[::1] kinks = kink_arr

    for e in range(m):
        t = tail[e]
        h = head[e]
        ut = u[t] if t < n else 0.0
        uh = u[h] if h < n else 0.0
        eta = uh - ut - cost[e]
        etas[e] = eta
        if code[e] < 0:
            continue
        bt = beta[e]
        gm = gamma[e]
        s = gm * eta / bt
        kink = False
        if code[e] == 0:
            if s > 0:
                gc = s
                hc = 0.5 * s * s
                cv = 1.0
            else:
                gc = 0.0
                hc = 0.0
                cv = 0.0
            if s == 0.0:
                cv = 0.5
                kink = True
        elif code[e] == 1:
            if s > CLAMP:
                bad = e
                break
            gc = exp(s - 1.0)
            hc = gc
            cv = gc
        elif code[e] == 2:
            if s > CLAMP:
                bad = e
                break
            if s > 0:
                gc = expm1(s)
                hc = gc - s
                cv = gc + 1.0
            else:
                gc = 0.0
                hc = 0.0
                cv = 0.0
            if s == 0.0:
                cv = 0.5
                kink = True
        else:
            if s < 0:
                gc = 0.0
                hc = 0.0
                cv = 0.0
            elif s < 1.0:
                gc = s
                hc = 0.5 * s * s
                cv = 1.0
            elif s < 1.5:
                gc = 1.0
                hc = s - 0.5
                cv = 0.0
            else:
                gc = s - 0.5
                hc = 0.5 * s * s - 0.5 * s + 0.625
                cv = 1.0
            if s == 0.0 or s == 1.0 or s == 1.5:
                cv = 0.5
                kink = True
        x = gm * gc
        xs[e] = x
        # Neumaier compensated sum of conjugate values
        y = bt * hc
        tmp = total + y
        if fabs(total) >= fabs(y):
            comp += (total - tmp) + y
        else:
            comp += (y - tmp) + total
        total = tmp
        if t < n:
            grad[t] += x
        if h < n:
            grad[h] -= x
        if want_curv:
            curv[e] = gm * gm / bt * cv
            kinks[e] = kink

    return total + comp, grad_arr, x_arr, eta_arr, curv_arr, kink_arr, bad
