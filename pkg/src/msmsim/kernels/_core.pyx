# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment integral kernels (see ``_fallback.py`` for the contract)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, atan2, sqrt, fabs

cnp.import_array()

_GAUSS = {}


def _gauss(int nq):
    if nq not in _GAUSS:
        x, w = np.polynomial.legendre.leggauss(nq)
        _GAUSS[nq] = (np.ascontiguousarray(0.5 * (x + 1.0)), np.ascontiguousarray(0.5 * w))
    return _GAUSS[nq]


cdef inline void _seg(double px, double py, double ax, double ay,
                      double tx, double ty, double L,
                      double *l0, double *ith, double *isg) noexcept nogil:
    cdef double rx = px - ax
    cdef double ry = py - ay
    cdef double xi = rx * tx + ry * ty
    cdef double eta = rx * ty - ry * tx
    cdef double s1 = -xi
    cdef double s2 = L - xi
    cdef double r1 = s1 * s1 + eta * eta
    cdef double r2 = s2 * s2 + eta * eta
    cdef double th, lr1, lr2
    if fabs(eta) <= 1e-13 * L and s1 < 0.0 and s2 > 0.0:
        th = 0.0
    else:
        th = atan2(eta * (s2 - s1), s1 * s2 + eta * eta)
    lr1 = log(r1) if r1 > 0.0 else 0.0
    lr2 = log(r2) if r2 > 0.0 else 0.0
    l0[0] = 0.5 * (s2 * lr2 - s1 * lr1) - (s2 - s1) + eta * th
    ith[0] = th
    isg[0] = 0.5 * (lr2 - lr1)


def segment_log_integrals(px, py, ax, ay, bx, by):
    cdef double[::1] PX = np.ascontiguousarray(px, dtype=np.float64)
    cdef double[::1] PY = np.ascontiguousarray(py, dtype=np.float64)
    cdef double[::1] AX = np.ascontiguousarray(ax, dtype=np.float64)
    cdef double[::1] AY = np.ascontiguousarray(ay, dtype=np.float64)
    cdef double[::1] BX = np.ascontiguousarray(bx, dtype=np.float64)
    cdef double[::1] BY = np.ascontiguousarray(by, dtype=np.float64)
    cdef Py_ssize_t P = PX.shape[0]
    cdef Py_ssize_t S = AX.shape[0]
    out_l0 = np.empty((P, S))
    out_th = np.empty((P, S))
    out_sg = np.empty((P, S))
    cdef double[:, ::1] L0 = out_l0
    cdef double[:, ::1] TH = out_th
    cdef double[:, ::1] SG = out_sg
    cdef double[::1] TX = np.empty(S)
    cdef double[::1] TY = np.empty(S)
    cdef double[::1] LL = np.empty(S)
    cdef Py_ssize_t i, j
    cdef double dx, dy
    with nogil:
        for j in range(S):
            dx = BX[j] - AX[j]
            dy = BY[j] - AY[j]
            LL[j] = sqrt(dx * dx + dy * dy)
            TX[j] = dx / LL[j]
            TY[j] = dy / LL[j]
        for i in range(P):
            for j in range(S):
                _seg(PX[i], PY[i], AX[j], AY[j], TX[j], TY[j], LL[j],
                     &L0[i, j], &TH[i, j], &SG[i, j])
    return out_l0, out_th, out_sg


def galerkin_log_matrix(ax, ay, bx, by, int nq):
    cdef double[::1] AX = np.ascontiguousarray(ax, dtype=np.float64)
    cdef double[::1] AY = np.ascontiguousarray(ay, dtype=np.float64)
    cdef double[::1] BX = np.ascontiguousarray(bx, dtype=np.float64)
    cdef double[::1] BY = np.ascontiguousarray(by, dtype=np.float64)
    cdef Py_ssize_t n = AX.shape[0]
    u, w = _gauss(nq)
    cdef double[::1] U = u
    cdef double[::1] W = w
    out = np.zeros((n, n))
    cdef double[:, ::1] V = out
    cdef double[::1] TX = np.empty(n)
    cdef double[::1] TY = np.empty(n)
    cdef double[::1] LL = np.empty(n)
    cdef Py_ssize_t i, j, q
    cdef double dx, dy, qx, qy, acc, l0, th, sg
    with nogil:
        for j in range(n):
            dx = BX[j] - AX[j]
            dy = BY[j] - AY[j]
            LL[j] = sqrt(dx * dx + dy * dy)
            TX[j] = dx / LL[j]
            TY[j] = dy / LL[j]
        for i in range(n):
            for q in range(nq):
                qx = AX[i] + U[q] * (BX[i] - AX[i])
                qy = AY[i] + U[q] * (BY[i] - AY[i])
                for j in range(n):
                    if j == i:
                        continue
                    _seg(qx, qy, AX[j], AY[j], TX[j], TY[j], LL[j], &l0, &th, &sg)
                    V[i, j] += W[q] * l0
            for j in range(n):
                V[i, j] *= LL[i]
            V[i, i] = LL[i] * LL[i] * (log(LL[i]) - 1.5)
    return out
