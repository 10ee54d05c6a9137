"""Vectorized numpy versions of the segment integral kernels.

Every function here has a twin in ``_core.pyx`` with the same signature and
output; the package picks one at import time.
"""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _gauss(nq):
    x, w = np.polynomial.legendre.leggauss(nq)
    return 0.5 * (x + 1.0), 0.5 * w


def segment_log_integrals(px, py, ax, ay, bx, by):
    """Closed-form line integrals over straight segments.

    For every target point ``p`` and segment ``[a, b]`` with unit tangent
    ``tau = (b - a)/L`` and right-hand normal ``nu = (tau_y, -tau_x)``::

        L0  = int log|y - p| ds
        ITH = int eta / rho^2 ds          (signed subtended angle)
        ISG = int sigma / rho^2 ds

    where ``y - p = sigma*tau - eta*nu``. Points lying on a segment get the
    principal value ``ITH = 0``.

    Returns three ``(P, S)`` arrays.
    """
    px = np.asarray(px, dtype=float)[:, None]
    py = np.asarray(py, dtype=float)[:, None]
    ax = np.asarray(ax, dtype=float)[None, :]
    ay = np.asarray(ay, dtype=float)[None, :]
    bx = np.asarray(bx, dtype=float)[None, :]
    by = np.asarray(by, dtype=float)[None, :]

    dx = bx - ax
    dy = by - ay
    L = np.hypot(dx, dy)
    tx = dx / L
    ty = dy / L
    rx = px - ax
    ry = py - ay
    xi = rx * tx + ry * ty
    eta = rx * ty - ry * tx
    s1 = -xi
    s2 = L - xi
    r1 = s1 * s1 + eta * eta
    r2 = s2 * s2 + eta * eta

    on_seg = (np.abs(eta) <= 1e-13 * L) & (s1 < 0.0) & (s2 > 0.0)
    ith = np.arctan2(eta * (s2 - s1), s1 * s2 + eta * eta)
    ith = np.where(on_seg, 0.0, ith)

    with np.errstate(divide="ignore", invalid="ignore"):
        lr1 = np.where(r1 > 0.0, np.log(r1), 0.0)
        lr2 = np.where(r2 > 0.0, np.log(r2), 0.0)
    l0 = 0.5 * (s2 * lr2 - s1 * lr1) - (s2 - s1) + eta * ith
    isg = 0.5 * (lr2 - lr1)
    return l0, ith, isg


def galerkin_log_matrix(ax, ay, bx, by, nq):
    """Double integrals ``int_i int_j log|x - y|`` over all segment pairs.

    The inner integral is analytic, the outer one uses ``nq`` Gauss points,
    and the diagonal uses ``L^2 (log L - 3/2)``.
    """
    ax = np.asarray(ax, dtype=float)
    ay = np.asarray(ay, dtype=float)
    bx = np.asarray(bx, dtype=float)
    by = np.asarray(by, dtype=float)
    n = ax.size
    u, w = _gauss(nq)
    L = np.hypot(bx - ax, by - ay)
    qx = (ax[:, None] + u[None, :] * (bx - ax)[:, None]).ravel()
    qy = (ay[:, None] + u[None, :] * (by - ay)[:, None]).ravel()
    l0, _, _ = segment_log_integrals(qx, qy, ax, ay, bx, by)
    l0 = l0.reshape(n, nq, n)
    V = np.einsum("iqj,q->ij", l0, w) * L[:, None]
    idx = np.arange(n)
    V[idx, idx] = L * L * (np.log(L) - 1.5)
    return V
