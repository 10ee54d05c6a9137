"""Collocation boundary elements for 2D Laplace and plane-strain elasticity.

Unknowns are piecewise constant per straight segment and the boundary
integral equation is collocated at segment midpoints. Cell boundaries are
handled through *pairing*: every segment on the left/bottom side of a cell
is a ``base`` segment whose opposite ``partner`` carries the same data up to
a prescribed jump, which is how periodic and affine-periodic conditions are
imposed without extra unknowns.

Curves must be oriented so that the right-hand normal of each segment points
out of the computational domain (counterclockwise outer boundaries,
clockwise holes).
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .kernels import galerkin_log_matrix, segment_log_integrals

DIRICHLET = 0
BASE = 1
PARTNER = 2

_TWO_PI = 2.0 * np.pi


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a boundary system is numerically singular."""

    def __init__(self, msg, cond=np.inf):
        super().__init__(f"{msg} (condition estimate {cond:.3e})")
        self.cond = cond


@dataclass
class BoundarySystem:
    """Straight segments ``a[i] -> b[i]`` with a constraint kind each.

    ``partner[i]`` holds the base segment index of a partner segment (and -1
    otherwise); ``shift[i]`` is the lattice vector from that base segment to
    segment ``i``.
    """

    a: np.ndarray
    b: np.ndarray
    kind: np.ndarray
    partner: np.ndarray
    shift: np.ndarray
    density_order: str = "constant"
    lengths: np.ndarray = field(init=False, repr=False)
    midpoints: np.ndarray = field(init=False, repr=False)
    tangents: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1, 2)
        self.b = np.asarray(self.b, dtype=float).reshape(-1, 2)
        self.kind = np.asarray(self.kind, dtype=int)
        self.partner = np.asarray(self.partner, dtype=int)
        self.shift = np.asarray(self.shift, dtype=float).reshape(-1, 2)
        if self.density_order != "constant":
            raise ValueError("only piecewise constant densities are implemented")
        d = self.b - self.a
        self.lengths = np.hypot(d[:, 0], d[:, 1])
        if np.any(self.lengths <= 0.0):
            raise ValueError("zero-length segment in boundary system")
        self.tangents = d / self.lengths[:, None]
        self.normals = np.column_stack([self.tangents[:, 1], -self.tangents[:, 0]])
        self.midpoints = 0.5 * (self.a + self.b)
        self._check_pairing()

    def __len__(self):
        return self.a.shape[0]

    def _check_pairing(self):
        bases = np.flatnonzero(self.kind == BASE)
        parts = np.flatnonzero(self.kind == PARTNER)
        owners = self.partner[parts]
        if np.any(self.kind[owners] != BASE) or len(set(owners)) != owners.size:
            raise ValueError("every partner needs a distinct base segment")
        if owners.size != bases.size:
            raise ValueError("every base segment needs exactly one partner")
        # partner geometry must be the base geometry shifted by a lattice vector
        # (traversed in the opposite direction)
        exp_a = self.b[owners] + self.shift[parts]
        exp_b = self.a[owners] + self.shift[parts]
        scale = max(1.0, float(np.abs(self.a).max()))
        if not (
            np.allclose(self.a[parts], exp_a, atol=1e-12 * scale)
            and np.allclose(self.b[parts], exp_b, atol=1e-12 * scale)
        ):
            raise ValueError("partner segment is not a lattice translate of its base")

    @property
    def base_index(self):
        return np.flatnonzero(self.kind == BASE)

    @property
    def partner_index(self):
        return np.flatnonzero(self.kind == PARTNER)


@dataclass
class BoundarySolution:
    """Traces on every segment.

    Laplace: ``value`` (S,) and ``flux`` (S,) with flux the outward normal
    derivative. Elasticity: ``value`` (S, 2) displacements and ``flux`` (S, 2)
    tractions acting on the domain.
    """

    system: BoundarySystem
    value: np.ndarray
    flux: np.ndarray


def closed_curve(vertices, kind=DIRICHLET):
    """Segments of the closed polygon through ``vertices`` (in given order)."""
    v = np.asarray(vertices, dtype=float)
    n = v.shape[0]
    return BoundarySystem(
        a=v,
        b=np.roll(v, -1, axis=0),
        kind=np.full(n, kind),
        partner=np.full(n, -1),
        shift=np.zeros((n, 2)),
    )


def periodic_cell(m, lattice=None, origin=(0.0, 0.0)):
    """Counterclockwise boundary of the cell spanned by ``lattice`` columns.

    Each side carries ``m`` segments. Left and bottom segments are bases; the
    right and top ones are their partners.
    """
    F = np.eye(2) if lattice is None else np.asarray(lattice, dtype=float)
    o = np.asarray(origin, dtype=float)
    s = np.arange(m + 1) / m
    e1, e2 = F[:, 0], F[:, 1]
    bottom = o + np.outer(s, e1)
    right = o + e1 + np.outer(s, e2)
    top = o + e1 + e2 - np.outer(s, e1)
    left = o + e2 - np.outer(s, e2)
    a = np.vstack([bottom[:-1], right[:-1], top[:-1], left[:-1]])
    b = np.vstack([bottom[1:], right[1:], top[1:], left[1:]])
    kind = np.concatenate(
        [np.full(m, BASE), np.full(m, PARTNER), np.full(m, PARTNER), np.full(m, BASE)]
    )
    partner = np.full(4 * m, -1)
    shift = np.zeros((4 * m, 2))
    k = np.arange(m)
    # right segment k is the left segment m-1-k moved by e1
    partner[m + k] = 3 * m + (m - 1 - k)
    shift[m + k] = e1
    # top segment k is the bottom segment m-1-k moved by e2
    partner[2 * m + k] = m - 1 - k
    shift[2 * m + k] = e2
    return BoundarySystem(a=a, b=b, kind=kind, partner=partner, shift=shift)


def combine(*systems):
    """Concatenate boundary systems, remapping partner indices."""
    offs = np.cumsum([0] + [len(s) for s in systems[:-1]])
    partner = np.concatenate(
        [np.where(s.partner >= 0, s.partner + o, -1) for s, o in zip(systems, offs)]
    )
    return BoundarySystem(
        a=np.vstack([s.a for s in systems]),
        b=np.vstack([s.b for s in systems]),
        kind=np.concatenate([s.kind for s in systems]),
        partner=partner,
        shift=np.vstack([s.shift for s in systems]),
    )


# --------------------------------------------------------------------------
# Laplace


def laplace_operators(points, system, on_boundary=True):
    """Single- and double-layer matrices for constant densities.

    Returns ``(G, K)`` with ``G[i, j] = int_j G(x_i - y) ds`` and
    ``K[i, j] = int_j dG/dn_y ds`` for ``G(x) = -log|x| / (2 pi)``. The free
    term 1/2 is *not* included.
    """
    p = np.asarray(points, dtype=float)
    l0, ith, _ = segment_log_integrals(
        p[:, 0], p[:, 1], system.a[:, 0], system.a[:, 1], system.b[:, 0], system.b[:, 1]
    )
    return -l0 / _TWO_PI, ith / _TWO_PI


def _pairing_maps(system, ncomp):
    """Affine maps from the unknown vector to (value, flux) on all segments.

    value = Pv @ x + Cv @ data, flux = Pq @ x + Cq @ data where ``data``
    stacks [dirichlet values, value jumps, flux jumps] per segment.
    """
    S = len(system)
    kind = system.kind
    cols_v = {}
    cols_q = {}
    ncol = 0
    for j in range(S):
        if kind[j] == BASE:
            cols_v[j] = ncol
            ncol += 1
        if kind[j] != PARTNER:
            cols_q[j] = ncol
            ncol += 1
    n = S * ncomp
    Pv = np.zeros((n, ncol * ncomp))
    Pq = np.zeros((n, ncol * ncomp))
    # data layout: [dirichlet (S), value jump (S), flux jump (S)] per component
    Cv = np.zeros((n, 3 * n))
    Cq = np.zeros((n, 3 * n))
    for j in range(S):
        for c in range(ncomp):
            r = j * ncomp + c
            if kind[j] == DIRICHLET:
                Cv[r, r] = 1.0
                Pq[r, cols_q[j] * ncomp + c] = 1.0
            elif kind[j] == BASE:
                Pv[r, cols_v[j] * ncomp + c] = 1.0
                Pq[r, cols_q[j] * ncomp + c] = 1.0
            else:
                o = system.partner[j]
                Pv[r, cols_v[o] * ncomp + c] = 1.0
                Cv[r, n + r] = 1.0
                Pq[r, cols_q[o] * ncomp + c] = -1.0
                Cq[r, 2 * n + r] = 1.0
    return Pv, Pq, Cv, Cq


def _solve_operator(Kfull, Gfull, Pv, Pq, Cv, Cq, gauge_rows=None):
    """Matrix mapping boundary data to the unknown vector ``x``."""
    M = Kfull @ Pv - Gfull @ Pq
    R = -(Kfull @ Cv - Gfull @ Cq)
    if gauge_rows is not None:
        Gv, Gc = gauge_rows
        M = np.vstack([M, Gv])
        R = np.vstack([R, -Gc])
        X, _, rank, sv = np.linalg.lstsq(M, R, rcond=None)
        if rank < M.shape[1]:
            raise SingularSystemError("rank-deficient boundary system", sv[0] / sv[-1])
        return X
    try:
        lu = sla.lu_factor(M, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as err:
        raise SingularSystemError(str(err)) from err
    rc = np.linalg.cond(M, 1) if M.shape[0] <= 800 else 0.0
    if not np.isfinite(rc) or rc > 1e14:
        raise SingularSystemError("singular boundary system", rc)
    return sla.lu_solve(lu, R, check_finite=False)


def _laplace_solution_operator(system):
    S = len(system)
    G, K = laplace_operators(system.midpoints, system)
    K = K + 0.5 * np.eye(S)
    Pv, Pq, Cv, Cq = _pairing_maps(system, 1)
    gauge = None
    if not np.any(system.kind == DIRICHLET):
        L = system.lengths
        gauge = ((L @ Pv)[None, :], (L @ Cv)[None, :])
    X = _solve_operator(K, G, Pv, Pq, Cv, Cq, gauge)
    return Pv @ X + Cv, Pq @ X + Cq


def solve_laplace(system, dirichlet=None, value_jump=None, flux_jump=None):
    """Solve the direct boundary integral equation of the Laplace equation.

    Parameters
    ----------
    system : BoundarySystem
    dirichlet : (S,) array, optional
        Prescribed values (read on DIRICHLET segments only).
    value_jump, flux_jump : (S,) arrays, optional
        On PARTNER segments: ``value = value[base] + value_jump`` and
        ``flux = -flux[base] + flux_jump`` (fluxes are outward normal
        derivatives, so a periodic gradient has ``flux_jump = 0``).

    Without Dirichlet segments the additive constant is fixed by a zero
    mean over the boundary.
    """
    S = len(system)
    data = np.concatenate(
        [
            np.zeros(S) if dirichlet is None else np.asarray(dirichlet, float),
            np.zeros(S) if value_jump is None else np.asarray(value_jump, float),
            np.zeros(S) if flux_jump is None else np.asarray(flux_jump, float),
        ]
    )
    Tv, Tq = _laplace_solution_operator(system)
    return BoundarySolution(system, Tv @ data, Tq @ data)


def laplace_potential(points, solution):
    """Evaluate the harmonic function at interior points from its traces."""
    G, K = laplace_operators(points, solution.system)
    return G @ solution.flux - K @ solution.value


class PeriodicLaplaceCell:
    """Prefactored periodic Laplace problem on one (possibly sheared) cell.

    Maps prescribed value and flux mismatches across opposite sides to the
    boundary traces, and evaluates the resulting potential inside the cell.
    """

    def __init__(self, m, lattice=None, origin=(0.0, 0.0)):
        self.system = periodic_cell(m, lattice, origin)
        S = len(self.system)
        self.base = self.system.partner[self.system.partner_index]
        self.part = self.system.partner_index
        Tv, Tq = _laplace_solution_operator(self.system)
        # restrict the data columns to the jumps on partner segments
        self._Tv = np.hstack([Tv[:, S + self.part], Tv[:, 2 * S + self.part]])
        self._Tq = np.hstack([Tq[:, S + self.part], Tq[:, 2 * S + self.part]])

    def traces(self, value_jump, flux_jump):
        """Boundary values and fluxes for jumps given per partner segment."""
        d = np.concatenate([value_jump, flux_jump], axis=0)
        return self._Tv @ d, self._Tq @ d

    def correction_for(self, psi, dpsi_dn):
        """Periodic correction for a free-space potential sampled on the cell.

        ``psi`` and ``dpsi_dn`` (outward normal derivative) are the values of
        the non-periodic part at all segment midpoints; the correction makes
        the sum periodic with periodic gradient. Extra trailing axes are
        treated as independent right-hand sides.
        """
        psi = np.asarray(psi, dtype=float)
        dpsi_dn = np.asarray(dpsi_dn, dtype=float)
        vj = psi[self.base] - psi[self.part]
        fj = -(dpsi_dn[self.part] + dpsi_dn[self.base])
        return self.traces(vj, fj)

    def potential(self, points, values, fluxes):
        G, K = laplace_operators(points, self.system)
        return G @ fluxes - K @ values


def single_layer_matrix(a, b, nq=6):
    """Symmetric Galerkin matrix of the kernel ``-log|x-y|/(2 pi)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    V = galerkin_log_matrix(a[:, 0], a[:, 1], b[:, 0], b[:, 1], nq)
    V = -(V + V.T) / (2.0 * _TWO_PI)
    return V


def single_layer_interaction(a, b, density, nq=6):
    """Self-energy ``1/2 int int G(x-y) s(x) s(y)`` of a segment charge layer.

    ``density`` may be (S,) or (S, k); in the latter case the (k, k) matrix
    of mutual energies is returned.
    """
    V = single_layer_matrix(a, b, nq)
    s = np.asarray(density, dtype=float)
    return 0.5 * (s.T @ V @ s)


# --------------------------------------------------------------------------
# Plane-strain elasticity (Kelvin solution)


def kelvin_operators(points, system, lame):
    """Integrated Kelvin kernels ``U`` and ``T`` for constant densities.

    Returns arrays of shape (P, 2, S, 2): ``U[i, :, j, :]`` maps a constant
    traction on segment ``j`` and ``T[i, :, j, :]`` a constant displacement
    on segment ``j`` to the displacement at point ``i``. Free terms are not
    included.
    """
    lam, mu = lame
    nu = lam / (2.0 * (lam + mu))
    p = np.asarray(points, dtype=float)
    a, b = system.a, system.b
    l0, ith, isg = segment_log_integrals(p[:, 0], p[:, 1], a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    tx, ty = system.tangents[:, 0][None, :], system.tangents[:, 1][None, :]
    L = system.lengths[None, :]
    rx = p[:, 0][:, None] - a[:, 0][None, :]
    ry = p[:, 1][:, None] - a[:, 1][None, :]
    xi = rx * tx + ry * ty
    eta = rx * ty - ry * tx
    s1, s2 = -xi, L - xi
    r1 = s1 * s1 + eta * eta
    r2 = s2 * s2 + eta * eta
    on_seg = (np.abs(eta) <= 1e-13 * L) & (s1 < 0) & (s2 > 0)
    eta = np.where(on_seg, 0.0, eta)

    a_ss = (s2 - s1) - eta * ith
    a_sn = eta * isg
    a_nn = eta * ith
    with np.errstate(divide="ignore", invalid="ignore"):
        j_nn = 0.5 * np.where(on_seg, 0.0, eta * (s2 / r2 - s1 / r1)) + 0.5 * ith
        j_sn = np.where(on_seg, 0.0, -0.5 * eta * eta * (1.0 / r2 - 1.0 / r1))
    j_ss = ith - j_nn

    t = system.tangents
    n = system.normals
    tt = np.einsum("si,sj->sij", t, t)[None]
    tn = np.einsum("si,sj->sij", t, n)[None]
    nn = np.einsum("si,sj->sij", n, n)[None]
    sym = tn + np.swapaxes(tn, -1, -2)
    skw = tn - np.swapaxes(tn, -1, -2)
    eye = np.eye(2)[None, None]
    E = lambda f: f[..., None, None]  # noqa: E731

    cu = 1.0 / (8.0 * np.pi * mu * (1.0 - nu))
    U = cu * (-(3.0 - 4.0 * nu) * E(l0) * eye + E(a_ss) * tt - E(a_sn) * sym + E(a_nn) * nn)
    ct = -1.0 / (4.0 * np.pi * (1.0 - nu))
    T = ct * (
        -(1.0 - 2.0 * nu) * E(ith) * eye
        - 2.0 * (E(j_ss) * tt - E(j_sn) * sym + E(j_nn) * nn)
        - (1.0 - 2.0 * nu) * E(isg) * skw
    )
    return np.transpose(U, (0, 2, 1, 3)), np.transpose(T, (0, 2, 1, 3))


def _elasticity_solution_operator(system, lame):
    S = len(system)
    U, T = kelvin_operators(system.midpoints, system, lame)
    U = U.reshape(2 * S, 2 * S)
    T = T.reshape(2 * S, 2 * S) + 0.5 * np.eye(2 * S)
    Pv, Pq, Cv, Cq = _pairing_maps(system, 2)
    if not np.any(system.kind == DIRICHLET):
        raise SingularSystemError("elasticity needs a Dirichlet part to fix rigid motions")
    X = _solve_operator(T, U, Pv, Pq, Cv, Cq)
    return Pv @ X + Cv, Pq @ X + Cq


def _affine_jumps(system, A):
    jump = np.zeros((len(system), 2))
    p = system.partner_index
    jump[p] = system.shift[p] @ np.asarray(A, dtype=float).T
    return jump


def solve_elasticity(system, lame, dirichlet, A=None):
    """Plane-strain Navier problem with Dirichlet and affine-periodic parts.

    Parameters
    ----------
    system : BoundarySystem
        DIRICHLET segments get the displacement ``dirichlet[i]``; on PARTNER
        segments ``u = u[base] + A @ shift`` and ``t = -t[base]``.
    lame : (lambda, mu)
    dirichlet : (S, 2) array
    A : (2, 2) symmetric macroscopic strain, default zero.
    """
    lam, mu = lame
    if mu <= 0.0 or lam + mu <= 0.0:
        raise ValueError("Lame constants must be positive definite")
    S = len(system)
    A = np.zeros((2, 2)) if A is None else np.asarray(A, float)
    if not np.allclose(A, A.T):
        raise ValueError("macroscopic strain must be symmetric")
    data = np.concatenate(
        [np.asarray(dirichlet, float).ravel(), _affine_jumps(system, A).ravel(), np.zeros(2 * S)]
    )
    Tv, Tq = _elasticity_solution_operator(system, lame)
    return BoundarySolution(system, (Tv @ data).reshape(S, 2), (Tq @ data).reshape(S, 2))


def boundary_energy(solution):
    """``1/2`` times the boundary integral of value times flux.

    For elasticity this is the stored energy of the domain; for Laplace it
    is the Dirichlet energy ``1/2 int |grad psi|^2``.
    """
    v = solution.value
    q = solution.flux
    L = solution.system.lengths
    if v.ndim == 1:
        return 0.5 * float(np.sum(L * v * q))
    return 0.5 * float(np.sum(L[:, None] * v * q))


class PolymerStiffness:
    """Energy of the polymer cell as a quadratic form of its boundary data.

    The boundary system is the cell boundary (affine-periodic) plus the
    particle polygon (Dirichlet, clockwise). ``energy(U, A)`` with ``U`` the
    particle midpoint displacements (n, 2) equals ``boundary_energy`` of the
    corresponding ``solve_elasticity`` call, with the quadratic form
    symmetrized and rigid translations of ``U`` projected out.
    """

    def __init__(self, particle_cw, m, lame, lattice=None):
        cell = periodic_cell(m, lattice)
        part = closed_curve(particle_cw, DIRICHLET)
        self.system = combine(cell, part)
        self.lame = tuple(lame)
        S = len(self.system)
        self.n_particle = len(part)
        self._pidx = np.arange(len(cell), S)
        Tv, Tq = _elasticity_solution_operator(self.system, self.lame)
        # data columns: particle Dirichlet values, then the 3 entries of A
        cols_u = np.concatenate([[2 * i, 2 * i + 1] for i in self._pidx])
        jump_cols = []
        for Ab in _SYM_BASIS:
            j = np.zeros(6 * S)
            j[2 * S : 4 * S] = _affine_jumps(self.system, Ab).ravel()
            jump_cols.append(j)
        J = np.column_stack(jump_cols)
        Mv = np.hstack([Tv[:, cols_u], Tv @ J])
        Mq = np.hstack([Tq[:, cols_u], Tq @ J])
        Lw = np.repeat(self.system.lengths, 2)
        Q = Mv.T @ (Lw[:, None] * Mq)
        Q = 0.5 * (Q + Q.T)
        # Symmetrizing leaves a translation/deformation coupling of the size of
        # the discrete equilibrium error; project it out so rigid translations
        # of the particle are exactly free.
        n = self.n_particle
        P = np.eye(2 * n + 3)
        P[: 2 * n, : 2 * n] -= np.kron(np.ones((n, n)) / n, np.eye(2))
        self.Q = P.T @ Q @ P
        self._Mv = Mv
        self._Mq = Mq

    def data_vector(self, U, A):
        A = np.zeros((2, 2)) if A is None else np.asarray(A, float)
        return np.concatenate([np.asarray(U, float).ravel(), [A[0, 0], A[1, 1], A[0, 1]]])

    def energy(self, U, A=None):
        d = self.data_vector(U, A)
        return 0.5 * float(d @ self.Q @ d)

    def solution(self, U, A=None):
        d = self.data_vector(U, A)
        S = len(self.system)
        return BoundarySolution(
            self.system, (self._Mv @ d).reshape(S, 2), (self._Mq @ d).reshape(S, 2)
        )


_SYM_BASIS = (
    np.array([[1.0, 0.0], [0.0, 0.0]]),
    np.array([[0.0, 0.0], [0.0, 1.0]]),
    np.array([[0.0, 1.0], [1.0, 0.0]]),
)
