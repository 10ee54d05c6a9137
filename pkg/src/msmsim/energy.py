"""The five energy contributions, the demagnetization splitting and FD gradients.

All energies are in MPa times cell area (cell side 1). Magnetic terms are
evaluated on the deformed twins. The common rotation dof ``omega`` is
applied as an exact rotation, so each twin maps by
``x -> R(omega) (I + G - omega J) x``; a linearized rotation ``I + omega J``
would inflate areas by ``1 + omega^2``. Areas carry ``det(I + G - omega J)``.

Demagnetization reduces to a 4x4 matrix ``D`` acting on the stacked
magnetizations ``M = (m1, m2)`` because the charge density on every
interface is a fixed linear function of ``M`` for a given geometry:
``E_demag = (Ms^2/mu0) * M^T D M``. ``D`` is cached per geometry.
"""

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import bem
from .geometry import (
    IDX_GAMMA,
    IDX_OMEGA,
    N_KIN,
    State,
    TwinLine,
    clip_halfplane,
    displacement_jacobian,
    discretize_cell,
    polygon_area,
    sym,
    twin_frame,
)
from .kernels import segment_log_integrals

_TWO_PI = 2.0 * np.pi
# demagnetizing factor of a disk-shaped workpiece in 2D
DISK_DEMAG_FACTOR = 0.5


@dataclass(frozen=True)
class EnergyBreakdown:
    e_matrix: float
    e_particle: float
    e_zeeman: float
    e_demag: float
    e_anis: float

    @property
    def total(self):
        return self.e_matrix + self.e_particle + self.e_zeeman + self.e_demag + self.e_anis

    def as_dict(self):
        return {
            "e_matrix": self.e_matrix,
            "e_particle": self.e_particle,
            "e_zeeman": self.e_zeeman,
            "e_demag": self.e_demag,
            "e_anis": self.e_anis,
            "total": self.total,
        }


class DofLayout:
    """Ordering of the optimization vector ``z``.

    ``[offset, (angle), c_x, c_y, omega, s_t, gamma+, gamma-, e+, e-,
    theta_1, theta_2, (A11, A22, A12)]``; entries in parentheses only when
    freed. ``phase_index`` lists the entries describing the phase.
    """

    def __init__(self, free_angle=False, free_A=False):
        self.free_angle = bool(free_angle)
        self.free_A = bool(free_A)
        i = 0
        self.offset = i
        i += 1
        self.angle = None
        if self.free_angle:
            self.angle = i
            i += 1
        self.kin = slice(i, i + N_KIN)
        i += N_KIN
        self.theta = slice(i, i + 2)
        i += 2
        self.A = None
        if self.free_A:
            self.A = slice(i, i + 3)
            i += 3
        self.size = i
        self.phase_index = [self.offset] + ([self.angle] if self.free_angle else [])

    def pack(self, state):
        z = np.empty(self.size)
        z[self.offset] = state.twin.offset
        if self.free_angle:
            z[self.angle] = state.twin.angle
        z[self.kin] = state.dofs
        z[self.theta] = state.mag_angle
        if self.free_A:
            z[self.A] = (state.A[0, 0], state.A[1, 1], state.A[0, 1])
        return z

    def unpack(self, z, template):
        angle = z[self.angle] if self.free_angle else template.twin.angle
        if self.free_A:
            a11, a22, a12 = z[self.A]
            A = np.array([[a11, a12], [a12, a22]])
        else:
            A = template.A
        return State(
            twin=TwinLine(float(angle), float(z[self.offset])),
            dofs=z[self.kin],
            mag_angle=z[self.theta],
            A=A,
            plus_phase=template.plus_phase,
        )

    def names(self):
        out = ["offset"] + (["angle"] if self.free_angle else [])
        out += ["c_x", "c_y", "omega", "s_t", "gamma_p", "gamma_m", "e_p", "e_m"]
        out += ["theta_1", "theta_2"]
        if self.free_A:
            out += ["A11", "A22", "A12"]
        return out


_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def _det2(M):
    return M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def cubic_density(eps, C11, C12, C44):
    """``1/2 C11 (tr e)^2 + (C12 - C11) e11 e22 + 2 C44 e12^2``."""
    tr = eps[0, 0] + eps[1, 1]
    return 0.5 * C11 * tr * tr + (C12 - C11) * eps[0, 0] * eps[1, 1] + 2.0 * C44 * eps[0, 1] ** 2


def eigenstrains(material, reference_phase):
    """Eigenstrains ``(eps_1, eps_2)`` in lattice coordinates."""
    e0 = material.eps0
    e1 = np.array([[-e0, 0.0], [0.0, e0]])
    e2 = -e1
    if reference_phase == "martensite":
        return e1 - e2, np.zeros((2, 2))
    return e1, e2


def anisotropy_density(phase, m):
    """``phi_1(m) = m_2^2`` (easy axis x), ``phi_2(m) = m_1^2`` (easy axis y)."""
    return m[1] ** 2 if phase == 1 else m[0] ** 2


def nearest_rotation_angle(G):
    """Angle of the rotation nearest to ``I + skew(G)``."""
    w = 0.5 * (G[1, 0] - G[0, 1])
    return np.arctan(w)


def effective_field(H, mean_magnetization, workpiece, saturation_field=0.62):
    """External field corrected for the stray field of the whole workpiece.

    ``mean_magnetization`` is the cell-averaged magnetization in units of
    the saturation magnetization (so it already carries the volume fraction).
    """
    H = np.asarray(H, dtype=float)
    if workpiece == "none":
        return H.copy()
    if workpiece == "circular":
        return H - DISK_DEMAG_FACTOR * saturation_field * np.asarray(mean_magnetization, float)
    raise ValueError(f"unsupported workpiece shape {workpiece!r}")


class _LRU(OrderedDict):
    def __init__(self, maxsize):
        super().__init__()
        self.maxsize = maxsize

    def get_or(self, key, fn):
        if key in self:
            self.move_to_end(key)
            return self[key]
        val = fn()
        self[key] = val
        if len(self) > self.maxsize:
            self.popitem(last=False)
        return val


class EnergyModel:
    """Energy of a configuration on a fixed mesh.

    Parameters
    ----------
    config : SimulationConfig
    mesh : CellMesh, optional
    periodic_demag : bool
        Include the periodic correction ``psi_P`` (disable to get the stray
        field energy of an isolated particle).
    """

    def __init__(self, config, mesh=None, periodic_demag=True):
        self.config = config
        self.material = config.material
        self.geometry = config.geometry
        self.solver = config.solver
        self.mesh = discretize_cell(config) if mesh is None else mesh
        self.center = self.mesh.center
        self.delta = self.mesh.delta
        self.periodic_demag = periodic_demag
        self.layout = DofLayout(self.solver.free_twin_angle, self.solver.free_macro_strain)
        self.Q = rotation(self.geometry.lattice_angle)
        self.eps_p = eigenstrains(self.material, self.geometry.reference_phase)
        # the polymer sees the particle boundary clockwise
        self._particle_cw = self.mesh.particle[::-1].copy()
        self._pmid_cw = 0.5 * (self._particle_cw + np.roll(self._particle_cw, -1, axis=0))
        self._stiffness = None
        self._jac_cache = _LRU(64)
        self._demag_cache = _LRU(256)
        self._cell_cache = _LRU(16)
        self._part_cache = _LRU(64)

    # -- polymer ---------------------------------------------------------
    @property
    def stiffness(self):
        if self._stiffness is None:
            self._stiffness = bem.PolymerStiffness(
                self._particle_cw,
                self.solver.cell_segments_per_side,
                self.material.lame,
            )
        return self._stiffness

    def boundary_jacobian(self, twin):
        """Linear map from the kinematic dofs to regularized displacements at
        the (clockwise) particle collocation points, shape (2n, 8)."""
        key = (twin.angle, twin.offset)
        return self._jac_cache.get_or(
            key,
            lambda: displacement_jacobian(twin, self._pmid_cw, self.center, self.delta).reshape(
                -1, N_KIN
            ),
        )

    def matrix_energy(self, state):
        U = self.boundary_jacobian(state.twin) @ state.dofs
        return self.stiffness.energy(U.reshape(-1, 2), state.A)

    def matrix_solution(self, state):
        U = self.boundary_jacobian(state.twin) @ state.dofs
        return self.stiffness.solution(U.reshape(-1, 2), state.A)

    # -- particle --------------------------------------------------------
    def phase_areas(self, twin, plus_phase=2):
        """Reference areas and polygons ``{phase: (area, polygon)}``."""
        key = (twin.angle, twin.offset, plus_phase)

        def build():
            _, n = twin_frame(twin.angle)
            level = self.center @ n + twin.offset
            minus = clip_halfplane(self.mesh.particle, n, level, "below")
            plus = clip_halfplane(self.mesh.particle, n, level, "above")
            out = {
                plus_phase: (polygon_area(plus), plus, +1),
                3 - plus_phase: (polygon_area(minus), minus, -1),
            }
            return out

        return self._part_cache.get_or(key, build)

    def particle_energy(self, state):
        mat = self.material
        Gp, Gm = state.side_gradients()
        e = 0.0
        for phase, (area, _, side) in self.phase_areas(state.twin, state.plus_phase).items():
            if area <= 0.0:
                continue
            G = Gp if side > 0 else Gm
            eps = self.Q.T @ sym(G) @ self.Q - self.eps_p[phase - 1]
            e += area * cubic_density(eps, mat.C11, mat.C12, mat.C44)
        return e

    # -- magnetic (local) ------------------------------------------------
    def _deformed_twins(self, state):
        """``[(phase, deformed area, G)]`` for the non-empty twins."""
        Gp, Gm = state.side_gradients()
        W = state.dofs[IDX_OMEGA] * _J
        out = []
        for phase, (area, _, side) in self.phase_areas(state.twin, state.plus_phase).items():
            if area <= 0.0:
                continue
            G = Gp if side > 0 else Gm
            out.append((phase, area * _det2(np.eye(2) + G - W), G))
        return out

    def zeeman_energy(self, state, H):
        H = np.asarray(H, dtype=float)
        e = 0.0
        for phase, area, _ in self._deformed_twins(state):
            e -= area * float(H @ state.magnetization(phase))
        return self.material.Ms_over_mu0 * e

    def zeeman_rate(self, state, dH):
        """Time derivative of the energy for a field changing at rate ``dH``
        (only the Zeeman term depends on time)."""
        return self.zeeman_energy(state, dH)

    def anisotropy_energy(self, state):
        e = 0.0
        for phase, area, G in self._deformed_twins(state):
            R = rotation(nearest_rotation_angle(G))
            m = (R @ self.Q).T @ state.magnetization(phase)
            e += area * anisotropy_density(phase, m)
        return self.material.Ku * e

    def mean_magnetization(self, state):
        """Cell average of the magnetization (deformed areas, unit ``Ms``)."""
        M = np.zeros(2)
        for phase, area, _ in self._deformed_twins(state):
            M += area * state.magnetization(phase)
        return M / self.cell_area(state.A)

    def particle_mean_magnetization(self, state):
        """Magnetization averaged over the (deformed) particle only."""
        M = np.zeros(2)
        tot = 0.0
        for phase, area, _ in self._deformed_twins(state):
            M += area * state.magnetization(phase)
            tot += area
        return M / tot

    @staticmethod
    def cell_area(A):
        return float(np.linalg.det(np.eye(2) + A))

    # -- demagnetization -------------------------------------------------
    def demag_geometry(self, state):
        """Charged segments of the deformed particle.

        Returns ``(a, b, Lam)``: segment endpoints and the (S, 4) matrix with
        ``density = Lam @ (m1x, m1y, m2x, m2y)``. The particle is translated
        so that its center sits at ``(I + A) center``; translations do not
        change the periodic energy.
        """
        t_, n_ = twin_frame(state.twin.angle)
        Gp, Gm = state.side_gradients()
        ap, am = state.side_vectors()
        F = np.eye(2) + state.A
        base = F @ self.center
        d = state.twin.offset
        segs_a, segs_b, rows = [], [], []
        areas = self.phase_areas(state.twin, state.plus_phase)

        R = rotation(state.dofs[IDX_OMEGA])
        W = state.dofs[IDX_OMEGA] * _J

        def mapper(G, a):
            # x -> x + u(x) - c with the common rotation made exact,
            # re-centred at F @ center
            M = R @ (np.eye(2) + G - W)
            Ra = R @ a
            return lambda X: base + (X - self.center) @ M.T - d * Ra

        for phase, (area, poly, side) in areas.items():
            if area <= 0.0:
                continue
            G, a = (Gp, ap) if side > 0 else (Gm, am)
            f = mapper(G, a)
            s = (poly - self.center) @ n_ - d
            on_line = np.abs(s) <= 1e-12
            P = f(poly)
            nv = P.shape[0]
            cols = slice(2 * (phase - 1), 2 * phase)
            for i in range(nv):
                j = (i + 1) % nv
                if on_line[i] and on_line[j]:
                    if phase != 1:
                        continue  # chord is emitted once, oriented as phase 1's edge
                    k = self.mesh.chord_segments
                    u = np.linspace(0.0, 1.0, k + 1)[:, None]
                    pts = P[i] + u * (P[j] - P[i])
                    for q in range(k):
                        segs_a.append(pts[q])
                        segs_b.append(pts[q + 1])
                        rows.append(("chord", None))
                    continue
                segs_a.append(P[i])
                segs_b.append(P[j])
                rows.append(("edge", cols))
        a = np.array(segs_a).reshape(-1, 2)
        b = np.array(segs_b).reshape(-1, 2)
        L = np.hypot(*(b - a).T)
        keep = L > 1e-14
        a, b = a[keep], b[keep]
        rows = [r for r, k in zip(rows, keep) if k]
        tau = (b - a) / np.hypot(*(b - a).T)[:, None]
        nu = np.column_stack([tau[:, 1], -tau[:, 0]])
        Lam = np.zeros((a.shape[0], 4))
        for i, (kind, cols) in enumerate(rows):
            if kind == "chord":
                Lam[i, 0:2] = nu[i]
                Lam[i, 2:4] = -nu[i]
            else:
                Lam[i, cols] = nu[i]
        return a, b, Lam

    def _cell_solver(self, A):
        key = tuple(np.asarray(A, float).ravel())
        return self._cell_cache.get_or(
            key,
            lambda: bem.PeriodicLaplaceCell(
                self.solver.laplace_segments_per_side, np.eye(2) + np.asarray(A, float)
            ),
        )

    def demag_matrix(self, state):
        """Symmetric 4x4 matrix ``D`` with ``E_demag = (Ms^2/mu0) M^T D M``."""
        k = state.dofs
        key = (
            state.twin.angle,
            state.twin.offset,
            state.plus_phase,
            tuple(k[IDX_OMEGA:]),
            tuple(state.A.ravel()),
        )
        return self._demag_cache.get_or(key, lambda: self._compute_demag_matrix(state))

    def _compute_demag_matrix(self, state):
        a, b, Lam = self.demag_geometry(state)
        V = bem.single_layer_matrix(a, b, self.solver.quadrature_points)
        D = 0.5 * Lam.T @ V @ Lam
        if self.periodic_demag:
            D = D + self._periodic_correction(state.A, a, b, Lam)
        if self.geometry.workpiece == "circular":
            w = np.zeros((2, 4))
            for phase, area, _ in self._deformed_twins(state):
                w[:, 2 * (phase - 1) : 2 * phase] = area * np.eye(2)
            w /= self.cell_area(state.A)
            # (1/2) * N * |M|^2 with demagnetizing factor N of a disk
            D = D + 0.5 * DISK_DEMAG_FACTOR * w.T @ w
        return 0.5 * (D + D.T)

    def _periodic_correction(self, A, a, b, Lam):
        cell = self._cell_solver(A)
        sysc = cell.system
        mp = sysc.midpoints
        l0, ith, isg = segment_log_integrals(mp[:, 0], mp[:, 1], a[:, 0], a[:, 1], b[:, 0], b[:, 1])
        L = np.hypot(*(b - a).T)
        tau = (b - a) / L[:, None]
        nu = np.column_stack([tau[:, 1], -tau[:, 0]])
        psiJ = (-l0 / _TWO_PI) @ Lam
        # grad_x of int log|x - y| = -tau*I_sigma + nu*I_theta
        gx = -(isg * tau[None, :, 0]) + ith * nu[None, :, 0]
        gy = -(isg * tau[None, :, 1]) + ith * nu[None, :, 1]
        nc = sysc.normals
        qJ = (-(gx * nc[:, 0:1] + gy * nc[:, 1:2]) / _TWO_PI) @ Lam
        vals, flux = cell.correction_for(psiJ, qJ)
        gmid = 0.5 * (a + b)
        psiP = cell.potential(gmid, vals, flux)
        return 0.5 * Lam.T @ (L[:, None] * psiP)

    def demag_energy(self, state):
        M = np.concatenate([state.magnetization(1), state.magnetization(2)])
        D = self.demag_matrix(state)
        return self.material.Ms2_over_mu0 * float(M @ D @ M)

    # -- totals ----------------------------------------------------------
    def breakdown(self, state, H):
        return EnergyBreakdown(
            e_matrix=float(self.matrix_energy(state)),
            e_particle=float(self.particle_energy(state)),
            e_zeeman=float(self.zeeman_energy(state, H)),
            e_demag=float(self.demag_energy(state)),
            e_anis=float(self.anisotropy_energy(state)),
        )

    def total(self, state, H):
        return self.breakdown(state, H).total

    def cheap_energy(self, state, H):
        """Every term except demagnetization (used for preconditioning)."""
        return (
            self.matrix_energy(state)
            + self.particle_energy(state)
            + self.zeeman_energy(state, H)
            + self.anisotropy_energy(state)
        )

    # -- vectorised interface over z ---------------------------------------
    def energy_z(self, z, template, H):
        return self.total(self.layout.unpack(z, template), H)

    def gradient_z(self, z, template, H, step=None, fn=None):
        """Central finite differences of the energy in ``z``."""
        h = self.solver.fd_step if step is None else step
        f = (lambda zz: self.energy_z(zz, template, H)) if fn is None else fn
        g = np.empty_like(z)
        for i in range(z.size):
            zp = z.copy()
            zm = z.copy()
            zp[i] += h
            zm[i] -= h
            g[i] = (f(zp) - f(zm)) / (2.0 * h)
        return g


def total_energy(model, t, state, protocol):
    """Energy breakdown at time ``t`` of ``protocol``."""
    return model.breakdown(state, protocol.H(t))


def energy_gradient(model, t, state, protocol, step=None):
    """FD gradient over the optimization vector of ``model.layout``."""
    z = model.layout.pack(state)
    return model.gradient_z(z, state, protocol.H(t), step)


# module-level shorthands mirroring the per-term API
def particle_elastic_energy(model, state):
    return model.particle_energy(state)


def matrix_elastic_energy(model, state):
    return model.matrix_energy(state)


def zeeman_energy(model, state, H):
    return model.zeeman_energy(state, H)


def anisotropy_energy(model, state):
    return model.anisotropy_energy(state)


def demag_energy(model, state):
    return model.demag_energy(state)


def initial_state(config, model=None):
    """50:50 twin through the particle center at the rank-one angle.

    Each twin carries its eigenstrain as a tangential shear; phase 1 is
    magnetized along x and phase 2 along y.
    """
    from .geometry import initial_twin_angle

    e0 = config.material.eps0
    twin = TwinLine(initial_twin_angle(config), 0.0)
    k = np.zeros(N_KIN)
    if config.geometry.reference_phase == "martensite":
        gp, gm = 0.0, 4.0 * e0
    else:
        gp, gm = -2.0 * e0, 2.0 * e0
    # phase 1 lives on the "-" side
    k[IDX_GAMMA[0]] = gp
    k[IDX_GAMMA[1]] = gm
    lat = config.geometry.lattice_angle
    return State(twin=twin, dofs=k, mag_angle=np.array([lat, lat + np.pi / 2]), plus_phase=2)
