"""Cell and particle polygons, the reduced twin kinematics and area bookkeeping.

Twin frame: for a twin line with normal angle ``angle`` we use
``n = (cos angle, sin angle)`` and ``t = (-sin angle, cos angle)``. With
``s(x) = (x - center)·n - offset``, points with ``s > 0`` form the "+" side.

The particle displacement is

    u(x) = c + (omega*J + s_t t⊗t)(x - center) + abar*s(x) + ahat*|s(x)|

with ``a± = gamma± t + e± n``, ``abar = (a+ + a-)/2`` and
``ahat = (a+ - a-)/2``. It is continuous across the line and its gradient
jumps by ``(a+ - a-)⊗n``. The eight dofs are stored as
``[c_x, c_y, omega, s_t, gamma+, gamma-, e+, e-]``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

N_KIN = 8
IDX_C = slice(0, 2)
IDX_OMEGA = 2
IDX_ST = 3
IDX_GAMMA = (4, 5)  # (+, -)
IDX_E = (6, 7)

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def twin_frame(angle):
    """Tangent and normal ``(t, n)`` of a twin line."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([-s, c]), np.array([c, s])


@dataclass(frozen=True)
class TwinLine:
    angle: float
    offset: float

    @property
    def tangent(self):
        return twin_frame(self.angle)[0]

    @property
    def normal(self):
        return twin_frame(self.angle)[1]


def sym(M):
    return 0.5 * (M + M.T)


@dataclass
class State:
    """Reduced description of displacement, magnetization and phase.

    ``plus_phase`` is the phase (1 or 2) occupying the "+" side of the twin
    line; the other side carries the other phase.
    """

    twin: TwinLine
    dofs: np.ndarray = field(default_factory=lambda: np.zeros(N_KIN))
    mag_angle: np.ndarray = field(default_factory=lambda: np.zeros(2))
    A: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    plus_phase: int = 2

    def __post_init__(self):
        self.dofs = np.array(self.dofs, dtype=float).reshape(N_KIN)
        self.mag_angle = np.array(self.mag_angle, dtype=float).reshape(2)
        self.A = np.array(self.A, dtype=float).reshape(2, 2)
        if not np.allclose(self.A, self.A.T, atol=1e-15):
            raise ValueError("macroscopic strain A must be symmetric")
        if self.plus_phase not in (1, 2):
            raise ValueError("plus_phase must be 1 or 2")

    def copy(self, **changes):
        base = replace(
            self, dofs=self.dofs.copy(), mag_angle=self.mag_angle.copy(), A=self.A.copy()
        )
        return replace(base, **changes) if changes else base

    @property
    def side_phases(self):
        """Phases on the ``(+, -)`` sides."""
        return (self.plus_phase, 3 - self.plus_phase)

    def magnetization(self, phase):
        """Unit magnetization of the twin carrying ``phase``; index 0 of
        ``mag_angle`` belongs to phase 1."""
        th = self.mag_angle[phase - 1]
        return np.array([np.cos(th), np.sin(th)])

    def side_vectors(self):
        """Jump vectors ``(a+, a-)``."""
        t, n = twin_frame(self.twin.angle)
        k = self.dofs
        ap = k[IDX_GAMMA[0]] * t + k[IDX_E[0]] * n
        am = k[IDX_GAMMA[1]] * t + k[IDX_E[1]] * n
        return ap, am

    def common_gradient(self):
        t, _ = twin_frame(self.twin.angle)
        return self.dofs[IDX_OMEGA] * _J + self.dofs[IDX_ST] * np.outer(t, t)

    def side_gradients(self):
        """Displacement gradients ``(G+, G-)`` of the two twins."""
        _, n = twin_frame(self.twin.angle)
        W = self.common_gradient()
        ap, am = self.side_vectors()
        return W + np.outer(ap, n), W + np.outer(am, n)

    def phase_gradient(self, phase):
        Gp, Gm = self.side_gradients()
        return Gp if phase == self.plus_phase else Gm


def _signed_distance(twin, x, center):
    _, n = twin_frame(twin.angle)
    return (np.asarray(x, float) - center) @ n - twin.offset


def regularized_abs(s, delta):
    """``sqrt(s^2 + delta^2) - delta``, a smooth stand-in for ``|s|``."""
    if delta is None or delta == 0.0:
        return np.abs(s)
    return np.sqrt(s * s + delta * delta) - delta


def displacement_jacobian(twin, x, center, delta=None):
    """Matrix ``J`` of shape (N, 2, 8) with ``u(x) = J @ dofs``.

    The displacement is linear in the eight kinematic dofs for a fixed twin
    line. With ``delta`` the kink ``|s|`` is replaced by its regularization.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t, n = twin_frame(twin.angle)
    r = x - center
    s = r @ n - twin.offset
    k = regularized_abs(s, delta)
    N = x.shape[0]
    Jm = np.zeros((N, 2, N_KIN))
    Jm[:, 0, 0] = 1.0
    Jm[:, 1, 1] = 1.0
    Jm[:, :, IDX_OMEGA] = r @ _J.T
    Jm[:, :, IDX_ST] = np.outer(r @ t, t)
    # abar*s + ahat*k = a+ (s + k)/2 + a- (s - k)/2
    wp = 0.5 * (s + k)
    wm = 0.5 * (s - k)
    Jm[:, :, IDX_GAMMA[0]] = np.outer(wp, t)
    Jm[:, :, IDX_GAMMA[1]] = np.outer(wm, t)
    Jm[:, :, IDX_E[0]] = np.outer(wp, n)
    Jm[:, :, IDX_E[1]] = np.outer(wm, n)
    return Jm


def particle_displacement(state, x, center):
    """Piecewise-affine twin displacement at points ``x`` (N, 2) or (2,)."""
    x = np.asarray(x, dtype=float)
    u = displacement_jacobian(state.twin, x, center) @ state.dofs
    return u[0] if x.ndim == 1 else u


def regularized_boundary_displacement(state, x, center, delta):
    """Particle displacement with the kink evaluated at the regularized distance."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    u = displacement_jacobian(state.twin, x, center, delta) @ state.dofs
    return u[0] if x.ndim == 1 else u


# --------------------------------------------------------------------------
# polygons


def polygon_area(P):
    """Signed shoelace area (positive for counterclockwise)."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] < 3:
        return 0.0
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_halfplane(P, normal, level, keep="below"):
    """Sutherland-Hodgman clip of polygon ``P`` to ``x·normal <= level``
    (``keep="below"``) or ``>= level`` (``keep="above"``)."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        return P
    sgn = 1.0 if keep == "below" else -1.0
    f = sgn * (P @ normal - level)
    out = []
    n = P.shape[0]
    for i in range(n):
        j = (i + 1) % n
        fi, fj = f[i], f[j]
        if fi <= 0.0:
            out.append(P[i])
        if (fi < 0.0 < fj) or (fj < 0.0 < fi):
            lam = fi / (fi - fj)
            out.append(P[i] + lam * (P[j] - P[i]))
    return np.array(out).reshape(-1, 2)


def line_polygon_chord(P, normal, level):
    """Endpoints of the intersection of a convex polygon with a line.

    Returns a (2, 2) array ordered along the line tangent ``(-n_y, n_x)``,
    or ``None`` if the line misses the interior.
    """
    f = P @ normal - level
    pts = []
    n = P.shape[0]
    for i in range(n):
        j = (i + 1) % n
        if (f[i] < 0.0 < f[j]) or (f[j] < 0.0 < f[i]):
            lam = f[i] / (f[i] - f[j])
            pts.append(P[i] + lam * (P[j] - P[i]))
        elif f[i] == 0.0 and (f[(i - 1) % n] != 0.0 or f[j] != 0.0):
            pts.append(P[i].copy())
    if len(pts) < 2:
        return None
    pts = np.array(pts)
    t = np.array([-normal[1], normal[0]])
    proj = pts @ t
    out = np.array([pts[np.argmin(proj)], pts[np.argmax(proj)]])
    if np.hypot(*(out[1] - out[0])) == 0.0:
        return None
    return out


# --------------------------------------------------------------------------
# mesh


@dataclass
class CellMesh:
    """Reference polygons of the unit cell and the particle.

    ``particle`` is counterclockwise; ``cell_vertices`` lists the cell
    boundary counterclockwise with ``m`` segments per side.
    """

    radius: float
    center: np.ndarray
    particle: np.ndarray
    cell_vertices: np.ndarray
    segments_per_side: int
    h: float
    delta: float
    twin_chord: np.ndarray = None
    chord_segments: int = 1

    @property
    def n_segments(self):
        return self.particle.shape[0]

    @property
    def particle_area(self):
        return polygon_area(self.particle)

    @property
    def particle_midpoints(self):
        return 0.5 * (self.particle + np.roll(self.particle, -1, axis=0))

    def support(self, angle):
        """Largest projection of the particle polygon on the twin normal."""
        _, n = twin_frame(angle)
        return float(np.max((self.particle - self.center) @ n))

    def chord(self, twin):
        """Twin chord endpoints for ``twin`` (None if it misses the particle)."""
        _, n = twin_frame(twin.angle)
        return line_polygon_chord(self.particle, n, self.center @ n + twin.offset)

    def chord_points(self, twin):
        """Chord subdivided into ``chord_segments`` equal pieces (k+1 points)."""
        ends = self.chord(twin)
        if ends is None:
            return None
        u = np.linspace(0.0, 1.0, self.chord_segments + 1)[:, None]
        return ends[0] + u * (ends[1] - ends[0])


def discretize_cell(config, twin=None):
    """Polygonal mesh for ``config`` (twin chord drawn for ``twin`` if given,
    else the initial line through the center)."""
    g = config.geometry
    s = config.solver
    n = s.n_boundary_segments
    m = s.cell_segments_per_side
    R = g.particle_radius
    center = np.array([0.5, 0.5])
    th = 2.0 * np.pi * np.arange(n) / n
    particle = center + R * np.column_stack([np.cos(th), np.sin(th)])
    sv = np.arange(m) / m
    cell = np.vstack(
        [
            np.column_stack([sv, np.zeros(m)]),
            np.column_stack([np.ones(m), sv]),
            np.column_stack([1.0 - sv, np.ones(m)]),
            np.column_stack([np.zeros(m), 1.0 - sv]),
        ]
    )
    h = 2.0 * R * np.sin(np.pi / n)
    mesh = CellMesh(
        radius=R,
        center=center,
        particle=particle,
        cell_vertices=cell,
        segments_per_side=m,
        h=h,
        delta=s.delta_over_h * h,
        chord_segments=max(1, int(round(2.0 * R / h))),
    )
    if twin is None:
        twin = TwinLine(initial_twin_angle(config), 0.0)
    mesh.twin_chord = mesh.chord_points(twin)
    return mesh


def initial_twin_angle(config):
    """Normal angle of the rank-one compatible twin plane (45° to the lattice)."""
    return np.pi / 4.0 + config.geometry.lattice_angle


def twin_partition(mesh, twin, plus_phase=2):
    """Split the particle polygon along ``twin``.

    Returns ``(area_1, area_2, polygon_1, polygon_2)`` for phases 1 and 2.
    """
    _, n = twin_frame(twin.angle)
    level = mesh.center @ n + twin.offset
    minus = clip_halfplane(mesh.particle, n, level, "below")
    plus = clip_halfplane(mesh.particle, n, level, "above")
    a_minus, a_plus = polygon_area(minus), polygon_area(plus)
    if plus_phase == 1:
        return a_plus, a_minus, plus, minus
    return a_minus, a_plus, minus, plus


def volume_fraction(state, mesh):
    """Area fraction of phase 1 in the particle."""
    a1, a2, _, _ = twin_partition(mesh, state.twin, state.plus_phase)
    return a1 / (a1 + a2)


def phase1_region(mesh, twin, plus_phase=2):
    return twin_partition(mesh, twin, plus_phase)[2]


def intersection_area(mesh, twin_a, twin_b, plus_a=2, plus_b=2):
    """Area of the intersection of the phase-1 regions of two twin lines."""
    P = phase1_region(mesh, twin_a, plus_a)
    _, n = twin_frame(twin_b.angle)
    level = mesh.center @ n + twin_b.offset
    P = clip_halfplane(P, n, level, "above" if plus_b == 1 else "below")
    return polygon_area(P)


def symmetric_difference_area(mesh, twin_a, twin_b, plus_a=2, plus_b=2):
    """Area of the symmetric difference of the phase-1 regions."""
    a = polygon_area(phase1_region(mesh, twin_a, plus_a))
    b = polygon_area(phase1_region(mesh, twin_b, plus_b))
    c = intersection_area(mesh, twin_a, twin_b, plus_a, plus_b)
    return max(0.0, a + b - 2.0 * c)
