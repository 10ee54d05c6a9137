import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msmsim import bem
from msmsim.config import MaterialParams
from msmsim.geometry import polygon_area

LAME = MaterialParams().lame
R = 0.3


def unit_circle(n):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.column_stack([np.cos(th), np.sin(th)])


def harmonic_flux_error(n):
    s = bem.closed_curve(unit_circle(n))
    mp = s.midpoints
    sol = bem.solve_laplace(s, dirichlet=mp[:, 0] ** 2 - mp[:, 1] ** 2)
    ang = np.arctan2(mp[:, 1], mp[:, 0])
    # radial derivative of r^2 cos(2 theta) at r = 1
    return np.abs(sol.flux - 2 * np.cos(2 * ang)).max()


def particle_cw(n, radius=R):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return 0.5 + radius * np.column_stack([np.cos(-t), np.sin(-t)])


def midpoints(P):
    return 0.5 * (P + np.roll(P, -1, 0))


@pytest.fixture(scope="module")
def stiffness128():
    P = particle_cw(128)
    return P, bem.PolymerStiffness(P, 32, LAME)


def test_collocation_points_inside_segments():
    s = bem.closed_curve(unit_circle(16))
    mp = s.midpoints
    # strictly between endpoints
    assert np.allclose(mp, 0.5 * (s.a + s.b))
    assert np.all(np.hypot(*(mp - s.a).T) > 0)


def test_harmonic_oracle_128():
    assert harmonic_flux_error(128) < 0.01 * 2.0


def test_harmonic_convergence():
    e = [harmonic_flux_error(n) for n in (64, 128, 256)]
    # at least first order: each halving of h at least halves the error
    assert e[0] / e[1] > 1.9
    assert e[1] / e[2] > 1.9


def test_constant_dirichlet_zero_flux():
    s = bem.closed_curve(unit_circle(64))
    sol = bem.solve_laplace(s, dirichlet=np.full(64, 3.0))
    assert np.abs(sol.flux).max() < 1e-10
    assert np.allclose(bem.laplace_potential(np.array([[0.2, -0.1]]), sol), 3.0)


def test_interior_potential():
    s = bem.closed_curve(unit_circle(256))
    mp = s.midpoints
    sol = bem.solve_laplace(s, dirichlet=mp[:, 0] ** 2 - mp[:, 1] ** 2)
    x = np.array([[0.3, 0.2], [-0.1, 0.4]])
    assert np.allclose(bem.laplace_potential(x, sol), x[:, 0] ** 2 - x[:, 1] ** 2, atol=1e-3)


def test_periodic_linear_potential():
    c = bem.periodic_cell(16)
    vj = np.zeros(len(c))
    vj[c.partner_index] = c.shift[c.partner_index, 0]
    sol = bem.solve_laplace(c, value_jump=vj)
    # psi = x up to a constant, (1/2) int |grad psi|^2 = 1/2
    assert bem.boundary_energy(sol) == pytest.approx(0.5, rel=5e-3)


def test_dirichlet_trace_reproduced(stiffness128):
    P, ps = stiffness128
    rng = np.random.default_rng(0)
    U = rng.normal(size=(len(P), 2)) * 1e-2
    sol = ps.solution(U, None)
    n = len(P)
    assert np.abs(sol.value[-n:] - U).max() < 1e-8


def test_affine_tractions(stiffness128):
    P, ps = stiffness128
    lam, mu = LAME
    B = np.array([[0.01, 0.02], [0.02, -0.005]])
    sig = lam * np.trace(B) * np.eye(2) + 2 * mu * B
    sol = ps.solution(midpoints(P) @ B.T, B)
    err = np.abs(sol.flux - sol.system.normals @ sig.T).max(axis=1)
    scale = np.abs(sig).max()
    n = len(P)
    assert err[-n:].max() < 0.01 * scale
    # the cell polygon has corners; constant elements carry an O(1) local
    # error on the two segments that touch each corner
    m = 32
    k = np.arange(4 * m) % m
    away = (k >= 2) & (k < m - 2)
    assert err[: 4 * m][away].max() < 0.01 * scale
    assert np.abs(sol.value[: 4 * m] - sol.system.midpoints[: 4 * m] @ B.T).max() < 5e-3 * np.abs(B).max()


def test_affine_energy_converges():
    lam, mu = LAME
    b = 0.01
    B = np.diag([b, -b])
    rel = []
    for n, m in ((32, 8), (64, 16), (128, 32)):
        P = particle_cw(n)
        ps = bem.PolymerStiffness(P, m, LAME)
        E = ps.energy(midpoints(P) @ B.T, B)
        exact = 2 * mu * b * b * (1 - abs(polygon_area(P)))
        rel.append(abs(E / exact - 1))
    assert rel[-1] < 0.01
    assert rel[0] > rel[1] > rel[2]


def test_translation_equilibrium(stiffness128):
    P, ps = stiffness128
    n = len(P)
    sol = ps.solution(np.tile([0.01, -0.004], (n, 1)), None)
    assert np.abs(sol.value).max() > 1e-3
    resultant = (sol.flux[-n:] * sol.system.lengths[-n:, None]).sum(axis=0)
    assert np.abs(resultant).max() < 1e-6


def test_zero_data_zero_solution(stiffness128):
    P, ps = stiffness128
    sol = ps.solution(np.zeros((len(P), 2)), np.zeros((2, 2)))
    assert np.all(sol.value == 0.0) and np.all(sol.flux == 0.0)
    assert ps.energy(np.zeros((len(P), 2))) == 0.0


def test_stiffness_symmetric_psd(stiffness128):
    _, ps = stiffness128
    Q = ps.Q
    assert np.allclose(Q, Q.T, atol=1e-12 * np.abs(Q).max())
    assert np.linalg.eigvalsh(Q).min() > -1e-8 * np.abs(Q).max()


@settings(max_examples=30, deadline=None)
@given(
    U=arrays(np.float64, (32, 2), elements=st.floats(-0.05, 0.05)),
    A=arrays(np.float64, 3, elements=st.floats(-0.05, 0.05)),
)
def test_energy_nonnegative(U, A):
    ps = _small_stiffness()
    A = np.array([[A[0], A[2]], [A[2], A[1]]])
    assert ps.energy(U, A) >= -1e-10


_cache = {}


def _small_stiffness():
    if "ps" not in _cache:
        _cache["ps"] = bem.PolymerStiffness(particle_cw(32), 8, LAME)
    return _cache["ps"]


def test_elasticity_rejects_bad_input():
    c = bem.periodic_cell(8)
    with pytest.raises(bem.SingularSystemError):
        bem.solve_elasticity(c, LAME, np.zeros((len(c), 2)))
    s = bem.closed_curve(unit_circle(16))
    with pytest.raises(ValueError):
        bem.solve_elasticity(s, LAME, np.zeros((16, 2)), A=np.array([[0, 1.0], [0, 0]]))


def disk_layer(n, radius):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    a = radius * np.column_stack([np.cos(t), np.sin(t)])
    b = np.roll(a, -1, 0)
    nu = np.column_stack([np.cos(t + np.pi / n), np.sin(t + np.pi / n)])
    return a, b, nu[:, 0]


@pytest.mark.parametrize("radius", [0.2, 0.3, 0.4])
def test_uniform_disk_demag(radius):
    a, b, sigma = disk_layer(128, radius)
    E = bem.single_layer_interaction(a, b, sigma)
    assert E == pytest.approx(np.pi * radius**2 / 4, rel=0.01)


def test_single_layer_properties():
    a, b, sigma = disk_layer(64, R)
    V = bem.single_layer_matrix(a, b)
    assert np.allclose(V, V.T, atol=1e-10)
    assert bem.single_layer_interaction(a, b, np.zeros(64)) == 0.0
    assert bem.single_layer_interaction(a, b, -sigma) == pytest.approx(bem.single_layer_interaction(a, b, sigma))
    # columns give the matrix of mutual energies
    M = bem.single_layer_interaction(a, b, np.column_stack([sigma, 2 * sigma]))
    assert M.shape == (2, 2)
    assert M[1, 1] == pytest.approx(4 * M[0, 0])
