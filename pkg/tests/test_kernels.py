import os
import subprocess
import sys

import numpy as np
import pytest

from msmsim import kernels
from msmsim.kernels import _fallback


def random_segments(rng, n):
    a = rng.uniform(-1, 1, size=(n, 2))
    b = a + rng.uniform(-0.3, 0.3, size=(n, 2))
    return a, b


@pytest.fixture
def compiled():
    if kernels.BACKEND != "compiled":
        pytest.skip("compiled extension not built")
    from msmsim.kernels import _core

    return _core


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")


def test_log_integrals_agree(compiled):
    rng = np.random.default_rng(3)
    a, b = random_segments(rng, 40)
    p = np.vstack([rng.uniform(-1, 1, size=(30, 2)), 0.5 * (a + b), a[:5]])
    args = (p[:, 0], p[:, 1], a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    for x, y in zip(compiled.segment_log_integrals(*args), _fallback.segment_log_integrals(*args)):
        assert np.allclose(x, y, rtol=1e-12, atol=1e-13)


def test_galerkin_agree(compiled):
    rng = np.random.default_rng(4)
    t = np.linspace(0, 2 * np.pi, 33)
    pts = 0.3 * np.column_stack([np.cos(t), np.sin(t)])
    a, b = pts[:-1], pts[1:]
    args = (a[:, 0], a[:, 1], b[:, 0], b[:, 1], 4)
    assert np.allclose(compiled.galerkin_log_matrix(*args), _fallback.galerkin_log_matrix(*args), rtol=1e-12, atol=1e-14)
    a, b = random_segments(rng, 20)
    args = (a[:, 0], a[:, 1], b[:, 0], b[:, 1], 6)
    assert np.allclose(compiled.galerkin_log_matrix(*args), _fallback.galerkin_log_matrix(*args), rtol=1e-12, atol=1e-14)


def test_log_integral_quadrature():
    # far from the segment the integral of log|p - y| is smooth; compare
    # with a dense midpoint rule
    a = np.array([[0.0, 0.0]])
    b = np.array([[1.0, 0.5]])
    p = np.array([[0.3, 1.2]])
    l0, _, _ = _fallback.segment_log_integrals(p[:, 0], p[:, 1], a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    s = (np.arange(20000) + 0.5) / 20000
    y = a + s[:, None] * (b - a)
    ref = np.log(np.hypot(*(p - y).T)).mean() * np.hypot(*(b - a)[0])
    assert l0[0, 0] == pytest.approx(ref, rel=1e-7)


def test_fallback_selected_by_environment():
    env = dict(os.environ, MSMSIM_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import msmsim.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
