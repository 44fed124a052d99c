"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jitteradj import _kernels_py as py
from jitteradj import kernels

cy = pytest.importorskip("jitteradj._kernels")

SQUARE = np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]])


def test_backend_reports_cython():
    assert kernels.BACKEND == "cython"


@given(st.lists(st.tuples(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5)), min_size=1, max_size=50))
def test_points_in_ring_parity(pts):
    pts = np.array(pts, dtype=float)
    assert np.array_equal(py.points_in_ring(pts, SQUARE), cy.points_in_ring(pts, SQUARE))


def test_points_on_ring_parity(rng):
    phi = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    ring = np.column_stack([np.cos(phi), np.sin(phi)])
    pts = np.vstack([rng.uniform(-1.2, 1.2, (500, 2)), ring, 0.5 * (ring + np.roll(ring, 1, axis=0))])
    a = py.points_on_ring(pts, ring)
    assert np.array_equal(a, cy.points_on_ring(pts, ring))
    assert a[500:].all()
    assert np.array_equal(py.points_in_ring(pts, ring), cy.points_in_ring(pts, ring))


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_mixture_terms_parity(C, seed):
    r = np.random.default_rng(seed)
    K = r.integers(1, 8, C)
    off = np.concatenate([[0], np.cumsum(K)]).astype(np.int64)
    eta = r.normal(0, 3, off[-1])
    w = r.random(off[-1]) + 1e-3
    la = np.log(w / np.repeat(np.add.reduceat(w, off[:-1]), K))
    n = r.integers(1, 40, C).astype(float)
    y = np.floor(r.random(C) * (n + 1))
    a = py.mixture_terms(eta, la, off, y, n)
    b = cy.mixture_terms(eta, la, off, y, n)
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(a[2], b[2], rtol=1e-10, atol=1e-12)


def test_locate_points_parity(small_mesh, rng):
    q = rng.uniform(-40, 140, (3000, 2))
    args = (q, np.ascontiguousarray(small_mesh.nodes), small_mesh.triangles.astype(np.int64),
            *small_mesh.locator.kernel_args())
    t1, b1 = py.locate_points(*args)
    t2, b2 = cy.locate_points(*args)
    inside = t1 >= 0
    assert np.array_equal(inside, t2 >= 0)
    # a point on a shared edge may be assigned to either neighbour; the basis values must agree
    n1 = np.zeros((inside.sum(), small_mesh.n_nodes))
    n2 = np.zeros_like(n1)
    rows = np.arange(inside.sum())
    for k in range(3):
        np.add.at(n1, (rows, small_mesh.triangles[t1[inside], k]), b1[inside, k])
        np.add.at(n2, (rows, small_mesh.triangles[t2[inside], k]), b2[inside, k])
    np.testing.assert_allclose(n1, n2, atol=1e-12)


def test_mixture_single_point_matches_binomial():
    eta = np.array([0.3])
    v, u, d = kernels.mixture_terms(eta, np.zeros(1), np.array([0, 1]), np.array([1.0]), np.array([1.0]))
    assert v == pytest.approx(-np.log(1 / (1 + np.exp(-0.3))), rel=1e-14)


def test_env_var_forces_numpy_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, JITTERADJ_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from jitteradj import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
