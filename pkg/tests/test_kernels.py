import numpy as np
import pytest

from swimcycle import _kernels_py as py
from swimcycle import kernels

cy = pytest.importorskip("swimcycle._kernels")

NX, NY = 24, 20


@pytest.fixture
def rng():
    return np.random.default_rng(11)


@pytest.mark.parametrize("mod", [py, cy], ids=["python", "cython"])
def test_interpolation_of_constant(mod, rng):
    pts = rng.uniform(-5, 30, size=(50, 2))
    out = mod.ib_interpolate(np.full((NX, NY), 0.7), np.full((NX, NY), -1.3), pts)
    np.testing.assert_allclose(out[:, 0], 0.7, atol=1e-14)
    np.testing.assert_allclose(out[:, 1], -1.3, atol=1e-14)


@pytest.mark.parametrize("mod", [py, cy], ids=["python", "cython"])
def test_spread_interpolate_adjoint(mod, rng):
    pts = rng.uniform(0, NX, size=(37, 2))
    F = rng.normal(size=(37, 2))
    u, v = rng.normal(size=(NX, NY)), rng.normal(size=(NX, NY))
    fu, fv = mod.ib_spread((NX, NY), pts, F)
    lhs = np.sum(fu * u) + np.sum(fv * v)
    rhs = np.sum(F * mod.ib_interpolate(u, v, pts))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@pytest.mark.parametrize("mod", [py, cy], ids=["python", "cython"])
def test_spread_partition_of_unity(mod, rng):
    pts = rng.uniform(0, NX, size=(19, 2))
    F = rng.normal(size=(19, 2))
    fu, fv = mod.ib_spread((NX, NY), pts, F)
    np.testing.assert_allclose([fu.sum(), fv.sum()], F.sum(0), atol=1e-12)
    zu, zv = mod.ib_spread((NX, NY), pts, np.zeros_like(F))
    assert not zu.any() and not zv.any()


def test_backend_parity(rng):
    u, v = 0.3 * rng.normal(size=(NX, NY)), 0.3 * rng.normal(size=(NX, NY))
    pts = rng.uniform(-3, 27, size=(41, 2))
    F = rng.normal(size=(41, 2))
    np.testing.assert_allclose(cy.ib_interpolate(u, v, pts), py.ib_interpolate(u, v, pts), atol=1e-13)
    for a, b in zip(cy.ib_spread((NX, NY), pts, F), py.ib_spread((NX, NY), pts, F)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    a1, a2 = u.copy(), v.copy()
    b1, b2 = u.copy(), v.copy()
    cy.ib_spread_add(a1, a2, pts, F, -0.25)
    py.ib_spread_add(b1, b2, pts, F, -0.25)
    np.testing.assert_allclose(a1, b1, atol=1e-13)
    np.testing.assert_allclose(a2, b2, atol=1e-13)
    for a, b in zip(cy.advect_mac(u, v, 0.7), py.advect_mac(u, v, 0.7)):
        np.testing.assert_allclose(a, b, atol=1e-13)
    q = rng.normal(size=(NX, NY))
    np.testing.assert_allclose(cy.advect_cc(q, u, v, 0.7), py.advect_cc(q, u, v, 0.7), atol=1e-13)
    np.testing.assert_allclose(cy.sample_bilinear(q, pts, 0.5, 0.0), py.sample_bilinear(q, pts, 0.5, 0.0),
                               atol=1e-13)
    zh = np.fft.fft2(u + 1j * v)
    ra, pa = cy.spectral_diffuse_project(zh.copy(), 0.01, 0.1, want_phi=True)
    rb, pb = py.spectral_diffuse_project(zh.copy(), 0.01, 0.1, want_phi=True)
    np.testing.assert_allclose(ra, rb, atol=1e-10)
    np.testing.assert_allclose(pa, pb, atol=1e-10)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


def test_env_forces_python_backend():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SWIMCYCLE_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import swimcycle.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
