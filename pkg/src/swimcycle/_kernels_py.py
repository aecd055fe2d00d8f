"""Pure-numpy kernels. Same signatures and results as the compiled ``_kernels``.

Grid conventions (all arrays indexed ``[i, j]`` with ``i`` along x, periodic):

* ``u[i, j]`` lives at ``(i, j + 1/2)`` in cell units,
* ``v[i, j]`` lives at ``(i + 1/2, j)``,
* cell-centred scalars at ``(i + 1/2, j + 1/2)``.

Point coordinates passed to the immersed-boundary kernels are in cell units
(physical position divided by the cell size).
"""

import numpy as np


def _bilinear(q, ii, jj, fx, fy):
    nx, ny = q.shape
    i0 = ii % nx
    i1 = (ii + 1) % nx
    j0 = jj % ny
    j1 = (jj + 1) % ny
    return ((1.0 - fx) * ((1.0 - fy) * q[i0, j0] + fy * q[i0, j1])
            + fx * ((1.0 - fy) * q[i1, j0] + fy * q[i1, j1]))


def _shift(q, di, dj, ai, aj):
    """Bilinear sample of ``q`` at ``(i + di, j + dj)`` for every index pair."""
    d0 = np.floor(di)
    e0 = np.floor(dj)
    return _bilinear(q, ai + d0.astype(np.int64), aj + e0.astype(np.int64), di - d0, dj - e0)


def advect_mac(u, v, dt_over_h, out_u=None, out_v=None):
    """Semi-Lagrangian self-advection of a staggered velocity field.

    Each face value is traced back one step along the local velocity and the
    same component is bilinearly resampled at the departure point.
    """
    nx, ny = u.shape
    ai, aj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    # velocity at u-faces: v averaged from the four surrounding v-faces
    v_at_u = 0.25 * (v + np.roll(v, 1, axis=0) + np.roll(v, -1, axis=1)
                     + np.roll(np.roll(v, 1, axis=0), -1, axis=1))
    un = _shift(u, -dt_over_h * u, -dt_over_h * v_at_u, ai, aj)
    u_at_v = 0.25 * (u + np.roll(u, -1, axis=0) + np.roll(u, 1, axis=1)
                     + np.roll(np.roll(u, -1, axis=0), 1, axis=1))
    vn = _shift(v, -dt_over_h * u_at_v, -dt_over_h * v, ai, aj)
    if out_u is not None:
        out_u[...] = un
        out_v[...] = vn
        return out_u, out_v
    return un, vn


def advect_cc(q, u, v, dt_over_h):
    """Semi-Lagrangian transport of a cell-centred scalar by a staggered field."""
    nx, ny = q.shape
    ai, aj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    uc = 0.5 * (u + np.roll(u, -1, axis=0))
    vc = 0.5 * (v + np.roll(v, -1, axis=1))
    return _shift(q, -dt_over_h * uc, -dt_over_h * vc, ai, aj)


def _phi(r):
    return np.where(np.abs(r) < 2.0, 0.25 * (1.0 + np.cos(0.5 * np.pi * r)), 0.0)


def _stencil(p, offset):
    """Indices and 1-D kernel weights of the 4-point stencil around ``p``."""
    base = np.floor(p - offset).astype(np.int64) - 1
    idx = base[:, None] + np.arange(4)[None, :]
    w = _phi(p[:, None] - offset - idx)
    return idx, w


def _interp_one(q, pts, ox, oy):
    nx, ny = q.shape
    ii, wx = _stencil(pts[:, 0], ox)
    jj, wy = _stencil(pts[:, 1], oy)
    vals = q[(ii % nx)[:, :, None], (jj % ny)[:, None, :]]
    return np.einsum("nab,na,nb->n", vals, wx, wy)


def ib_interpolate(u, v, pts):
    """Velocity at points via the 4-point cosine kernel; returns (N, 2)."""
    pts = np.ascontiguousarray(pts, dtype=float)
    out = np.empty((pts.shape[0], 2))
    out[:, 0] = _interp_one(u, pts, 0.0, 0.5)
    out[:, 1] = _interp_one(v, pts, 0.5, 0.0)
    return out


def _spread_one(shape, pts, f, ox, oy):
    nx, ny = shape
    ii, wx = _stencil(pts[:, 0], ox)
    jj, wy = _stencil(pts[:, 1], oy)
    contrib = f[:, None, None] * wx[:, :, None] * wy[:, None, :]
    flat = ((ii % nx)[:, :, None] * ny + (jj % ny)[:, None, :]).ravel()
    return np.bincount(flat, weights=contrib.ravel(), minlength=nx * ny).reshape(nx, ny)


def ib_spread(shape, pts, forces):
    """Kernel-weighted sums of point forces onto the u- and v-faces.

    The result is the dimensionless weight sum; divide by the cell area to
    obtain a force density. Exact adjoint of :func:`ib_interpolate`.
    """
    pts = np.ascontiguousarray(pts, dtype=float)
    forces = np.ascontiguousarray(forces, dtype=float)
    fu = _spread_one(shape, pts, forces[:, 0], 0.0, 0.5)
    fv = _spread_one(shape, pts, forces[:, 1], 0.5, 0.0)
    return fu, fv


def ib_spread_add(fu, fv, pts, forces, scale):
    """In-place ``fu, fv += scale * spread(forces)``."""
    a, b = ib_spread(fu.shape, pts, forces)
    fu += scale * a
    fv += scale * b


def sample_bilinear(q, pts, ox, oy):
    """Bilinear periodic sample of a grid array whose nodes sit at ``(i+ox, j+oy)``."""
    pts = np.asarray(pts, dtype=float)
    x = pts[..., 0] - ox
    y = pts[..., 1] - oy
    i0 = np.floor(x)
    j0 = np.floor(y)
    return _bilinear(q, i0.astype(np.int64), j0.astype(np.int64), x - i0, y - j0)


def spectral_diffuse_project(zh, c_visc, h, want_phi=False, out=None):
    """Numpy twin of the compiled packed-spectrum viscous solve + projection."""
    nx, ny = zh.shape
    zm = np.conj(np.roll(zh[::-1, ::-1], 1, axis=(0, 1)))
    uk = 0.5 * (zh + zm)
    vk = -0.5j * (zh - zm)
    tx = 2.0 * np.pi * np.arange(nx)[:, None] / nx
    ty = 2.0 * np.pi * np.arange(ny)[None, :] / ny
    dx = (np.exp(1j * tx) - 1.0) / h
    dy = (np.exp(1j * ty) - 1.0) / h
    lam = (2.0 - 2.0 * np.cos(tx) + 2.0 - 2.0 * np.cos(ty)) / h**2
    fac = 1.0 / (1.0 + c_visc * lam)
    uk = uk * fac
    vk = vk * fac
    inv = np.zeros_like(lam)
    inv[lam > 0] = 1.0 / lam[lam > 0]
    ph = -(dx * uk + dy * vk) * inv
    uk = uk + np.conj(dx) * ph
    vk = vk + np.conj(dy) * ph
    res = uk + 1j * vk
    if out is not None:
        out[...] = res
        res = out
    return res, (ph if want_phi else None)
