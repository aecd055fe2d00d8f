# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_kernels_py``; identical conventions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, cos, fabs, M_PI

cnp.import_array()


cdef inline Py_ssize_t _wrap(Py_ssize_t k, Py_ssize_t n) noexcept nogil:
    # offsets are almost always within one period; avoid integer division
    if k < 0:
        k += n
        if k < 0:
            k = k % n + n
            if k == n:
                k = 0
    elif k >= n:
        k -= n
        if k >= n:
            k = k % n
    return k


cdef inline double _bilin(const double[:, ::1] q, Py_ssize_t nx, Py_ssize_t ny,
                          double x, double y) noexcept nogil:
    cdef double x0 = floor(x)
    cdef double y0 = floor(y)
    cdef double fx = x - x0
    cdef double fy = y - y0
    cdef Py_ssize_t i0 = _wrap(<Py_ssize_t>x0, nx)
    cdef Py_ssize_t j0 = _wrap(<Py_ssize_t>y0, ny)
    cdef Py_ssize_t i1 = i0 + 1
    cdef Py_ssize_t j1 = j0 + 1
    if i1 == nx:
        i1 = 0
    if j1 == ny:
        j1 = 0
    return ((1.0 - fx) * ((1.0 - fy) * q[i0, j0] + fy * q[i0, j1])
            + fx * ((1.0 - fy) * q[i1, j0] + fy * q[i1, j1]))


cdef inline double _shifted(const double[:, ::1] q, Py_ssize_t nx, Py_ssize_t ny,
                            Py_ssize_t i, Py_ssize_t j, double di, double dj) noexcept nogil:
    # integer and fractional parts of the offset are split before adding the
    # base index so results do not depend on where (i, j) sits in the grid
    cdef double d0 = floor(di)
    cdef double e0 = floor(dj)
    cdef double fx = di - d0
    cdef double fy = dj - e0
    cdef Py_ssize_t i0 = _wrap(i + <Py_ssize_t>d0, nx)
    cdef Py_ssize_t j0 = _wrap(j + <Py_ssize_t>e0, ny)
    cdef Py_ssize_t i1 = i0 + 1
    cdef Py_ssize_t j1 = j0 + 1
    if i1 == nx:
        i1 = 0
    if j1 == ny:
        j1 = 0
    return ((1.0 - fx) * ((1.0 - fy) * q[i0, j0] + fy * q[i0, j1])
            + fx * ((1.0 - fy) * q[i1, j0] + fy * q[i1, j1]))


def advect_mac(u_in, v_in, double dt_over_h, out_u=None, out_v=None):
    cdef const double[:, ::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(v_in, dtype=np.float64)
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1]
    un_arr = np.empty((nx, ny)) if out_u is None else out_u
    vn_arr = np.empty((nx, ny)) if out_v is None else out_v
    cdef double[:, ::1] un = un_arr
    cdef double[:, ::1] vn = vn_arr
    cdef Py_ssize_t i, j, im, ip, jm, jp
    cdef double vel_x, vel_y
    with nogil:
        for i in range(nx):
            im = i - 1 if i > 0 else nx - 1
            ip = i + 1 if i < nx - 1 else 0
            for j in range(ny):
                jm = j - 1 if j > 0 else ny - 1
                jp = j + 1 if j < ny - 1 else 0
                vel_x = u[i, j]
                vel_y = 0.25 * (v[i, j] + v[im, j] + v[i, jp] + v[im, jp])
                un[i, j] = _shifted(u, nx, ny, i, j, -dt_over_h * vel_x, -dt_over_h * vel_y)
                vel_x = 0.25 * (u[i, j] + u[ip, j] + u[i, jm] + u[ip, jm])
                vel_y = v[i, j]
                vn[i, j] = _shifted(v, nx, ny, i, j, -dt_over_h * vel_x, -dt_over_h * vel_y)
    return un_arr, vn_arr


def advect_cc(q_in, u_in, v_in, double dt_over_h):
    cdef const double[:, ::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef const double[:, ::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(v_in, dtype=np.float64)
    cdef Py_ssize_t nx = q.shape[0], ny = q.shape[1]
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, ip, jp
    cdef double uc, vc
    with nogil:
        for i in range(nx):
            ip = i + 1 if i < nx - 1 else 0
            for j in range(ny):
                jp = j + 1 if j < ny - 1 else 0
                uc = 0.5 * (u[i, j] + u[ip, j])
                vc = 0.5 * (v[i, j] + v[i, jp])
                out[i, j] = _shifted(q, nx, ny, i, j, -dt_over_h * uc, -dt_over_h * vc)
    return out_arr


cdef inline double _phi(double r) noexcept nogil:
    if fabs(r) < 2.0:
        return 0.25 * (1.0 + cos(0.5 * M_PI * r))
    return 0.0


cdef void _weights(double p, double offset, Py_ssize_t* base, double* w) noexcept nogil:
    cdef Py_ssize_t b = <Py_ssize_t>floor(p - offset) - 1
    cdef int a
    base[0] = b
    for a in range(4):
        w[a] = _phi(p - offset - (b + a))


def ib_interpolate(u_in, v_in, pts_in):
    cdef const double[:, ::1] u = np.ascontiguousarray(u_in, dtype=np.float64)
    cdef const double[:, ::1] v = np.ascontiguousarray(v_in, dtype=np.float64)
    cdef const double[:, ::1] pts = np.ascontiguousarray(pts_in, dtype=np.float64)
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], n = pts.shape[0]
    out_arr = np.empty((n, 2))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t k, a, b, bi, bj, ii, jj
    cdef double wx[4]
    cdef double wy[4]
    cdef double acc, row
    with nogil:
        for k in range(n):
            # u-component: nodes at (i, j + 1/2)
            _weights(pts[k, 0], 0.0, &bi, wx)
            _weights(pts[k, 1], 0.5, &bj, wy)
            acc = 0.0
            for a in range(4):
                ii = _wrap(bi + a, nx)
                row = 0.0
                for b in range(4):
                    jj = _wrap(bj + b, ny)
                    row = row + u[ii, jj] * wy[b]
                acc = acc + wx[a] * row
            out[k, 0] = acc
            # v-component: nodes at (i + 1/2, j)
            _weights(pts[k, 0], 0.5, &bi, wx)
            _weights(pts[k, 1], 0.0, &bj, wy)
            acc = 0.0
            for a in range(4):
                ii = _wrap(bi + a, nx)
                row = 0.0
                for b in range(4):
                    jj = _wrap(bj + b, ny)
                    row = row + v[ii, jj] * wy[b]
                acc = acc + wx[a] * row
            out[k, 1] = acc
    return out_arr


def ib_spread(shape, pts_in, forces_in):
    fu_arr = np.zeros(shape)
    fv_arr = np.zeros(shape)
    ib_spread_add(fu_arr, fv_arr, pts_in, forces_in, 1.0)
    return fu_arr, fv_arr


def ib_spread_add(fu_arr, fv_arr, pts_in, forces_in, double scale):
    """In-place ``fu, fv += scale * spread(forces)``."""
    cdef const double[:, ::1] pts = np.ascontiguousarray(pts_in, dtype=np.float64)
    cdef const double[:, ::1] f = np.ascontiguousarray(forces_in, dtype=np.float64)
    cdef double[:, ::1] fu = fu_arr
    cdef double[:, ::1] fv = fv_arr
    cdef Py_ssize_t nx = fu.shape[0], ny = fu.shape[1], n = pts.shape[0]
    cdef Py_ssize_t k, a, b, bi, bj, ii, jj
    cdef double wx[4]
    cdef double wy[4]
    with nogil:
        for k in range(n):
            _weights(pts[k, 0], 0.0, &bi, wx)
            _weights(pts[k, 1], 0.5, &bj, wy)
            for a in range(4):
                ii = _wrap(bi + a, nx)
                for b in range(4):
                    jj = _wrap(bj + b, ny)
                    fu[ii, jj] += scale * (f[k, 0] * wx[a] * wy[b])
            _weights(pts[k, 0], 0.5, &bi, wx)
            _weights(pts[k, 1], 0.0, &bj, wy)
            for a in range(4):
                ii = _wrap(bi + a, nx)
                for b in range(4):
                    jj = _wrap(bj + b, ny)
                    fv[ii, jj] += scale * (f[k, 1] * wx[a] * wy[b])


def sample_bilinear(q_in, pts_in, double ox, double oy):
    cdef const double[:, ::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    pts_arr = np.asarray(pts_in, dtype=np.float64)
    lead = pts_arr.shape[:-1]
    cdef const double[:, ::1] pts = np.ascontiguousarray(pts_arr.reshape(-1, 2))
    cdef Py_ssize_t nx = q.shape[0], ny = q.shape[1], n = pts.shape[0], k
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    with nogil:
        for k in range(n):
            out[k] = _bilin(q, nx, ny, pts[k, 0] - ox, pts[k, 1] - oy)
    return out_arr.reshape(lead)


def spectral_diffuse_project(zh_in, double c_visc, double h, bint want_phi=False, out=None):
    """Viscous solve + projection on the packed spectrum of ``u + i v``.

    ``zh_in`` is the full complex 2-D DFT of ``u + 1j * v``. Each wavevector
    pair (k, -k) is unpacked into the separate spectra of u and v, multiplied
    by ``(I - a a^H / lam) / (1 + c_visc lam)`` and packed again. Returns the
    new packed spectrum and, if requested, the spectrum of the potential.
    """
    zc = np.ascontiguousarray(zh_in, dtype=np.complex128)
    cdef const double[:, ::1] z = zc.view(np.float64)
    cdef Py_ssize_t nx = z.shape[0], ny = z.shape[1] // 2
    out_arr = np.empty((nx, ny), dtype=np.complex128) if out is None else out
    cdef double[:, ::1] o = out_arr.view(np.float64)
    phi_shape = (int(nx), int(ny)) if want_phi else (1, 1)
    phi_arr = np.zeros(phi_shape, dtype=np.complex128)
    cdef double[:, ::1] ph = phi_arr.view(np.float64)
    cdef double[::1] cx = np.cos(2.0 * np.pi * np.arange(nx) / nx)
    cdef double[::1] sx = np.sin(2.0 * np.pi * np.arange(nx) / nx)
    cdef double[::1] cy = np.cos(2.0 * np.pi * np.arange(ny) / ny)
    cdef double[::1] sy = np.sin(2.0 * np.pi * np.arange(ny) / ny)
    cdef double inv_h = 1.0 / h
    cdef double inv_h2 = 1.0 / (h * h)
    cdef Py_ssize_t i, j, mi, mj
    cdef double zr, zi, mr, mim, ur, ui, vr, vi, axr, axi, ayr, ayi
    cdef double dr, di, pr, pi_, lam, fac
    with nogil:
        for i in range(nx):
            mi = nx - i if i > 0 else 0
            axr = (cx[i] - 1.0) * inv_h
            axi = sx[i] * inv_h
            for j in range(ny):
                mj = ny - j if j > 0 else 0
                zr = z[i, 2 * j]
                zi = z[i, 2 * j + 1]
                # conj(z[-k])
                mr = z[mi, 2 * mj]
                mim = -z[mi, 2 * mj + 1]
                # u = (z + conj z-)/2 ; v = (z - conj z-)/(2i)
                ur = 0.5 * (zr + mr)
                ui = 0.5 * (zi + mim)
                vr = 0.5 * (zi - mim)
                vi = -0.5 * (zr - mr)
                ayr = (cy[j] - 1.0) * inv_h
                ayi = sy[j] * inv_h
                lam = (4.0 - 2.0 * cx[i] - 2.0 * cy[j]) * inv_h2
                fac = 1.0 / (1.0 + c_visc * lam)
                ur = ur * fac
                ui = ui * fac
                vr = vr * fac
                vi = vi * fac
                if lam > 0.0:
                    # div = dx u + dy v ; phi = -div / lam
                    dr = axr * ur - axi * ui + ayr * vr - ayi * vi
                    di = axr * ui + axi * ur + ayr * vi + ayi * vr
                    pr = -dr / lam
                    pi_ = -di / lam
                    # u += conj(dx) phi
                    ur = ur + axr * pr + axi * pi_
                    ui = ui + axr * pi_ - axi * pr
                    vr = vr + ayr * pr + ayi * pi_
                    vi = vi + ayr * pi_ - ayi * pr
                    if want_phi:
                        ph[i, 2 * j] = pr
                        ph[i, 2 * j + 1] = pi_
                # pack u + i v
                o[i, 2 * j] = ur - vi
                o[i, 2 * j + 1] = ui + vr
    if want_phi:
        return out_arr, phi_arr
    return out_arr, None
