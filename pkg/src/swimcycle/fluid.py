"""Incompressible viscous flow on a doubly periodic MAC grid.

Velocity components live on cell faces (see :mod:`swimcycle._kernels_py` for
the exact staggering), pressure at cell centres. All constant-coefficient
operators (Laplacian, divergence, gradient, the implicit viscous solve and
the pressure projection) are diagonal in the discrete Fourier basis, so the
default solver is exact up to rounding. A conjugate-gradient path is kept for
cross-checking.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator, cg

from . import kernels
from .errors import CflViolation, SolverDiverged

CFL_LIMIT = 0.8
SOLVER_RTOL = 1e-10


@dataclass(frozen=True)
class FluidGrid:
    nx: int
    ny: int
    Lx: float
    Ly: float
    mu: float
    rho_f: float = 1.0
    sponge_width: int = 0
    sponge_rate: float = 0.0
    solver: str = "fft"

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16 or self.nx % 2 or self.ny % 2:
            raise ValueError("nx and ny must be even and >= 16")
        if not math.isclose(self.Lx / self.nx, self.Ly / self.ny, rel_tol=1e-12):
            raise ValueError("cells must be square (Lx/nx == Ly/ny)")
        if self.mu < 0 or self.rho_f <= 0:
            raise ValueError("mu must be >= 0 and rho_f > 0")
        if self.sponge_width < 0 or self.sponge_rate < 0:
            raise ValueError("sponge width and rate must be non-negative")
        if 2 * self.sponge_width >= min(self.nx, self.ny):
            raise ValueError("sponge band covers the whole domain")
        if self.solver not in ("fft", "cg"):
            raise ValueError("solver must be 'fft' or 'cg'")

    @property
    def h(self) -> float:
        return self.Lx / self.nx

    @property
    def nu(self) -> float:
        return self.mu / self.rho_f

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * self.Lx, 0.5 * self.Ly])

    # Fourier symbols ---------------------------------------------------
    @cached_property
    def _symbols(self):
        h = self.h
        tx = 2.0 * np.pi * sfft.fftfreq(self.nx)[:, None]
        ty = 2.0 * np.pi * sfft.rfftfreq(self.ny)[None, :]
        dx = (np.exp(1j * tx) - 1.0) / h  # forward difference (u -> divergence)
        dy = (np.exp(1j * ty) - 1.0) / h
        lam = (2.0 - 2.0 * np.cos(tx)) / h**2 + (2.0 - 2.0 * np.cos(ty)) / h**2
        inv_lam = np.zeros_like(lam)
        inv_lam[lam > 0] = 1.0 / lam[lam > 0]
        return dx, dy, lam, inv_lam

    def sponge_weight(self, ox: float, oy: float) -> np.ndarray:
        """Ramp in [0, 1]: 1 on the outermost ring of samples, 0 in the interior."""
        if self.sponge_width == 0:
            return np.zeros(self.shape)

        def ring(n, off):
            k = np.arange(n)
            if off == 0.0:
                return np.minimum(k, n - k)
            return np.minimum(k, n - 1 - k)

        r = np.minimum(ring(self.nx, ox)[:, None], ring(self.ny, oy)[None, :])
        return np.clip(1.0 - r / self.sponge_width, 0.0, 1.0)

    @cached_property
    def sponge_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sponge_weight(0.0, 0.5), self.sponge_weight(0.5, 0.0)

    def interior_bounds(self) -> tuple[float, float, float, float]:
        """Physical (xmin, xmax, ymin, ymax) of the sponge-free interior."""
        w = self.sponge_width * self.h
        return (w, self.Lx - w, w, self.Ly - w)

    def face_coords(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        i = np.arange(self.nx)[:, None] * np.ones((1, self.ny))
        j = np.ones((self.nx, 1)) * np.arange(self.ny)[None, :]
        if which == "u":
            return i * self.h, (j + 0.5) * self.h
        if which == "v":
            return (i + 0.5) * self.h, j * self.h
        return (i + 0.5) * self.h, (j + 0.5) * self.h


@dataclass
class FluidState:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray = field(default=None)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.p is None:
            self.p = np.zeros_like(self.u)

    @classmethod
    def zeros(cls, grid: FluidGrid) -> "FluidState":
        return cls(np.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape))

    def copy(self) -> "FluidState":
        return FluidState(self.u.copy(), self.v.copy(), self.p.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u).all() and np.isfinite(self.v).all())

    def max_speed(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))


# real-space stencils ----------------------------------------------------

def divergence(grid: FluidGrid, u, v) -> np.ndarray:
    """Cell-centred discrete divergence."""
    return (np.roll(u, -1, axis=0) - u + np.roll(v, -1, axis=1) - v) / grid.h


def gradient(grid: FluidGrid, p) -> tuple[np.ndarray, np.ndarray]:
    """Face-centred gradient of a cell-centred scalar; exact adjoint of -divergence."""
    return (p - np.roll(p, 1, axis=0)) / grid.h, (p - np.roll(p, 1, axis=1)) / grid.h


def laplacian(grid: FluidGrid, q) -> np.ndarray:
    """Five-point periodic Laplacian (applied per component on faces)."""
    return (np.roll(q, 1, 0) + np.roll(q, -1, 0) + np.roll(q, 1, 1) + np.roll(q, -1, 1) - 4.0 * q) / grid.h**2


def kinetic_energy(grid: FluidGrid, state: FluidState) -> float:
    return 0.5 * grid.rho_f * grid.h**2 * float(np.sum(state.u * state.u) + np.sum(state.v * state.v))


def viscous_power(grid: FluidGrid, state: FluidState) -> float:
    """mu <Lap_h u, u>_h; non-positive."""
    a = grid.h**2
    return grid.mu * a * float(np.sum(laplacian(grid, state.u) * state.u) + np.sum(laplacian(grid, state.v) * state.v))


def sponge_power(grid: FluidGrid, state: FluidState) -> float:
    """Instantaneous energy removal rate of the far-field sponge; non-positive."""
    if grid.sponge_rate == 0.0 or grid.sponge_width == 0:
        return 0.0
    wu, wv = grid.sponge_weights
    a = grid.h**2
    return -grid.rho_f * grid.sponge_rate * a * float(np.sum(wu * state.u**2) + np.sum(wv * state.v**2))


# solvers -----------------------------------------------------------------

def _fft(q):
    return sfft.rfft2(q)


def _ifft(qh, grid):
    return sfft.irfft2(qh, s=grid.shape)


def _cg_solve(grid: FluidGrid, apply, rhs, x0=None, abs_tol=0.0):
    """CG to relative residual ``SOLVER_RTOL``, tightened so ``|r|_2 <= abs_tol`` when given."""
    n = grid.nx * grid.ny
    op = LinearOperator((n, n), matvec=lambda x: apply(x.reshape(grid.shape)).ravel(), dtype=float)
    maxiter = 10 * (grid.nx + grid.ny)
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(grid.shape)
    rtol = min(SOLVER_RTOL, abs_tol / bnorm) if abs_tol > 0.0 else SOLVER_RTOL
    x, info = cg(op, rhs.ravel(), x0=None if x0 is None else x0.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter)
    x = x.reshape(grid.shape)
    res = np.linalg.norm(apply(x) - rhs) / bnorm
    if info != 0 or not np.isfinite(res) or res > max(10 * rtol, 1e-13):
        raise SolverDiverged(f"CG stopped with relative residual {res:.3e} (info={info})")
    return x


def diffuse(grid: FluidGrid, state: FluidState, dt: float) -> FluidState:
    """Backward-Euler viscous step ``(I - dt nu Lap_h) u_new = u_old``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = dt * grid.nu
    if grid.solver == "cg":
        def apply(q):
            return q - c * laplacian(grid, q)
        u = _cg_solve(grid, apply, state.u, state.u)
        v = _cg_solve(grid, apply, state.v, state.v)
        return FluidState(u, v, state.p.copy())
    _, _, lam, _ = grid._symbols
    factor = 1.0 / (1.0 + c * lam)
    u = _ifft(_fft(state.u) * factor, grid)
    v = _ifft(_fft(state.v) * factor, grid)
    out = FluidState(u, v, state.p.copy())
    if not out.is_finite():
        raise SolverDiverged("non-finite velocity after viscous solve")
    return out


def project(grid: FluidGrid, state: FluidState, dt: float | None = None) -> FluidState:
    """Orthogonal projection onto discretely divergence-free fields.

    Solves ``Lap_h phi = div_h u`` and subtracts ``grad_h phi``. The stored
    pressure is ``rho_f phi / dt`` when ``dt`` is given, else ``phi``.
    """
    if grid.solver == "cg":
        div = divergence(grid, state.u, state.v)

        def apply(q):
            return -laplacian(grid, q)

        # the divergence left over is the CG residual, so solve it to an absolute level
        phi = -_cg_solve(grid, apply, div - div.mean(), abs_tol=1e-12)
        gx, gy = gradient(grid, phi)
        u, v = state.u - gx, state.v - gy
    else:
        dx, dy, _, inv_lam = grid._symbols
        uh, vh = _fft(state.u), _fft(state.v)
        div_h = dx * uh + dy * vh
        phi_h = -div_h * inv_lam
        # gradient symbol is -conj(forward difference)
        uh = uh + np.conj(dx) * phi_h
        vh = vh + np.conj(dy) * phi_h
        u, v = _ifft(uh, grid), _ifft(vh, grid)
        phi = _ifft(phi_h, grid)
    p = phi * (grid.rho_f / dt if dt else 1.0)
    out = FluidState(u, v, p)
    if not out.is_finite():
        raise SolverDiverged("non-finite velocity after projection")
    return out


def diffuse_project(grid: FluidGrid, state: FluidState, dt: float) -> FluidState:
    """Implicit viscous step followed by projection, in one Fourier pass."""
    if grid.solver == "cg":
        return project(grid, diffuse(grid, state, dt), dt)
    dx, dy, lam, inv_lam = grid._symbols
    factor = 1.0 / (1.0 + dt * grid.nu * lam)
    uh = _fft(state.u) * factor
    vh = _fft(state.v) * factor
    phi_h = -(dx * uh + dy * vh) * inv_lam
    uh += np.conj(dx) * phi_h
    vh += np.conj(dy) * phi_h
    out = FluidState(_ifft(uh, grid), _ifft(vh, grid), _ifft(phi_h, grid) * (grid.rho_f / dt))
    if not out.is_finite():
        raise SolverDiverged("non-finite velocity in viscous/projection step")
    return out


def cfl_number(grid: FluidGrid, state: FluidState, dt: float) -> float:
    return state.max_speed() * dt / grid.h


def advect(grid: FluidGrid, state: FluidState, dt: float) -> FluidState:
    """Semi-Lagrangian self-advection (bilinear, periodic)."""
    cfl = cfl_number(grid, state, dt)
    if cfl > CFL_LIMIT:
        raise CflViolation(cfl, CFL_LIMIT)
    u, v = kernels.advect_mac(state.u, state.v, dt / grid.h)
    return FluidState(u, v, state.p.copy())


def advect_scalar(grid: FluidGrid, q, state: FluidState, dt: float) -> np.ndarray:
    """Transport a cell-centred passive scalar by the current velocity."""
    cfl = cfl_number(grid, state, dt)
    if cfl > CFL_LIMIT:
        raise CflViolation(cfl, CFL_LIMIT)
    return kernels.advect_cc(np.asarray(q, dtype=float), state.u, state.v, dt / grid.h)


def sponge_factors(grid: FluidGrid, dt: float) -> tuple[np.ndarray, np.ndarray]:
    wu, wv = grid.sponge_weights
    return np.exp(-dt * grid.sponge_rate * wu), np.exp(-dt * grid.sponge_rate * wv)


def apply_sponge(grid: FluidGrid, state: FluidState, dt: float, factors=None) -> FluidState:
    """Damp velocities in the boundary band by ``exp(-dt rate w(x))``."""
    if grid.sponge_rate == 0.0 or grid.sponge_width == 0:
        return state.copy()
    fu, fv = factors if factors is not None else sponge_factors(grid, dt)
    return FluidState(state.u * fu, state.v * fv, state.p.copy())


# exact re-posing of whole fields -------------------------------------------

def fourier_shift(grid: FluidGrid, q, dx: float, dy: float) -> np.ndarray:
    """Band-limited translation: returns ``q(x - d)`` for any real offset ``d``.

    Commutes exactly with every Fourier-diagonal operator above, so a
    divergence-free field stays divergence-free.
    """
    tx = 2.0 * np.pi * sfft.fftfreq(grid.nx)
    ty = 2.0 * np.pi * sfft.rfftfreq(grid.ny)
    px = np.exp(-1j * tx * dx / grid.h)
    py = np.exp(-1j * ty * dy / grid.h)
    # Nyquist modes: symmetric average of the +/- pi shifts keeps the result real
    px[grid.nx // 2] = math.cos(math.pi * dx / grid.h)
    py[-1] = math.cos(math.pi * dy / grid.h)
    return _ifft(_fft(q) * (px[:, None] * py[None, :]), grid)


def transform_state(grid: FluidGrid, state: FluidState, theta: float, shift, center=None) -> FluidState:
    """Apply the rigid motion ``x -> R(theta)(x - c) + c + shift`` to a velocity field.

    Translations use :func:`fourier_shift`; a nonzero rotation is resampled
    bilinearly about ``center`` (default: domain centre) and re-projected.
    """
    c = grid.center if center is None else np.asarray(center, dtype=float)
    u, v = state.u, state.v
    if theta != 0.0:
        cs, sn = math.cos(theta), math.sin(theta)
        out = []
        for which, ox, oy in (("u", 0.0, 0.5), ("v", 0.5, 0.0)):
            X, Y = grid.face_coords(which)
            # pre-image of the new sample location under the rotation
            xr = cs * (X - c[0]) + sn * (Y - c[1]) + c[0]
            yr = -sn * (X - c[0]) + cs * (Y - c[1]) + c[1]
            pts = np.stack([xr / grid.h, yr / grid.h], axis=-1)
            uo = kernels.sample_bilinear(u, pts, 0.0, 0.5)
            vo = kernels.sample_bilinear(v, pts, 0.5, 0.0)
            out.append(cs * uo - sn * vo if which == "u" else sn * uo + cs * vo)
        new = project(grid, FluidState(out[0], out[1]))
        u, v = new.u, new.v
    if shift[0] != 0.0 or shift[1] != 0.0:
        u = fourier_shift(grid, u, shift[0], shift[1])
        v = fourier_shift(grid, v, shift[0], shift[1])
    return FluidState(np.array(u), np.array(v), np.zeros(grid.shape))


def roll_state(state: FluidState, di: int, dj: int) -> FluidState:
    """Exact whole-cell translation."""
    return FluidState(np.roll(state.u, (di, dj), (0, 1)), np.roll(state.v, (di, dj), (0, 1)),
                      np.roll(state.p, (di, dj), (0, 1)))


# snapshots -----------------------------------------------------------------

CYF_MAGIC = b"CYF1"
_CYF_HEADER = struct.Struct("<4sqqddd")


def fluid_to_bytes(grid: FluidGrid, state: FluidState, t: float) -> bytes:
    """Flat binary snapshot: header then u, v, p as row-major little-endian float64."""
    head = _CYF_HEADER.pack(CYF_MAGIC, grid.nx, grid.ny, grid.Lx, grid.Ly, float(t))
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (state.u, state.v, state.p))
    return head + body


def fluid_from_bytes(data: bytes) -> tuple[dict, FluidState]:
    magic, nx, ny, Lx, Ly, t = _CYF_HEADER.unpack_from(data, 0)
    if magic != CYF_MAGIC:
        raise ValueError("not a CYF1 fluid snapshot")
    n = nx * ny
    arr = np.frombuffer(data, dtype="<f8", count=3 * n, offset=_CYF_HEADER.size).astype(float)
    u, v, p = (arr[k * n:(k + 1) * n].reshape(nx, ny).copy() for k in range(3))
    return {"nx": nx, "ny": ny, "Lx": Lx, "Ly": Ly, "t": t}, FluidState(u, v, p)


def fluid_to_csv(grid: FluidGrid, state: FluidState) -> str:
    """Small-grid text export: one row per cell, ``i,j,u,v,p``."""
    lines = ["i,j,u,v,p"]
    for i in range(grid.nx):
        for j in range(grid.ny):
            lines.append(f"{i},{j},{state.u[i, j]!r},{state.v[i, j]!r},{state.p[i, j]!r}")
    return "\n".join(lines) + "\n"


def with_viscosity(grid: FluidGrid, mu: float) -> FluidGrid:
    return replace(grid, mu=mu)
