"""Penalty immersed-boundary coupling, the fluid-structure time step and the energy ledger.

Body nodes are tethered to the local fluid velocity by a linear drag
``J = K_p (interp(u) - V)``. ``J`` acts on the body and ``-J`` is spread onto
the grid, so the exchanged momentum cancels to rounding.

One step from ``(X, V, u)`` at time ``t``:

1. semi-Lagrangian advection of ``u`` (``u*``),
2. body forces ``F`` (elastic + shape damping) at ``X`` and ``V``,
3. new body velocity with the tether drag taken implicitly,
   ``V' = V + dt (F + K_p (interp(u*, X) - V')) / m``, and ``X += dt V'``,
4. ``u* += dt spread(-J) / (rho h^2)`` with ``J = K_p (interp(u*, X) - V')``,
   then the sponge multiplier,
5. implicit viscous solve and projection in a single Fourier pass.

Elastic forces are explicit (symplectic Euler); the implicit drag removes the
node-mass limit on ``K_p``, leaving ``dt K_p / m_fluid`` as the only bound.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft

from . import kernels
from .body import (PASSIVE, ActuationSpec, BodyMesh, BodyState, body_kinetic_energy, elastic_force,
                   passive_energy, passive_force, shape_dissipation_force)
from .errors import CflViolation, OutOfDomain, SolverDiverged
from .fluid import (CFL_LIMIT, FluidGrid, FluidState, diffuse_project, fluid_from_bytes, fluid_to_bytes,
                    kinetic_energy, sponge_power, viscous_power)

# sum over the grid of the squared 2-D kernel weights, exactly (3/8)^2
KERNEL_SELF_WEIGHT = (3.0 / 8.0) ** 2


@dataclass
class SystemState:
    body: BodyState
    fluid: FluidState
    t: float = 0.0

    def copy(self) -> "SystemState":
        return SystemState(self.body.copy(), self.fluid.copy(), self.t)


def rest_state(grid: FluidGrid, mesh: BodyMesh, t: float = 0.0) -> SystemState:
    return SystemState(BodyState.at_rest(mesh), FluidState.zeros(grid), t)


def _check_inside(grid: FluidGrid, points):
    x0, x1, y0, y1 = grid.interior_bounds()
    x, y = points[:, 0], points[:, 1]
    if not (np.all(np.isfinite(points)) and x.min() >= x0 and x.max() <= x1
            and y.min() >= y0 and y.max() <= y1):
        raise OutOfDomain("body node left the sponge-free interior of the domain")


def interpolate(grid: FluidGrid, fluid: FluidState, points, check: bool = True) -> np.ndarray:
    """Fluid velocity at physical points through the 4-point cosine kernel."""
    points = np.asarray(points, dtype=float)
    if check:
        _check_inside(grid, points)
    return kernels.ib_interpolate(fluid.u, fluid.v, points / grid.h)


def spread(grid: FluidGrid, points, forces, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Point forces to a face force density (force per unit area).

    Adjoint of :func:`interpolate` in the grid inner product
    ``<f, u>_h = h^2 sum(f u)``.
    """
    points = np.asarray(points, dtype=float)
    if check:
        _check_inside(grid, points)
    fu, fv = kernels.ib_spread(grid.shape, points / grid.h, np.asarray(forces, dtype=float))
    a = grid.h ** 2
    return fu / a, fv / a


def kernel_fluid_mass(grid: FluidGrid) -> float:
    """Inertia ``rho h^2 / (3/8)^2`` that one kernel footprint of fluid offers a point force."""
    return grid.rho_f * grid.h ** 2 / KERNEL_SELF_WEIGHT


def default_penalty(grid: FluidGrid, dt: float, safety: float = 0.75) -> float:
    """Tether stiffness with ``dt K_p / m_fluid = safety``."""
    return safety * kernel_fluid_mass(grid) / dt


class Stepper:
    """Fractional-step integrator with preallocated work arrays.

    Parameters
    ----------
    grid, mesh, actuation
        Problem definition.
    dt : float
        Time step.
    k_penalty : float, optional
        Tether stiffness; defaults to :func:`default_penalty`.
    workers : int
        FFT threads. Trajectories are bit-identical for a fixed value.
    check_stability : bool
        Refuse a ``dt`` above the elastic stability bound.

    Notes
    -----
    The stepper never writes the pressure field of the states it returns;
    call :func:`swimcycle.fluid.project` with ``dt`` when pressure is needed.
    """

    def __init__(self, grid: FluidGrid, mesh: BodyMesh, actuation: ActuationSpec = PASSIVE,
                 dt: float = 2.5e-4, k_penalty: float | None = None, workers: int = 1,
                 check_stability: bool = True):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if check_stability and dt > mesh.stable_dt():
            raise ValueError(f"dt={dt:g} exceeds the elastic stability bound {mesh.stable_dt():.4g}")
        self.grid = grid
        self.mesh = mesh
        self.actuation = actuation
        self.dt = float(dt)
        self.k_penalty = default_penalty(grid, dt) if k_penalty is None else float(k_penalty)
        if self.k_penalty < 0:
            raise ValueError("k_penalty must be >= 0")
        self.workers = int(workers)
        nx, ny = grid.shape
        self._ua = np.empty((nx, ny))
        self._va = np.empty((nx, ny))
        self._z = np.empty((nx, ny), dtype=np.complex128)
        self._zo = np.empty((nx, ny), dtype=np.complex128)
        self._sponge = None
        if grid.sponge_rate > 0 and grid.sponge_width > 0:
            wu, wv = grid.sponge_weights
            self._sponge = (np.exp(-dt * grid.sponge_rate * wu), np.exp(-dt * grid.sponge_rate * wv))
        self._inv_m = 1.0 / mesh.masses[:, None]
        self.max_slip = 0.0

    # -- forces ------------------------------------------------------------
    def body_forces(self, body: BodyState, t: float) -> np.ndarray:
        f = elastic_force(self.mesh, body, self.actuation, t)
        if self.mesh.damping:
            f += shape_dissipation_force(self.mesh, body)
        return f

    # -- core --------------------------------------------------------------
    def _advance(self, X, V, u, v, t, n):
        """``n`` steps in place on ``X, V, u, v``; returns the new time."""
        grid, dt, h = self.grid, self.dt, self.grid.h
        ua, va, z, zo = self._ua, self._va, self._z, self._zo
        c_visc = dt * grid.nu
        spread_scale = -dt / (grid.rho_f * h * h)
        kp = self.k_penalty
        x0, x1, y0, y1 = grid.interior_bounds()
        dt_inv_m = dt * self._inv_m
        drag = kp * dt_inv_m
        relax = 1.0 / (1.0 + drag)
        body = BodyState(X, V)
        for _ in range(n):
            speed = max(u.max(), -u.min(), v.max(), -v.min())
            cfl = speed * dt / h
            if not cfl <= CFL_LIMIT:
                if math.isfinite(cfl):
                    raise CflViolation(cfl, CFL_LIMIT)
                raise SolverDiverged(f"non-finite fluid velocity at t={t:.6g}")
            if not (X[:, 0].min() >= x0 and X[:, 0].max() <= x1
                    and X[:, 1].min() >= y0 and X[:, 1].max() <= y1):
                raise OutOfDomain(f"body node left the sponge-free interior at t={t:.6g}")
            kernels.advect_mac(u, v, dt / h, ua, va)
            F = self.body_forces(body, t)
            F *= dt_inv_m
            if kp:
                pts = X / h
                U = kernels.ib_interpolate(ua, va, pts)
                slip = float(np.abs(U - V).max())
                if slip > self.max_slip:
                    self.max_slip = slip
                F += V
                F += drag * U
                F *= relax
                U -= F
                U *= kp
                kernels.ib_spread_add(ua, va, pts, U, spread_scale)
                V[...] = F
            else:
                V += F
            X += dt * V
            if self._sponge is not None:
                ua *= self._sponge[0]
                va *= self._sponge[1]
            z.real = ua
            z.imag = va
            sfft.fft2(z, overwrite_x=True, workers=self.workers)
            kernels.spectral_diffuse_project(z, c_visc, h, False, zo)
            sfft.ifft2(zo, overwrite_x=True, workers=self.workers)
            u[...] = zo.real
            v[...] = zo.imag
            t += dt
        return t

    def advance(self, state: SystemState, n_steps: int, out: SystemState | None = None) -> SystemState:
        """Take ``n_steps`` steps; the input is left untouched unless passed as ``out``."""
        if out is None:
            out = state.copy()
        elif out is not state:
            out.body = state.body.copy()
            out.fluid = state.fluid.copy()
            out.t = state.t
        # uniform physical times: t_k = t_0 + k dt, accumulated in the loop
        out.t = self._advance(out.body.positions, out.body.velocities, out.fluid.u, out.fluid.v,
                              out.t, int(n_steps))
        return out

    def step(self, state: SystemState) -> SystemState:
        return self.advance(state, 1)

    def run(self, state: SystemState, n_steps: int, every: int = 1, callback=None) -> SystemState:
        """Advance with ``callback(step_index, state)`` every ``every`` steps (and at 0)."""
        cur = state.copy()
        if callback is not None:
            callback(0, cur)
        done = 0
        while done < n_steps:
            k = min(every, n_steps - done)
            self.advance(cur, k, out=cur)
            done += k
            if callback is not None:
                callback(done, cur)
        return cur

    # -- diagnostics -------------------------------------------------------
    def slip(self, state: SystemState) -> np.ndarray:
        """No-slip residual ``interp(u, X) - V`` per node."""
        return interpolate(self.grid, state.fluid, state.body.positions) - state.body.velocities

    def ledger(self, state: SystemState) -> "EnergyLedger":
        return energy_ledger(state, self.grid, self.mesh, self.actuation, self.k_penalty, self.dt)


def step(state: SystemState, grid: FluidGrid, mesh: BodyMesh, actuation: ActuationSpec = PASSIVE,
         dt: float = 2.5e-4, k_penalty: float | None = None) -> SystemState:
    """One coupled step (convenience wrapper around :class:`Stepper`)."""
    return Stepper(grid, mesh, actuation, dt, k_penalty).step(state)


# energy ----------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyLedger:
    """Energies and instantaneous powers of one state.

    ``E_total`` counts the passive elastic energy only; the work done by the
    time-dependent actuation appears as ``P_actuation``. ``P_body_dissipation``
    is the sum of the shape-damping power ``P_shape`` and the tether drag power
    ``P_coupling``. ``P_advection`` is the kinetic-energy loss rate of one
    semi-Lagrangian step at the stepper's ``dt``; it is a property of the scheme
    (interpolation damping of order ``|u| h``), not of the fluid, and is zero
    when no ``dt`` is given.
    """

    t: float
    E_total: float
    E_kin_body: float
    E_kin_fluid: float
    U_elastic: float
    P_body_dissipation: float
    P_viscous: float
    P_actuation: float
    P_sponge: float
    P_shape: float
    P_coupling: float
    P_advection: float = 0.0

    CSV_COLUMNS = ("t", "E_total", "E_kin_body", "E_kin_fluid", "U_elastic", "P_body",
                   "P_viscous", "P_actuation", "P_sponge", "P_advection")

    @property
    def P_total(self) -> float:
        return (self.P_body_dissipation + self.P_viscous + self.P_actuation + self.P_sponge
                + self.P_advection)

    def csv_row(self) -> tuple[float, ...]:
        return (self.t, self.E_total, self.E_kin_body, self.E_kin_fluid, self.U_elastic,
                self.P_body_dissipation, self.P_viscous, self.P_actuation, self.P_sponge,
                self.P_advection)


def energy_ledger(state: SystemState, grid: FluidGrid, mesh: BodyMesh,
                  actuation: ActuationSpec = PASSIVE, k_penalty: float = 0.0,
                  dt: float | None = None) -> EnergyLedger:
    body = state.body
    ek_b = body_kinetic_energy(mesh, body)
    ek_f = kinetic_energy(grid, state.fluid)
    u_el = passive_energy(mesh, body)
    V = body.velocities
    p_shape = float(np.sum(shape_dissipation_force(mesh, body) * V))
    p_coup = 0.0
    if k_penalty:
        r = kernels.ib_interpolate(state.fluid.u, state.fluid.v, body.positions / grid.h) - V
        p_coup = -k_penalty * float(np.sum(r * r))
    p_act = 0.0
    if actuation.active:
        f_act = elastic_force(mesh, body, actuation, state.t) - passive_force(mesh, body)
        p_act = float(np.sum(f_act * V))
    p_adv = 0.0
    if dt and ek_f > 0.0:
        u, v = kernels.advect_mac(state.fluid.u, state.fluid.v, dt / grid.h)
        p_adv = (kinetic_energy(grid, FluidState(u, v)) - ek_f) / dt
    return EnergyLedger(
        t=state.t, E_total=ek_b + ek_f + u_el, E_kin_body=ek_b, E_kin_fluid=ek_f, U_elastic=u_el,
        P_body_dissipation=p_shape + p_coup, P_viscous=viscous_power(grid, state.fluid),
        P_actuation=p_act, P_sponge=sponge_power(grid, state.fluid), P_shape=p_shape,
        P_coupling=p_coup, P_advection=p_adv,
    )


# checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"CYCK"
_LEN = struct.Struct("<Q")


def save_checkpoint(path, state: SystemState, grid: FluidGrid, header: dict) -> None:
    """JSON header, then the CYF1 fluid block, then body positions and velocities.

    ``header`` should carry the run configuration and seed; the time, grid
    and a digest of the binary payload are added here.
    """
    fluid_block = fluid_to_bytes(grid, state.fluid, state.t)
    body_block = (np.ascontiguousarray(state.body.positions, dtype="<f8").tobytes()
                  + np.ascontiguousarray(state.body.velocities, dtype="<f8").tobytes())
    head = dict(header)
    head.update(t=state.t, n_nodes=len(state.body.positions), grid=asdict(grid),
                payload_sha256=hashlib.sha256(fluid_block + body_block).hexdigest())
    hb = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + _LEN.pack(len(hb)) + hb + _LEN.pack(len(fluid_block)))
        fh.write(fluid_block)
        fh.write(body_block)


def load_checkpoint(path) -> tuple[dict, SystemState]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    buf = io.BytesIO(data[4:])
    (n,) = _LEN.unpack(buf.read(8))
    head = json.loads(buf.read(n))
    (nf,) = _LEN.unpack(buf.read(8))
    fluid_block = buf.read(nf)
    body_block = buf.read()
    if hashlib.sha256(fluid_block + body_block).hexdigest() != head["payload_sha256"]:
        raise ValueError(f"{path}: payload digest mismatch")
    _, fluid = fluid_from_bytes(fluid_block)
    nb = head["n_nodes"]
    arr = np.frombuffer(body_block, dtype="<f8").astype(float)
    body = BodyState(arr[:2 * nb].reshape(nb, 2).copy(), arr[2 * nb:].reshape(nb, 2).copy())
    return head, SystemState(body, fluid, head["t"])
