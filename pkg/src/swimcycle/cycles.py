"""Period map on the reduced space, limit-cycle search and Floquet multipliers.

Two representations of a point of the reduced space are supported:

``exact`` (default)
    A full :class:`~swimcycle.coupling.SystemState` re-posed after every period
    so the body's Procrustes pose is the canonical one (template centred on the
    rest position of the mesh). Nothing is compressed.
``stencil``
    A :class:`~swimcycle.reduction.ReducedState`. The fluid is rebuilt from the
    body-frame samples as the minimum-energy divergence-free field that
    reproduces them, so the map only sees what the stencil sees.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import kernels
from .body import BodyState
from .coupling import Stepper, SystemState
from .errors import IllConditioned, NoConvergence, ReconstitutionResidual
from .fluid import FluidState, project, transform_state
from .reduction import CycleResult, ReducedState, halo_stencil, holonomy, reduce, reduced_distance
from .se2 import SE2Element, act_point, act_vector, align, compose, inverse

ROTATION_SKIP = 1e-12


@dataclass(frozen=True)
class PoincareConfig:
    """Settings of the cycle search.

    ``probe_dim`` limits the Floquet probes to the first ``probe_dim`` body
    coordinates (positions then velocities); ``None`` means all ``4 N_b``.
    """

    period: float = 1.0
    tol: float = 1e-6
    max_iters: int = 200
    accel: str = "anderson"
    anderson_m: int = 3
    probe_step: float = 1e-5
    probe_dim: int | None = None
    mode: str = "exact"
    n_snapshots: int = 32
    weights: tuple | None = None
    lift_tol: float = 1e-8
    floquet: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.period > 0:
            raise ValueError("period must be > 0")
        if self.accel not in ("none", "anderson"):
            raise ValueError("accel must be 'none' or 'anderson'")
        if self.mode not in ("exact", "stencil"):
            raise ValueError("mode must be 'exact' or 'stencil'")
        if self.max_iters < 1 or self.n_snapshots < 1 or self.anderson_m < 1:
            raise ValueError("max_iters, n_snapshots and anderson_m must be >= 1")
        if not self.probe_step > 0:
            raise ValueError("probe_step must be > 0")


class CycleProblem:
    """Binds a stepper to the reduction used for period maps.

    Parameters
    ----------
    stepper : Stepper
        Time stepper; its ``dt`` must divide the period.
    cfg : PoincareConfig
    stencil : (M, 2) array, optional
        Body-frame sample points; default :func:`halo_stencil` scaled to the body.
    length : float
        Body length used to nondimensionalise distances.
    """

    def __init__(self, stepper: Stepper, cfg: PoincareConfig, stencil=None, length: float = 1.0):
        self.stepper = stepper
        self.cfg = cfg
        self.grid = stepper.grid
        self.mesh = stepper.mesh
        self.length = float(length)
        self.stencil = halo_stencil(self.length) if stencil is None else np.asarray(stencil, dtype=float)
        n = cfg.period / stepper.dt
        self.steps = int(round(n))
        if self.steps < 1 or abs(n - self.steps) > 1e-9 * n:
            raise ValueError(f"dt={stepper.dt!r} does not divide the period {cfg.period!r}")
        self.template = self.mesh.template
        c = (self.mesh.masses[:, None] * self.mesh.nodes).sum(axis=0) / self.mesh.total_mass
        self.canonical = SE2Element(0.0, c[0], c[1])
        self._lift_ops = None

    # -- frames ------------------------------------------------------------
    def pose(self, state: SystemState) -> SE2Element:
        return align(state.body.positions, self.mesh.masses, self.template).group

    def relative(self, g: SE2Element) -> SE2Element:
        """Lab pose expressed in the canonical frame."""
        return compose(inverse(self.canonical), g)

    def repose(self, state: SystemState, g_from: SE2Element, g_to: SE2Element, t: float = 0.0) -> SystemState:
        """Move the whole state by the rigid motion taking pose ``g_from`` to ``g_to``."""
        a = compose(g_to, inverse(g_from))
        X = act_point(a, state.body.positions)
        V = act_vector(a, state.body.velocities)
        theta = a.theta if abs(a.theta) > ROTATION_SKIP else 0.0
        c = self.grid.center
        R = SE2Element(theta).rotation_matrix()
        shift = np.array([a.tx, a.ty]) + R @ c - c
        fluid = transform_state(self.grid, state.fluid, theta, shift, c)
        return SystemState(BodyState(X, V), fluid, t)

    def canonicalize(self, state: SystemState) -> tuple[SystemState, SE2Element]:
        g = self.pose(state)
        return self.repose(state, g, self.canonical), g

    def reduce(self, state: SystemState) -> tuple[ReducedState, SE2Element]:
        return reduce(state, self.grid, self.mesh, self.stencil, self.cfg.period, self.template)

    def distance(self, a: ReducedState, b: ReducedState) -> float:
        return reduced_distance(a, b, self.cfg.period, self.length, self.cfg.weights)

    # -- flow --------------------------------------------------------------
    def flow(self, state: SystemState, snapshots: int = 0, callback=None) -> SystemState:
        """Integrate one period; ``callback(k, state)`` at ``k = 0..snapshots``."""
        start = SystemState(state.body, state.fluid, 0.0)
        if not snapshots:
            return self.stepper.advance(start, self.steps)
        if self.steps % snapshots:
            raise ValueError("snapshot count must divide the steps per period")
        return self.stepper.run(start, self.steps, self.steps // snapshots, callback)

    def period_map(self, state: SystemState, snapshots: int = 0, callback=None):
        """Exact-restart map: returns ``(canonical end state, holonomy)``."""
        g0 = self.pose(state)
        end = self.flow(state, snapshots, callback)
        g1 = self.pose(end)
        z = holonomy(self.relative(g0), self.relative(g1))
        return self.repose(end, g1, self.canonical), z

    # -- stencil lift ------------------------------------------------------
    def _lift_operator(self):
        grid = self.grid
        pts = act_point(self.canonical, self.stencil) / grid.h
        M = len(pts)

        def apply(alpha):
            a = alpha.reshape(M, 2)
            fu, fv = kernels.ib_spread(grid.shape, pts, a)
            w = project(grid, FluidState(fu, fv))
            return kernels.ib_interpolate(w.u, w.v, pts).ravel()

        return pts, LinearOperator((2 * M, 2 * M), matvec=apply, dtype=float)

    def lift(self, red: ReducedState, check: bool = True) -> tuple[SystemState, float]:
        """Full canonical state from a reduced one; returns it with the relative lift error.

        With ``check`` a lift error above ``10 * lift_tol`` raises
        :class:`ReconstitutionResidual`; otherwise it is only reported.
        """
        grid = self.grid
        X = act_point(self.canonical, red.shape)
        V = act_vector(self.canonical, red.shape_vel)
        s = act_vector(self.canonical, red.fluid_samples)
        norm = float(np.linalg.norm(s))
        if norm == 0.0:
            return SystemState(BodyState(X, V), FluidState.zeros(grid), 0.0), 0.0
        if self._lift_ops is None:
            self._lift_ops = self._lift_operator()
        pts, op = self._lift_ops
        alpha, _ = cg(op, s.ravel(), rtol=self.cfg.lift_tol, atol=0.0, maxiter=20 * len(pts))
        fu, fv = kernels.ib_spread(grid.shape, pts, alpha.reshape(-1, 2))
        fluid = project(grid, FluidState(fu, fv))
        fluid.p[...] = 0.0
        err = float(np.linalg.norm(kernels.ib_interpolate(fluid.u, fluid.v, pts) - s)) / norm
        if check and err > 10.0 * self.cfg.lift_tol:
            raise ReconstitutionResidual(err, 10.0 * self.cfg.lift_tol)
        return SystemState(BodyState(X, V), fluid, 0.0), err

    # -- vectors for acceleration -------------------------------------------
    @staticmethod
    def _to_vec(state: SystemState) -> np.ndarray:
        return np.concatenate([state.body.positions.ravel(), state.body.velocities.ravel(),
                               state.fluid.u.ravel(), state.fluid.v.ravel()])

    def _from_vec(self, vec) -> SystemState:
        n = self.mesh.n_nodes
        nx, ny = self.grid.shape
        X = vec[:2 * n].reshape(n, 2).copy()
        V = vec[2 * n:4 * n].reshape(n, 2).copy()
        u = vec[4 * n:4 * n + nx * ny].reshape(nx, ny).copy()
        v = vec[4 * n + nx * ny:].reshape(nx, ny).copy()
        return SystemState(BodyState(X, V), FluidState(u, v), 0.0)


def _stencil_map(problem: CycleProblem, x: ReducedState, check: bool = True):
    state, err = problem.lift(x, check)
    end = problem.flow(state)
    red, g1 = problem.reduce(end)
    return red, holonomy(problem.relative(problem.pose(state)), problem.relative(g1)), err


def poincare_map(problem: CycleProblem, x, base_pose: SE2Element | None = None):
    """One period of the reduced dynamics.

    ``x`` is a full state (exact mode) or a :class:`ReducedState` (stencil
    mode, lifted onto the canonical pose). Returns ``(P(x), z)`` in the same
    representation, ``z`` being the rigid displacement over the period in the
    body frame at phase 0. With ``base_pose`` the lab-frame displacement
    ``base_pose o z o base_pose^-1`` is returned instead.
    """
    if isinstance(x, ReducedState):
        out, z, _ = _stencil_map(problem, x)
    else:
        out, z = problem.period_map(x)
    if base_pose is not None:
        z = compose(compose(base_pose, z), inverse(base_pose))
    return out, z


class _Anderson:
    """Type-II Anderson mixing on ``x -> G(x)`` with a short history."""

    def __init__(self, m: int):
        self.m = m
        self.dx, self.df = [], []
        self.prev = None

    def reset(self):
        self.dx, self.df, self.prev = [], [], None

    def __call__(self, x, gx):
        f = gx - x
        if self.prev is not None:
            px, pf, pg = self.prev
            self.df.append(f - pf)
            self.dx.append(gx - pg)
            if len(self.df) > self.m:
                self.df.pop(0)
                self.dx.pop(0)
        self.prev = (x, f, gx)
        if not self.df:
            return gx
        F = np.stack(self.df, axis=1)
        gamma, *_ = np.linalg.lstsq(F, f, rcond=None)
        return gx - np.stack(self.dx, axis=1) @ gamma


def _median_ratio(hist):
    r = [b / a for a, b in zip(hist[:-1], hist[1:]) if a > 0 and b > 0]
    return float(np.median(r)) if r else None


def find_cycle(problem: CycleProblem, x0=None, log=None) -> CycleResult:
    """Iterate the period map until the reduced residual drops below ``cfg.tol``.

    ``log(iteration, residual, z)`` is called after every map application.
    Raises :class:`NoConvergence` after ``cfg.max_iters`` applications.
    """
    cfg = problem.cfg
    grid, mesh = problem.grid, problem.mesh
    if x0 is None:
        x0 = SystemState(BodyState.at_rest(mesh), FluidState.zeros(grid), 0.0)
    stencil_mode = cfg.mode == "stencil"
    if stencil_mode:
        x = x0 if isinstance(x0, ReducedState) else problem.reduce(x0)[0]
    else:
        x, _ = problem.canonicalize(x0) if isinstance(x0, SystemState) else problem.lift(x0)
    accel = _Anderson(cfg.anderson_m) if cfg.accel == "anderson" else None
    hist, best, lift_floor = [], math.inf, 0.0
    z = SE2Element.identity()
    converged = False
    for it in range(1, cfg.max_iters + 1):
        if stencil_mode:
            y, z, lift_err = _stencil_map(problem, x, check=False)
            lift_floor = max(lift_floor, lift_err)
            r = problem.distance(y, x)
        else:
            y, z = problem.period_map(x)
            r = problem.distance(problem.reduce(y)[0], problem.reduce(x)[0])
        hist.append(r)
        if log is not None:
            log(it, r, z)
        if not math.isfinite(r):
            break
        if r <= cfg.tol and (not stencil_mode or lift_floor <= cfg.tol):
            x = y
            converged = True
            break
        if accel is not None:
            if r > 2.0 * best:
                accel.reset()
            if stencil_mode:
                xv = accel(x.to_vector(), y.to_vector())
                x = _reduced_from_vec(xv, x)
            else:
                xv = accel(problem._to_vec(x), problem._to_vec(y))
                x, _ = problem.canonicalize(problem._from_vec(xv))
        else:
            x = y
        best = min(best, r)
    if not converged:
        msg = ""
        if stencil_mode and lift_floor > cfg.tol:
            msg = (f"tolerance {cfg.tol:.1e} is below the lift-error floor {lift_floor:.2e} "
                   f"of the stencil representation")
        raise NoConvergence(min(hist) if hist else math.inf, len(hist), msg)
    return _record_loop(problem, x, hist, z)


def _reduced_from_vec(vec, like: ReducedState) -> ReducedState:
    n = like.shape.size
    m = like.shape_vel.size
    return ReducedState(vec[:n].reshape(like.shape.shape), vec[n:n + m].reshape(like.shape_vel.shape),
                        vec[n + m:].reshape(like.fluid_samples.shape), like.t_phase)


def _record_loop(problem: CycleProblem, x, hist, z_iter) -> CycleResult:
    cfg = problem.cfg
    K = cfg.n_snapshots
    start = problem.lift(x, check=False)[0] if isinstance(x, ReducedState) else x
    g0 = problem.pose(start)
    positions, velocities, reduced, groups = [], [], [], []
    g0inv = inverse(g0)

    def snap(k, st):
        red, g = problem.reduce(st)
        red.t_phase = k * cfg.period / K
        reduced.append(red)
        groups.append(compose(g0inv, g))
        positions.append(act_point(g0inv, st.body.positions))
        velocities.append(act_vector(g0inv, st.body.velocities))

    end = problem.flow(start, K, snap)
    g1 = problem.pose(end)
    z = holonomy(problem.relative(g0), problem.relative(g1))
    if isinstance(x, ReducedState):
        residual = problem.distance(problem.reduce(end)[0], x)
    else:
        residual = problem.distance(problem.reduce(problem.repose(end, g1, problem.canonical))[0],
                                    problem.reduce(start)[0])
    result = CycleResult(
        loop=reduced[:K], loop_positions=np.array(positions), loop_velocities=np.array(velocities),
        loop_groups=groups, holonomy=z, residual=residual, floquet=[], iterations=len(hist),
        period=cfg.period, residual_history=list(hist), contraction_factor=_median_ratio(hist),
        verification_holonomy=z_iter, start_state=start,
    )
    if cfg.floquet:
        moduli, noise = floquet_spectrum(problem, start)
        result.floquet = moduli
        result.stable = bool(all(m < 1.0 - 10.0 * noise for m in moduli))
    return result


# Floquet -----------------------------------------------------------------------

def _body_vector(problem: CycleProblem, state: SystemState) -> np.ndarray:
    red, _ = problem.reduce(state)
    T, L = problem.cfg.period, problem.length
    return np.concatenate([red.shape.ravel() / L, red.shape_vel.ravel() * T / L])


def _probe(args):
    problem, state, i, step = args
    n = problem.mesh.n_nodes
    T, L = problem.cfg.period, problem.length
    pert = state.copy()
    if i < 2 * n:
        pert.body.positions.reshape(-1)[i] += step * L
    else:
        pert.body.velocities.reshape(-1)[i - 2 * n] += step * L / T
    end = problem.flow(pert)
    return i, _body_vector(problem, end)


def floquet_spectrum(problem: CycleProblem, x_star: SystemState, step: float | None = None):
    """Moduli of the period-map Jacobian restricted to body coordinates.

    Forward differences along each body position and velocity coordinate
    (nondimensionalised by body length and period), output measured in the
    aligned body frame. Returns ``(moduli sorted descending, noise level)``.
    """
    cfg = problem.cfg
    step = cfg.probe_step if step is None else step
    n = problem.mesh.n_nodes
    dim = 4 * n if cfg.probe_dim is None else min(cfg.probe_dim, 4 * n)
    base = _body_vector(problem, problem.flow(x_star))
    noise = np.finfo(float).eps * max(float(np.abs(base).max()), 1.0) / step
    jobs = [(problem, x_star, i, step) for i in range(dim)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            cols = dict(ex.map(_probe, jobs))
    else:
        cols = dict(map(_probe, jobs))
    J = np.zeros((4 * n, dim))
    scale = max(float(np.linalg.norm(base)), 1.0)
    for i in range(dim):
        d = cols[i] - base
        if float(np.linalg.norm(d)) < 10.0 * np.finfo(float).eps * scale:
            raise IllConditioned(f"probe {i} changed the state by less than 10x rounding noise")
        J[:, i] = d / step
    J = J[:dim]
    moduli = np.sort(np.abs(np.linalg.eigvals(J)))[::-1]
    return [float(m) for m in moduli], float(noise)


def empirical_contraction(history) -> float | None:
    """Median ratio of successive residuals."""
    return _median_ratio(list(history))


def with_config(problem: CycleProblem, **changes) -> CycleProblem:
    return CycleProblem(problem.stepper, replace(problem.cfg, **changes), problem.stencil, problem.length)
