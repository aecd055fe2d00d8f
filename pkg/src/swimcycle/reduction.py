"""Quotient by rigid motions: reduced states, their distance, holonomy and reconstruction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .body import BodyMesh
from .coupling import SystemState
from .errors import PhaseOutOfRange, ShapeMismatch
from .fluid import FluidGrid
from .se2 import SE2Element, act_point, act_vector, align, compose, inverse, power


@dataclass
class ReducedState:
    """Body-frame representative of a system state modulo rigid motions."""

    shape: np.ndarray
    shape_vel: np.ndarray
    fluid_samples: np.ndarray
    t_phase: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.shape.ravel(), self.shape_vel.ravel(), self.fluid_samples.ravel()])


def halo_stencil(length: float = 1.0, n_rings: int = 8, per_ring: int = 32,
                 inner: float = 0.05, outer: float = 1.0) -> np.ndarray:
    """Sample points on stadium-shaped rings around a straight body along x.

    Ring ``r`` is the set of points at distance ``d_r`` from the centre-line
    segment ``[-length/2, length/2] x {0}``, with ``d_r`` spaced geometrically
    from ``inner`` to ``outer``; points are equally spaced in arclength.
    """
    half = 0.5 * length
    pts = []
    for r in range(n_rings):
        d = inner * (outer / inner) ** (r / max(n_rings - 1, 1))
        perim = 4.0 * half + 2.0 * math.pi * d
        for s in (np.arange(per_ring) + 0.5 * (r % 2)) * perim / per_ring:
            if s < 2.0 * half:
                pts.append((half - s, d))
                continue
            s -= 2.0 * half
            if s < math.pi * d:
                a = 0.5 * math.pi + s / d
                pts.append((-half + d * math.cos(a), d * math.sin(a)))
                continue
            s -= math.pi * d
            if s < 2.0 * half:
                pts.append((-half + s, -d))
                continue
            s -= 2.0 * half
            a = -0.5 * math.pi + s / d
            pts.append((half + d * math.cos(a), d * math.sin(a)))
    return np.array(pts)


def reduce(state: SystemState, grid: FluidGrid, mesh: BodyMesh, stencil: np.ndarray,
           period: float = 1.0, template: np.ndarray | None = None) -> tuple[ReducedState, SE2Element]:
    """Align the body to the template and express everything in the body frame.

    Returns the reduced state and the lab pose ``g`` with ``positions = g . shape``.
    """
    tmpl = mesh.template if template is None else template
    al = align(state.body.positions, mesh.masses, tmpl, state.body.velocities)
    g = al.group
    lab_pts = act_point(g, stencil)
    samples = kernels.ib_interpolate(state.fluid.u, state.fluid.v, lab_pts / grid.h)
    phase = math.fmod(state.t, period)
    if phase < 0:
        phase += period
    red = ReducedState(al.shape, al.velocities, act_vector(inverse(g), samples), phase)
    return red, g


def _rms(a):
    a = np.asarray(a)
    return math.sqrt(float(np.sum(a * a)) / max(a.shape[0], 1))


def reduced_distance(a: ReducedState, b: ReducedState, period: float = 1.0, length: float = 1.0,
                     weights=None) -> float:
    """Weighted sum of root-mean-square differences, in body lengths.

    ``weights = (w_s, w_v, w_f)`` default to ``(1, T, T)`` so velocity terms
    are measured in body lengths per period.
    """
    if (a.shape.shape != b.shape.shape or a.shape_vel.shape != b.shape_vel.shape
            or a.fluid_samples.shape != b.fluid_samples.shape):
        raise ShapeMismatch("reduced states come from different meshes or stencils")
    w_s, w_v, w_f = (1.0, period, period) if weights is None else weights
    return (w_s * _rms(a.shape - b.shape) + w_v * _rms(a.shape_vel - b.shape_vel)
            + w_f * _rms(a.fluid_samples - b.fluid_samples)) / length


def holonomy(group_start: SE2Element, group_end: SE2Element) -> SE2Element:
    """Rigid displacement ``group_end o group_start^-1`` accumulated over a period."""
    return compose(group_end, inverse(group_start))


@dataclass
class CycleResult:
    """A converged periodic orbit of the reduced dynamics.

    ``loop_positions[k]`` are the body node positions at phase ``k/K`` of the
    final period, expressed in the body frame at phase 0 (so index ``K`` is
    ``holonomy`` applied to index 0, up to the residual).
    """

    loop: list
    loop_positions: np.ndarray
    loop_velocities: np.ndarray
    loop_groups: list
    holonomy: SE2Element
    residual: float
    floquet: list
    iterations: int
    period: float
    stable: bool | None = None
    residual_history: list = field(default_factory=list)
    contraction_factor: float | None = None
    verification_holonomy: SE2Element | None = None
    start_state: SystemState | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_snapshots(self) -> int:
        return len(self.loop_positions) - 1

    def stride(self) -> tuple[float, float]:
        return self.holonomy.stride()


def _interp_loop(loop: CycleResult, phase: float) -> np.ndarray:
    """Body positions at ``phase`` in [0, 1), linear between snapshots."""
    K = loop.n_snapshots
    x = phase * K
    k = min(int(math.floor(x)), K - 1)
    f = x - k
    if f == 0.0:
        return loop.loop_positions[k].copy()
    return (1.0 - f) * loop.loop_positions[k] + f * loop.loop_positions[k + 1]


def reconstruct(loop: CycleResult, base_pose: SE2Element, n_periods: int, t: float) -> np.ndarray:
    """Lab positions ``base_pose o z^k`` applied to the loop at phase ``t/T - k``.

    ``k = floor(t / T)``; snapshots are linearly interpolated in phase.
    """
    T = loop.period
    if not (0.0 <= t < n_periods * T):
        raise PhaseOutOfRange(f"t={t!r} outside [0, {n_periods * T!r})")
    k = int(math.floor(t / T))
    phase = t / T - k
    if phase >= 1.0:  # rounding at a period boundary
        k, phase = k + 1, 0.0
    g = compose(base_pose, power(loop.holonomy, k))
    return act_point(g, _interp_loop(loop, phase))


# serialization -----------------------------------------------------------------

SIDECAR_MAGIC = b"CYLB"


def _write_sidecar(path, arrays: dict) -> list:
    manifest = []
    offset = len(SIDECAR_MAGIC)
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(a.tobytes())
            manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    return manifest


def _read_sidecar(path, manifest) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SIDECAR_MAGIC:
        raise ValueError(f"{path}: not a loop sidecar")
    out = {}
    for m in manifest:
        n = int(np.prod(m["shape"])) if m["shape"] else 1
        out[m["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=m["offset"]).reshape(m["shape"]).astype(float)
    return out


def save_cycle(result: CycleResult, json_path, extra: dict | None = None) -> None:
    """Write ``json_path`` plus a binary sidecar ``<json_path>.bin`` with the loop arrays."""
    import os

    side = str(json_path) + ".bin"
    arrays = {
        "loop_positions": result.loop_positions,
        "loop_velocities": result.loop_velocities,
        "shape": np.array([r.shape for r in result.loop]),
        "shape_vel": np.array([r.shape_vel for r in result.loop]),
        "fluid_samples": np.array([r.fluid_samples for r in result.loop]),
        "t_phase": np.array([r.t_phase for r in result.loop]),
    }
    if result.start_state is not None:
        st = result.start_state
        arrays.update(start_positions=st.body.positions, start_velocities=st.body.velocities,
                      start_u=st.fluid.u, start_v=st.fluid.v, start_t=np.array(st.t))
    manifest = _write_sidecar(side, arrays)
    doc = {
        "holonomy": result.holonomy.to_dict(),
        "stride": {"translation": result.stride()[0], "rotation": result.stride()[1]},
        "residual": result.residual,
        "floquet": list(result.floquet),
        "iterations": result.iterations,
        "period": result.period,
        "stable": result.stable,
        "residual_history": list(result.residual_history),
        "contraction_factor": result.contraction_factor,
        "verification_holonomy": (None if result.verification_holonomy is None
                                  else result.verification_holonomy.to_dict()),
        "loop_groups": [g.to_dict() for g in result.loop_groups],
        "sidecar": {"file": os.path.basename(side), "arrays": manifest},
        "meta": result.meta,
    }
    if extra:
        doc.update(extra)
    with open(json_path, "w") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_cycle(json_path) -> tuple[CycleResult, dict]:
    import os

    from .body import BodyState
    from .fluid import FluidState

    with open(json_path) as fh:
        doc = json.load(fh)
    side = os.path.join(os.path.dirname(os.path.abspath(json_path)), doc["sidecar"]["file"])
    arr = _read_sidecar(side, doc["sidecar"]["arrays"])
    loop = [ReducedState(s, v, f, float(p)) for s, v, f, p in
            zip(arr["shape"], arr["shape_vel"], arr["fluid_samples"], arr["t_phase"])]
    start = None
    if "start_positions" in arr:
        start = SystemState(BodyState(arr["start_positions"], arr["start_velocities"]),
                            FluidState(arr["start_u"], arr["start_v"]), float(np.ravel(arr["start_t"])[0]))
    vh = doc.get("verification_holonomy")
    res = CycleResult(
        loop=loop, loop_positions=arr["loop_positions"], loop_velocities=arr["loop_velocities"],
        loop_groups=[SE2Element.from_dict(g) for g in doc["loop_groups"]],
        holonomy=SE2Element.from_dict(doc["holonomy"]), residual=doc["residual"],
        floquet=doc["floquet"], iterations=doc["iterations"], period=doc["period"],
        stable=doc["stable"], residual_history=doc["residual_history"],
        contraction_factor=doc["contraction_factor"],
        verification_holonomy=None if vh is None else SE2Element.from_dict(vh),
        start_state=start, meta=doc.get("meta", {}),
    )
    return res, doc
