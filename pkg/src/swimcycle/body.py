"""Spring-network elastic body: passive potential, muscle actuation and shape damping.

Node positions are ``(N, 2)`` arrays in lab coordinates. The potential only
depends on pairwise distances and signed turning angles, so it is invariant
under every rigid motion of the plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidState


@dataclass(frozen=True)
class FishLayout:
    """Geometry of the double-row strip, kept so actuation can rebuild rest values."""

    n_cols: int
    length: float
    width: float


@dataclass(frozen=True, eq=False)
class BodyMesh:
    """Immutable spring network.

    Parameters
    ----------
    nodes : (N, 2) array
        Reference (stress-free) node positions.
    masses : (N,) array
        Lumped node masses.
    stretch : (S, 4) array
        Rows ``(i, j, rest_length, k_s)``.
    bend : (B, 5) array
        Rows ``(i, j, k, rest_angle, k_b)``; the angle is the signed turn at
        ``j`` from edge ``i->j`` to edge ``j->k``.
    damping : float
        Shape-damping rate ``c`` (1/time).
    bend_s : (B,) array
        Arclength fraction of each bending joint from the head, used by the
        actuation wave.
    """

    nodes: np.ndarray
    masses: np.ndarray
    stretch: np.ndarray
    bend: np.ndarray
    damping: float = 0.0
    bend_s: np.ndarray = field(default=None)
    layout: FishLayout | None = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        masses = np.array(self.masses, dtype=float)
        stretch = np.array(self.stretch, dtype=float).reshape(-1, 4)
        bend = np.array(self.bend, dtype=float).reshape(-1, 5)
        bend_s = np.zeros(len(bend)) if self.bend_s is None else np.array(self.bend_s, dtype=float)
        n = len(nodes)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or n < 3:
            raise ValueError("nodes must be (N, 2) with N >= 3")
        if masses.shape != (n,) or np.any(masses <= 0):
            raise ValueError("masses must be positive, one per node")
        if len(stretch) and (np.any(stretch[:, 2] <= 0) or np.any(stretch[:, 3] <= 0)):
            raise ValueError("rest lengths and stretch stiffnesses must be positive")
        if len(bend) and np.any(bend[:, 4] <= 0):
            raise ValueError("bending stiffnesses must be positive")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if bend_s.shape != (len(bend),):
            raise ValueError("bend_s must have one entry per bending spring")
        idx = np.concatenate([stretch[:, :2].ravel(), bend[:, :3].ravel()])
        if np.any(idx < 0) or np.any(idx >= n):
            raise ValueError("spring index out of range")
        if not _connected(n, stretch[:, :2].astype(int)):
            raise ValueError("spring graph is not connected")
        for name, arr in (("nodes", nodes), ("masses", masses), ("stretch", stretch),
                          ("bend", bend), ("bend_s", bend_s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "_si", stretch[:, 0].astype(np.intp))
        object.__setattr__(self, "_sj", stretch[:, 1].astype(np.intp))
        object.__setattr__(self, "_bi", bend[:, 0].astype(np.intp))
        object.__setattr__(self, "_bj", bend[:, 1].astype(np.intp))
        object.__setattr__(self, "_bk", bend[:, 2].astype(np.intp))
        if self.layout is not None:
            lay = self.layout
            if 2 * lay.n_cols != n:
                raise ValueError("fish layout does not match the node count")
            flat = _strip_nodes(lay.n_cols, lay.length, lay.width)
            object.__setattr__(self, "_flat_ell", np.linalg.norm(flat[self._sj] - flat[self._si], axis=1))
            object.__setattr__(self, "_flat_phi", turning_angles(flat, self._bi, self._bj, self._bk))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def template(self) -> np.ndarray:
        """Reference shape with its mass centroid moved to the origin."""
        c = (self.masses[:, None] * self.nodes).sum(axis=0) / self.total_mass
        return self.nodes - c

    def stable_dt(self) -> float:
        """Explicit elastic stability bound ``0.5 sqrt(m_min / k_max)``.

        Bending springs enter with their effective translational stiffness
        ``k_b / l_min**2``.
        """
        k = self.stretch[:, 3].max() if len(self.stretch) else 0.0
        if len(self.bend):
            lmin = self.stretch[:, 2].min()
            k = max(k, self.bend[:, 4].max() / lmin**2)
        if k == 0.0:
            return math.inf
        return 0.5 * math.sqrt(self.masses.min() / k)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "masses": self.masses.tolist(),
            "stretch": self.stretch.tolist(),
            "bend": self.bend.tolist(),
            "damping": self.damping,
            "bend_s": self.bend_s.tolist(),
            "layout": None if self.layout is None else vars(self.layout),
        }


def _connected(n, edges) -> bool:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        parent[find(a)] = find(b)
    return len({find(a) for a in range(n)}) == 1


@dataclass
class BodyState:
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape != self.velocities.shape or self.positions.ndim != 2 \
                or self.positions.shape[1] != 2:
            raise ValueError("positions and velocities must both be (N, 2)")

    def copy(self) -> "BodyState":
        return BodyState(self.positions.copy(), self.velocities.copy())

    @classmethod
    def at_rest(cls, mesh: BodyMesh) -> "BodyState":
        return cls(mesh.nodes.copy(), np.zeros_like(mesh.nodes))


@dataclass(frozen=True)
class ActuationSpec:
    """Periodic modulation of the bending rest angles.

    Each bending joint at arclength fraction ``s`` (0 at the head, 1 at the
    tail) gets the rest-angle offset ``amplitude * sin(2 pi (t/T - w s))``
    (``pattern="traveling"``, crests run from head to tail) or
    ``amplitude * cos(2 pi t/T) sin(2 pi w s)`` (``pattern="standing"``).
    """

    amplitude: float = 0.0
    period: float = 1.0
    wavenumber: float = 1.0
    pattern: str = "traveling"

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if self.pattern not in ("traveling", "standing"):
            raise ValueError("pattern must be 'traveling' or 'standing'")

    @property
    def active(self) -> bool:
        return self.amplitude != 0.0

    def phase(self, t: float) -> float:
        """t/T reduced to [0, 1) so the modulation is exactly periodic."""
        f = math.fmod(t / self.period, 1.0)
        return f + 1.0 if f < 0 else f

    def angle_offsets(self, s, t: float) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if not self.active:
            return np.zeros_like(s)
        ph = self.phase(t)
        if self.pattern == "traveling":
            return self.amplitude * np.sin(2.0 * np.pi * (ph - self.wavenumber * s))
        return self.amplitude * math.cos(2.0 * math.pi * ph) * np.sin(2.0 * np.pi * self.wavenumber * s)

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "period": self.period,
                "wavenumber": self.wavenumber, "pattern": self.pattern}


PASSIVE = ActuationSpec()


# fish template ---------------------------------------------------------------

def _strip_nodes(n_cols, length, width, turns=None):
    """Bottom row then top row of a strip whose centreline turns by ``turns``.

    Rows are offset along the angle bisector by ``(width/2)/cos(turn/2)`` so
    their edges stay parallel to the centreline: each row turns by exactly the
    centreline angle at every joint.
    """
    ds = length / (n_cols - 1)
    if turns is None:
        x = -0.5 * length + ds * np.arange(n_cols)
        y = np.full(n_cols, 0.5 * width)
        return np.concatenate([np.stack([x, -y], 1), np.stack([x, y], 1)])
    heading = np.concatenate([[0.0], np.cumsum(turns)])  # per segment
    c = np.zeros((n_cols, 2))
    c[1:, 0] = np.cumsum(ds * np.cos(heading))
    c[1:, 1] = np.cumsum(ds * np.sin(heading))
    beta = np.empty(n_cols)
    beta[0], beta[-1] = heading[0], heading[-1]
    beta[1:-1] = 0.5 * (heading[:-1] + heading[1:])
    off = np.full(n_cols, 0.5 * width)
    off[1:-1] /= np.cos(0.5 * turns)
    nrm = np.stack([-np.sin(beta), np.cos(beta)], 1) * off[:, None]
    return np.concatenate([c - nrm, c + nrm])


def fish_template(n_nodes: int = 40, length: float = 1.0, width: float = 0.08,
                  k_stretch: float = 20.0, k_bend: float = 0.05, damping: float = 20.0,
                  density: float = 1.0, center=(0.0, 0.0)) -> BodyMesh:
    """Double-row strip of ``n_nodes`` nodes, centred at ``center``, pointing along +x.

    Stretch springs join row neighbours, rung pairs and both diagonals of every
    quad; bending springs run along each row. Nodes are ordered bottom row
    (tail to head) then top row.
    """
    if n_nodes < 6 or n_nodes % 2:
        raise ValueError("n_nodes must be even and >= 6")
    n = n_nodes // 2
    nodes = _strip_nodes(n, length, width) + np.asarray(center, dtype=float)
    pairs = []
    for r in (0, n):
        pairs += [(r + a, r + a + 1) for a in range(n - 1)]
    pairs += [(a, n + a) for a in range(n)]
    pairs += [(a, n + a + 1) for a in range(n - 1)]
    pairs += [(a + 1, n + a) for a in range(n - 1)]
    pairs = np.array(pairs)
    rest = np.linalg.norm(nodes[pairs[:, 1]] - nodes[pairs[:, 0]], axis=1)
    stretch = np.column_stack([pairs, rest, np.full(len(pairs), k_stretch)])
    triples = []
    s = []
    for r in (0, n):
        for a in range(1, n - 1):
            triples.append((r + a - 1, r + a, r + a + 1))
            s.append(1.0 - a / (n - 1))
    triples = np.array(triples)
    angles = turning_angles(nodes, triples[:, 0], triples[:, 1], triples[:, 2])
    bend = np.column_stack([triples, angles, np.full(len(triples), k_bend)])
    masses = np.full(n_nodes, density * length * width / n_nodes)
    return BodyMesh(nodes, masses, stretch, bend, damping, np.array(s),
                    FishLayout(n, length, width))


# potential -------------------------------------------------------------------

def turning_angles(x, i, j, k) -> np.ndarray:
    a = x[j] - x[i]
    b = x[k] - x[j]
    return np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1])


def rest_values(mesh: BodyMesh, actuation: ActuationSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Actuated rest lengths and rest angles at time ``t``.

    For the fish layout the actuated rest shape is built geometrically, so
    every spring is simultaneously at rest: the turning waves are applied to
    the rest angles and the stretch rest lengths follow the bent geometry.
    Other meshes only get their rest angles modulated. At zero amplitude the
    passive values are returned unchanged.
    """
    ell0 = mesh.stretch[:, 2]
    phi0 = mesh.bend[:, 3]
    if not actuation.active:
        return ell0, phi0
    lay = mesh.layout
    if lay is None:
        return ell0, phi0 + actuation.angle_offsets(mesh.bend_s, t)
    n = lay.n_cols
    s = 1.0 - np.arange(1, n - 1) / (n - 1)
    turns = actuation.angle_offsets(s, t)
    bent = _strip_nodes(n, lay.length, lay.width, turns)
    si, sj = mesh._si, mesh._sj
    d_ell = np.linalg.norm(bent[sj] - bent[si], axis=1) - mesh._flat_ell
    d_phi = turning_angles(bent, mesh._bi, mesh._bj, mesh._bk) - mesh._flat_phi
    return ell0 + d_ell, phi0 + d_phi


def _geometry(mesh: BodyMesh, x):
    si, sj = mesh._si, mesh._sj
    d = x[sj] - x[si]
    length = np.hypot(d[:, 0], d[:, 1])
    if np.any(length == 0.0) or not np.all(np.isfinite(x)):
        raise InvalidState("coincident connected nodes or non-finite positions")
    a = x[mesh._bj] - x[mesh._bi]
    b = x[mesh._bk] - x[mesh._bj]
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    dot = a[:, 0] * b[:, 0] + a[:, 1] * b[:, 1]
    return d, length, a, b, np.arctan2(cross, dot)


def _wrap(x):
    return np.mod(x + np.pi, 2.0 * np.pi) - np.pi


def _energy_terms(mesh, x, ell, phi_rest):
    _, length, _, _, phi = _geometry(mesh, x)
    es = 0.5 * mesh.stretch[:, 3] * (length - ell) ** 2
    eb = 0.5 * mesh.bend[:, 4] * _wrap(phi - phi_rest) ** 2
    return float(es.sum() + eb.sum())


def elastic_energy(mesh: BodyMesh, state: BodyState, actuation: ActuationSpec = PASSIVE,
                   t: float = 0.0) -> float:
    """Spring energy with the (possibly actuated) rest values at time ``t``."""
    ell, phi = rest_values(mesh, actuation, t)
    return _energy_terms(mesh, state.positions, ell, phi)


def passive_energy(mesh: BodyMesh, state: BodyState) -> float:
    return _energy_terms(mesh, state.positions, mesh.stretch[:, 2], mesh.bend[:, 3])


def _forces(mesh, x, ell, phi_rest):
    n = len(x)
    d, length, a, b, phi = _geometry(mesh, x)
    si, sj = mesh._si, mesh._sj
    f = (mesh.stretch[:, 3] * (length - ell) / length)[:, None] * d  # pulls i toward j
    fx = np.bincount(si, f[:, 0], n) - np.bincount(sj, f[:, 0], n)
    fy = np.bincount(si, f[:, 1], n) - np.bincount(sj, f[:, 1], n)
    if len(mesh.bend):
        tau = mesh.bend[:, 4] * _wrap(phi - phi_rest)
        a2 = a[:, 0] ** 2 + a[:, 1] ** 2
        b2 = b[:, 0] ** 2 + b[:, 1] ** 2
        # d(phi)/d(x_i) = perp(a)/|a|^2, d(phi)/d(x_k) = perp(b)/|b|^2, x_j takes minus the sum
        gi = np.stack([-a[:, 1], a[:, 0]], 1) / a2[:, None]
        gk = np.stack([-b[:, 1], b[:, 0]], 1) / b2[:, None]
        gi *= -tau[:, None]
        gk *= -tau[:, None]
        gj = -(gi + gk)
        for idx, g in ((mesh._bi, gi), (mesh._bj, gj), (mesh._bk, gk)):
            fx += np.bincount(idx, g[:, 0], n)
            fy += np.bincount(idx, g[:, 1], n)
    return np.stack([fx, fy], 1)


def elastic_force(mesh: BodyMesh, state: BodyState, actuation: ActuationSpec = PASSIVE,
                  t: float = 0.0) -> np.ndarray:
    """Analytic ``-grad`` of :func:`elastic_energy` with respect to node positions."""
    ell, phi = rest_values(mesh, actuation, t)
    return _forces(mesh, state.positions, ell, phi)


def passive_force(mesh: BodyMesh, state: BodyState) -> np.ndarray:
    return _forces(mesh, state.positions, mesh.stretch[:, 2], mesh.bend[:, 3])


# shape damping ---------------------------------------------------------------

def rigid_fit(positions, velocities, masses) -> np.ndarray:
    """Mass-weighted least-squares rigid velocity field ``a + omega x (x - c)``."""
    m = np.asarray(masses, dtype=float)
    M = m.sum()
    c = (m[:, None] * positions).sum(axis=0) / M
    r = positions - c
    a = (m[:, None] * velocities).sum(axis=0) / M
    inertia = float(np.sum(m * (r[:, 0] ** 2 + r[:, 1] ** 2)))
    ang = float(np.sum(m * (r[:, 0] * velocities[:, 1] - r[:, 1] * velocities[:, 0])))
    omega = ang / inertia if inertia > 0 else 0.0
    return a + omega * np.stack([-r[:, 1], r[:, 0]], 1)


def shape_dissipation_force(mesh: BodyMesh, state: BodyState) -> np.ndarray:
    """``-c m_i (v_i - v*_i)``: damps shape change, leaves rigid motion alone.

    ``v*`` is the mass-weighted rigid fit, so the force has zero net force and
    torque and its power is ``-c`` times the mass-weighted squared norm of the
    non-rigid velocity.
    """
    if mesh.damping == 0.0:
        return np.zeros_like(state.velocities)
    vstar = rigid_fit(state.positions, state.velocities, mesh.masses)
    return -mesh.damping * mesh.masses[:, None] * (state.velocities - vstar)


def body_kinetic_energy(mesh: BodyMesh, state: BodyState) -> float:
    return 0.5 * float(np.sum(mesh.masses * np.sum(state.velocities ** 2, axis=1)))
