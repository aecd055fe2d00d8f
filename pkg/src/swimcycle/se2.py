"""Rigid motions of the plane and the Procrustes section of the shape quotient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShape


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    if -math.pi < theta <= math.pi:
        return float(theta)
    t = math.fmod(theta + math.pi, 2.0 * math.pi)
    if t <= 0.0:
        t += 2.0 * math.pi
    return t - math.pi


@dataclass(frozen=True)
class SE2Element:
    """Rotation by ``theta`` followed by translation by ``(tx, ty)``."""

    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))
        object.__setattr__(self, "tx", float(self.tx))
        object.__setattr__(self, "ty", float(self.ty))

    @classmethod
    def identity(cls) -> "SE2Element":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def rotation(cls, theta: float) -> "SE2Element":
        return cls(theta, 0.0, 0.0)

    @classmethod
    def translation(cls, tx: float, ty: float) -> "SE2Element":
        return cls(0.0, tx, ty)

    @property
    def translation_vector(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    def rotation_matrix(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def __matmul__(self, other: "SE2Element") -> "SE2Element":
        return compose(self, other)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "tx": self.tx, "ty": self.ty}

    @classmethod
    def from_dict(cls, d: dict) -> "SE2Element":
        return cls(d["theta"], d["tx"], d["ty"])

    def stride(self) -> tuple[float, float]:
        """(|translation|, rotation) per application; handy for tables."""
        return math.hypot(self.tx, self.ty), self.theta


def compose(a: SE2Element, b: SE2Element) -> SE2Element:
    """Element acting as first ``b`` then ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return SE2Element(
        a.theta + b.theta,
        a.tx + c * b.tx - s * b.ty,
        a.ty + s * b.tx + c * b.ty,
    )


def inverse(z: SE2Element) -> SE2Element:
    c, s = math.cos(z.theta), math.sin(z.theta)
    return SE2Element(-z.theta, -(c * z.tx + s * z.ty), -(-s * z.tx + c * z.ty))


def power(z: SE2Element, k: int) -> SE2Element:
    """z^k by repeated composition, so angle wrapping stays consistent."""
    if k < 0:
        return power(inverse(z), -k)
    out = SE2Element.identity()
    for _ in range(k):
        out = compose(z, out)
    return out


def act_point(z: SE2Element, p) -> np.ndarray:
    """Rotate then translate one point or an (N, 2) array of points."""
    p = np.asarray(p, dtype=float)
    c, s = math.cos(z.theta), math.sin(z.theta)
    x, y = p[..., 0], p[..., 1]
    return np.stack([c * x - s * y + z.tx, s * x + c * y + z.ty], axis=-1)


def act_vector(z: SE2Element, v) -> np.ndarray:
    """Rotate only; translations fix free vectors."""
    v = np.asarray(v, dtype=float)
    c, s = math.cos(z.theta), math.sin(z.theta)
    x, y = v[..., 0], v[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


@dataclass(frozen=True)
class Alignment:
    group: SE2Element
    shape: np.ndarray
    velocities: np.ndarray | None = None


def procrustes_objective(z: SE2Element, positions, masses, template) -> float:
    """Mass-weighted squared distance between z^-1 . positions and template."""
    d = act_point(inverse(z), positions) - np.asarray(template, dtype=float)
    return float(np.sum(np.asarray(masses) * np.sum(d * d, axis=1)))


def align(positions, masses, template, velocities=None, strict: bool = False) -> Alignment:
    """Planar weighted Procrustes fit of ``template`` onto ``positions``.

    Returns the group element ``g`` minimising the weighted distance between
    ``g^-1 . positions`` and ``template`` together with the aligned shape
    ``g^-1 . positions`` (and aligned velocities when given). For a template
    centred at the origin the aligned shape is centred too.

    When the cross-covariance vanishes the rotation is undetermined; the angle
    is then set to zero, or :class:`DegenerateShape` is raised if ``strict``.
    """
    P = np.asarray(positions, dtype=float)
    T = np.asarray(template, dtype=float)
    m = np.asarray(masses, dtype=float)
    if P.shape != T.shape or P.ndim != 2 or P.shape[1] != 2 or P.shape[0] < 3:
        raise ValueError("positions and template must both be (N, 2) with N >= 3")
    mtot = m.sum()
    cT = (m[:, None] * T).sum(axis=0) / mtot
    Tc = T - cT
    scale = float(np.sum(m * np.sum(Tc * Tc, axis=1)))
    if scale == 0.0:
        raise DegenerateShape("template nodes all coincide")
    cP = (m[:, None] * P).sum(axis=0) / mtot
    Pc = P - cP
    s_cross = float(np.sum(m * (Tc[:, 0] * Pc[:, 1] - Tc[:, 1] * Pc[:, 0])))
    s_dot = float(np.sum(m * (Tc[:, 0] * Pc[:, 0] + Tc[:, 1] * Pc[:, 1])))
    if math.hypot(s_cross, s_dot) <= 1e-14 * scale:
        if strict:
            raise DegenerateShape("Procrustes rotation undetermined (zero cross-covariance)")
        theta = 0.0
    else:
        theta = math.atan2(s_cross, s_dot)
    c, s = math.cos(theta), math.sin(theta)
    d = cP - np.array([c * cT[0] - s * cT[1], s * cT[0] + c * cT[1]])
    g = SE2Element(theta, d[0], d[1])
    ginv = inverse(g)
    shape = act_point(ginv, P)
    vel = None if velocities is None else act_vector(ginv, velocities)
    return Alignment(g, shape, vel)
