"""Cartesian, hyperboloidal and similarity frames of Minkowski space.

The three frames used throughout the package:

* Cartesian ``(t, x)`` on the future light cone (decay picture),
* hyperboloidal ``(T, X)`` on the past light cone (blowup picture),
* similarity ``(tau, xi)`` with ``tau = -log(-T)``, ``xi = X / (-T)``.

The Kelvin inversion swaps the first two; it has the same algebraic form
in both directions.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInterval, OutOfDomain, UnsupportedRapidity

INTERVAL_CUTOFF = 1e-14
A_MAX = 1.0


class Frame(str, enum.Enum):
    CARTESIAN = "Cartesian"
    HYPERBOLOIDAL = "Hyperboloidal"
    SIMILARITY = "Similarity"


@dataclass(frozen=True)
class SpacetimePoint:
    """An event tagged with the frame its coordinates refer to.

    ``c0`` is t, T or tau; ``c`` is the spatial 3-vector x, X or xi.
    """

    frame: Frame
    c0: float
    c: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "frame", Frame(self.frame))
        object.__setattr__(self, "c0", float(self.c0))
        c = tuple(float(v) for v in np.asarray(self.c, dtype=float).reshape(3))
        object.__setattr__(self, "c", c)

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.c)

    def interval(self) -> float:
        """Minkowski interval ``c0**2 - |c|**2``."""
        return self.c0**2 - float(np.dot(self.c, self.c))

    def to_json(self) -> dict:
        return {"frame": self.frame.value, "c0": self.c0, "c": list(self.c)}

    @classmethod
    def from_json(cls, d: dict) -> "SpacetimePoint":
        return cls(Frame(d["frame"]), d["c0"], d["c"])

    def allclose(self, other: "SpacetimePoint", rtol=1e-12, atol=1e-12) -> bool:
        return self.frame == other.frame and np.allclose(
            np.r_[self.c0, self.c], np.r_[other.c0, other.c], rtol=rtol, atol=atol
        )


def _expect(p: SpacetimePoint, frame: Frame) -> None:
    if p.frame != frame:
        raise OutOfDomain(f"expected a {frame.value} point, got {p.frame.value}")


def as_rapidity(a, a_max: float = A_MAX) -> np.ndarray:
    """Validate a rapidity 3-vector; a bare number means a boost along e3."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = np.array([0.0, 0.0, float(arr)])
    arr = arr.reshape(3)
    if not np.all(np.isfinite(arr)):
        raise UnsupportedRapidity(f"non-finite rapidity {arr}")
    if np.linalg.norm(arr) > a_max:
        raise UnsupportedRapidity(f"|a| = {np.linalg.norm(arr):.3g} exceeds a_max = {a_max}")
    return arr


def _invert(c0: float, c: np.ndarray) -> tuple[float, np.ndarray]:
    q = c0 * c0 - float(np.dot(c, c))
    if abs(q) < INTERVAL_CUTOFF:
        raise DegenerateInterval(f"interval {q:.3e} is on the null cone")
    return -c0 / q, c / q


def kelvin(p: SpacetimePoint) -> SpacetimePoint:
    """Time-reversed Kelvin transform, hyperboloidal -> Cartesian."""
    _expect(p, Frame.HYPERBOLOIDAL)
    if p.interval() >= INTERVAL_CUTOFF and p.c0 >= 0:
        raise OutOfDomain("kelvin expects T < 0 inside the past cone")
    if p.interval() <= -INTERVAL_CUTOFF:
        raise OutOfDomain("kelvin expects a timelike point")
    t, x = _invert(p.c0, p.vec)
    return SpacetimePoint(Frame.CARTESIAN, t, x)


def kelvin_inv(p: SpacetimePoint) -> SpacetimePoint:
    """Inverse Kelvin transform, Cartesian -> hyperboloidal (same formula)."""
    _expect(p, Frame.CARTESIAN)
    if p.interval() >= INTERVAL_CUTOFF and p.c0 <= 0:
        raise OutOfDomain("kelvin_inv expects t > 0 inside the future cone")
    if p.interval() <= -INTERVAL_CUTOFF:
        raise OutOfDomain("kelvin_inv expects a timelike point")
    T, X = _invert(p.c0, p.vec)
    return SpacetimePoint(Frame.HYPERBOLOIDAL, T, X)


def to_similarity(p: SpacetimePoint) -> SpacetimePoint:
    _expect(p, Frame.HYPERBOLOIDAL)
    T, X = p.c0, p.vec
    if not (-1.0 <= T < 0.0):
        raise OutOfDomain(f"T = {T} outside [-1, 0)")
    if np.linalg.norm(X) >= -T:
        raise OutOfDomain("|X| >= -T: outside the past light cone")
    return SpacetimePoint(Frame.SIMILARITY, -np.log(-T), X / (-T))


def from_similarity(p: SpacetimePoint) -> SpacetimePoint:
    _expect(p, Frame.SIMILARITY)
    if p.c0 < 0:
        raise OutOfDomain(f"tau = {p.c0} < 0")
    if np.linalg.norm(p.vec) >= 1.0:
        raise OutOfDomain("|xi| >= 1")
    s = np.exp(-p.c0)
    return SpacetimePoint(Frame.HYPERBOLOIDAL, -s, s * p.vec)


def boost_matrix(a) -> np.ndarray:
    """4x4 matrix of Lambda(a) = Lambda3(a3) Lambda2(a2) Lambda1(a1) on (T, X)."""
    a = np.asarray(a, dtype=float).reshape(3)
    out = np.eye(4)
    for j in range(3):
        m = np.eye(4)
        ch, sh = np.cosh(a[j]), np.sinh(a[j])
        m[0, 0] = m[j + 1, j + 1] = ch
        m[0, j + 1] = m[j + 1, 0] = sh
        out = m @ out
    return out


def lorentz_boost(a, p: SpacetimePoint) -> SpacetimePoint:
    """Apply the composed boost to a hyperboloidal point."""
    _expect(p, Frame.HYPERBOLOIDAL)
    y = boost_matrix(a) @ np.r_[p.c0, p.vec]
    return SpacetimePoint(Frame.HYPERBOLOIDAL, y[0], y[1:])
