"""Closed-form self-similar solutions, their Lorentz boosts and eigenfunctions.

The base blowup solution is ``u_0(T, X) = sqrt(2)/(-T)``; its Kelvin image is
the decaying solution ``v_0(t, x) = sqrt(2)/t``. Boosting by a rapidity ``a``
gives a three-parameter family whose similarity-frame profile is the static
pair ``Psi_a = (psi_a1, psi_a2)``.

All evaluators accept ``xi`` of shape ``(..., 3)`` and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coords import as_rapidity
from .errors import PoleHit

SQRT2 = np.sqrt(2.0)
POLE_CUTOFF = 1e-14


@dataclass(frozen=True)
class BoostCoefficients:
    A0: float
    A1: float
    A2: float
    A3: float

    @property
    def vec(self) -> np.ndarray:
        return np.array([self.A1, self.A2, self.A3])

    def minkowski(self) -> float:
        return self.A0**2 - self.A1**2 - self.A2**2 - self.A3**2


@dataclass(frozen=True)
class PairField:
    """Two scalar functions on the unit ball, evaluated at points ``(..., 3)``."""

    f1: Callable[[np.ndarray], np.ndarray]
    f2: Callable[[np.ndarray], np.ndarray]

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        return self.f1(xi), self.f2(xi)


def coeffs_A(a) -> BoostCoefficients:
    a1, a2, a3 = np.asarray(a, dtype=float).reshape(3)
    c1, c2, c3 = np.cosh([a1, a2, a3])
    s1, s2, s3 = np.sinh([a1, a2, a3])
    return BoostCoefficients(c1 * c2 * c3, s1 * c2 * c3, s2 * c3, s3)


def _dcoeffs(a, j: int) -> tuple[float, np.ndarray]:
    """Partial derivative of (A0, A) with respect to a^j, j in {1, 2, 3}."""
    a1, a2, a3 = np.asarray(a, dtype=float).reshape(3)
    c1, c2, c3 = np.cosh([a1, a2, a3])
    s1, s2, s3 = np.sinh([a1, a2, a3])
    if j == 1:
        return s1 * c2 * c3, np.array([c1 * c2 * c3, 0.0, 0.0])
    if j == 2:
        return c1 * s2 * c3, np.array([s1 * s2 * c3, c2 * c3, 0.0])
    if j == 3:
        return c1 * c2 * s3, np.array([s1 * c2 * s3, s2 * s3, c3])
    raise ValueError(f"axis index must be 1, 2 or 3, got {j}")


def _check_pole(den, where: str):
    if np.any(np.asarray(den) <= POLE_CUTOFF):
        raise PoleHit(f"{where}: denominator {np.min(den):.3e} at or beyond the pole")


def v_a(a, t, x):
    """Boosted decaying solution sqrt(2)/(A0 t - A.x)."""
    A = coeffs_A(as_rapidity(a))
    x = np.asarray(x, dtype=float)
    den = A.A0 * np.asarray(t, dtype=float) - x @ A.vec
    _check_pole(den, "v_a")
    return SQRT2 / den


def u_a(a, T, X):
    """Boosted blowup solution sqrt(2)/(A0 (-T) - A.X)."""
    A = coeffs_A(as_rapidity(a))
    X = np.asarray(X, dtype=float)
    den = -A.A0 * np.asarray(T, dtype=float) - X @ A.vec
    _check_pole(den, "u_a")
    return SQRT2 / den


def _den(A: BoostCoefficients, xi):
    return A.A0 - np.asarray(xi, dtype=float) @ A.vec


def psi_pair_a(a) -> PairField:
    A = coeffs_A(as_rapidity(a))
    return PairField(
        lambda xi: SQRT2 / _den(A, xi),
        lambda xi: SQRT2 * A.A0 / _den(A, xi) ** 2,
    )


def eigenfunction_p(a) -> PairField:
    """Eigenfunction of L_a with eigenvalue 1 (time-translation mode)."""
    A = coeffs_A(as_rapidity(a))
    return PairField(
        lambda xi: A.A0 / _den(A, xi) ** 2,
        lambda xi: 2 * A.A0**2 / _den(A, xi) ** 3,
    )


def eigenfunction_q(a, j: int) -> PairField:
    """d/da^j of Psi_a, a kernel element of L_a (Lorentz mode).

    At a = 0 this is sqrt(2) * (xi^j, 2 xi^j).
    """
    a = as_rapidity(a)
    A = coeffs_A(a)
    dA0, dA = _dcoeffs(a, j)

    def dD(xi):
        return dA0 - np.asarray(xi, dtype=float) @ dA

    return PairField(
        lambda xi: -SQRT2 * dD(xi) / _den(A, xi) ** 2,
        lambda xi: SQRT2 * (dA0 / _den(A, xi) ** 2 - 2 * A.A0 * dD(xi) / _den(A, xi) ** 3),
    )


def nabla_n(a, t, x):
    """(t^2+|x|^2) d_t v + 2 t x^j d_j v + 2 t v for v = v_a."""
    A = coeffs_A(as_rapidity(a))
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    den = A.A0 * t - x @ A.vec
    _check_pole(den, "nabla_n")
    r2 = np.sum(x * x, axis=-1)
    dt = -SQRT2 * A.A0 / den**2
    xgrad = SQRT2 * (x @ A.vec) / den**2
    return (t * t + r2) * dt + 2 * t * xgrad + 2 * t * SQRT2 / den
