"""Discrete first-order operators in similarity coordinates.

For Psi = (psi1, psi2) the evolution reads d_tau Psi = L Psi + N(Psi) with

    L (u1, u2) = (-xi.grad u1 - u1 + u2,  lap u1 - xi.grad u2 - 2 u2),
    N (u1, u2) = (0, u1^3).

Linearizing around the static pair Psi_a adds L'_a Phi = (0, 3 psi_a1^2 phi1).
"""
from __future__ import annotations

import enum
import io
import json
from dataclasses import dataclass

import numpy as np

from .coords import as_rapidity
from .errors import UnsupportedRapidity
from .grid import FieldState, Grid, eval_on_grid
from .solutions import psi_pair_a


class OperatorKind(str, enum.Enum):
    FREE = "Free"
    LINEARIZED = "Linearized"


def _check_supported(a, g: Grid) -> np.ndarray:
    a = as_rapidity(a)
    if not g.supports(a):
        raise UnsupportedRapidity(f"rapidity {a.tolist()} is not representable on the {g.sector.value} sector")
    return a


def psi_a_state(a, g: Grid) -> FieldState:
    return eval_on_grid(psi_pair_a(_check_supported(a, g)), g)


def apply_L_free(s: FieldState) -> FieldState:
    g = s.grid
    e1 = g.euler @ s.u1
    return FieldState(g, -e1 - s.u1 + s.u2, g.lap @ s.u1 - g.euler @ s.u2 - 2 * s.u2)


def potential(a, g: Grid) -> np.ndarray:
    """Nodal values of 3 psi_a1^2."""
    return 3.0 * psi_a_state(a, g).u1 ** 2


def apply_L_prime(a, s: FieldState) -> FieldState:
    return FieldState(s.grid, np.zeros(s.grid.n), potential(a, s.grid) * s.u1)


def apply_N(s: FieldState) -> FieldState:
    return FieldState(s.grid, np.zeros(s.grid.n), s.u1**3)


def apply_N_a(a, s: FieldState) -> FieldState:
    """N(Psi_a + Phi) - N(Psi_a) - L'_a Phi, in expanded form."""
    p1 = psi_a_state(a, s.grid).u1
    return FieldState(s.grid, np.zeros(s.grid.n), 3 * p1 * s.u1**2 + s.u1**3)


def apply_L_a(a, s: FieldState) -> FieldState:
    return apply_L_free(s) + apply_L_prime(a, s)


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    grid: Grid
    a: np.ndarray
    M: np.ndarray
    kind: OperatorKind

    def apply(self, s: FieldState) -> FieldState:
        return FieldState.from_vec(self.grid, self.M @ s.vec)

    def header(self) -> dict:
        return {"grid": self.grid.metadata(), "a": self.a.tolist(), "kind": self.kind.value,
                "shape": list(self.M.shape), "order": "row-major"}

    def to_csv(self) -> str:
        buf = io.StringIO()
        np.savetxt(buf, self.M, delimiter=",", fmt="%.17g", header=json.dumps(self.header()))
        return buf.getvalue()

    def save_npz(self, path) -> None:
        np.savez(path, M=self.M, header=json.dumps(self.header()))


def assemble_matrix(a, g: Grid, kind=OperatorKind.LINEARIZED) -> OperatorMatrix:
    kind = OperatorKind(kind)
    a = _check_supported(a, g)
    n = g.n
    I = np.eye(n)
    M = np.block([[-g.euler - I, I], [np.array(g.lap), -g.euler - 2 * I]])
    if kind is OperatorKind.LINEARIZED:
        M[n:, :n] += np.diag(potential(a, g))
    M.setflags(write=False)
    return OperatorMatrix(g, a, M, kind)
