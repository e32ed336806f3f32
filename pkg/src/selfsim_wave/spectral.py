"""Spectra of the discretized linearization and its rank-one spectral projections.

Discrete spectra of the non-normal collocation matrix contain spurious
eigenvalues. An eigenvalue counts as converged when a finer grid reproduces
it within ``tol_conv``.
"""
from __future__ import annotations

import enum
import functools
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .coords import as_rapidity
from .errors import (BadResolution, EigenFailure, EigenvalueNotIsolated, GridMismatch,
                     ResolventSingular)
from .grid import FieldState, Grid, Sector, check_same_grid, eval_on_grid, inner_product_H, norm_H, require_axisym
from .operators import assemble_matrix
from .solutions import eigenfunction_p, eigenfunction_q

TOL_CONV = 1e-6
TOL_EIG = 1e-5
EPS_TILDE = 0.1
ISOLATION_RADIUS = 0.1


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    converged_mask: np.ndarray
    a: np.ndarray
    sector: Sector
    N_pair: tuple
    fine_match: np.ndarray | None = None

    @property
    def converged(self) -> np.ndarray:
        return self.eigenvalues[self.converged_mask]

    def to_json(self) -> dict:
        return {
            "a": np.asarray(self.a).tolist(),
            "sector": Sector(self.sector).value,
            "N_pair": [list(p) if isinstance(p, (tuple, list)) else p for p in self.N_pair],
            "eigenvalues": [
                {"re": float(z.real), "im": float(z.imag), "converged": bool(c)}
                for z, c in zip(self.eigenvalues, self.converged_mask)
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, d: dict) -> "SpectrumReport":
        ev = np.array([complex(e["re"], e["im"]) for e in d["eigenvalues"]])
        mask = np.array([bool(e["converged"]) for e in d["eigenvalues"]], dtype=bool)
        return cls(ev, mask, np.asarray(d["a"], dtype=float), Sector(d["sector"]),
                   tuple(tuple(p) if isinstance(p, list) else p for p in d["N_pair"]))


def _resolution(g: Grid):
    return (g.N_r, g.N_z) if g.sector is Sector.AXISYM else (g.N_r,)


def eigenvalues(a, g: Grid) -> np.ndarray:
    M = assemble_matrix(a, g).M
    try:
        ev = sla.eigvals(M, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    if not np.all(np.isfinite(ev)):
        raise EigenFailure("non-finite eigenvalues")
    return ev[np.lexsort((-ev.imag, -ev.real))]


def compute_spectrum(a, g: Grid, g_fine: Grid, tol_conv: float = TOL_CONV) -> SpectrumReport:
    """Eigenvalues on ``g`` flagged converged when ``g_fine`` reproduces them."""
    a = as_rapidity(a)
    if g.sector is not g_fine.sector:
        raise GridMismatch("both grids must belong to the same sector")
    finer = g_fine.N_r >= g.N_r and (g.N_z is None or g_fine.N_z >= g.N_z) and g_fine.n > g.n
    if not finer:
        raise BadResolution(f"g_fine {_resolution(g_fine)} is not strictly finer than {_resolution(g)}")
    ev = eigenvalues(a, g)
    ev_f = eigenvalues(a, g_fine)
    dist = np.abs(ev[:, None] - ev_f[None, :])
    nearest = np.argmin(dist, axis=1)
    match = ev_f[nearest]
    mask = np.abs(ev - match) < tol_conv
    return SpectrumReport(ev, mask, a, g.sector, (_resolution(g), _resolution(g_fine)), match)


@dataclass
class GapCheck:
    passed: bool
    violators: list
    vacuous: bool = False

    def to_json(self) -> dict:
        return {"pass": self.passed, "vacuous": self.vacuous,
                "violators": [{"re": z.real, "im": z.imag} for z in self.violators]}


def spectral_gap_check(r: SpectrumReport, epsilon_tilde: float = EPS_TILDE,
                       tol_eig: float = TOL_EIG) -> GapCheck:
    """Every converged eigenvalue is 0, 1, or has Re < -1/2 + epsilon_tilde."""
    if not 0 < epsilon_tilde < 0.5:
        raise ValueError("epsilon_tilde must lie in (0, 1/2)")
    conv = np.asarray(r.eigenvalues)[np.asarray(r.converged_mask, dtype=bool)]
    if conv.size == 0:
        warnings.warn("spectral gap check on an empty converged set", RuntimeWarning)
        return GapCheck(True, [], vacuous=True)
    bad = [complex(z) for z in conv
           if min(abs(z), abs(z - 1)) > tol_eig and z.real >= -0.5 + epsilon_tilde]
    return GapCheck(not bad, bad)


class Target(str, enum.Enum):
    P = "P"
    Q3 = "Q3"


@dataclass(frozen=True, eq=False)
class RankOneProjection:
    """u -> right * <left, u>_H / <left, right>_H.

    ``left`` is the H-adjoint eigenvector G^-1 y built from the Euclidean left
    eigenvector ``y``; the H-pairing with it is the Euclidean pairing with y.
    """

    right: FieldState
    left: FieldState
    eigenvalue: float
    y: np.ndarray = field(repr=False)
    a: tuple = (0.0, 0.0, 0.0)

    @property
    def grid(self) -> Grid:
        return self.right.grid

    def coefficient(self, u: FieldState) -> float:
        check_same_grid(self.right, u)
        return float(self.y @ u.vec) / float(self.y @ self.right.vec)

    def apply(self, u: FieldState) -> FieldState:
        return self.right * self.coefficient(u)

    def __call__(self, u: FieldState) -> FieldState:
        return self.apply(u)

    def matrix(self) -> np.ndarray:
        return np.outer(self.right.vec, self.y) / float(self.y @ self.right.vec)


@dataclass(frozen=True, eq=False)
class MatrixProjection:
    """Projection given as a dense matrix (contour-integral output)."""

    grid: Grid
    P: np.ndarray

    def apply(self, u: FieldState) -> FieldState:
        return FieldState.from_vec(self.grid, self.P @ u.vec)

    def __call__(self, u: FieldState) -> FieldState:
        return self.apply(u)

    def matrix(self) -> np.ndarray:
        return self.P

    @property
    def rank(self) -> int:
        s = np.linalg.svd(self.P, compute_uv=False)
        return int(np.sum(s > 1e-8 * max(1.0, s[0] if s.size else 1.0)))


def _closed_form(a, g: Grid, target: Target) -> tuple[float, FieldState]:
    if target is Target.P:
        return 1.0, eval_on_grid(eigenfunction_p(a), g)
    return 0.0, eval_on_grid(eigenfunction_q(a, 3), g)


def _inverse_iteration(A: np.ndarray, sigma: float, trans: int, iters: int = 4) -> np.ndarray:
    lu = sla.lu_factor(A - sigma * np.eye(A.shape[0]), check_finite=False)
    v = np.ones(A.shape[0])
    for _ in range(iters):
        v = sla.lu_solve(lu, v, trans=trans)
        v /= np.linalg.norm(v)
    return v


def projection_for(a, g: Grid, target="P", tol_eig: float = TOL_EIG,
                   check_isolation: bool = True) -> RankOneProjection:
    """Rank-one spectral projection onto p_a (target P) or q_{a,3} (target Q3).

    With ``check_isolation=False`` the full eigenvalue computation is skipped and
    the eigenpair comes from inverse iteration alone (cheap, for repeated use
    at rapidities already known to be in the small-|a| regime).
    """
    target = Target(target)
    a = as_rapidity(a)
    if not g.supports(a):
        assemble_matrix(a, g)
    if target is Target.Q3:
        require_axisym(g, "projection onto q_{a,3}")
    return _projection_cached(tuple(float(c) for c in a), g, target, tol_eig, check_isolation)


@functools.lru_cache(maxsize=64)
def _projection_cached(a: tuple, g: Grid, target: Target, tol_eig: float,
                       check_isolation: bool) -> RankOneProjection:
    lam0, ref = _closed_form(a, g, target)
    M = np.array(assemble_matrix(a, g).M)
    if check_isolation:
        ev = eigenvalues(a, g)
        near = np.abs(ev - lam0)
        if near.min() > tol_eig:
            raise EigenvalueNotIsolated(f"no eigenvalue within {tol_eig} of {lam0}; nearest {ev[np.argmin(near)]}")
        if np.sum(near < ISOLATION_RADIUS) != 1:
            raise EigenvalueNotIsolated(f"{np.sum(near < ISOLATION_RADIUS)} eigenvalues within {ISOLATION_RADIUS} of {lam0}")
        lam = float(ev[np.argmin(near)].real)
    else:
        lam = lam0
    shift = lam + 1e-7
    v = _inverse_iteration(M, shift, trans=0)
    y = _inverse_iteration(M, shift, trans=1)
    right = FieldState.from_vec(g, v)
    scale = inner_product_H(right, ref) / inner_product_H(right, right)
    right = right * scale
    cos = inner_product_H(right, ref) / (norm_H(right) * norm_H(ref))
    if cos < 0.999:
        raise EigenvalueNotIsolated(f"eigenvector does not match the closed form (cosine {cos:.6f})")
    y = y / float(y @ right.vec)
    if not check_isolation:
        lam = float(y @ (M @ right.vec))
        if abs(lam - lam0) > tol_eig:
            raise EigenvalueNotIsolated(f"inverse iteration converged to {lam}, expected {lam0}")
    left = FieldState.from_vec(g, np.linalg.solve(g.gram, y))
    return RankOneProjection(right, left, lam, y, a)


def contour_nodes(curve: str, n_quad: int, epsilon_tilde: float = EPS_TILDE):
    theta = 2 * np.pi * np.arange(n_quad) / n_quad
    if curve == "gamma0":
        center, rad = 0.0, (1 - 2 * epsilon_tilde) / 3
    elif curve == "gamma1":
        center, rad = 1.0, 0.5
    else:
        raise ValueError(f"unknown curve {curve!r}")
    return center + rad * np.exp(1j * theta), rad * np.exp(1j * theta)


def contour_projection(a, g: Grid, curve: str = "gamma1", n_quad: int = 64,
                       epsilon_tilde: float = EPS_TILDE) -> MatrixProjection:
    """Trapezoid rule for (2 pi i)^-1 times the contour integral of the resolvent."""
    M = assemble_matrix(a, g).M
    m = M.shape[0]
    z, dz = contour_nodes(curve, n_quad, epsilon_tilde)
    P = np.zeros((m, m), dtype=complex)
    I = np.eye(m)
    for zk, wk in zip(z, dz):
        A = zk * I - M
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                lu = sla.lu_factor(A, check_finite=False)
            except (sla.LinAlgError, sla.LinAlgWarning) as exc:
                raise ResolventSingular(f"resolvent singular at z = {zk}") from exc
        if np.min(np.abs(np.diag(lu[0]))) < 1e-13 * np.abs(lu[0]).max():
            raise ResolventSingular(f"resolvent singular at z = {zk}")
        P += wk * sla.lu_solve(lu, I, check_finite=False)
    P /= n_quad
    return MatrixProjection(g, P.real.copy())
