"""Collocation grids on the unit ball for two symmetry sectors.

Radial fields depend on r = |xi| only. Axisymmetric fields depend on
(r, mu) with mu = cos(theta) measured from the xi^3 axis.

The radial direction uses the positive half of an odd-degree
Chebyshev-Gauss-Lobatto grid on [-1, 1], so r = 0 is never a node. Values
at the mirrored nodes come from parity: a radial field is even in r, and
an axisymmetric field satisfies f(-r, mu) = f(r, -mu), which is the same
point of the ball. Folding the full-line differentiation matrix with this
pairing gives regular operators without a coordinate patch at the origin.
"""
from __future__ import annotations

import enum
import functools
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb_poly
from numpy.polynomial import legendre

from .errors import BadResolution, GridMismatch, SectorUnsupported


class Sector(str, enum.Enum):
    RADIAL = "Radial"
    AXISYM = "Axisym"


def cheb(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Chebyshev-Gauss-Lobatto nodes cos(pi k/N) and differentiation matrix."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def clenshaw_curtis(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on the N+1 nodes cos(pi k/N) over [-1, 1]."""
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
        v -= np.cos(N * theta[ii]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2 * np.cos(2 * k * theta[ii]) / (4 * k * k - 1)
    w[ii] = 2 * v / N
    return w


def _legendre_vandermonde(mu: np.ndarray, n: int) -> np.ndarray:
    return legendre.legvander(mu, n - 1)


def _bary_weights_cheb(M: int) -> np.ndarray:
    w = (-1.0) ** np.arange(M + 1)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _bary_matrix(nodes: np.ndarray, wts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Barycentric interpolation matrix from ``nodes`` to ``targets``."""
    diff = targets[:, None] - nodes[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    tmp = wts[None, :] / diff
    out = tmp / tmp.sum(axis=1, keepdims=True)
    rows = np.nonzero(exact.any(axis=1))[0]
    for i in rows:
        out[i] = exact[i].astype(float)
    return out


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable collocation grid; node index is j * N_z + k (j radial, k angular)."""

    sector: Sector
    N_r: int
    N_z: int | None
    r: np.ndarray
    mu: np.ndarray
    R: np.ndarray
    MU: np.ndarray
    nodes: np.ndarray
    Dr: np.ndarray
    Drr: np.ndarray
    Dmu: np.ndarray | None
    lap: np.ndarray
    euler: np.ndarray
    D3: np.ndarray | None
    w_vol: np.ndarray
    w_bdy: np.ndarray
    stiffness: np.ndarray
    gram: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.R.size

    @property
    def key(self) -> tuple:
        return (self.sector.value, self.N_r, self.N_z)

    def metadata(self) -> dict:
        return {"sector": self.sector.value, "N_r": self.N_r, "N_z": self.N_z, "nodes": self.n}

    def supports(self, a) -> bool:
        a = np.asarray(a, dtype=float).reshape(3)
        if self.sector is Sector.RADIAL:
            return not np.any(a)
        return a[0] == 0.0 and a[1] == 0.0

    def integrate(self, f) -> float:
        return float(np.dot(self.w_vol, f))

    def grad_sq(self, u) -> float:
        """Integral of |grad u|^2 from the derivatives (no cancellation, unlike u.K.u)."""
        du = self.Dr @ u
        val = float(np.dot(self.w_vol, du * du))
        if self.Dmu is not None:
            dm = self.Dmu @ u
            val += float(np.dot(self.w_vol * (1.0 - self.MU**2) / self.R**2, dm * dm))
        return val

    def interp_matrix(self, points) -> np.ndarray:
        """Matrix mapping node values to values at arbitrary points of the closed ball."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        rt = np.linalg.norm(pts, axis=1)
        M = 2 * self.N_r - 1
        xfull, _ = cheb(M)
        Br = _bary_matrix(xfull, _bary_weights_cheb(M), rt)
        h = self.N_r
        if self.sector is Sector.RADIAL:
            return Br[:, :h] + Br[:, ::-1][:, :h]
        with np.errstate(invalid="ignore", divide="ignore"):
            mut = np.where(rt > 0, pts[:, 2] / np.where(rt > 0, rt, 1.0), 0.0)
        V = _legendre_vandermonde(self.mu, self.N_z)
        Bmu = _legendre_vandermonde(mut, self.N_z) @ np.linalg.inv(V)
        J = Bmu[:, ::-1]
        Ba, Bb = Br[:, :h], Br[:, ::-1][:, :h]
        out = Ba[:, :, None] * Bmu[:, None, :] + Bb[:, :, None] * J[:, None, :]
        return out.reshape(len(pts), -1)


def _fold(D: np.ndarray, h: int) -> tuple[np.ndarray, np.ndarray]:
    return D[:h, :h], D[:h, ::-1][:, :h]


def _check_res(name: str, n: int, even: bool) -> None:
    if not isinstance(n, (int, np.integer)) or n < 8 or (even and n % 2):
        req = "an even integer >= 8" if even else "an integer >= 8"
        raise BadResolution(f"{name} = {n!r}; must be {req}")


@functools.lru_cache(maxsize=32)
def build_radial_grid(N_r: int) -> Grid:
    _check_res("N_r", N_r, even=True)
    N_r = int(N_r)
    M = 2 * N_r - 1
    x, D = cheb(M)
    D2 = D @ D
    r = x[:N_r]
    Dr = sum(_fold(D, N_r))
    Drr = sum(_fold(D2, N_r))
    lap = Drr + np.diag(2.0 / r) @ Dr
    euler = np.diag(r) @ Dr
    w_vol = 4 * np.pi * clenshaw_curtis(M)[:N_r] * r**2
    w_bdy = np.zeros(N_r)
    w_bdy[0] = 4 * np.pi
    nodes = np.column_stack([np.zeros(N_r), np.zeros(N_r), r])
    K = Dr.T @ (w_vol[:, None] * Dr)
    return _finish(Sector.RADIAL, N_r, None, r, np.array([1.0]), r, np.ones(N_r), nodes,
                   Dr, Drr, None, lap, euler, None, w_vol, w_bdy, K)


@functools.lru_cache(maxsize=32)
def build_axisym_grid(N_r: int, N_z: int) -> Grid:
    _check_res("N_r", N_r, even=True)
    _check_res("N_z", N_z, even=False)
    N_r, N_z = int(N_r), int(N_z)
    M = 2 * N_r - 1
    x, D = cheb(M)
    D2 = D @ D
    r = x[:N_r]
    mu, wmu = legendre.leggauss(N_z)
    I = np.eye(N_z)
    J = I[::-1]

    def pair(Dm):
        Da, Db = _fold(Dm, N_r)
        return np.kron(Da, I) + np.kron(Db, J)

    Dr, Drr = pair(D), pair(D2)
    V = _legendre_vandermonde(mu, N_z)
    Vinv = np.linalg.inv(V)
    ell = np.arange(N_z)
    Lmu1 = V @ np.diag(-ell * (ell + 1.0)) @ Vinv
    dV = np.column_stack([legendre.legval(mu, legendre.legder(np.eye(N_z)[l])) for l in ell])
    Dmu1 = dV @ Vinv
    R = np.repeat(r, N_z)
    MU = np.tile(mu, N_r)
    Dmu = np.kron(np.eye(N_r), Dmu1)
    lap = Drr + np.diag(2.0 / R) @ Dr + np.kron(np.diag(1.0 / r**2), Lmu1)
    euler = np.diag(R) @ Dr
    D3 = np.diag(MU) @ Dr + np.diag((1.0 - MU**2) / R) @ Dmu
    wr = clenshaw_curtis(M)[:N_r]
    W = np.repeat(wr, N_z) * np.tile(wmu, N_r)
    w_vol = 2 * np.pi * W * R**2
    w_bdy = np.zeros(N_r * N_z)
    w_bdy[:N_z] = 2 * np.pi * wmu
    nodes = np.column_stack([R * np.sqrt(1.0 - MU**2), np.zeros_like(R), R * MU])
    K = Dr.T @ (w_vol[:, None] * Dr) + Dmu.T @ ((2 * np.pi * W * (1.0 - MU**2))[:, None] * Dmu)
    return _finish(Sector.AXISYM, N_r, N_z, r, mu, R, MU, nodes,
                   Dr, Drr, Dmu, lap, euler, D3, w_vol, w_bdy, K)


def _finish(sector, N_r, N_z, r, mu, R, MU, nodes, Dr, Drr, Dmu, lap, euler, D3,
            w_vol, w_bdy, K) -> Grid:
    K = 0.5 * (K + K.T)
    n = R.size
    G = np.zeros((2 * n, 2 * n))
    G[:n, :n] = K + np.diag(w_bdy)
    G[n:, n:] = np.diag(w_vol)
    arrays = [r, mu, R, MU, nodes, Dr, Drr, Dmu, lap, euler, D3, w_vol, w_bdy, K, G]
    for arr in arrays:
        if arr is not None:
            arr.setflags(write=False)
    return Grid(sector, N_r, N_z, r, mu, R, MU, nodes, Dr, Drr, Dmu, lap, euler, D3,
                w_vol, w_bdy, K, G)


def build_grid(sector, N_r: int, N_z: int | None = None) -> Grid:
    sector = Sector(sector)
    if sector is Sector.RADIAL:
        return build_radial_grid(N_r)
    if N_z is None:
        raise BadResolution("N_z is required for the Axisym sector")
    return build_axisym_grid(N_r, N_z)


def grid_from_metadata(meta: dict) -> Grid:
    return build_grid(meta["sector"], meta["N_r"], meta.get("N_z"))


@dataclass(frozen=True, eq=False)
class FieldState:
    """Discrete pair (u1, u2) on a grid."""

    grid: Grid
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=float).reshape(-1)
        u2 = np.asarray(self.u2, dtype=float).reshape(-1)
        if u1.size != self.grid.n or u2.size != self.grid.n:
            raise GridMismatch(f"state length {u1.size}/{u2.size} != node count {self.grid.n}")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)

    @property
    def vec(self) -> np.ndarray:
        return np.concatenate([self.u1, self.u2])

    @classmethod
    def from_vec(cls, grid: Grid, v) -> "FieldState":
        v = np.asarray(v, dtype=float)
        return cls(grid, v[: grid.n], v[grid.n :])

    @classmethod
    def zeros(cls, grid: Grid) -> "FieldState":
        return cls(grid, np.zeros(grid.n), np.zeros(grid.n))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u1)) and np.all(np.isfinite(self.u2)))

    def _other(self, other: "FieldState") -> "FieldState":
        check_same_grid(self, other)
        return other

    def __add__(self, other):
        other = self._other(other)
        return FieldState(self.grid, self.u1 + other.u1, self.u2 + other.u2)

    def __sub__(self, other):
        other = self._other(other)
        return FieldState(self.grid, self.u1 - other.u1, self.u2 - other.u2)

    def __neg__(self):
        return FieldState(self.grid, -self.u1, -self.u2)

    def __mul__(self, c: float):
        return FieldState(self.grid, c * self.u1, c * self.u2)

    __rmul__ = __mul__

    def __truediv__(self, c: float):
        return FieldState(self.grid, self.u1 / c, self.u2 / c)

    def norm(self) -> float:
        return norm_H(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        data = np.column_stack([self.grid.nodes, self.u1, self.u2])
        np.savetxt(buf, data, delimiter=",", header="xi1,xi2,xi3,u1,u2", comments="", fmt="%.17g")
        return buf.getvalue()

    def header_json(self) -> str:
        return json.dumps({"grid": self.grid.metadata()})

    @classmethod
    def from_csv(cls, text: str, header: str) -> "FieldState":
        grid = grid_from_metadata(json.loads(header)["grid"])
        data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
        if data.shape[0] != grid.n:
            raise GridMismatch("CSV row count does not match grid")
        return cls(grid, data[:, 3], data[:, 4])


def check_same_grid(x: FieldState, y: FieldState) -> None:
    if x.grid is not y.grid and x.grid.key != y.grid.key:
        raise GridMismatch(f"grids differ: {x.grid.key} vs {y.grid.key}")


def inner_product_H(x: FieldState, y: FieldState) -> float:
    """grad-grad plus boundary trace on the first component, L2 on the second."""
    check_same_grid(x, y)
    return float(x.vec @ (x.grid.gram @ y.vec))


def norm_H(x: FieldState) -> float:
    return float(np.sqrt(max(inner_product_H(x, x), 0.0)))


def norm_H1_L2(x: FieldState) -> float:
    """Norm of H^1(B) x L^2(B) built from the same quadrature."""
    g = x.grid
    val = x.u1 @ g.stiffness @ x.u1 + g.integrate(x.u1**2) + g.integrate(x.u2**2)
    return float(np.sqrt(max(val, 0.0)))


def eval_on_grid(f, g: Grid) -> FieldState:
    f1, f2 = f(g.nodes)
    return FieldState(g, np.broadcast_to(f1, (g.n,)), np.broadcast_to(f2, (g.n,)))


def random_smooth_state(g: Grid, rng: np.random.Generator, n_modes: int = 6) -> FieldState:
    """Seeded smooth field: even Chebyshev series in r (times even polynomials in xi^3
    on the axisymmetric sector) with coefficients decaying like 2^-k."""
    comps = []
    for _ in range(2):
        if g.sector is Sector.RADIAL:
            c = rng.standard_normal(n_modes) * 2.0 ** -np.arange(n_modes)
            u = sum(c[k] * cheb_poly.chebval(g.R, np.eye(2 * k + 1)[2 * k]) for k in range(n_modes))
        else:
            m = max(2, n_modes // 2)
            c = rng.standard_normal((n_modes, m)) * 2.0 ** -np.add.outer(np.arange(n_modes), np.arange(m))
            z = g.nodes[:, 2]
            Tr = np.array([cheb_poly.chebval(g.R, np.eye(2 * k + 1)[2 * k]) for k in range(n_modes)])
            Tz = np.array([cheb_poly.chebval(z, np.eye(2 * l + 1)[2 * l]) for l in range(m)])
            u = np.einsum("kl,kn,ln->n", c, Tr, Tz)
        comps.append(u)
    return FieldState(g, comps[0], comps[1])


def require_axisym(g: Grid, what: str) -> None:
    if g.sector is not Sector.AXISYM:
        raise SectorUnsupported(f"{what} requires the Axisym sector")
