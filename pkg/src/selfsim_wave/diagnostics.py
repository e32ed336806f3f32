"""Physical-frame norms of similarity-frame data and decay-rate fits.

A similarity-frame field psi(tau, xi) corresponds to the decay-picture
solution v(t, x) = psi(log(t (1 - |xi|^2)), xi) / t with xi = x/t, and to the
blowup-picture solution u(T, X) = psi(-log(-T), X/(-T)) / (-T).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .errors import NonPositiveValues, NoStoredState, UnsupportedExponent
from .evolution import EvolutionTrace, psi_a
from .grid import FieldState, Grid, Sector, eval_on_grid
from .solutions import PairField


@dataclass
class DecayFit:
    rate: float
    window: tuple
    r2: float
    intercept: float = 0.0

    def to_json(self) -> dict:
        return {"rate": self.rate, "window": list(self.window), "r2": self.r2}


def fit_decay(times, values, window=None, log_time: bool = False) -> DecayFit:
    """Least-squares fit of log(values) = c - rate * x, with x = times or log(times)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    lo, hi = window if window is not None else (times.min(), times.max())
    m = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if m.sum() < 2:
        raise ValueError(f"fewer than two samples in window [{lo}, {hi}]")
    if np.any(values[m] <= 0) or not np.all(np.isfinite(values[m])):
        raise NonPositiveValues("values must be positive and finite on the fit window")
    x = np.log(times[m]) if log_time else times[m]
    y = np.log(values[m])
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot < 1e-30 else float(np.clip(1.0 - np.sum(resid**2) / ss_tot, 0.0, 1.0))
    return DecayFit(float(-coef[1]), (float(lo), float(hi)), r2, float(coef[0]))


@dataclass
class SigmaNorms:
    l2: float
    h1dot: float
    h1: float
    nabla_n_l2: float

    def total(self) -> float:
        return self.h1 + self.nabla_n_l2

    def to_json(self) -> dict:
        return {"l2": self.l2, "h1dot": self.h1dot, "h1": self.h1, "nabla_n_l2": self.nabla_n_l2}


def _reference(g: Grid, trace: EvolutionTrace | None, subtract):
    """Static pair removed before taking norms, or None."""
    if subtract is None or subtract is False:
        return None
    if isinstance(subtract, str) and subtract == "auto":
        a3 = float(trace.mod_a[-1]) if trace is not None and trace.mod_a.size else 0.0
        return psi_a(g, a3)
    return psi_a(g, float(np.asarray(subtract, dtype=float).reshape(-1)[-1]))


def similarity_norms(phi: FieldState) -> tuple[float, float, float]:
    """(||phi1||_L2(B), ||grad phi1||_L2(B), ||phi2||_L2(B))."""
    g = phi.grid
    l2 = np.sqrt(max(g.integrate(phi.u1**2), 0.0))
    grad = np.sqrt(g.grad_sq(phi.u1))
    n2 = np.sqrt(max(g.integrate(phi.u2**2), 0.0))
    return float(l2), float(grad), float(n2)


def sigma_T_norms(source, T: float, subtract="auto", grid: Grid | None = None) -> SigmaNorms:
    """Norms on the hyperboloidal slice Sigma_T of v minus a boosted family member.

    ``source`` is an EvolutionTrace (state taken at tau = -log(-T)), a static
    FieldState, or a PairField evaluated on ``grid``. ``subtract`` selects the
    removed member: "auto" (final tracked rapidity of a trace, else a = 0), a
    rapidity a^3, or None for the norms of v itself.
    """
    if not -1.0 <= T < 0.0:
        raise ValueError(f"T = {T} outside [-1, 0)")
    tau = -np.log(-T)
    trace = None
    if isinstance(source, EvolutionTrace):
        trace = source
        s = source.state_at(tau)
    elif isinstance(source, FieldState):
        s = source
    elif isinstance(source, PairField):
        if grid is None:
            raise ValueError("a PairField source needs a grid")
        s = eval_on_grid(source, grid)
    else:
        raise TypeError(f"unsupported source {type(source).__name__}")
    ref = _reference(s.grid, trace, subtract)
    phi = s - ref if ref is not None else s
    l2b, gradb, n2b = similarity_norms(phi)
    aT = abs(T)
    l2 = np.sqrt(aT) * l2b
    h1dot = gradb / np.sqrt(aT)
    h1 = np.sqrt(h1dot**2 + l2**2 / aT**2)
    return SigmaNorms(float(l2), float(h1dot), float(h1), float(n2b / np.sqrt(aT)))


def ball_quadrature(radius: float, sector: Sector, n_rho: int = 32, n_mu: int = 16):
    """Points (m, 3) and weights for integrating axisymmetric functions over B_radius."""
    x, w = legendre.leggauss(n_rho)
    rho = 0.5 * radius * (x + 1)
    wr = 0.5 * radius * w * rho**2
    if sector is Sector.RADIAL:
        return np.column_stack([np.zeros_like(rho), np.zeros_like(rho), rho]), 4 * np.pi * wr, rho, 1
    mu, wm = legendre.leggauss(n_mu)
    R = np.repeat(rho, n_mu)
    MU = np.tile(mu, n_rho)
    pts = np.column_stack([R * np.sqrt(1 - MU**2), np.zeros_like(R), R * MU])
    return pts, 2 * np.pi * np.repeat(wr, n_mu) * np.tile(wm, n_rho), rho, n_mu


def strichartz_norm(source, t: float, delta: float, p: float = 4.0, subtract="auto",
                    grid: Grid | None = None, n_s: int = 64, n_rho: int = 32, n_mu: int = 16,
                    power: bool = False) -> float:
    """Localized space-time norm of v (minus a family member) over (t, 2t) x B_{(1-delta)s}.

    Uses the pullback  int_t^{2t} s^{3-p} int_{B_{1-delta}} |psi(log(s(1-|xi|^2)), xi)|^p dxi ds,
    Gauss-Legendre in s and in the ball. Returns the norm, or its p-th power
    when ``power`` is set.
    """
    if not (8.0 / 3.0 < p <= 6.0):
        raise UnsupportedExponent(f"p = {p} outside (8/3, 6]")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta = {delta} outside (0, 1)")
    xs, ws = legendre.leggauss(n_s)
    s = t * (1.5 + 0.5 * xs)
    ws = 0.5 * t * ws
    if isinstance(source, PairField):
        pts, wb, _, _ = ball_quadrature(1.0 - delta, Sector.AXISYM, n_rho, n_mu)
        ref = 0.0
        if subtract not in (None, False, "auto"):
            from .solutions import psi_pair_a

            ref = psi_pair_a([0, 0, float(np.asarray(subtract).reshape(-1)[-1])]).f1(pts)
        space = float(np.sum(wb * np.abs(source.f1(pts) - ref) ** p))
        val = float(np.sum(ws * s ** (3.0 - p))) * space
        return val if power else val ** (1.0 / p)
    if isinstance(source, FieldState):
        g = source.grid
        pts, wb, rho, nm = ball_quadrature(1.0 - delta, g.sector, n_rho, n_mu)
        ref = _reference(g, None, subtract)
        phi = source - ref if ref is not None else source
        vals = g.interp_matrix(pts) @ phi.u1
        val = float(np.sum(ws * s ** (3.0 - p))) * float(np.sum(wb * np.abs(vals) ** p))
        return val if power else val ** (1.0 / p)
    if not isinstance(source, EvolutionTrace):
        raise TypeError(f"unsupported source {type(source).__name__}")
    g = source.grid
    pts, wb, rho, nm = ball_quadrature(1.0 - delta, g.sector, n_rho, n_mu)
    ref = _reference(g, source, subtract)
    B = g.interp_matrix(pts)
    taus = np.log(np.outer(s, 1.0 - rho**2))
    if taus.min() < source.state_times[0] - 1e-12 if len(source.states) else True:
        raise NoStoredState(f"t = {t} reaches tau = {taus.min():.3g} before the stored range")
    total = 0.0
    for j in range(rho.size):
        U = source.states_at(taus[:, j])[:, : g.n]
        if ref is not None:
            U = U - ref.u1[None, :]
        rows = slice(j * nm, (j + 1) * nm)
        vals = U @ B[rows].T
        total += float(np.sum(ws[:, None] * s[:, None] ** (3.0 - p) * wb[None, rows] * np.abs(vals) ** p))
    return total if power else total ** (1.0 / p)


def v0_strichartz_closed_form(delta: float) -> float:
    """p = 4 power of the localized norm of sqrt(2)/t, including the 4 pi solid angle."""
    return 4 * np.pi * 4 * np.log(2.0) * (1 - delta) ** 3 / 3
