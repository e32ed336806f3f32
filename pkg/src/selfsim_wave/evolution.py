"""Method-of-lines evolution in similarity time with classical RK4.

States are advanced as flat vectors (u1, u2) with one dense matrix-vector
product per stage. Norms and detector checks run on the FieldState level.
"""
from __future__ import annotations

import enum
import functools
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla
from scipy.interpolate import CubicSpline

from .errors import ConfigError, FitDiverged, NoStoredState, NumericalFailure
from .grid import FieldState, Grid, check_same_grid, eval_on_grid, norm_H, require_axisym
from .operators import OperatorKind, OperatorMatrix, apply_L_free, apply_N, apply_N_a, assemble_matrix, potential
from .solutions import SQRT2, eigenfunction_q, psi_pair_a
from .spectral import RankOneProjection

RK4_STABILITY = 2.5


class Outcome(str, enum.Enum):
    RAN = "Ran"
    BLOWUP = "BlowupDetected"
    DISPERSION = "DispersionDetected"
    FAILURE = "NumericalFailure"


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x)


def chi(tau):
    """C^2 cut-off: 1 on [0, 1], 0 for tau >= 4."""
    return 1.0 - smoothstep((np.asarray(tau, dtype=float) - 1.0) / 3.0)


def chi_dot(tau):
    x = np.clip((np.asarray(tau, dtype=float) - 1.0) / 3.0, 0.0, 1.0)
    return -30.0 * x * x * (1 - x) ** 2 / 3.0


def _a3(a: float) -> np.ndarray:
    return np.array([0.0, 0.0, float(a)])


@functools.lru_cache(maxsize=16)
def _free_matrix(g: Grid) -> np.ndarray:
    return assemble_matrix(0.0, g, OperatorKind.FREE).M


@functools.lru_cache(maxsize=16)
def spectral_radius(g: Grid) -> float:
    M = _free_matrix(g)
    if M.shape[0] <= 800:
        return float(np.abs(np.linalg.eigvals(M)).max())
    try:
        val = spla.eigs(M, k=1, which="LM", return_eigenvectors=False, tol=1e-3, maxiter=5000)
        return float(np.abs(val).max())
    except spla.ArpackNoConvergence:
        return float(np.abs(np.linalg.eigvals(M)).max())


def dtau_max(g: Grid) -> float:
    """Largest RK4 step inside the stability region of the free operator."""
    return RK4_STABILITY / spectral_radius(g)


def psi_a(g: Grid, a3: float) -> FieldState:
    return eval_on_grid(psi_pair_a(_a3(a3)), g)


def psi0_norm(g: Grid) -> float:
    return norm_H(psi_a(g, 0.0))


def rhs_full(s: FieldState) -> FieldState:
    return apply_L_free(s) + apply_N(s)


def _rhs_vec(M: np.ndarray, v: np.ndarray, n: int, nonlinear: bool) -> np.ndarray:
    out = M @ v
    if nonlinear:
        out[n:] += v[:n] ** 3
    return out


def _rk4_vec(M, v, h, n, nonlinear):
    k1 = _rhs_vec(M, v, n, nonlinear)
    k2 = _rhs_vec(M, v + 0.5 * h * k1, n, nonlinear)
    k3 = _rhs_vec(M, v + 0.5 * h * k2, n, nonlinear)
    k4 = _rhs_vec(M, v + h * k3, n, nonlinear)
    return v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def step_rk4(s: FieldState, dtau: float, linear: OperatorMatrix | None = None) -> FieldState:
    """One RK4 step of the full system, or of ``linear`` when given."""
    g = s.grid
    if not dtau > 0:
        raise ConfigError(f"dtau must be positive, got {dtau}")
    if linear is not None:
        check_same_grid(s, FieldState.zeros(linear.grid))
    with np.errstate(over="ignore", invalid="ignore"):
        if linear is None:
            out = _rk4_vec(_free_matrix(g), s.vec, dtau, g.n, True)
        else:
            out = _rk4_vec(linear.M, s.vec, dtau, g.n, False)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure(f"non-finite state after a step of size {dtau}")
    return FieldState.from_vec(g, out)


@dataclass
class EvolveConfig:
    tau_max: float = 10.0
    dtau: float = 1e-3
    store_stride: int = 0
    record_stride: int = 10
    blowup_sup: float = 50 * SQRT2
    disperse_norm: float | None = None
    track_modulation: bool = False
    a_ref: float = 0.0

    def validate(self) -> "EvolveConfig":
        if not self.tau_max > 0:
            raise ConfigError(f"tau_max must be positive, got {self.tau_max}")
        if not self.dtau > 0:
            raise ConfigError(f"dtau must be positive, got {self.dtau}")
        if self.store_stride < 0 or self.record_stride < 1:
            raise ConfigError("store_stride must be >= 0 and record_stride >= 1")
        if not self.blowup_sup > 0:
            raise ConfigError("blowup_sup must be positive")
        if self.disperse_norm is not None and not self.disperse_norm > 0:
            raise ConfigError("disperse_norm must be positive")
        return self

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class EvolutionTrace:
    grid: Grid
    times: np.ndarray
    h_norms: np.ndarray
    psi_norms: np.ndarray
    sup_u1: np.ndarray
    mod_a: np.ndarray
    outcome: Outcome
    fired_at: float | None
    state_times: np.ndarray
    states: list
    config: dict = field(default_factory=dict)
    init: FieldState | None = None
    message: str = ""

    @property
    def tau_reached(self) -> float:
        return float(self.times[-1])

    def state(self, i: int) -> FieldState:
        return FieldState.from_vec(self.grid, self.states[i])

    @functools.cached_property
    def _spline(self):
        return CubicSpline(self.state_times, np.array(self.states), axis=0)

    def state_at(self, tau: float) -> FieldState:
        """Stored state at ``tau``, cubic-interpolated between stored samples."""
        if len(self.states) == 0:
            raise NoStoredState("trace has no stored states")
        t0, t1 = self.state_times[0], self.state_times[-1]
        if tau < t0 - 1e-12 or tau > t1 + 1e-12:
            raise NoStoredState(f"tau = {tau} outside stored range [{t0}, {t1}]")
        k = np.searchsorted(self.state_times, tau)
        for j in (k - 1, k):
            if 0 <= j < len(self.states) and abs(self.state_times[j] - tau) < 1e-12:
                return self.state(j)
        if len(self.states) < 2:
            raise NoStoredState(f"no stored state at tau = {tau}")
        return FieldState.from_vec(self.grid, self._spline(tau))

    def states_at(self, taus) -> np.ndarray:
        """Interpolated state vectors at many times, shape (len(taus), 2n)."""
        taus = np.asarray(taus, dtype=float)
        if len(self.states) < 2:
            raise NoStoredState("need at least two stored states")
        if taus.min() < self.state_times[0] - 1e-12 or taus.max() > self.state_times[-1] + 1e-12:
            raise NoStoredState("requested times outside the stored range")
        return self._spline(np.clip(taus, self.state_times[0], self.state_times[-1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        data = np.column_stack([self.times, self.h_norms, self.sup_u1, self.mod_a, self.psi_norms])
        np.savetxt(buf, data, delimiter=",", header="tau,h_norm,sup_u1,a3,psi_norm", comments="", fmt="%.17g")
        return buf.getvalue()

    def metadata(self) -> dict:
        return {"grid": self.grid.metadata(), "outcome": self.outcome.value,
                "fired_at": self.fired_at, "tau_reached": self.tau_reached,
                "n_records": int(self.times.size), "n_stored": len(self.states),
                "config": self.config, "message": self.message}

    def save(self, stem) -> None:
        from pathlib import Path

        stem = Path(stem)
        stem.with_suffix(".csv").write_text(self.to_csv())
        stem.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2))
        if self.states:
            np.savez(stem.with_suffix(".npz"), times=self.state_times, states=np.array(self.states))

    @classmethod
    def load(cls, stem) -> "EvolutionTrace":
        from pathlib import Path

        from .grid import grid_from_metadata

        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        g = grid_from_metadata(meta["grid"])
        data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        st_t, st = np.array([]), []
        npz = stem.with_suffix(".npz")
        if npz.exists():
            with np.load(npz) as z:
                st_t, st = z["times"], list(z["states"])
        return cls(g, data[:, 0], data[:, 1], data[:, 4], data[:, 2], data[:, 3],
                   Outcome(meta["outcome"]), meta["fired_at"], st_t, st, meta.get("config", {}),
                   None, meta.get("message", ""))


def evolve(init: FieldState, cfg: EvolveConfig | None = None) -> EvolutionTrace:
    """Integrate the nonlinear system until tau_max or a detector fires."""
    cfg = (cfg or EvolveConfig()).validate()
    g = init.grid
    if cfg.track_modulation:
        require_axisym(g, "modulation tracking")
    if cfg.dtau > dtau_max(g):
        raise ConfigError(f"dtau = {cfg.dtau} exceeds the RK4 stability limit {dtau_max(g):.3g}")
    disperse = cfg.disperse_norm if cfg.disperse_norm is not None else 0.05 * psi0_norm(g)
    M = _free_matrix(g)
    n = g.n
    G = g.gram
    nsteps = int(round(cfg.tau_max / cfg.dtau))
    rec = {"t": [], "h": [], "psi": [], "sup": [], "a": []}
    st_t, st = [], []
    a_cur = cfg.a_ref
    ref_cache = {}

    def phi_norm(v, a3):
        if a3 not in ref_cache:
            ref_cache.clear()
            ref_cache[a3] = psi_a(g, a3).vec
        d = v - ref_cache[a3]
        return float(np.sqrt(max(d @ G @ d, 0.0)))

    def record(k, v):
        nonlocal a_cur
        t = k * cfg.dtau
        if cfg.track_modulation:
            try:
                a_cur = track_modulation(FieldState.from_vec(g, v), a_cur)
            except FitDiverged:
                pass
        rec["t"].append(t)
        rec["h"].append(phi_norm(v, a_cur))
        rec["psi"].append(float(np.sqrt(max(v @ G @ v, 0.0))))
        rec["sup"].append(float(np.abs(v[:n]).max()))
        rec["a"].append(a_cur)

    v = init.vec.copy()
    outcome, fired, msg = Outcome.RAN, None, ""
    record(0, v)
    if cfg.store_stride:
        st_t.append(0.0)
        st.append(v.copy())
    for k in range(1, nsteps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            v = _rk4_vec(M, v, cfg.dtau, n, True)
        sup = np.abs(v[:n]).max()
        if not np.isfinite(sup):
            outcome, fired, msg = Outcome.FAILURE, k * cfg.dtau, "non-finite state"
            break
        if cfg.store_stride and k % cfg.store_stride == 0:
            st_t.append(k * cfg.dtau)
            st.append(v.copy())
        if sup > cfg.blowup_sup:
            record(k, v)
            outcome, fired = Outcome.BLOWUP, k * cfg.dtau
            break
        if k % cfg.record_stride == 0 or k == nsteps:
            record(k, v)
            if rec["psi"][-1] < disperse:
                outcome, fired = Outcome.DISPERSION, k * cfg.dtau
                break
    return EvolutionTrace(g, np.array(rec["t"]), np.array(rec["h"]), np.array(rec["psi"]),
                          np.array(rec["sup"]), np.array(rec["a"]), outcome, fired,
                          np.array(st_t), st, {**cfg.to_json(), "disperse_norm": disperse}, init, msg)


def evolve_linear(init: FieldState, a=0.0, tau_max: float = 6.0, dtau: float = 1e-3,
                  free: bool = False, record_stride: int = 10, store_stride: int = 0) -> EvolutionTrace:
    """Integrate d_tau Phi = L_a Phi (or the free operator when ``free``)."""
    g = init.grid
    kind = OperatorKind.FREE if free else OperatorKind.LINEARIZED
    op = assemble_matrix(a, g, kind)
    if dtau > dtau_max(g):
        raise ConfigError(f"dtau = {dtau} exceeds the RK4 stability limit {dtau_max(g):.3g}")
    nsteps = int(round(tau_max / dtau))
    G = g.gram
    v = init.vec.copy()
    t, h, sup, st_t, st = [0.0], [], [], [], []

    def rec(v):
        h.append(float(np.sqrt(max(v @ G @ v, 0.0))))
        sup.append(float(np.abs(v[: g.n]).max()))

    rec(v)
    if store_stride:
        st_t.append(0.0)
        st.append(v.copy())
    outcome, fired = Outcome.RAN, None
    for k in range(1, nsteps + 1):
        v = _rk4_vec(op.M, v, dtau, g.n, False)
        if not np.all(np.isfinite(v)):
            outcome, fired = Outcome.FAILURE, k * dtau
            break
        if store_stride and k % store_stride == 0:
            st_t.append(k * dtau)
            st.append(v.copy())
        if k % record_stride == 0 or k == nsteps:
            t.append(k * dtau)
            rec(v)
    a3 = float(np.asarray(op.a)[2])
    cfg = {"tau_max": tau_max, "dtau": dtau, "free": free, "a": op.a.tolist(), "record_stride": record_stride,
           "store_stride": store_stride}
    return EvolutionTrace(g, np.array(t[: len(h)]), np.array(h), np.array(h), np.array(sup),
                          np.full(len(h), a3), outcome, fired, np.array(st_t), st, cfg, init)


def track_modulation(s: FieldState, a_prev: float = 0.0, gauge: str = "orthogonal",
                     proj: RankOneProjection | None = None, u: FieldState | None = None,
                     tau: float = 0.0, tol: float = 1e-10, max_iter: int = 50) -> float:
    """Rapidity a^3 of the family member closest to ``s``.

    ``orthogonal``: Gauss-Newton for min over a of ||s - Psi_a||_H, stopped
    when the gradient <s - Psi_a, q_a>_H falls below ``tol``.

    ``spectral``: Newton for the neutral-mode condition
    Q(s - Psi_a) = chi(tau) Q u, with Q = ``proj`` the rank-one projection onto
    q_{a_inf,3}. This is the gauge in which the integral modulation equation
    holds exactly.
    """
    g = s.grid
    require_axisym(g, "modulation tracking")
    G = g.gram
    a = float(a_prev)
    sv = s.vec
    if gauge == "spectral":
        if proj is None:
            raise ValueError("spectral gauge needs the Q3 projection")
        y = proj.y
        target = float(chi(tau)) * float(y @ u.vec) if u is not None else 0.0
    elif gauge != "orthogonal":
        raise ValueError(f"unknown gauge {gauge!r}")
    for _ in range(max_iter):
        with np.errstate(all="raise"):
            try:
                r = sv - psi_a(g, a).vec
                q = eval_on_grid(eigenfunction_q(_a3(a), 3), g).vec
            except (FloatingPointError, ValueError) as exc:
                raise FitDiverged(f"modulation fit left the admissible range at a = {a}") from exc
        if gauge == "orthogonal":
            grad = float(q @ G @ r)
            if abs(grad) < tol:
                return a
            step = grad / float(q @ G @ q)
        else:
            resid = float(y @ r) - target
            if abs(resid) < tol:
                return a
            step = resid / float(y @ q)
        a += step
        if not np.isfinite(a) or abs(a) > 1.0:
            raise FitDiverged(f"modulation fit diverged (a = {a})")
    raise FitDiverged(f"modulation fit did not converge in {max_iter} iterations")


def modulation_rhs(s: FieldState, a, q_proj: RankOneProjection, u: FieldState | None = None,
                   tau: float | None = None, a_dot: float | None = None) -> np.ndarray:
    """Integrand of the modulation equation for a, as a 3-vector (only a^3 is active).

    Evaluates <-chi'(tau) Q u + Q[Lhat_a Phi + N_a(Phi)] - Q adot qhat_a, q>/||q||^2
    with Phi = s - Psi_a, Lhat_a = L'_a - L'_{a_inf}, qhat_a = q_a - q_{a_inf} and Q,
    q taken at a_inf = q_proj.a. When ``a_dot`` is None the equation is solved
    for a_dot (it appears on both sides).
    """
    g = s.grid
    require_axisym(g, "modulation_rhs")
    a3 = float(np.asarray(a, dtype=float).reshape(-1)[-1])
    a_inf = np.asarray(q_proj.a, dtype=float)
    phi = s - psi_a(g, a3)
    lhat = FieldState(g, np.zeros(g.n), (potential(_a3(a3), g) - potential(a_inf, g)) * phi.u1)
    forcing = lhat + apply_N_a(_a3(a3), phi)
    q_inf = eval_on_grid(eigenfunction_q(a_inf, 3), g)
    qhat = eval_on_grid(eigenfunction_q(_a3(a3), 3), g) - q_inf
    from .grid import inner_product_H

    factor = inner_product_H(q_proj.right, q_inf) / inner_product_H(q_inf, q_inf)
    val = q_proj.coefficient(forcing)
    if u is not None and tau is not None:
        val -= float(chi_dot(tau)) * q_proj.coefficient(u)
    c_qhat = q_proj.coefficient(qhat)
    if a_dot is None:
        adot = factor * val / (1.0 + factor * c_qhat)
    else:
        adot = factor * (val - float(a_dot) * c_qhat)
    return np.array([0.0, 0.0, adot])
