"""Bisection for the codimension-one threshold between blowup and dispersion.

Initial data Psi_a + v + s p_a are classified by evolving them. Runs that
reach tau_max without a detector firing are assigned a side from the sign of
their unstable (p_a) component at the final time, which grows like e^tau and
therefore decides the eventual fate; runs where that component is lost in
round-off are reported as undetermined.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import BracketInvalid, FitDiverged, GridMismatch, Inconclusive, LabError
from .evolution import EvolutionTrace, EvolveConfig, Outcome, evolve, psi_a, track_modulation
from .grid import FieldState, Grid, Sector, check_same_grid, eval_on_grid
from .solutions import eigenfunction_p
from .spectral import RankOneProjection, projection_for

SIDE_NOISE = 1e-13


@dataclass
class ThresholdConfig:
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    a3: float = 0.0
    tol_s: float = 1e-10
    max_iter: int = 60
    final_tau_max: float = 10.0
    final_store_stride: int = 10

    def to_json(self) -> dict:
        d = asdict(self)
        d["evolve"] = self.evolve.to_json()
        return d


def p_state(g: Grid, a3: float = 0.0) -> FieldState:
    return eval_on_grid(eigenfunction_p([0.0, 0.0, a3]), g)


def initial_data(v: FieldState, s: float, a3: float = 0.0) -> FieldState:
    g = v.grid
    return psi_a(g, a3) + v + s * p_state(g, a3)


def unstable_coefficient(trace: EvolutionTrace, state: FieldState, a3: float) -> float:
    """P_a-coefficient of state - Psi_a, with a the tracked rapidity on Axisym grids."""
    g = state.grid
    a = a3
    if g.sector is Sector.AXISYM:
        try:
            a = track_modulation(state, a3)
        except FitDiverged:
            a = a3
        proj = projection_for([0.0, 0.0, a], g, "P", check_isolation=False)
    else:
        proj = projection_for(0.0, g, "P")
    return proj.coefficient(state - psi_a(g, a))


def side_of(outcome: Outcome, p_coef: float | None) -> int:
    """+1 blowup side, -1 dispersion side, 0 undetermined."""
    if outcome is Outcome.BLOWUP:
        return 1
    if outcome is Outcome.DISPERSION:
        return -1
    if outcome is Outcome.RAN and p_coef is not None and abs(p_coef) > SIDE_NOISE:
        return 1 if p_coef > 0 else -1
    return 0


@dataclass
class Classification:
    s: float
    outcome: str
    side: int
    tau_reached: float
    p_coef: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def classify(init: FieldState, cfg: EvolveConfig | None = None) -> Outcome:
    """Outcome of the nonlinear evolution of ``init``; Ran if undetermined by tau_max."""
    return evolve(init, cfg).outcome


def classify_run(init: FieldState, cfg: EvolveConfig, a3: float = 0.0) -> tuple[Classification, EvolutionTrace]:
    trace = evolve(init, cfg)
    p_coef = None
    if trace.outcome is Outcome.RAN:
        final = trace.state(-1) if trace.states and trace.state_times[-1] == trace.tau_reached else None
        if final is None:
            final = _final_state(init, cfg, trace)
        p_coef = unstable_coefficient(trace, final, a3)
    c = Classification(float("nan"), trace.outcome.value, side_of(trace.outcome, p_coef),
                       trace.tau_reached, p_coef)
    return c, trace


def _final_state(init: FieldState, cfg: EvolveConfig, trace: EvolutionTrace) -> FieldState:
    stride = max(1, int(round(cfg.tau_max / cfg.dtau)))
    again = evolve(init, replace(cfg, store_stride=stride))
    return again.state(-1)


@dataclass
class ThresholdResult:
    perp_data: FieldState
    s_star: float
    bracket_width: float
    classifications: list
    tau_reached_at_star: float
    blowup_above: bool = True
    iterations: int = 0
    undetermined_at_star: bool = False
    star_trace: EvolutionTrace | None = None
    config: dict = field(default_factory=dict)

    def monotone(self) -> bool:
        return classification_monotone(self.classifications)

    def to_json(self) -> dict:
        return {
            "s_star": self.s_star,
            "bracket_width": self.bracket_width,
            "tau_reached_at_star": self.tau_reached_at_star,
            "blowup_above": self.blowup_above,
            "iterations": self.iterations,
            "undetermined_at_star": self.undetermined_at_star,
            "monotone": self.monotone(),
            "perp_norm": float(self.perp_data.norm()),
            "classifications": [c.to_json() for c in self.classifications],
            "config": self.config,
        }


def classification_monotone(classes) -> bool:
    """Sides (ignoring undetermined runs) change sign at most once as s increases."""
    pts = sorted((c.s, c.side) for c in classes if c.side != 0)
    sides = [sd for _, sd in pts]
    changes = sum(1 for x, y in zip(sides, sides[1:]) if x != y)
    return changes <= 1


def _run(v: FieldState, s: float, cfg: ThresholdConfig) -> Classification:
    c, _ = classify_run(initial_data(v, s, cfg.a3), cfg.evolve, cfg.a3)
    c.s = float(s)
    return c


def bisect_threshold(v: FieldState, s_lo: float | None = None, s_hi: float | None = None,
                     cfg: ThresholdConfig | None = None) -> ThresholdResult:
    """Bisect s in Psi_a + v + s p_a between a dispersing and a blowing-up run."""
    cfg = cfg or ThresholdConfig()
    history = []
    if s_lo is None or s_hi is None:
        s_lo, s_hi, history = probe_bracket(v, cfg)
        c_lo = next(c for c in history if c.s == s_lo)
        c_hi = next(c for c in history if c.s == s_hi)
    else:
        c_lo, c_hi = _run(v, s_lo, cfg), _run(v, s_hi, cfg)
        history += [c_lo, c_hi]
    if c_lo.side == 0 or c_hi.side == 0:
        raise BracketInvalid(f"bracket endpoint undetermined: {c_lo.outcome} / {c_hi.outcome}")
    if c_lo.side == c_hi.side:
        raise BracketInvalid(f"both endpoints classify as {c_lo.outcome}")
    lo, hi, side_lo = float(s_lo), float(s_hi), c_lo.side
    it = 0
    undetermined = False
    while hi - lo >= cfg.tol_s and it < cfg.max_iter:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        c = _run(v, mid, cfg)
        history.append(c)
        it += 1
        if c.side == 0:
            if c.outcome == Outcome.RAN.value:
                undetermined = True
                lo = hi = mid
                break
            raise Inconclusive(f"midpoint s = {mid} returned {c.outcome}")
        if c.side == side_lo:
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)
    star_cfg = replace(cfg.evolve, tau_max=max(cfg.final_tau_max, cfg.evolve.tau_max),
                       store_stride=cfg.final_store_stride)
    trace = evolve(initial_data(v, s_star, cfg.a3), star_cfg)
    return ThresholdResult(v, s_star, hi - lo, history, trace.tau_reached,
                           blowup_above=(side_lo == -1), iterations=it,
                           undetermined_at_star=undetermined, star_trace=trace,
                           config=cfg.to_json())


def probe_bracket(v: FieldState, cfg: ThresholdConfig, h0: float = 0.05, grow: float = 2.0,
                  max_tries: int = 6):
    """Symmetric bracket [-h, h] widened until its endpoints classify differently."""
    history = []
    h = h0
    for _ in range(max_tries):
        lo, hi = _run(v, -h, cfg), _run(v, h, cfg)
        history += [lo, hi]
        if lo.side and hi.side and lo.side != hi.side:
            return -h, h, history
        h *= grow
    raise BracketInvalid(f"no valid bracket found up to |s| = {h / grow}")


def remove_unstable_component(u: FieldState, proj_P: RankOneProjection,
                              proj_Q: RankOneProjection | None = None) -> FieldState:
    """u - P u (- Q u)."""
    check_same_grid(u, proj_P.right)
    out = u - proj_P.apply(u)
    if proj_Q is not None:
        check_same_grid(u, proj_Q.right)
        out = out - proj_Q.apply(out)
    return out


def perp_state(w: FieldState, norm: float, a3: float = 0.0) -> FieldState:
    """Element of ker P_a in the direction of w, scaled to the given H-norm."""
    g = w.grid
    P = projection_for([0.0, 0.0, a3], g, "P") if g.sector is Sector.AXISYM else projection_for(0.0, g, "P")
    v = remove_unstable_component(w, P)
    return v * (norm / v.norm())


def state_key(v: FieldState, cfg: ThresholdConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(v.grid.metadata(), sort_keys=True).encode())
    h.update(np.ascontiguousarray(v.vec).tobytes())
    h.update(json.dumps(cfg.to_json(), sort_keys=True).encode())
    return h.hexdigest()[:16]


@dataclass
class GraphSample:
    points: list
    errors: dict
    quotients: np.ndarray

    def max_quotient(self) -> float:
        q = self.quotients[np.isfinite(self.quotients)]
        return float(q.max()) if q.size else float("nan")


def _bisect_worker(args):
    vec, meta, cfg = args
    from .grid import grid_from_metadata

    v = FieldState.from_vec(grid_from_metadata(meta), vec)
    try:
        res = bisect_threshold(v, cfg=cfg)
        res.star_trace = None
        return res.to_json()
    except LabError as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def sample_manifold_graph(vs: list, cfg: ThresholdConfig | None = None, jobs: int = 1,
                          state_file: str | Path | None = None, jsonl: str | Path | None = None) -> GraphSample:
    """Bisect every v, then tabulate |s*(v) - s*(w)| / ||v - w|| over all pairs.

    Records are appended to ``jsonl``; ``state_file`` holds finished records keyed
    by a hash of (v, cfg) so an interrupted batch resumes where it stopped.
    """
    cfg = cfg or ThresholdConfig()
    done = {}
    if state_file is not None and Path(state_file).exists():
        done = json.loads(Path(state_file).read_text())
    keys = [state_key(v, cfg) for v in vs]
    todo = [i for i, k in enumerate(keys) if k not in done]
    args = [(vs[i].vec, vs[i].grid.metadata(), cfg) for i in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_bisect_worker, args))
    else:
        results = []
        for i, a in zip(todo, args):
            results.append(_bisect_worker(a))
            done[keys[i]] = results[-1]
            if state_file is not None:
                Path(state_file).write_text(json.dumps(done))
    for i, r in zip(todo, results):
        done[keys[i]] = r
        if jsonl is not None:
            with open(jsonl, "a") as fh:
                fh.write(json.dumps({"key": keys[i], "index": i, **r}) + "\n")
    if state_file is not None:
        Path(state_file).write_text(json.dumps(done))
    points, errors = [], {}
    for i, k in enumerate(keys):
        rec = done[k]
        if "error" in rec:
            errors[i] = rec["error"]
            points.append((vs[i], float("nan")))
        else:
            points.append((vs[i], rec["s_star"]))
    m = len(points)
    Qm = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(i + 1, m):
            d = (points[i][0] - points[j][0]).norm()
            if d > 0 and np.isfinite(points[i][1]) and np.isfinite(points[j][1]):
                Qm[i, j] = Qm[j, i] = abs(points[i][1] - points[j][1]) / d
    return GraphSample(points, errors, Qm)
