"""Command-line entry point: verify | spectrum | evolve | threshold | report."""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import coords, diagnostics, evolution, grid, operators, solutions, spectral, threshold
from .errors import ConfigError, EigenFailure, LabError, UnsupportedRapidity

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


DEFAULTS = {
    "seed": 0,
    "out": "out",
    "verify": {"N_r": 48, "N_z": 32, "a3": [0.0, 0.2], "n_points": 10000},
    "spectrum": {"sector": "Radial", "N_r": 48, "N_z": 16, "N_r_fine": 56, "N_z_fine": 24,
                 "a3": [0.0], "tol_conv": 1e-6, "tol_eig": 1e-5, "epsilon_tilde": 0.1},
    "evolve": {"sector": "Radial", "N_r": 32, "N_z": 12, "a3": 0.0, "background": "family",
               "p_coef": 0.0, "random_amp": 0.0, "tau_max": 10.0, "dtau": 1e-3,
               "store_stride": 0, "record_stride": 10, "blowup_sup": 50 * np.sqrt(2.0),
               "disperse_norm": None, "track_modulation": False, "label": "run"},
    "threshold": {"sector": "Radial", "N_r": 32, "N_z": 12, "a3": 0.0, "count": 3,
                  "perp_norm": 1e-2, "include_zero": True, "s_lo": None, "s_hi": None,
                  "tol_s": 1e-10, "max_iter": 60, "tau_max": 10.0, "dtau": 1e-3,
                  "final_tau_max": 10.0},
    "report": {"input": None, "delta": 0.5, "p": 4.0, "t_min": 4.0, "t_max": 64.0,
               "n_t": 9, "tau_window": [1.5, 5.0]},
}

POSITIVE = {"tol_conv", "tol_eig", "epsilon_tilde", "tau_max", "dtau", "blowup_sup", "disperse_norm",
            "perp_norm", "tol_s", "max_iter", "final_tau_max", "delta", "t_min", "t_max", "n_t",
            "n_points", "record_stride"}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{key}' must be a table")
            out[k] = _merge(base[k], v, key + ".")
        else:
            ref = base[k]
            if ref is not None and not _type_ok(ref, v):
                raise ConfigError(f"config key '{key}' has type {type(v).__name__}, expected {type(ref).__name__}")
            out[k] = v
    return out


def _type_ok(ref, v) -> bool:
    if isinstance(ref, bool):
        return isinstance(v, bool)
    if isinstance(ref, int):
        return isinstance(v, int) and not isinstance(v, bool)
    if isinstance(ref, float):
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    if isinstance(ref, list):
        return isinstance(v, list)
    return isinstance(v, type(ref))


def _validate(cfg: dict) -> dict:
    for sec, body in cfg.items():
        if not isinstance(body, dict):
            continue
        for k, v in body.items():
            if v is None:
                continue
            if k in POSITIVE and not v > 0:
                raise ConfigError(f"config key '{sec}.{k}' must be positive, got {v}")
            if k in ("N_r", "N_r_fine"):
                if v < 8 or v % 2:
                    raise ConfigError(f"config key '{sec}.{k}' = {v}: must be an even integer >= 8")
            if k in ("N_z", "N_z_fine") and v < 8:
                raise ConfigError(f"config key '{sec}.{k}' = {v}: must be an integer >= 8")
            if k in ("count", "store_stride") and v < 0:
                raise ConfigError(f"config key '{sec}.{k}' must be non-negative, got {v}")
            if k == "sector" and v not in ("Radial", "Axisym"):
                raise ConfigError(f"config key '{sec}.{k}' must be 'Radial' or 'Axisym'")
            if k == "background" and v not in ("family", "zero"):
                raise ConfigError(f"config key '{sec}.{k}' must be 'family' or 'zero'")
    sp = cfg["spectrum"]
    if not 0 < sp["epsilon_tilde"] < 0.5:
        raise ConfigError("config key 'spectrum.epsilon_tilde' must lie in (0, 1/2)")
    for sec in ("spectrum", "evolve", "threshold"):
        body = cfg[sec]
        a3s = body["a3"] if isinstance(body["a3"], list) else [body["a3"]]
        for a3 in a3s:
            if abs(a3) > coords.A_MAX:
                raise ConfigError(f"config key '{sec}.a3' = {a3} exceeds a_max = {coords.A_MAX}")
            if body["sector"] == "Radial" and a3 != 0:
                raise ConfigError(f"config key '{sec}.a3' = {a3}: the Radial sector supports only a = 0")
    return cfg


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    cfg = _merge(DEFAULTS, user)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return _validate(cfg)


def resolved(cfg: dict) -> dict:
    """Config with unset optional keys removed (for echoing into outputs)."""
    def strip(d):
        return {k: strip(v) if isinstance(v, dict) else v for k, v in d.items() if v is not None}
    return strip(cfg)


def _opt(v, default=None):
    return default if v is None else v


def _grid_for(body: dict, fine: bool = False) -> grid.Grid:
    nr = body["N_r_fine" if fine else "N_r"]
    if body["sector"] == "Radial":
        return grid.build_radial_grid(nr)
    return grid.build_axisym_grid(nr, body["N_z_fine" if fine else "N_z"])


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True))


def _emit(rows: list, as_json: bool, extra: dict | None = None) -> None:
    if as_json:
        print(json.dumps({"results": rows, **(extra or {})}, indent=2))
        return
    width = max((len(r["name"]) for r in rows), default=10)
    for r in rows:
        mark = "PASS" if r["pass"] else "FAIL"
        print(f"{mark}  {r['name']:<{width}}  value={r['value']:.3e}  tol={r['tol']:.1e}")


# ---------------------------------------------------------------- verify

def verify_checks(cfg: dict) -> list:
    vc = cfg["verify"]
    rng = np.random.default_rng(cfg["seed"])
    rows = []

    def add(name, value, tol):
        rows.append({"name": name, "value": float(value), "tol": float(tol), "pass": bool(value < tol)})

    n = vc["n_points"]
    T = -rng.uniform(0.05, 2.0, n)
    dirs = rng.standard_normal((n, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    X = dirs * (rng.uniform(0, 0.95, n) * -T)[:, None]
    inv_err, recip_err = 0.0, 0.0
    for Ti, Xi in zip(T, X):
        p = coords.SpacetimePoint(coords.Frame.HYPERBOLOIDAL, Ti, Xi)
        c = coords.kelvin(p)
        back = coords.kelvin_inv(c)
        ref = np.linalg.norm(np.r_[p.c0, p.c])
        inv_err = max(inv_err, np.linalg.norm(np.r_[back.c0, back.c] - np.r_[p.c0, p.c]) / ref)
        recip_err = max(recip_err, abs(c.interval() * p.interval() - 1.0))
    add("kelvin involution", inv_err, 1e-12)
    add("interval reciprocity", recip_err, 1e-12)

    mink = max(abs(solutions.coeffs_A(a).minkowski() - 1.0) for a in rng.uniform(-0.6, 0.6, (200, 3)))
    add("Minkowski identity of A", mink, 1e-12)
    pts = [coords.SpacetimePoint(coords.Frame.HYPERBOLOIDAL, Ti, Xi) for Ti, Xi in zip(T[:200], X[:200])]
    id_err = max(np.abs(np.r_[coords.lorentz_boost(np.zeros(3), p).c0 - p.c0,
                              np.subtract(coords.lorentz_boost(np.zeros(3), p).c, p.c)]).max() for p in pts)
    add("boost at a = 0 is the identity", id_err, 1e-12)
    group = 0.0
    inv_interval = 0.0
    for p in pts:
        a, b = rng.uniform(-0.5, 0.5, 2)
        lhs = coords.lorentz_boost([0, 0, a], coords.lorentz_boost([0, 0, b], p))
        rhs = coords.lorentz_boost([0, 0, a + b], p)
        group = max(group, np.abs(np.r_[lhs.c0 - rhs.c0, np.subtract(lhs.c, rhs.c)]).max())
        q = coords.lorentz_boost(rng.uniform(-0.5, 0.5, 3), p)
        inv_interval = max(inv_interval, abs(q.interval() / p.interval() - 1))
    add("boost group law along e3", group, 1e-12)
    add("boost preserves the interval", inv_interval, 1e-12)

    wave_res = 0.0
    h = 1e-3
    for _ in range(20):
        a = rng.uniform(-0.3, 0.3, 3)
        t = rng.uniform(1.0, 3.0)
        x = rng.standard_normal(3)
        x *= rng.uniform(0, 0.5) * t / np.linalg.norm(x)
        wave_res = max(wave_res, abs(wave_residual(a, t, x, h)))
    add("v_a solves the cubic wave equation", wave_res, 1e-6)

    ga = grid.build_axisym_grid(vc["N_r"], vc["N_z"])
    gr = grid.build_radial_grid(vc["N_r"])
    res = grid.norm_H(_static_residual(gr, 0.0))
    for a3 in vc["a3"]:
        res = max(res, grid.norm_H(_static_residual(ga, a3)))
    add("static residual L Psi_a + N(Psi_a)", res, 1e-7)
    eig_res = 0.0
    for a3 in vc["a3"]:
        a = [0, 0, a3]
        M = operators.assemble_matrix(a, ga)
        p = grid.eval_on_grid(solutions.eigenfunction_p(a), ga)
        q = grid.eval_on_grid(solutions.eigenfunction_q(a, 3), ga)
        eig_res = max(eig_res, grid.norm_H(M.apply(p) - p), grid.norm_H(M.apply(q)))
    add("L_a p_a = p_a and L_a q_a3 = 0", eig_res, 1e-6)
    s = grid.random_smooth_state(ga, rng) * 0.1
    a = [0, 0, 0.2]
    psi = operators.psi_a_state(a, ga)
    three = operators.apply_N(psi + s) - operators.apply_N(psi) - operators.apply_L_prime(a, s)
    direct = operators.apply_N_a(a, s)
    add("N_a three-term identity", np.abs(three.u2 - direct.u2).max(), 1e-12)
    return rows


def wave_residual(a, t, x, h=1e-3) -> float:
    """Fourth-order finite-difference value of box v_a + v_a^3 at (t, x)."""
    c = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12 * h * h)
    off = np.arange(-2, 3) * h
    vt = sum(ci * solutions.v_a(a, t + o, x) for ci, o in zip(c, off))
    lap = 0.0
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        lap += sum(ci * solutions.v_a(a, t, x + o * e) for ci, o in zip(c, off))
    v = solutions.v_a(a, t, x)
    return float(-vt + lap + v**3)


def _static_residual(g, a3):
    psi = operators.psi_a_state([0, 0, a3], g)
    return operators.apply_L_free(psi) + operators.apply_N(psi)


def cmd_verify(cfg: dict, args) -> int:
    rows = verify_checks(cfg)
    _emit(rows, args.json, {"config": resolved(cfg)})
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


# ---------------------------------------------------------------- spectrum

def _spectrum_task(args):
    body, a3 = args
    g, gf = _grid_for(body), _grid_for(body, fine=True)
    rep = spectral.compute_spectrum([0, 0, a3], g, gf, body["tol_conv"])
    gap = spectral.spectral_gap_check(rep, body["epsilon_tilde"], body["tol_eig"])
    return a3, rep.to_json(), gap.to_json()


def cmd_spectrum(cfg: dict, args) -> int:
    body = cfg["spectrum"]
    out = Path(cfg["out"])
    tasks = [(body, float(a3)) for a3 in body["a3"]]
    try:
        if args.jobs > 1 and len(tasks) > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_spectrum_task, tasks))
        else:
            results = [_spectrum_task(t) for t in tasks]
    except EigenFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rows = []
    for a3, rep, gap in results:
        _write_json(out / f"spectrum_{body['sector']}_a3_{a3:+.4f}.json",
                    {**rep, "gap_check": gap, "config": resolved(cfg)})
        conv = [complex(e["re"], e["im"]) for e in rep["eigenvalues"] if e["converged"]]
        rows.append({"name": f"gap check a3={a3:+.3f}", "value": float(len(gap["violators"])),
                     "tol": 1.0, "pass": gap["pass"], "converged": [[z.real, z.imag] for z in conv[:8]]})
    if args.json:
        print(json.dumps({"results": rows, "config": resolved(cfg)}, indent=2))
    else:
        for r in rows:
            lead = ", ".join(f"{re:.6f}{im:+.2e}j" for re, im in r["converged"][:4])
            print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']}  leading converged: {lead}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL


# ---------------------------------------------------------------- evolve

def build_initial(body: dict, seed: int) -> grid.FieldState:
    g = _grid_for(body)
    a3 = body["a3"]
    if body["background"] == "family":
        s = evolution.psi_a(g, a3)
    else:
        s = grid.FieldState.zeros(g)
    if body["p_coef"]:
        s = s + body["p_coef"] * threshold.p_state(g, a3)
    if body["random_amp"]:
        w = grid.random_smooth_state(g, np.random.default_rng(seed))
        s = s + w * (body["random_amp"] / w.norm())
    return s


def _evolve_cfg(body: dict) -> evolution.EvolveConfig:
    return evolution.EvolveConfig(
        tau_max=body["tau_max"], dtau=body["dtau"], store_stride=body["store_stride"],
        record_stride=body["record_stride"], blowup_sup=body["blowup_sup"],
        disperse_norm=_opt(body["disperse_norm"]), track_modulation=body["track_modulation"],
        a_ref=body["a3"])


def cmd_evolve(cfg: dict, args) -> int:
    body = cfg["evolve"]
    init = build_initial(body, cfg["seed"])
    trace = evolution.evolve(init, _evolve_cfg(body))
    trace.config = {**trace.config, "run": resolved(cfg)}
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    trace.save(out / f"trace_{body['label']}")
    summary = {"outcome": trace.outcome.value, "fired_at": trace.fired_at,
               "tau_reached": trace.tau_reached, "max_h_norm": float(trace.h_norms.max()),
               "final_h_norm": float(trace.h_norms[-1]), "config": resolved(cfg)}
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(f"outcome {trace.outcome.value} at tau = {trace.tau_reached:.4f}; "
              f"final ||Phi|| = {trace.h_norms[-1]:.3e}")
    if args.strict and trace.outcome is evolution.Outcome.FAILURE:
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- threshold

def threshold_config(body: dict) -> threshold.ThresholdConfig:
    ev = evolution.EvolveConfig(tau_max=body["tau_max"], dtau=body["dtau"], a_ref=body["a3"],
                                track_modulation=body["sector"] == "Axisym")
    return threshold.ThresholdConfig(evolve=ev, a3=body["a3"], tol_s=body["tol_s"],
                                     max_iter=body["max_iter"], final_tau_max=body["final_tau_max"])


def perturbations(body: dict, seed: int) -> list:
    g = _grid_for(body)
    rng = np.random.default_rng(seed)
    vs = [grid.FieldState.zeros(g)] if body["include_zero"] else []
    for _ in range(body["count"]):
        vs.append(threshold.perp_state(grid.random_smooth_state(g, rng), body["perp_norm"], body["a3"]))
    return vs


def cmd_threshold(cfg: dict, args) -> int:
    body = cfg["threshold"]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    tcfg = threshold_config(body)
    vs = perturbations(body, cfg["seed"])
    s_lo, s_hi = _opt(body["s_lo"]), _opt(body["s_hi"])
    rows, records = [], []
    state_file = out / "threshold_state.json"
    done = json.loads(state_file.read_text()) if state_file.exists() else {}
    failed = False
    for i, v in enumerate(vs):
        key = threshold.state_key(v, tcfg)
        if key in done:
            rec = done[key]
        else:
            try:
                res = threshold.bisect_threshold(v, s_lo, s_hi, tcfg)
                rec = {"key": key, "index": i, **res.to_json(), "config": resolved(cfg)}
                res.star_trace.config = {**res.star_trace.config, "run": resolved(cfg), "kind": "threshold"}
                res.star_trace.save(out / f"threshold_{key}")
            except LabError as exc:
                rec = {"key": key, "index": i, "error": f"{type(exc).__name__}: {exc}", "config": resolved(cfg)}
            done[key] = rec
            state_file.write_text(json.dumps(done))
        records.append(rec)
        failed |= "error" in rec
    with open(out / "threshold.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    ok = [(v, r["s_star"]) for v, r in zip(vs, records) if "error" not in r]
    quot = [abs(si - sj) / (vi - vj).norm() for k, (vi, si) in enumerate(ok)
            for (vj, sj) in ok[k + 1:] if (vi - vj).norm() > 0]
    summary = {"count": len(records), "errors": sum("error" in r for r in records),
               "lipschitz_max": max(quot) if quot else None, "config": resolved(cfg)}
    _write_json(out / "threshold_summary.json", summary)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["index", "key", "s_star", "bracket_width", "tau_reached_at_star", "error"])
    for r in records:
        w.writerow([r["index"], r["key"], r.get("s_star", ""), r.get("bracket_width", ""),
                    r.get("tau_reached_at_star", ""), r.get("error", "")])
    (out / "threshold_summary.csv").write_text(buf.getvalue())
    if args.json:
        print(json.dumps({"records": records, "summary": summary}, indent=2))
    else:
        for r in records:
            if "error" in r:
                print(f"v[{r['index']}]: {r['error']}")
            else:
                print(f"v[{r['index']}]: s* = {r['s_star']:+.12e}  width = {r['bracket_width']:.1e}  "
                      f"tau at s* = {r['tau_reached_at_star']:.2f}")
        print(f"max Lipschitz quotient: {summary['lipschitz_max']}")
    return EXIT_FAIL if failed else EXIT_OK


# ---------------------------------------------------------------- report

def report_rows(cfg: dict, indir: Path) -> list:
    body = cfg["report"]
    rows = []
    stems = sorted({p.with_suffix("") for p in indir.glob("*.npz")})
    if not stems:
        raise FileNotFoundError(f"no stored traces (*.npz) in {indir}")
    lo, hi = body["tau_window"]
    for stem in stems:
        tr = evolution.EvolutionTrace.load(stem)
        run = tr.config.get("run", {})
        kind = tr.config.get("kind") or ("small" if run.get("evolve", {}).get("background") == "zero" else "family")
        name = stem.name
        if kind == "small":
            ts = np.geomspace(body["t_min"], body["t_max"], body["n_t"])
            vals = [diagnostics.strichartz_norm(tr, t, body["delta"], body["p"], subtract=None) for t in ts]
            fit = diagnostics.fit_decay(ts, vals, log_time=True)
            rows.append({"name": f"{name}: Strichartz t-exponent", "value": -fit.rate,
                         "band": [-0.60, -0.42], "pass": -0.60 <= -fit.rate <= -0.42, "r2": fit.r2})
        elif tr.outcome is evolution.Outcome.RAN and tr.tau_reached >= hi:
            fit = diagnostics.fit_decay(tr.times, tr.h_norms, (lo, hi))
            rows.append({"name": f"{name}: ||Phi|| tau-rate", "value": fit.rate, "band": [0.35, None],
                         "pass": fit.rate >= 0.35, "r2": fit.r2})
            Ts = -np.exp(-np.linspace(lo, hi, 15))
            a3 = float(tr.mod_a[-1]) if tr.mod_a.size else 0.0
            vals = [np.sqrt(-T) * diagnostics.sigma_T_norms(tr, T, subtract=a3).total() for T in Ts]
            fitT = diagnostics.fit_decay(-Ts, vals, log_time=True)
            rows.append({"name": f"{name}: |T|-exponent", "value": -fitT.rate, "band": [0.30, 0.55],
                         "pass": 0.30 <= -fitT.rate <= 0.55, "r2": fitT.r2})
    return rows


def cmd_report(cfg: dict, args) -> int:
    indir = Path(_opt(cfg["report"]["input"], cfg["out"]))
    if not indir.is_dir():
        print(f"error: input directory {indir} does not exist", file=sys.stderr)
        return EXIT_USAGE
    try:
        rows = report_rows(cfg, indir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = {"rows": rows, "config": resolved(cfg)}
    _write_json(Path(cfg["out"]) / "report.json", report)
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        for r in rows:
            lo, hi = r["band"]
            band = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
            print(f"{'PASS' if r['pass'] else 'FAIL'}  {r['name']} = {r['value']:.4f}  band {band}  r2={r['r2']:.4f}")
    if args.strict and not all(r["pass"] for r in rows):
        return EXIT_FAIL
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "spectrum": cmd_spectrum, "evolve": cmd_evolve,
            "threshold": cmd_threshold, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--strict", action="store_true", help="treat soft failures as errors")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for batch commands")
    common.add_argument("--seed", type=int, help="seed for random perturbations")
    common.add_argument("--out", help="output directory")
    parser = argparse.ArgumentParser(prog="selfsim-wave", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UnsupportedRapidity) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
