import json

import numpy as np
import pytest

from selfsim_wave.diagnostics import fit_decay
from selfsim_wave.errors import ConfigError, FitDiverged, NoStoredState, NumericalFailure, SectorUnsupported
from selfsim_wave.evolution import (EvolutionTrace, EvolveConfig, Outcome, chi, chi_dot, dtau_max, evolve,
                                    evolve_linear, modulation_rhs, psi_a, rhs_full, step_rk4, track_modulation)
from selfsim_wave.grid import FieldState, build_axisym_grid, build_radial_grid, eval_on_grid, norm_H, random_smooth_state
from selfsim_wave.operators import OperatorKind, assemble_matrix
from selfsim_wave.solutions import eigenfunction_p, eigenfunction_q
from selfsim_wave.spectral import projection_for
from selfsim_wave.threshold import remove_unstable_component


@pytest.fixture(scope="module")
def rad():
    return build_radial_grid(24)


@pytest.fixture(scope="module")
def ax():
    return build_axisym_grid(16, 12)


def p_of(g, a3=0.0):
    return eval_on_grid(eigenfunction_p([0, 0, a3]), g)


def test_chi_cutoff():
    t = np.linspace(0, 6, 601)
    c = chi(t)
    assert np.all(c[t <= 1] == 1) and np.all(c[t >= 4] == 0)
    assert np.all(np.diff(c) <= 0)
    h = 1e-6
    mid = np.linspace(0.5, 4.5, 41)
    np.testing.assert_allclose(chi_dot(mid), (chi(mid + h) - chi(mid - h)) / (2 * h), atol=1e-8)


def test_rhs_full_examples(ax):
    g48 = build_axisym_grid(48, 32)
    for a3 in (0.0, 0.2):
        assert norm_H(rhs_full(psi_a(g48, a3))) < 1e-8
    assert not rhs_full(FieldState.zeros(ax)).vec.any()
    h = 1e-4
    p = p_of(ax)
    out = rhs_full(psi_a(ax, 0) + h * p)
    assert norm_H(out - h * p) < 10 * h * h * norm_H(p)


def test_step_static(ax):
    s = psi_a(ax, 0.2)
    assert norm_H(step_rk4(s, 1e-3) - s) < 1e-10


def test_step_linear_mode_growth(rad):
    op = assemble_matrix(0, rad)
    p = p_of(rad)
    dt = 5e-3
    out = step_rk4(p, dt, linear=op)
    P = projection_for(0, rad, "P")
    assert abs(P.coefficient(out) - np.exp(dt)) < 10 * dt**5 + 1e-12


def test_step_convergence_order(rad, rng):
    s = psi_a(rad, 0) + 0.1 * random_smooth_state(rad, rng)
    dt = 0.02

    def reference(h):
        v = s
        for _ in range(64):
            v = step_rk4(v, h / 64)
        return v

    e1 = norm_H(step_rk4(s, dt) - reference(dt))
    e2 = norm_H(step_rk4(s, dt / 2) - reference(dt / 2))
    assert e1 / e2 > 16


def test_step_errors(rad):
    with pytest.raises(ConfigError):
        step_rk4(psi_a(rad, 0), 0.0)
    bad = FieldState(rad, np.full(rad.n, 1e200), np.zeros(rad.n))
    with pytest.raises(NumericalFailure):
        step_rk4(bad, 1e-3)


def test_config_validation(rad):
    for kw in ({"tau_max": 0}, {"dtau": -1}, {"blowup_sup": 0}, {"disperse_norm": -1}, {"record_stride": 0}):
        with pytest.raises(ConfigError):
            EvolveConfig(**kw).validate()
    with pytest.raises(ConfigError):
        evolve(psi_a(rad, 0), EvolveConfig(tau_max=1, dtau=1.0))


def test_evolve_static(rad, ax):
    tr = evolve(psi_a(rad, 0), EvolveConfig(tau_max=5))
    assert tr.outcome is Outcome.RAN and tr.tau_reached == pytest.approx(5)
    assert tr.h_norms.max() < 1e-8
    assert np.all(np.diff(tr.times) > 0)
    for a3 in (0.0, 0.2):
        tr = evolve(psi_a(ax, a3), EvolveConfig(tau_max=5, a_ref=a3))
        assert tr.outcome is Outcome.RAN and tr.h_norms.max() < 1e-7


@pytest.mark.parametrize("sign, outcome", [(1, Outcome.BLOWUP), (-1, Outcome.DISPERSION)])
def test_evolve_detectors(rad, sign, outcome):
    tr = evolve(psi_a(rad, 0) + sign * 0.3 * p_of(rad), EvolveConfig(tau_max=10))
    assert tr.outcome is outcome
    assert tr.fired_at is not None and tr.fired_at < 10
    assert tr.tau_reached == pytest.approx(tr.fired_at)
    if outcome is Outcome.BLOWUP:
        assert tr.sup_u1[-1] > 50 * np.sqrt(2)


def test_store_stride(rad):
    tr = evolve(psi_a(rad, 0), EvolveConfig(tau_max=0.1, dtau=1e-3, store_stride=10))
    np.testing.assert_allclose(tr.state_times, np.arange(11) * 0.01, atol=1e-15)
    assert len(tr.states) == 11
    assert tr.state_at(0.05).vec == pytest.approx(psi_a(rad, 0).vec)
    with pytest.raises(NoStoredState):
        tr.state_at(0.2)
    tr2 = evolve(psi_a(rad, 0), EvolveConfig(tau_max=0.1))
    with pytest.raises(NoStoredState):
        tr2.state_at(0.0)


def test_trace_save_load(rad, tmp_path):
    tr = evolve(psi_a(rad, 0) + 0.3 * p_of(rad), EvolveConfig(tau_max=3, store_stride=100))
    tr.save(tmp_path / "run")
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["outcome"] == "BlowupDetected" and meta["fired_at"] == tr.fired_at
    assert (tmp_path / "run.csv").read_text().splitlines()[0] == "tau,h_norm,sup_u1,a3,psi_norm"
    back = EvolutionTrace.load(tmp_path / "run")
    np.testing.assert_array_equal(back.h_norms, tr.h_norms)
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.states_at([0.5]), tr.states_at([0.5]))


def test_step_size_robustness(rad, rng):
    init = psi_a(rad, 0) + 0.05 * random_smooth_state(rad, rng)
    a = evolve(init, EvolveConfig(tau_max=2, dtau=2e-3, record_stride=1))
    b = evolve(init, EvolveConfig(tau_max=2, dtau=1e-3, record_stride=2))
    assert abs(a.h_norms[-1] - b.h_norms[-1]) < 1e-6
    assert abs(a.psi_norms[-1] - b.psi_norms[-1]) < 1e-6


def test_free_semigroup_contraction(ax, rng):
    for _ in range(10):
        init = random_smooth_state(ax, rng)
        tr = evolve_linear(init, 0, tau_max=6, dtau=5e-3, free=True)
        bound = 1.05 * np.exp(-tr.times / 2) * tr.h_norms[0]
        assert np.all(tr.h_norms <= bound)


@pytest.mark.parametrize("a3", [0.0, 0.2])
def test_linear_eigenflows(ax, a3):
    a = [0, 0, a3]
    tr = evolve_linear(p_of(ax, a3), a, tau_max=4, dtau=5e-3)
    np.testing.assert_allclose(tr.h_norms, np.exp(tr.times) * tr.h_norms[0], rtol=1e-2)
    q = eval_on_grid(eigenfunction_q(a, 3), ax)
    tr = evolve_linear(q, a, tau_max=4, dtau=5e-3)
    np.testing.assert_allclose(tr.h_norms, tr.h_norms[0], rtol=1e-2)


def test_linear_stable_subspace_decay(ax, rng):
    a = [0, 0, 0.1]
    P = projection_for(a, ax, "P")
    Q = projection_for(a, ax, "Q3")
    init = remove_unstable_component(random_smooth_state(ax, rng), P, Q)
    tr = evolve_linear(init, a, tau_max=8, dtau=5e-3)
    fit = fit_decay(tr.times, tr.h_norms, window=(2, 8))
    assert fit.rate >= 0.40


def test_evolve_linear_rejects_large_step(rad):
    with pytest.raises(ConfigError):
        evolve_linear(psi_a(rad, 0), 0, tau_max=1, dtau=1.0)


def test_dtau_max_positive(rad, ax):
    assert 0 < dtau_max(ax) < dtau_max(rad)


def test_track_modulation_examples(ax, rng):
    assert track_modulation(psi_a(ax, 0.2), 0.0) == pytest.approx(0.2, abs=1e-8)
    assert track_modulation(psi_a(ax, 0.0), 0.1) == pytest.approx(0.0, abs=1e-10)
    w = random_smooth_state(ax, rng)
    w = w / norm_H(w)
    errs = []
    for eps in (1e-2, 1e-3):
        errs.append(abs(track_modulation(psi_a(ax, 0.1) + eps * w, 0.1) - 0.1))
    # even data has no first-order component along the odd mode q_3
    assert errs[0] < 1e-3 and errs[1] < 1e-5
    with pytest.raises(SectorUnsupported):
        track_modulation(psi_a(build_radial_grid(16), 0), 0.0)
    with pytest.raises(FitDiverged):
        track_modulation(psi_a(ax, 0.2), 0.0, max_iter=1)


def test_track_modulation_spectral_gauge(ax):
    Q = projection_for([0, 0, 0.1], ax, "Q3")
    assert track_modulation(psi_a(ax, 0.1), 0.0, gauge="spectral", proj=Q) == pytest.approx(0.1, abs=1e-9)


def test_evolve_with_tracking_recovers_boost(ax):
    tr = evolve(psi_a(ax, 0.2), EvolveConfig(tau_max=1, track_modulation=True))
    np.testing.assert_allclose(tr.mod_a, 0.2, atol=1e-8)
    assert tr.h_norms.max() < 1e-7


def test_modulation_rhs_trivial(ax):
    Q = projection_for([0, 0, 0.1], ax, "Q3")
    np.testing.assert_allclose(modulation_rhs(psi_a(ax, 0.1), [0, 0, 0.1], Q, a_dot=0.0), 0, atol=1e-12)
    np.testing.assert_allclose(modulation_rhs(psi_a(ax, 0.15), 0.15, Q), 0, atol=1e-12)
