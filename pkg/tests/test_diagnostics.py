import numpy as np
import pytest
from numpy.polynomial import legendre

from selfsim_wave.coords import Frame, SpacetimePoint, kelvin
from selfsim_wave.diagnostics import (fit_decay, sigma_T_norms, strichartz_norm, v0_strichartz_closed_form)
from selfsim_wave.errors import NonPositiveValues, NoStoredState, UnsupportedExponent
from selfsim_wave.evolution import EvolveConfig, evolve, psi_a
from selfsim_wave.grid import FieldState, build_axisym_grid, build_radial_grid
from selfsim_wave.solutions import nabla_n, psi_pair_a, v_a


@pytest.fixture(scope="module")
def ax():
    return build_axisym_grid(48, 32)


def test_fit_decay_exact():
    t = np.linspace(0, 10, 101)
    f = fit_decay(t, 3 * np.exp(-0.5 * t))
    assert f.rate == pytest.approx(0.5, abs=1e-10) and f.r2 == pytest.approx(1.0)
    f = fit_decay(t, np.full_like(t, 2.0))
    assert f.rate == pytest.approx(0.0, abs=1e-10)


def test_fit_decay_noisy(rng):
    t = np.linspace(1, 8, 200)
    y = np.exp(-0.45 * t) * (1 + 0.01 * rng.standard_normal(t.size))
    f = fit_decay(t, y, window=(1, 8))
    assert f.rate == pytest.approx(0.45, abs=0.01)
    assert 0 <= f.r2 <= 1 and f.window == (1, 8)


def test_fit_decay_log_time():
    t = np.geomspace(4, 64, 20)
    assert fit_decay(t, t**-0.5, log_time=True).rate == pytest.approx(0.5, abs=1e-12)


def test_fit_decay_rejects_nonpositive():
    with pytest.raises(NonPositiveValues):
        fit_decay([0, 1, 2], [1.0, 0.0, 1.0])


def test_sigma_norms_v0_scaling(ax):
    for T in (-1.0, -0.25, -1 / 64):
        n = sigma_T_norms(psi_pair_a(0), T, subtract=None, grid=ax)
        vol = 4 * np.pi / 3 * abs(T) ** 3
        assert n.l2 == pytest.approx(np.sqrt(2 * vol / T**2), rel=1e-10)
        assert n.h1dot == pytest.approx(0.0, abs=1e-10)
        assert n.nabla_n_l2 == pytest.approx(np.sqrt(2 * vol / T**4), rel=1e-10)


def test_sigma_norms_zero_perturbation(ax):
    n = sigma_T_norms(psi_a(ax, 0.2), -0.5, subtract=0.2)
    assert n.l2 == n.h1dot == n.nabla_n_l2 == 0.0


def test_sigma_norms_family_growth(ax):
    Ts = -np.geomspace(1, 1 / 64, 13)
    for a3 in (0.0, 0.2):
        tot = [sigma_T_norms(psi_pair_a([0, 0, a3]), T, subtract=None, grid=ax).total() for T in Ts]
        fit = fit_decay(np.abs(Ts), tot, log_time=True)
        assert fit.rate == pytest.approx(0.5, abs=0.02)
        c = np.array(tot) * np.sqrt(np.abs(Ts))
        assert c.max() / c.min() < 1 + 1e-10


def _cartesian_sigma(a, T, n_rho=40, n_mu=24, h=1e-6):
    """Definition-level norms by quadrature over X in B_|T| with v evaluated through kelvin."""
    x, w = legendre.leggauss(n_rho)
    rho = 0.5 * abs(T) * (x + 1)
    wr = 0.5 * abs(T) * w * rho**2
    mu, wm = legendre.leggauss(n_mu)

    def u(X):
        p = SpacetimePoint(Frame.HYPERBOLOIDAL, T, X)
        c = kelvin(p)
        return v_a(a, c.c0, c.vec) / p.interval()

    def nn(X):
        p = SpacetimePoint(Frame.HYPERBOLOIDAL, T, X)
        c = kelvin(p)
        return nabla_n(a, c.c0, c.vec) / p.interval()

    l2 = grad2 = n2 = 0.0
    for r, wri in zip(rho, wr):
        for m, wmi in zip(mu, wm):
            X = np.array([r * np.sqrt(1 - m * m), 0.0, r * m])
            wt = 2 * np.pi * wri * wmi
            l2 += wt * u(X) ** 2
            g = [(u(X + h * e) - u(X - h * e)) / (2 * h) for e in np.eye(3)]
            grad2 += wt * float(np.dot(g, g))
            n2 += wt * nn(X) ** 2
    l2, h1dot, n2 = np.sqrt(l2), np.sqrt(grad2), np.sqrt(n2)
    return l2, h1dot, np.sqrt(h1dot**2 + l2**2 / T**2), n2


@pytest.mark.parametrize("a3, T", [(0.2, -0.5), (0.3, -0.1)])
def test_sigma_norms_frame_consistency(ax, a3, T):
    a = [0, 0, a3]
    n = sigma_T_norms(psi_pair_a(a), T, subtract=None, grid=ax)
    ref = _cartesian_sigma(a, T)
    np.testing.assert_allclose([n.l2, n.h1dot, n.h1, n.nabla_n_l2], ref, rtol=1e-6)


def _cartesian_strichartz(a, t, delta, p, n_s=32, n_rho=32, n_mu=16):
    xs, ws = legendre.leggauss(n_s)
    s = t * (1.5 + 0.5 * xs)
    ws = 0.5 * t * ws
    x, w = legendre.leggauss(n_rho)
    mu, wm = legendre.leggauss(n_mu)
    total = 0.0
    for si, wsi in zip(s, ws):
        R = (1 - delta) * si
        rho = 0.5 * R * (x + 1)
        wr = 0.5 * R * w * rho**2
        for r, wri in zip(rho, wr):
            X = np.column_stack([r * np.sqrt(1 - mu**2), np.zeros_like(mu), r * mu])
            vals = np.array([v_a(a, si, Xi) for Xi in X])
            total += wsi * 2 * np.pi * wri * np.sum(wm * np.abs(vals) ** p)
    return total


def test_strichartz_v0_matches_cartesian():
    for delta in (0.5, 0.1):
        val = strichartz_norm(psi_pair_a(0), 3.0, delta, 4, subtract=None, power=True)
        cart = _cartesian_strichartz([0, 0, 0], 3.0, delta, 4)
        assert val == pytest.approx(cart, rel=1e-8)
        # (t, 2t) integral of 4/s^4 times the ball volume (1-delta)^3 s^3 4 pi/3
        assert val == pytest.approx(v0_strichartz_closed_form(delta), rel=1e-12)


@pytest.mark.parametrize("p", [4.0, 3.0, 6.0])
def test_strichartz_boosted_matches_cartesian(p):
    a = [0, 0, 0.3]
    val = strichartz_norm(psi_pair_a(a), 2.0, 0.3, p, subtract=None, power=True)
    assert val == pytest.approx(_cartesian_strichartz(a, 2.0, 0.3, p), rel=1e-8)


def test_strichartz_zero_field():
    g = build_radial_grid(16)
    assert strichartz_norm(FieldState.zeros(g), 4.0, 0.5, subtract=None) == 0.0
    assert strichartz_norm(psi_a(g, 0), 4.0, 0.5, subtract=0.0) == 0.0


@pytest.mark.parametrize("p", [2.0, 8 / 3, 6.5])
def test_strichartz_exponent_range(p):
    with pytest.raises(UnsupportedExponent):
        strichartz_norm(psi_pair_a(0), 1.0, 0.5, p)


def test_strichartz_trace_source_static():
    g = build_radial_grid(16)
    tr = evolve(psi_a(g, 0), EvolveConfig(tau_max=2.5, store_stride=50))
    with pytest.raises(NoStoredState):
        strichartz_norm(tr, 0.5, 0.5)
    # static trace: pulled-back values equal the closed form
    val = strichartz_norm(tr, 2.0, 0.5, subtract=None, power=True, n_rho=16)
    assert val == pytest.approx(v0_strichartz_closed_form(0.5), rel=1e-10)


def test_sigma_norms_trace_source():
    g = build_radial_grid(16)
    tr = evolve(psi_a(g, 0), EvolveConfig(tau_max=2, store_stride=100))
    n = sigma_T_norms(tr, -np.exp(-1.0))
    assert n.total() < 1e-8
    with pytest.raises(NoStoredState):
        sigma_T_norms(tr, -np.exp(-3.0))
