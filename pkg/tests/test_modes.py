import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from binormal.grid import GridSpec
from binormal.modes import (
    ModeState, ModeTrajectory, default_xi_grid, diagonalized_variables, evolve_linear_field,
    gronwall_violation, integrate_linear_mode, j_field_by_modes, j_forced_mode,
    mode_growth_fit, phase, phase_by_quadrature, regime_of, second_order_residual,
)


def _rk4_reference(a, xi, t0, t1, dt, y0, chunk=1_000_000):
    """Fixed-step RK4 for (X, Y), composing the step matrices in vectorized chunks."""
    n = int(round((t1 - t0) / dt))
    k2 = xi * xi

    def A(t):
        m = np.zeros(t.shape + (2, 2))
        m[..., 0, 1] = k2
        m[..., 1, 0] = a * a / t - k2
        return m

    eye = np.eye(2)
    y = np.asarray(y0, dtype=complex)
    for start in range(0, n, chunk):
        t = t0 + dt * np.arange(start, min(start + chunk, n))
        a1, am, a2 = A(t), A(t + dt / 2), A(t + dt)
        k1 = a1
        kk2 = am @ (eye + dt / 2 * k1)
        kk3 = am @ (eye + dt / 2 * kk2)
        kk4 = a2 @ (eye + dt * kk3)
        M = eye + dt / 6 * (k1 + 2 * kk2 + 2 * kk3 + kk4)
        while M.shape[0] > 1:
            if M.shape[0] % 2:
                M = np.concatenate([M, eye[None]])
            M = M[1::2] @ M[0::2]
        y = M[0] @ y
    return y


def test_free_modes_keep_amplitude():
    te = np.linspace(1, 100, 50)
    tr = integrate_linear_mode(0.0, [0.3, 1.0, 2.0], 1, 100, 1.0 + 0.5j, -0.2j, te)
    amp = np.abs(tr.X) ** 2 + np.abs(tr.Y) ** 2
    assert np.max(np.abs(amp / amp[:, :1] - 1)) < 1e-9
    # X'' = -xi^4 X: X = c cos(xi^2 (t - 1)) + d sin(xi^2 (t - 1))
    for k, xi in enumerate(tr.xi):
        ph = xi ** 2 * (te - 1)
        exact = (1.0 + 0.5j) * np.cos(ph) + (-0.2j) * np.sin(ph)
        assert np.max(np.abs(tr.X[k] - exact)) < 1e-8


def test_zero_frequency_log_growth():
    a = 1.3
    te = np.geomspace(2, 500, 20)
    tr = integrate_linear_mode(a, 0.0, 2, 500, 0.7, 0.1j, te)
    assert np.max(np.abs(tr.X[0] - 0.7)) < 1e-13
    assert np.max(np.abs(tr.Y[0] - (0.1j + a * a * 0.7 * np.log(te / 2)))) < 1e-9


def test_matches_fixed_step_reference():
    a, xi = 1.0, 0.1
    y0 = np.array([1.0, 0.3j])
    ref = _rk4_reference(a, xi, 1.0, 400.0, 1e-5, y0)
    tr = integrate_linear_mode(a, xi, 1, 400, y0[0], y0[1])
    got = np.array([tr.X[0, -1], tr.Y[0, -1]])
    assert np.max(np.abs(got - ref)) < 1e-8


@pytest.mark.parametrize("a, xi", [(1.0, 0.3), (0.7, 1.1)])
def test_matches_coulomb_wave_functions(a, xi):
    # in s = xi^2 t the mode solves A'' + (1 - a^2/s) A = 0, the L = 0 Coulomb equation
    eta = a * a / 2
    t0, t1 = 1.0, 30.0
    s0 = xi * xi * t0
    X0, Y0 = 0.8, -0.4
    F = lambda s: mp.coulombf(0, eta, s)
    G = lambda s: mp.coulombg(0, eta, s)
    dF = mp.diff(F, s0)
    dG = mp.diff(G, s0)
    # dA/ds = B = Y
    c1, c2 = mp.lu_solve(mp.matrix([[F(s0), G(s0)], [dF, dG]]), mp.matrix([X0, Y0]))
    te = np.linspace(t0, t1, 12)
    tr = integrate_linear_mode(a, xi, t0, t1, X0, Y0, te)
    exact = np.array([float(c1 * F(xi * xi * t) + c2 * G(xi * xi * t)) for t in te])
    assert np.max(np.abs(tr.X[0].real - exact)) < 1e-8


def test_second_order_form():
    for xi in (0.05, 0.5, 2.0):
        assert second_order_residual(1.0, xi, 1, 50) < 1e-8


def test_gronwall_envelope_never_pierced():
    te = np.geomspace(1, 200, 2000)
    for xi in (0.3, 0.8, 1.2):
        tr = integrate_linear_mode(1.0, xi, 1, 200, 1.0, 0.5, te)
        assert gronwall_violation(tr, 1.0) < 1e-9
        # the sharper constant a^2 holds as well
        assert gronwall_violation(tr, 1.0, factor=1.0) < 1e-9


def test_superposition():
    te = np.linspace(1, 40, 9)
    xs = [0.2, 0.9]
    p = integrate_linear_mode(1.0, xs, 1, 40, 1.0, 0.0, te)
    q = integrate_linear_mode(1.0, xs, 1, 40, 0.3j, 2.0, te)
    s = integrate_linear_mode(1.0, xs, 1, 40, 1.0 + 0.3j, 2.0, te)
    assert np.max(np.abs(s.X - p.X - q.X)) < 1e-12 * np.max(np.abs(s.X)) * 1e3
    assert np.max(np.abs(s.Y - p.Y - q.Y)) < 1e-12 * np.max(np.abs(s.Y)) * 1e3


def test_bad_times_rejected():
    with pytest.raises(ValueError):
        integrate_linear_mode(1.0, 0.1, 0.5, 2, 1, 0)
    with pytest.raises(ValueError):
        integrate_linear_mode(1.0, 0.1, 3, 2, 1, 0)


# growth study

def test_regimes_and_grid():
    xi = default_xi_grid()
    assert xi.size == 257
    assert abs(math.log10(xi[1] / xi[0]) - 1 / 64) < 1e-12
    tags = regime_of([0.1, 1.0, 3.0], 1.0, 1.0)
    assert list(tags) == ["low", "middle", "high"]


def test_growth_free_case_ratio_at_most_one():
    rep = mode_growth_fit(0.0, 0.1, xi=[0.05, 0.5, 3.0], t1=50, eps=0.25)
    for r in rep.regimes:
        assert r.sup_ratio_doubled <= 1 + 1e-9


def test_growth_low_frequency_plateau():
    # xi^2 t1 = a^2 at t1 = 1e4: the mode is still in its logarithmic phase there
    early = mode_growth_fit(1.0, 0.1, xi=[0.01], t1=1e4).regimes[0]
    assert early.regime == "low"
    assert early.sup_ratio_doubled > 1.2 * early.sup_ratio
    # once xi^2 t is well past a^2 the enveloped ratio stops moving
    late = mode_growth_fit(1.0, 0.1, xi=[0.01], t1=1e5).regimes[0]
    assert late.stable and late.relative_change < 0.02
    assert late.sup_ratio < 5


def test_growth_high_frequency_bounded():
    rep = mode_growth_fit(1.0, 0.1, xi=[2.0, 3.0], t1=100)
    high = rep.regimes[0]
    assert high.regime == "high" and high.stable
    assert abs(high.exponent) < 0.02


def test_growth_rejects_delta():
    with pytest.raises(ValueError):
        mode_growth_fit(1.0, 0.3)


# J-forced system

def test_forced_mode_vanishing_forcing():
    te = np.linspace(1, 30, 7)
    got = j_forced_mode(0.0, 0.7, 1, 30, (1.0, 0.2j), (1.0, 1.0), te)
    amp = np.abs(got.X) ** 2 + np.abs(got.Y) ** 2
    assert np.max(np.abs(amp / amp[:, :1] - 1)) < 1e-9


def test_forced_mode_against_duhamel_quadrature():
    a, xi, t0, t1 = 1.0, 0.6, 1.0, 12.0
    Xw0, Yw0 = 0.5, 0.25j
    # fundamental matrix on a fine grid
    tq = np.linspace(t0, t1, 4001)
    e1 = integrate_linear_mode(a, xi, t0, t1, 1.0, 0.0, tq)
    e2 = integrate_linear_mode(a, xi, t0, t1, 0.0, 1.0, tq)
    Phi = np.stack([np.stack([e1.X[0], e2.X[0]], -1), np.stack([e1.Y[0], e2.Y[0]], -1)], -2)
    w = integrate_linear_mode(a, xi, t0, t1, Xw0, Yw0, tq)
    force = np.stack([-2j * a * a * xi * w.X[0], 2j * a * a * xi * w.Y[0]], -1)
    inv = np.linalg.inv(Phi)
    integrand = np.einsum("kij,kj->ki", inv, force)
    integral = simpson(integrand, x=tq, axis=0)
    duhamel = Phi[-1] @ integral
    got = j_forced_mode(a, xi, t0, t1, (0.0, 0.0), (Xw0, Yw0))
    assert abs(got.X[0, -1] - duhamel[0]) < 1e-8
    assert abs(got.Y[0, -1] - duhamel[1]) < 1e-8
    # same result from sampled w
    wtr = integrate_linear_mode(a, xi, t0, t1, Xw0, Yw0, np.linspace(t0, t1, 2001))
    got2 = j_forced_mode(a, xi, t0, t1, (0.0, 0.0), wtr)
    assert abs(got2.X[0, -1] - duhamel[0]) < 1e-7


def test_forced_mode_refuses_gappy_samples():
    t = np.r_[np.linspace(1, 2, 11), [5.0]]
    w = ModeTrajectory(np.array([0.5]), t, np.ones((1, t.size), complex), np.zeros((1, t.size), complex))
    with pytest.raises(ValueError):
        j_forced_mode(1.0, 0.5, 1, 5, (0, 0), w)
    with pytest.raises(ValueError):
        j_forced_mode(1.0, 0.5, 1, 6, (0, 0), ModeTrajectory(w.xi, t[:11], w.X[:, :11], w.Y[:, :11]))


def test_j_modes_match_grid_formula():
    # the box must hold the spreading wave, otherwise x w wraps around
    g = GridSpec(1024, 64 * np.pi)
    x = g.x
    w0 = 0.1 * np.exp(-x ** 2 / 4) * (1 + 0.5j * x)
    t0, t1 = 1.0, 5.0
    w1 = evolve_linear_field(g, w0, 1.0, t0, t1)
    wx = np.fft.ifft(1j * g.xi * np.fft.fft(w1))
    direct = x * w1 + 2j * t1 * wx
    by_modes = j_field_by_modes(g, w0, 1.0, t0, t1)
    assert np.max(np.abs(by_modes - direct)) < 1e-8


# diagonalization

def test_phase_closed_form_matches_quadrature():
    for a in (0.5, 1.0, 2.0):
        for s in (2 * a * a, 3.0 * a * a + 1, 50.0):
            assert abs(phase(s, a) - phase_by_quadrature(s, a)) < 1e-10
    assert phase(2.0, 1.0) == 0.0


def test_alpha_at_anchor():
    d = diagonalized_variables(ModeState(1.0, 2.0, 1.0, 0.0), 1.0)
    assert abs(d.alpha - 1 / math.sqrt(2)) < 1e-15
    assert abs(d.alpha - 0.70711) < 1e-5
    with pytest.raises(ValueError):
        diagonalized_variables(ModeState(1.0, 1.5, 1.0, 0.0), 1.0)


def test_diagonal_variables_slow_at_large_time():
    a, xi = 1.0, 1.0
    te = np.linspace(400, 420, 41)
    tr = integrate_linear_mode(a, xi, 2, 420, 1.0, 0.0, te)
    d = [diagonalized_variables(tr.state(0, j), a) for j in range(te.size)]
    A2 = np.array([x.A2 for x in d])
    # the remaining drift is of size a^2 / (4 s^2) per unit s
    assert np.max(np.abs(A2 - A2[0])) < 1e-3
    assert all(1 / math.sqrt(2) <= x.alpha <= 1 for x in d)


@settings(max_examples=100, deadline=None)
@given(xr=st.floats(-5, 5), xim=st.floats(-5, 5), yr=st.floats(-5, 5), yim=st.floats(-5, 5),
       t=st.floats(2.0, 1e4))
def test_diagonal_norm_identity(xr, xim, yr, yim, t):
    A, B = complex(xr, xim), complex(yr, yim)
    d = diagonalized_variables(ModeState(1.0, t, A, B), 1.0)
    lhs = abs(d.A2) ** 2 + abs(d.B2) ** 2
    rhs = 0.5 * abs(A) ** 2 + 0.5 / d.alpha ** 2 * abs(B) ** 2
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, rhs)
