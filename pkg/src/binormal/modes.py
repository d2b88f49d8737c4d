"""Fourier modes of the linearized equation around the constant a.

For w = Re w + i Im w with X = FT(Re w)(xi), Y = FT(Im w)(xi),

    X' = xi^2 Y,     Y' = (-xi^2 + a^2/t) X.

The field v = J(t) w = (x + 2it d_x) w obeys the same system forced by
-2 i a^2 conj(w)_x.  Arrays of frequencies are integrated together in one
call; the adaptive step is then set by the fastest mode, so callers group
comparable frequencies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicSpline

from .grid import GridSpec
from .rates import FitRefused, fit_decay_rate

RTOL = 1e-11
ATOL = 1e-14
REGIMES = ("low", "middle", "high")


class ModeIntegrationError(RuntimeError):
    pass


@dataclass
class ModeState:
    xi: float
    t: float
    X: complex
    Y: complex

    @property
    def w_plus(self) -> complex:
        """w_hat at +xi."""
        return self.X + 1j * self.Y

    @property
    def w_minus(self) -> complex:
        # Re w and Im w are real functions, so their transforms at -xi are conjugates
        return np.conj(self.X) + 1j * np.conj(self.Y)


@dataclass
class ModeTrajectory:
    xi: np.ndarray
    t: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    def state(self, k: int, j: int = -1) -> ModeState:
        return ModeState(float(self.xi[k]), float(self.t[j]), complex(self.X[k, j]), complex(self.Y[k, j]))

    def w_hat(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X + 1j * self.Y, np.conj(self.X) + 1j * np.conj(self.Y)


def _solve(rhs, t0, t1, y0, t_eval, rtol, atol):
    sol = solve_ivp(rhs, (t0, t1), y0, method="DOP853", t_eval=t_eval, rtol=rtol, atol=atol)
    if not sol.success:
        raise ModeIntegrationError(sol.message)
    return sol


def integrate_linear_mode(a: float, xi, t0: float, t1: float, X0, Y0, t_eval=None,
                          rtol: float = RTOL, atol: float = ATOL) -> ModeTrajectory:
    if not 1 <= t0 < t1:
        raise ValueError("need 1 <= t0 < t1")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    m = xi.size
    X0 = np.broadcast_to(np.asarray(X0, dtype=complex), (m,))
    Y0 = np.broadcast_to(np.asarray(Y0, dtype=complex), (m,))
    k2 = xi ** 2
    a2 = a * a

    def rhs(t, y):
        X, Y = y[:m], y[m:]
        return np.concatenate([k2 * Y, (a2 / t - k2) * X])

    if t_eval is None:
        t_eval = np.array([t0, t1])
    sol = _solve(rhs, t0, t1, np.concatenate([X0, Y0]), t_eval, rtol, atol)
    return ModeTrajectory(xi, sol.t, sol.y[:m], sol.y[m:])


def integrate_second_order(a: float, xi: float, t0: float, t1: float, X0: complex, Y0: complex,
                           t_eval, rtol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """X from X'' = xi^2 (-xi^2 + a^2/t) X with X'(t0) = xi^2 Y0."""
    k2 = xi * xi

    def rhs(t, y):
        return np.array([y[1], k2 * (a * a / t - k2) * y[0]])

    sol = _solve(rhs, t0, t1, np.array([X0, k2 * Y0], dtype=complex), t_eval, rtol, atol)
    return sol.y[0]


def second_order_residual(a: float, xi: float, t0: float, t1: float, X0=1.0, Y0=0.0, n: int = 200) -> float:
    """Sup distance between X from the first- and second-order forms, relative to sup |X|."""
    te = np.linspace(t0, t1, n)
    first = integrate_linear_mode(a, xi, t0, t1, X0, Y0, te).X[0]
    second = integrate_second_order(a, xi, t0, t1, X0, Y0, te)
    return float(np.max(np.abs(first - second)) / max(np.max(np.abs(first)), 1e-300))


def gronwall_violation(traj: ModeTrajectory, a: float, k: int = 0, factor: float = 2.0) -> float:
    """Largest excess of |X|^2+|Y|^2 over the envelope (t/s)^(factor a^2) between samples."""
    n2 = np.abs(traj.X[k]) ** 2 + np.abs(traj.Y[k]) ** 2
    t = traj.t
    growth = (t[1:] / t[:-1]) ** (factor * a * a)
    return float(np.max((n2[1:] - n2[:-1] * growth) / np.maximum(n2[:-1] * growth, 1e-300)))


# growth study

def default_xi_grid(per_decade: int = 64, lo: float = 1e-3, hi: float = 10.0) -> np.ndarray:
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.geomspace(lo, hi, n)


def regime_of(xi, t0: float, a: float, eps: float | None = None) -> np.ndarray:
    eps = min(1.0, a * a) / 4 if eps is None else eps
    s = np.asarray(xi) ** 2 * t0
    return np.where(s <= eps, "low", np.where(s <= 2 * a * a, "middle", "high"))


# initial (X, Y) pairs; the bound is linear so a few directions suffice
_BASIS = ((1.0, 0.0), (0.0, 1.0), (1.0, 1j), (1.0, -1j))


@dataclass
class RegimeReport:
    regime: str
    n_modes: int
    sup_ratio: float
    sup_ratio_doubled: float
    relative_change: float
    stable: bool
    exponent: float | None


@dataclass
class GrowthReport:
    a: float
    delta: float
    t0: float
    t1: float
    eps: float
    regimes: list
    passed: bool

    def to_dict(self) -> dict:
        return {"a": self.a, "delta": self.delta, "t0": self.t0, "t1": self.t1, "eps": self.eps,
                "passed": self.passed, "regimes": [r.__dict__ for r in self.regimes]}


def _envelope_exponent(t, amp, t_from):
    sel = t >= t_from
    if sel.sum() < 16:
        return None
    # running maxima over equal log windows remove the oscillation
    edges = np.geomspace(t[sel][0], t[sel][-1], 17)
    tc, mx = [], []
    for lo, hi in zip(edges, edges[1:]):
        w = sel & (t >= lo) & (t <= hi)
        if w.any():
            tc.append(math.sqrt(lo * hi))
            mx.append(amp[w].max())
    try:
        return fit_decay_rate(tc, mx, min_decades=0.3).exponent
    except FitRefused:
        return None


def mode_growth_fit(a: float, delta: float, xi=None, t0: float = 1.0, t1: float = 100.0,
                    eps: float | None = None, n_samples: int = 400, stable_tol: float = 0.2,
                    group: int = 16, rtol: float = 1e-9) -> GrowthReport:
    """Envelope ratios |w_hat(t)| / ((t/t0)^delta (|w_hat(t0, xi)| + |w_hat(t0, -xi)|)).

    Each mode is integrated to 2 t1 once; the sup over [t0, t1] and over
    [t0, 2 t1] are compared, which is the same as doubling the end time.
    Modes are bucketed by the regime of xi^2 t0.
    """
    if not 0 < delta <= 0.25:
        raise ValueError("delta must lie in (0, 1/4]")
    xi = default_xi_grid() if xi is None else np.sort(np.atleast_1d(np.asarray(xi, dtype=float)))
    eps = min(1.0, a * a) / 4 if eps is None else eps
    te = np.unique(np.concatenate([np.geomspace(t0, 2 * t1, n_samples), [t1]]))
    in_first = te <= t1 * (1 + 1e-12)
    env = (te / t0) ** delta
    sup1 = np.zeros(xi.size)
    sup2 = np.zeros(xi.size)
    expo = np.full(xi.size, np.nan)
    for start in range(0, xi.size, group):
        chunk = slice(start, start + group)
        ks = range(start, min(start + group, xi.size))
        m = len(ks)
        # real coefficients: two real fundamental solutions give every initial pair
        tr = integrate_linear_mode(a, np.tile(xi[chunk], 2), t0, 2 * t1,
                                   np.r_[np.ones(m), np.zeros(m)].astype(complex),
                                   np.r_[np.zeros(m), np.ones(m)].astype(complex), te, rtol=rtol)
        X1, Y1, X2, Y2 = tr.X[:m], tr.Y[:m], tr.X[m:], tr.Y[m:]
        for X0, Y0 in _BASIS:
            X = X0 * X1 + Y0 * X2
            Y = X0 * Y1 + Y0 * Y2
            wp, wm = X + 1j * Y, np.conj(X) + 1j * np.conj(Y)
            denom = abs(X0 + 1j * Y0) + abs(np.conj(X0) + 1j * np.conj(Y0))
            amp = np.maximum(np.abs(wp), np.abs(wm))
            ratio = amp / (env * denom)
            sup1[chunk] = np.maximum(sup1[chunk], ratio[:, in_first].max(axis=1))
            sup2[chunk] = np.maximum(sup2[chunk], ratio.max(axis=1))
            if (X0, Y0) == _BASIS[0]:
                for i, k in enumerate(ks):
                    if xi[k] ** 2 * t0 > 2 * a * a:
                        e = _envelope_exponent(te, amp[i], t0)
                        expo[k] = np.nan if e is None else e
    tags = regime_of(xi, t0, a, eps)
    reports = []
    for name in REGIMES:
        sel = tags == name
        if not sel.any():
            continue
        s1, s2 = float(sup1[sel].max()), float(sup2[sel].max())
        change = abs(s2 - s1) / s1
        ok = bool(np.isfinite(s1) and np.isfinite(s2) and change < stable_tol)
        e = expo[sel]
        e = e[np.isfinite(e)]
        worst = float(e[np.argmax(np.abs(e))]) if e.size else None
        reports.append(RegimeReport(name, int(sel.sum()), s1, s2, change, ok, worst))
    return GrowthReport(a, delta, t0, t1, eps, reports, all(r.stable for r in reports))


# forced J-equation

def j_forced_mode(a: float, xi, t0: float, t1: float, v0: tuple, w, t_eval=None,
                  rtol: float = RTOL, atol: float = ATOL) -> ModeTrajectory:
    """Modes (P, Q) = (FT Re v, FT Im v) of v = J w under the forced system

        P' = xi^2 Q - 2 i a^2 xi X_w,    Q' = (-xi^2 + a^2/t) P + 2 i a^2 xi Y_w.

    ``w`` is either a ModeState-like pair (X_w, Y_w) at t0, integrated along,
    or a ModeTrajectory sampled on [t0, t1] and interpolated.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    m = xi.size
    k2 = xi ** 2
    a2 = a * a
    P0 = np.broadcast_to(np.asarray(v0[0], dtype=complex), (m,))
    Q0 = np.broadcast_to(np.asarray(v0[1], dtype=complex), (m,))
    if t_eval is None:
        t_eval = np.array([t0, t1])
    if isinstance(w, ModeTrajectory):
        tw = w.t
        if tw[0] > t0 * (1 + 1e-12) or tw[-1] < t1 * (1 - 1e-12):
            raise ValueError("w samples do not cover [t0, t1]")
        gaps = np.diff(tw)
        if gaps.max() > 2 * np.median(gaps) * (1 + 1e-9):
            raise ValueError("w samples have a gap wider than two nodes")
        sx = CubicSpline(tw, w.X, axis=1)
        sy = CubicSpline(tw, w.Y, axis=1)

        def rhs(t, y):
            P, Q = y[:m], y[m:]
            return np.concatenate([k2 * Q - 2j * a2 * xi * sx(t), (a2 / t - k2) * P + 2j * a2 * xi * sy(t)])

        sol = _solve(rhs, t0, t1, np.concatenate([P0, Q0]), t_eval, rtol, atol)
        return ModeTrajectory(xi, sol.t, sol.y[:m], sol.y[m:])
    Xw0 = np.broadcast_to(np.asarray(w[0], dtype=complex), (m,))
    Yw0 = np.broadcast_to(np.asarray(w[1], dtype=complex), (m,))

    def rhs(t, y):
        P, Q, X, Y = y[:m], y[m:2 * m], y[2 * m:3 * m], y[3 * m:]
        c = a2 / t - k2
        return np.concatenate([k2 * Q - 2j * a2 * xi * X, c * P + 2j * a2 * xi * Y, k2 * Y, c * X])

    sol = _solve(rhs, t0, t1, np.concatenate([P0, Q0, Xw0, Yw0]), t_eval, rtol, atol)
    return ModeTrajectory(xi, sol.t, sol.y[:m], sol.y[m:2 * m])


def _split(grid: GridSpec, f: np.ndarray):
    """(FT Re f, FT Im f) in FFT order from complex samples."""
    return np.fft.fft(f.real), np.fft.fft(f.imag)


def _assemble(X, Y) -> np.ndarray:
    return np.fft.ifft(X) + 1j * np.fft.ifft(Y)


def evolve_linear_field(grid: GridSpec, w0: np.ndarray, a: float, t0: float, t1: float) -> np.ndarray:
    """Solve the linearized equation on the grid mode by mode."""
    X0, Y0 = _split(grid, np.asarray(w0, dtype=complex))
    tr = integrate_linear_mode(a, grid.xi, t0, t1, X0, Y0)
    return _assemble(tr.X[:, -1], tr.Y[:, -1])


def j_field_by_modes(grid: GridSpec, w0: np.ndarray, a: float, t0: float, t1: float) -> np.ndarray:
    """J(t1) w(t1) assembled from the forced mode system started at J(t0) w(t0)."""
    w0 = np.asarray(w0, dtype=complex)
    wx = np.fft.ifft(1j * grid.xi * np.fft.fft(w0))
    v0 = grid.x * w0 + 2j * t0 * wx
    P0, Q0 = _split(grid, v0)
    X0, Y0 = _split(grid, w0)
    tr = j_forced_mode(a, grid.xi, t0, t1, (P0, Q0), (X0, Y0))
    return _assemble(tr.X[:, -1], tr.Y[:, -1])


# diagonalization in the rescaled time s = xi^2 t

@dataclass
class DiagonalizedState:
    t: float
    alpha: float
    A2: complex
    B2: complex
    Phi_t: float


def _phase_antiderivative(s: float, a: float) -> float:
    if a == 0:
        return s
    r = math.sqrt(s * (s - a * a))
    return r - a * a * math.log(math.sqrt(s) + math.sqrt(s - a * a))


def phase(s: float, a: float) -> float:
    """Phi(s) = integral of sqrt(1 - a^2/r) from 2a^2 to s."""
    if s < a * a:
        raise ValueError("alpha is not real below a^2")
    return _phase_antiderivative(s, a) - _phase_antiderivative(2 * a * a, a)


def phase_by_quadrature(s: float, a: float) -> float:
    val, _ = quad(lambda r: math.sqrt(1 - a * a / r), 2 * a * a, s, limit=400, epsabs=1e-13, epsrel=1e-13)
    return val


def diagonalized_variables(state: ModeState, a: float) -> DiagonalizedState:
    s = state.xi ** 2 * state.t
    if s < 2 * a * a:
        raise ValueError("diagonalization needs xi^2 t >= 2 a^2")
    alpha = math.sqrt(1 - a * a / s)
    phi = phase(s, a)
    A, B = state.X, state.Y
    A2 = np.exp(-1j * phi) * (0.5 * A - 0.5j / alpha * B)
    B2 = np.exp(1j * phi) * (0.5 * A + 0.5j / alpha * B)
    return DiagonalizedState(s, alpha, complex(A2), complex(B2), phi)
