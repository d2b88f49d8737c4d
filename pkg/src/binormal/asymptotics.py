"""Asymptotics of perturbed self-similar filaments.

A solved Schrodinger trajectory v(t, y) on t in [1, 1/t_min] is turned into
filament data on physical times t' = 1/t in [t_min, 1]: psi(t', x) is the
pseudoconformal image, the frame is carried in t' at x = 0 along the origin
trace and then in x along each slice.  On top of that sit the extraction of
T^inf, N^inf, the envelope ratios, the t -> 0 limit, the series coefficients
and the rescaled-frame comparison with the profile.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline

from .frames import (
    FrameField, ParallelFramePoint, TimeTrack, reconstruct_curve, time_leg,
    transport_frame_t, transport_frame_x,
)
from .grid import GridSpec, forward, upsample
from .nls import Trajectory, scattering_profile
from .profile import ProfileSolution, angle_between, extract_frame_limits, tail_limit
from .rates import FitRefused, RateFit, fit_decay_rate  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

ENVELOPE_QUARTER = 0.24  # "t^(1/4-)" as an exponent


@dataclass(frozen=True)
class PhaseCorrection:
    a: float

    def __call__(self, t, x):
        return -0.5 * self.a ** 2 * np.log(t) + self.a ** 2 * np.log(np.abs(x))


# filament data from a trajectory

def chirp_nodes(t: float, x_max: float, a: float, dtheta: float = 0.1, extra=()) -> np.ndarray:
    """Nodes on [0, x_max] equally spaced in the phase x^2/4t + (|psi| + 1) x.

    The local rotation rate of the frame is |psi| and the phase rate of psi is
    x/2t, so a fixed phase step keeps the Magnus step error uniform.
    """
    A = a / math.sqrt(t) + 1.0
    total = x_max ** 2 / (4 * t) + A * x_max
    k = np.arange(int(math.ceil(total / dtheta)) + 1) * (total / math.ceil(total / dtheta))
    x = 2 * t * (-A + np.sqrt(A * A + k / t))
    x[-1] = x_max
    extra = np.asarray(extra, dtype=float)
    extra = extra[(extra > 0) & (extra < x_max)]
    return np.unique(np.concatenate([x, extra]))


@dataclass
class FilamentFlow:
    """Filament data on physical times t' = 1/t built from a trajectory."""
    a: float
    grid: GridSpec
    tprime: np.ndarray
    _states: dict
    origin_t: np.ndarray
    origin_v: np.ndarray
    origin_vx: np.ndarray
    refine: int = 4
    _splines: dict = field(default_factory=dict, repr=False)
    _track: TimeTrack | None = field(default=None, repr=False)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, refine: int = 4) -> "FilamentFlow":
        if traj.origin is None:
            raise ValueError("the trajectory must record the origin trace")
        a = traj.config.a
        states = {1.0 / s.t: s for s in traj.states}
        if not any(abs(tp - 1.0) < 1e-12 for tp in states):
            raise ValueError("the trajectory must contain the state at t = 1")
        s1 = min(traj.states, key=lambda s: s.t)
        g = traj.config.grid
        mid = g.n_points // 2
        v1 = s1.v.values
        vx1 = np.fft.ifft(1j * g.xi * np.fft.fft(v1))
        ot = np.r_[s1.t, traj.origin.t]
        ov = np.r_[v1[mid], traj.origin.v]
        ovx = np.r_[vx1[mid], traj.origin.vx]
        return cls(a, g, np.array(sorted(states)), states, ot, ov, ovx, refine)

    @property
    def t_min(self) -> float:
        return float(self.tprime[0])

    def state(self, tp: float):
        for k, s in self._states.items():
            if abs(k - tp) <= 1e-12 * max(1.0, tp):
                return s
        raise KeyError(f"no snapshot at t' = {tp}")

    def x_limit(self, tp: float) -> float:
        """Largest |x| whose preimage y = x/t' stays on the grid."""
        return 0.98 * self.grid.half_length * tp

    def _vbar(self, tp: float):
        key = round(tp, 15)
        if key not in self._splines:
            if len(self._splines) >= 4:
                self._splines.pop(next(iter(self._splines)))
            y, vals = upsample(self.grid, self.state(tp).v.values, self.refine)
            self._splines[key] = CubicSpline(y, np.conj(vals))
        return self._splines[key]

    def psi(self, tp: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > self.x_limit(tp)):
            raise ValueError("x outside the range covered by the grid at this time")
        return np.exp(1j * x ** 2 / (4 * tp)) / math.sqrt(tp) * self._vbar(tp)(x / tp)

    def u_snapshot(self, tp: float) -> np.ndarray:
        return self.state(tp).u(self.a)

    # base point x = 0

    def psi_origin(self):
        """(psi(t', 0), psi_x(t', 0)) as callables of t' from the origin trace."""
        t = self.origin_t
        sv = CubicSpline(t, self.origin_v)
        svx = CubicSpline(t, self.origin_vx)

        def p(tp):
            return np.conj(sv(1.0 / np.asarray(tp))) / np.sqrt(tp)

        def px(tp):
            tp = np.asarray(tp)
            return np.conj(svx(1.0 / tp)) / tp ** 1.5

        return p, px

    def track(self) -> TimeTrack:
        """Frame at x = 0 over t' in [t_min, 1], identity at t' = 1."""
        if self._track is None:
            nodes = np.unique(np.concatenate([1.0 / self.origin_t, self.tprime]))
            p, px = self.psi_origin()
            self._track = transport_frame_t(nodes, p, px, self.a, ParallelFramePoint.identity(), t0=1.0)
        return self._track

    def seed(self, tp: float) -> ParallelFramePoint:
        tr = self.track()
        j = int(np.argmin(np.abs(tr.t - tp)))
        return tr.point(j)

    def frames(self, tp: float, x_max: float, extra=(), dtheta: float = 0.1,
               x_min: float | None = None) -> FrameField:
        """Frame on [x_min, x_max] (default symmetric) at t' with chirp-adapted nodes.

        The interval always contains the base point 0; ``extra`` points are added as nodes.
        """
        x_min = -x_max if x_min is None else x_min
        if x_min > 0 or x_max < 0:
            raise ValueError("the interval must contain x = 0")
        reach = max(x_max, -x_min)
        if reach > self.x_limit(tp):
            raise ValueError(f"|x| = {reach} exceeds the grid reach {self.x_limit(tp):.3g} at t'={tp}")
        extra = np.asarray(extra, dtype=float)
        right = chirp_nodes(tp, x_max, self.a, dtheta, extra[extra > 0]) if x_max > 0 else np.zeros(1)
        left = chirp_nodes(tp, -x_min, self.a, dtheta, -extra[extra < 0]) if x_min < 0 else np.zeros(1)
        x = np.concatenate([-left[::-1], right[1:]])
        return transport_frame_x(tp, lambda s: self.psi(tp, s), x, self.seed(tp), 0.0)

    def curve(self, tp: float, x_max: float, extra=(), dtheta: float = 0.1):
        """Curve at t' with chi(1, 0) = (0, 0, 2a)."""
        base = np.array([0.0, 0.0, 2 * self.a]) + time_leg(self.track(), 1.0, tp)
        return reconstruct_curve(self.frames(tp, x_max, extra, dtheta), base)


def sample_frames(fr: FrameField, x) -> tuple[np.ndarray, np.ndarray]:
    """(T, N) of a frame field at nodes ``x`` (which must be nodes of the field)."""
    idx = np.searchsorted(fr.x, x)
    idx = np.clip(idx, 0, len(fr.x) - 1)
    if np.max(np.abs(fr.x[idx] - x)) > 1e-12 * max(1.0, np.max(np.abs(x))):
        raise ValueError("sample points must be frame nodes")
    return fr.T[idx], fr.N[idx]


# limits in space

@dataclass
class TailEstimate:
    value: np.ndarray
    error: float
    average: np.ndarray
    low_confidence: bool

    def to_dict(self) -> dict:
        v = self.value
        if np.iscomplexobj(v):
            out = {"re": v.real.tolist(), "im": v.imag.tolist()}
        else:
            out = v.tolist()
        return {"value": out, "error": self.error, "low_confidence": self.low_confidence}


def _side_mask(x, side):
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    return side * x > 0


def _tail(x, vals, unit: bool):
    if np.max(np.abs(x)) < 10:
        raise ValueError("extraction needs the grid to reach |x| >= 10")
    lim, raw, _ = tail_limit(x, vals, 0.2, power=0.5)
    lim2, raw2, _ = tail_limit(x, vals, 0.1, power=0.5)
    err = float(np.linalg.norm(lim - lim2))
    if unit:
        lim = lim / np.linalg.norm(lim)
    return TailEstimate(lim, err, raw, err > 0.1 * float(np.linalg.norm(lim)))


def extract_T_infinity(frames: FrameField, side: int = 1) -> TailEstimate:
    """Window average over the outer 20% plus a Richardson step against C/sqrt(x).

    The error bar is the spread between the 20% and 10% windows.
    """
    m = _side_mask(frames.x, side)
    return _tail(frames.x[m], frames.T[m], unit=True)


def extract_N_infinity(frames: FrameField, phase: PhaseCorrection | None, side: int = 1) -> TailEstimate:
    """Same extraction applied to N exp(i Phi); ``phase=None`` skips the correction."""
    m = _side_mask(frames.x, side)
    x = frames.x[m]
    N = frames.N[m]
    if phase is not None:
        N = N * np.exp(1j * phase(frames.t, x))[:, None]
    return _tail(x, N, unit=False)


@dataclass
class FarField:
    T_plus: TailEstimate
    T_minus: TailEstimate
    N_plus: TailEstimate
    N_minus: TailEstimate

    @property
    def theta(self) -> float:
        return angle_between(self.T_plus.value, -self.T_minus.value)


def far_field(flow: FilamentFlow, tp: float = 1.0, x_max: float = 200.0) -> FarField:
    fr = flow.frames(tp, min(x_max, flow.x_limit(tp)))
    ph = PhaseCorrection(flow.a)
    return FarField(extract_T_infinity(fr, 1), extract_T_infinity(fr, -1),
                    extract_N_infinity(fr, ph, 1), extract_N_infinity(fr, ph, -1))


def quiet_radius(flow: FilamentFlow, tol: float = 1e-13) -> float:
    """Smallest R with |v(1, y) - a| < tol for all |y| >= R, from the t' = 1 snapshot."""
    y = flow.grid.x
    loud = np.abs(flow.u_snapshot(1.0)) >= tol
    if not loud.any():
        return 0.0
    R = float(np.max(np.abs(y[loud]))) + flow.grid.spacing
    if R > 0.5 * flow.grid.half_length:
        raise ValueError("the perturbation does not decay inside the box; use far_field instead")
    return R


def far_field_matched(flow: FilamentFlow, profile: ProfileSolution, margin: float = 5.0) -> FarField:
    """T^inf and N^inf by matching the t' = 1 frame to the profile beyond the perturbation.

    Where v(1, .) = a the filament function is the self-similar one, so the
    frame there is the profile frame times a fixed rotation R and the limits
    are A R and B R.  Needs a perturbation that vanishes (to ``tol``) at large |y|.
    """
    xc = quiet_radius(flow) + margin
    if profile.s_max < xc:
        raise ValueError(f"profile must reach s = {xc:.3g}")
    A = extract_frame_limits(profile)
    fr = flow.frames(1.0, xc)
    out = []
    for side, Ai, Bi in ((1, A.A_plus, A.B_plus), (-1, A.A_minus, A.B_minus)):
        i = -1 if side == 1 else 0
        ev = profile.evaluate(fr.x[i])
        Np = (ev["n"] + 1j * ev["b"]) * np.exp(1j * fr.x[i] ** 2 / 4)
        Fp = np.stack([ev["T"], Np.real, Np.imag])
        F = np.stack([fr.T[i], fr.e1[i], fr.e2[i]])
        R = Fp.T @ F
        err = max(A.A_error, A.B_error)
        out.append((TailEstimate(Ai @ R, A.A_error, Ai @ R, False),
                    TailEstimate(Bi @ R, A.B_error, Bi @ R, err > 0.1)))
    (Tp, Np_), (Tm, Nm) = out
    return FarField(Tp, Tm, Np_, Nm)


# envelopes

def envelope_i(t, x):
    x = np.abs(x)
    return x ** -0.5 + np.sqrt(t) / x


def envelope_limit(t, x, quarter: float = ENVELOPE_QUARTER):
    x = np.abs(x)
    return np.sqrt(t) / x + t / x ** 2 + t ** quarter


@dataclass
class EnvelopeReport:
    claim: str
    t_min: float
    sup_ratio: float
    sup_ratio_refined: float
    relative_change: float
    bounded: bool
    argmax: tuple

    @property
    def verdict(self) -> str:
        return "PASS" if self.bounded else "FAIL"

    def to_dict(self) -> dict:
        return {"claim": self.claim, "t_min": self.t_min, "sup_ratio": self.sup_ratio,
                "sup_ratio_refined": self.sup_ratio_refined, "relative_change": self.relative_change,
                "verdict": self.verdict, "argmax": list(self.argmax)}


def slice_times(t_min: float, per_octave: int = 2) -> np.ndarray:
    """Geometric times t_min 2^(k/per_octave) below 1, plus 1, increasing.

    Halving t_min adds slices without moving the old ones.
    """
    t = t_min * 2.0 ** (np.arange(int(math.ceil(-math.log2(t_min) * per_octave))) / per_octave)
    return np.r_[t[t < 1 - 1e-9], 1.0]


def tangent_samples(flow: FilamentFlow, times, xs, dtheta: float = 0.1):
    """T(t', x) on the product of ``times`` and the signed sample points ``xs``."""
    xs = np.asarray(xs, dtype=float)
    out = np.empty((len(times), xs.size, 3))
    hi, lo = max(0.0, float(xs.max())), min(0.0, float(xs.min()))
    for j, tp in enumerate(times):
        fr = flow.frames(tp, hi, xs, dtheta, x_min=lo)
        out[j] = sample_frames(fr, xs)[0]
    return out


def envelope_ratio(flow: FilamentFlow, ff: FarField, t_min: float, xs, per_octave: int = 2,
                   tol: float = 0.2, samples=None) -> EnvelopeReport:
    """sup |T(t,x) - T^(+-inf)| / (|x|^-1/2 + sqrt(t)/|x|) over t in [t_min, 1] and the x samples,
    compared with the same sup over [2 t_min, 1]."""
    times = slice_times(t_min, per_octave)
    xs = np.asarray(xs, dtype=float)
    T = tangent_samples(flow, times, xs) if samples is None else samples
    Tinf = np.where((xs > 0)[:, None], ff.T_plus.value, ff.T_minus.value)
    dev = np.linalg.norm(T - Tinf[None], axis=-1)
    ratio = dev / envelope_i(times[:, None], xs[None])
    coarse = times >= 2 * t_min * (1 - 1e-12)
    r_all, r_coarse = float(ratio.max()), float(ratio[coarse].max())
    j, k = np.unravel_index(np.argmax(ratio), ratio.shape)
    change = abs(r_all - r_coarse) / r_coarse
    return EnvelopeReport("(i) |T - T_inf| <= C (x^-1/2 + sqrt(t)/x)", t_min, r_coarse, r_all, change,
                          bool(np.isfinite(r_all) and change < tol), (float(times[j]), float(xs[k])))


# the limit t -> 0

@dataclass
class LimitEstimate:
    x: np.ndarray
    T0: np.ndarray
    spread: np.ndarray
    times_used: np.ndarray


def _limit_fit(T, D, omega, a):
    """Constant term of D ~ c0 + c1 t + (sqrt t, t) x (cos, sin)(phase) by least squares.

    T = 1/t; the phase omega T + (a^2/2) log T carries the background rotation.
    """
    t = 1.0 / T
    ph = omega * T + 0.5 * a * a * np.log(T)
    c, s = np.cos(ph), np.sin(ph)
    M = np.stack([np.ones_like(T), t, np.sqrt(t) * c, np.sqrt(t) * s, t * c, t * s], axis=1)
    coef, *_ = np.linalg.lstsq(M, D, rcond=None)
    return coef[0]


def tangent_at_zero(flow: FilamentFlow, xs, profile: ProfileSolution, window: float = 0.5,
                    dtheta: float = 0.2) -> LimitEstimate:
    """T(0, x) from snapshots at small t'.

    D = T(t', x) - T_a(x / sqrt t') approaches T(0, x) - A with a smooth part
    linear in t' and an oscillation exp(i x^2 / 4t' - i (a^2/2) log t') of
    size sqrt t'.  Snapshots with 1/t' in [(1 - window) / t_min, 1 / t_min]
    are used.  Where they are dense and span two periods of the oscillation
    the constant is fitted with that model, and the spread is the change when
    the first quarter of the window is dropped.  Otherwise D is averaged and
    the spread is its standard deviation.
    """
    xs = np.asarray(xs, dtype=float)
    tn = 1.0 / flow.tprime
    sel = tn >= (1 - window) * tn.max() * (1 - 1e-12)
    times = np.sort(flow.tprime[sel])[::-1]
    Tn = 1.0 / times
    if np.max(np.abs(xs)) / math.sqrt(times.max()) > profile.s_max:
        raise ValueError("profile too short for the requested x")
    T = tangent_samples(flow, times, xs, dtheta)
    D = np.stack([T[j] - profile.evaluate(xs / math.sqrt(tp))["T"] for j, tp in enumerate(times)])
    lim = extract_frame_limits(profile)
    A = np.where((xs > 0)[:, None], lim.A_plus, lim.A_minus)
    gap = np.max(np.diff(Tn)) if Tn.size > 1 else np.inf
    span = Tn[-1] - Tn[0]
    late = Tn >= Tn[0] + 0.25 * span
    T0 = np.empty((xs.size, 3))
    spread = np.empty(xs.size)
    for i, x in enumerate(xs):
        om = x * x / 4
        if times.size >= 16 and om * gap <= math.pi / 2 and om * span >= 4 * math.pi:
            full = _limit_fit(Tn, D[:, i], om, flow.a)
            spread[i] = float(np.linalg.norm(full - _limit_fit(Tn[late], D[late, i], om, flow.a)))
        else:
            full = D[:, i].mean(axis=0)
            spread[i] = float(np.linalg.norm(D[:, i].std(axis=0)))
        T0[i] = A[i] + full
    return LimitEstimate(xs, T0, spread, times)


# series coefficients

@dataclass
class SeriesCoefficients:
    x: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    truncation_error: float
    s_cut: float


def fplus_transform(f_plus, convention: str = "exact"):
    """Frequency profile entering a2 as a callable of xi.

    ``f_plus`` is the scattering profile (ComplexField) with the convention
    u(t) ~ exp(i a^2/2 log t) exp(i (t-1) d^2) f_plus.  With F the plain
    transform F(xi) = int exp(-i z xi) f_plus(z) dz:

      "exact": exp(i xi^2) F(xi) / sqrt(4 pi i), the factor that makes
               h(t, s) -> i F~(s/2) s^(-i a^2) hold for this f_plus;
      "plain": F(xi) itself.
    """
    if convention not in ("exact", "plain"):
        raise ValueError("convention must be 'exact' or 'plain'")
    g = f_plus.grid
    xi = np.fft.fftshift(g.xi)
    F = np.fft.fftshift(forward(g, f_plus.values))
    spl = CubicSpline(xi, F)

    def fhat(k):
        k = np.asarray(k, dtype=float)
        val = spl(k)
        if convention == "exact":
            val = val * np.exp(1j * k * k) / np.sqrt(4j * math.pi)
        return val

    fhat.xi_max = float(xi[-1])
    return fhat


def _cint(f, lo, hi, h: float = 2.5e-4):
    # composite Simpson: fhat is a cubic spline on a fine grid, whose kinks
    # defeat adaptive quadrature at tight tolerances
    n = max(2, 2 * math.ceil((hi - lo) / (2 * h)))
    s = np.linspace(lo, hi, n + 1)
    return complex(simpson(f(s), x=s))


def series_coefficients(fhat, T_inf, N_inf, a: float, x, cut: float = 1e-10,
                        s_limit: float | None = None) -> SeriesCoefficients:
    """a1 = T^inf and a2(x) = -Re N^inf int_x^S fhat(s/2) s^(-i a^2) ds for x > 0.

    S is where |fhat(s/2)| drops below ``cut``; the neglected tail is bounded
    by the integral of an exponential fit to the last decade of |fhat| and
    reported as the truncation error.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("a2 is evaluated for x > 0")
    s_limit = 2 * getattr(fhat, "xi_max", 50.0) if s_limit is None else s_limit
    s = np.linspace(max(x.max(), 1e-3), s_limit, 4001)
    mag = np.abs(fhat(s / 2))
    # first point after which everything stays below the cut
    above = np.flatnonzero(mag >= cut)
    if above.size == 0:
        S = float(s[0])
    elif above[-1] == s.size - 1:
        raise ValueError("spectrum does not decay below the cut inside the grid; refusing")
    else:
        S = float(s[above[-1] + 1])
    tail = float(mag[s >= S].sum() * (s[1] - s[0]))

    def integrand(q):
        return fhat(q / 2) * np.exp(-1j * a * a * np.log(q))

    order = np.argsort(x)[::-1]
    xs = x[order]
    pieces = []
    upper = max(S, xs[0])
    for xv in xs:
        pieces.append(_cint(integrand, xv, upper) if xv < upper else 0j)
        upper = min(upper, xv)
    I = np.cumsum(pieces)
    a2 = np.empty((x.size, 3))
    a2[order] = -np.real(np.asarray(N_inf)[None, :] * I[:, None])
    return SeriesCoefficients(x, np.asarray(T_inf, dtype=float), a2, tail * float(np.linalg.norm(N_inf)), S)


# rescaled frames

@dataclass
class RescaledComparison:
    t_n: np.ndarray
    distance: np.ndarray
    theta: np.ndarray
    angle_residual: np.ndarray
    A_plus: np.ndarray
    A_minus: np.ndarray
    truncated: list

    noise_floor: float = 1e-8

    @property
    def monotone(self) -> bool:
        """Distance decreasing along t_n, up to the noise floor."""
        return bool(np.all(np.diff(self.distance) < self.noise_floor))

    def to_dict(self) -> dict:
        return {"t_n": self.t_n.tolist(), "distance": self.distance.tolist(), "theta": self.theta.tolist(),
                "angle_residual": self.angle_residual.tolist(), "A_plus": self.A_plus.tolist(),
                "A_minus": self.A_minus.tolist(), "truncated": self.truncated, "monotone": self.monotone}


def corner_direction(s, T, N, a: float) -> np.ndarray:
    """Limit of a profile-like tangent from a window of one side.

    For the profile T = A - (2a/s) b + O(1/s^2) with b = Im(N exp(-i s^2/4)), so
    T + (2a/s) b is averaged and one Richardson step against C/s^2 is taken.
    """
    b = np.imag(N * np.exp(-0.25j * s * s)[:, None])
    est = T + (2 * a / s)[:, None] * b
    frac = 0.999 * (np.abs(s).max() - np.abs(s).min()) / np.abs(s).max()
    lim = tail_limit(s, est, frac, power=2.0)[0]
    return lim / np.linalg.norm(lim)


def rescaled_profile_compare(flow: FilamentFlow, t_n, profile: ProfileSolution, s_max: float | None = None,
                             corner_window=(16.0, 20.0), dtheta: float = 0.05) -> RescaledComparison:
    """Rescaled frames T_n(s) = T(t_n, sqrt(t_n) s) against the profile.

    The frame at s = 0 is rotated onto the profile's frame at s = 0 and the
    sup distance of T over |s| <= s_max (default 2/a, the core where the
    perturbation's slow low modes live) is reported.  The directions on the
    two sides come from ``corner_direction`` on |s| in ``corner_window``.
    """
    a = flow.a
    if a <= 0:
        raise ValueError("needs a > 0")
    s_max = 2.0 / a if s_max is None else s_max
    s_lo, s_hi = corner_window
    reach_s = max(s_max, s_hi)
    if profile.s_max < s_max:
        raise ValueError("profile too short for the comparison window")
    dist, thetas, Ap, Am, truncated, kept = [], [], [], [], [], []
    for tn in t_n:
        rt = math.sqrt(tn)
        reach = flow.x_limit(tn) / rt
        if reach < reach_s:
            warnings.warn(f"t_n={tn}: grid reaches s={reach:.3g} only, skipped")
            truncated.append(float(tn))
            continue
        fr = flow.frames(tn, rt * reach_s, dtheta=dtheta)
        s = fr.x / rt
        i0 = int(np.argmin(np.abs(s)))
        # rows of F0 are the frame vectors; F0.T maps them onto the identity
        R = np.stack([fr.T[i0], fr.e1[i0], fr.e2[i0]]).T
        T, N = fr.T @ R, fr.N @ R
        win = np.abs(s) <= s_max
        ref = profile.evaluate(s[win])["T"]
        dist.append(float(np.max(np.linalg.norm(T[win] - ref, axis=1))))
        plus = (s >= s_lo) & (s <= s_hi)
        minus = (s <= -s_lo) & (s >= -s_hi)
        A1 = corner_direction(s[plus], T[plus], N[plus], a)
        A2 = corner_direction(s[minus], T[minus], N[minus], a)
        Ap.append(A1)
        Am.append(A2)
        thetas.append(angle_between(A1, -A2))
        kept.append(float(tn))
    thetas = np.array(thetas)
    res = np.sin(thetas / 2) - math.exp(-math.pi * a * a / 2)
    return RescaledComparison(np.array(kept), np.array(dist), thetas, res, np.array(Ap), np.array(Am), truncated)


# report

def theorem_bounds_report(flow: FilamentFlow, profile: ProfileSolution, t_min: float | None = None,
                          x_lo: float = 0.5, x_hi: float = 10.0, n_x: int = 16, corner_lo: float = 0.1,
                          corner_bound: float = 0.2, envelope_tol: float = 0.2) -> dict:
    """Pass/fail blocks for the four space/time clauses.

    (i)   sup ratio of |T - T^inf| to its envelope, stable under t_min halving;
    (ii)  sup |T - T^inf| and the far-field angle;
    (iii) |chi(0,x) - chi(0,0) - T^(+-inf) x| / |x| from the t = 0 limit of T;
    (iv)  discrete L1 and L2 norms of d/dx T(0, .).
    The x range is cut to what the grid reaches at t_min.
    """
    a = flow.a
    t_min = flow.t_min if t_min is None else t_min
    x_hi = min(x_hi, flow.x_limit(t_min))
    try:
        ff = far_field_matched(flow, profile)
    except ValueError:
        ff = far_field(flow, 1.0, min(400.0, flow.x_limit(1.0)))
    mags = np.geomspace(x_lo, x_hi, n_x)
    xs = np.concatenate([-mags[::-1], mags])
    times = slice_times(t_min)
    have = np.array([any(abs(tp - k) <= 1e-12 * max(1.0, tp) for k in flow.tprime) for tp in times])
    if not have.all():
        raise ValueError("the trajectory lacks snapshots on the slice grid t_min 2^(k/2)")
    samples = tangent_samples(flow, times, xs)
    env = envelope_ratio(flow, ff, t_min, xs, tol=envelope_tol, samples=samples)
    blocks = [{**env.to_dict(), "envelope": "x^-1/2 + sqrt(t)/x", "data_ref": "tangent_samples"}]

    Tinf = np.where((xs > 0)[:, None], ff.T_plus.value, ff.T_minus.value)
    dev = float(np.max(np.linalg.norm(samples - Tinf[None], axis=-1)))
    blocks.append({"claim": "(ii) |T - T_inf| <= C", "envelope": "constant", "sup_ratio": dev,
                   "theta": ff.theta, "theta_profile": 2 * math.asin(math.exp(-math.pi * a * a / 2)),
                   "verdict": "PASS" if dev <= 2 else "FAIL", "data_ref": "far_field"})

    fine = np.geomspace(corner_lo, x_hi, 4 * n_x)
    xf = np.concatenate([-fine[::-1], fine])
    lim = tangent_at_zero(flow, xf, profile)
    resid, dT = [], []
    for sgn, Ti in ((1, ff.T_plus.value), (-1, ff.T_minus.value)):
        m = sgn * xf > 0
        o = np.argsort(np.abs(xf[m]))
        xx, TT = np.abs(xf[m])[o], lim.T0[m][o]
        # chi(0, x) - chi(0, 0): first piece with T(0, corner_lo), then the trapezoid rule
        steps = 0.5 * np.diff(xx)[:, None] * (TT[1:] + TT[:-1])
        chi = xx[0] * TT[0] + np.concatenate([np.zeros((1, 3)), np.cumsum(steps, axis=0)])
        resid.append(float(np.max(np.linalg.norm(chi - xx[:, None] * Ti, axis=1) / xx)))
        dT.append((np.diff(xx), np.linalg.norm(np.diff(TT, axis=0), axis=1)))
    r3 = max(resid)
    blocks.append({"claim": "(iii) |chi(0,x) - chi(0,0) - T_inf x| <= C |x|", "envelope": "|x|",
                   "sup_ratio": r3, "bound": corner_bound, "verdict": "PASS" if r3 < corner_bound else "FAIL",
                   "limit_spread": float(lim.spread.max()), "data_ref": "tangent_at_zero"})
    l1 = float(sum(d.sum() for _, d in dT))
    l2 = float(math.sqrt(sum((d ** 2 / h).sum() for h, d in dT)))
    blocks.append({"claim": "(iv) T_x(0) in L1 and L2", "envelope": "finite", "sup_ratio": l1,
                   "L1": l1, "L2": l2, "verdict": "PASS" if np.isfinite(l1 + l2) else "FAIL",
                   "data_ref": "tangent_at_zero"})
    return {"a": a, "t_min": t_min, "x_range": [corner_lo, x_hi],
            "far_field": {"T_plus": ff.T_plus.to_dict(), "T_minus": ff.T_minus.to_dict(),
                          "N_plus": ff.N_plus.to_dict(), "N_minus": ff.N_minus.to_dict(), "theta": ff.theta},
            "clauses": blocks, "passed": all(b["verdict"] == "PASS" for b in blocks)}


def profile_limits(profile: ProfileSolution):
    """(A+, A-, B+, B-) of the profile, for comparisons."""
    d = extract_frame_limits(profile)
    return d.A_plus, d.A_minus, d.B_plus, d.B_minus


def scattering_fplus(flow: FilamentFlow, tp: float | None = None):
    """Scattering profile from the snapshot at t' (default the smallest)."""
    tp = flow.t_min if tp is None else tp
    return scattering_profile(flow.state(tp), flow.a)
