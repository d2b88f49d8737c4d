"""Evolution of the renormalized field v = a + u.

    i v_t + v_xx + (|v|^2 - a^2) v / (2t) = 0,   t >= 1,

integrated by Strang splitting on the periodic grid.  The nonlinear
substep is a pointwise phase rotation and is integrated exactly in time,
the 1/(2t) coefficient contributing log(t1/t0) / 2.  Adjacent nonlinear
half steps are fused since |v| does not change under them.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import ComplexField, GridSpec, forward, free_propagate, free_propagator, xgamma_norm
from .rates import FitRefused, RateFit, fit_decay_rate

FAMILIES = ("gaussian-bump", "modulated-gaussian", "custom")
T_END_MAX = 1e4
DELTA = 0.01


class SmallnessError(ValueError):
    pass


class EvolutionAborted(RuntimeError):
    def __init__(self, message, last_state, states):
        super().__init__(message)
        self.last_state = last_state
        self.states = states


@dataclass
class PerturbationSpec:
    family: str = "gaussian-bump"
    amplitude: float = 0.01
    width: float = 1.0
    center: float = 0.0
    phase: float = 0.0
    wavenumber: float = 1.0
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown perturbation family {self.family!r}")
        if self.family == "custom" and self.samples is None:
            raise ValueError("custom perturbation needs samples")
        if self.family != "custom" and not self.width > 0:
            raise ValueError("width must be positive")

    def sample(self, grid: GridSpec) -> np.ndarray:
        x = grid.x
        if self.family == "custom":
            s = np.asarray(self.samples, dtype=complex)
            if s.shape != (grid.n_points,):
                raise ValueError("custom samples do not match the grid")
            return s.copy()
        env = self.amplitude * np.exp(-((x - self.center) / self.width) ** 2)
        if self.family == "gaussian-bump":
            return env * np.exp(1j * self.phase)
        return env * np.exp(1j * (self.wavenumber * x + self.phase))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.samples is not None:
            s = np.asarray(self.samples, dtype=complex)
            d["samples"] = {"re": s.real.tolist(), "im": s.imag.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        d = dict(d)
        s = d.get("samples")
        if isinstance(s, dict):
            d["samples"] = np.asarray(s["re"]) + 1j * np.asarray(s["im"])
        return cls(**d)


@dataclass
class EvolutionConfig:
    a: float
    grid: GridSpec = field(default_factory=GridSpec)
    t_end: float = 100.0
    dt: float = 1e-3
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    t_start: float = 1.0
    output_times: tuple = ()
    # local step is dt * (t / t_start) ** dt_power
    dt_power: float = 0.0
    gamma: float = 0.0
    smallness: float = 0.1
    nonlinear: bool = True
    record_origin: bool = False
    check_every: int = 200

    def __post_init__(self):
        if not self.a >= 0:
            raise ValueError("a must be nonnegative")
        if not (self.t_start > 0 and self.t_end > self.t_start):
            raise ValueError("need 0 < t_start < t_end")
        if self.t_end > T_END_MAX:
            raise ValueError(f"t_end must not exceed {T_END_MAX:g}")
        if not self.dt > 0 or self.dt_power < 0:
            raise ValueError("dt must be positive and dt_power nonnegative")
        outs = np.asarray(self.output_times, dtype=float)
        if outs.size and (np.any(np.diff(outs) <= 0) or outs[0] < self.t_start
                          or outs[-1] > self.t_end):
            raise ValueError("output_times must increase inside [t_start, t_end]")
        self.output_times = tuple(float(t) for t in outs)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("a", "t_end", "dt", "t_start", "dt_power", "gamma",
                                            "smallness", "nonlinear", "record_origin", "check_every")}
        d["grid"] = self.grid.to_dict()
        d["perturbation"] = self.perturbation.to_dict()
        d["output_times"] = list(self.output_times)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        d = dict(d)
        d["grid"] = GridSpec(**d["grid"]) if "grid" in d else GridSpec()
        if "perturbation" in d:
            d["perturbation"] = PerturbationSpec.from_dict(d["perturbation"])
        d["output_times"] = tuple(d.get("output_times", ()))
        return cls(**d)


@dataclass
class FieldState:
    t: float
    v: ComplexField

    def u(self, a: float) -> np.ndarray:
        return self.v.values - a


@dataclass
class OriginTrace:
    """v(t, 0) and v_x(t, 0) after every completed step."""
    t: np.ndarray
    v: np.ndarray
    vx: np.ndarray


@dataclass
class Trajectory:
    config: EvolutionConfig
    states: list
    origin: OriginTrace | None = None
    n_steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def at(self, t: float, rtol: float = 1e-9) -> FieldState:
        for s in self.states:
            if abs(s.t - t) <= rtol * max(1.0, abs(t)):
                return s
        raise KeyError(f"no state recorded at t={t}")


def check_smallness(u1: np.ndarray, grid: GridSpec, a: float, gamma: float = 0.0,
                    factor: float = 0.1) -> float:
    """Return the X-norm of u1 or raise if u1 is not small or u1(0) is not real.

    For a = 0 there is no background to compare with and the bound is
    measured against 1.
    """
    norm = xgamma_norm(ComplexField(grid, u1), 1.0, gamma)
    scale = a if a > 0 else 1.0
    if norm > factor * scale:
        raise SmallnessError(f"perturbation norm {norm:.3g} exceeds {factor:g}*{scale:g}")
    u0 = u1[grid.n_points // 2]
    if abs(u0.imag) > 1e-12 * max(1.0, abs(u0)):
        raise SmallnessError("u1(0) must be real")
    return norm


def _rotate(u, a, t0, t1):
    # the phase rotation of v = a + u written for u, without cancellation
    w = u.real * (2 * a) + (u.real ** 2 + u.imag ** 2)
    m1 = np.expm1(0.5j * w * math.log(t1 / t0))
    return u + (a + u) * m1


def _step_sizes(t0, t1, dt, t_start, power):
    # uniform substeps between consecutive stopping times keep landing exact
    h = dt * (t0 / t_start) ** power
    n = max(1, math.ceil((t1 - t0) / h - 1e-9))
    return n, (t1 - t0) / n


def evolve(config: EvolutionConfig) -> Trajectory:
    """Integrate from t_start to t_end and return the states at the output times.

    The perturbation u = v - a is the evolved variable so that the constant
    background passes through the linear substep untouched.
    """
    grid, a = config.grid, config.a
    u = config.perturbation.sample(grid)
    check_smallness(u, grid, a, config.gamma, config.smallness)
    t = config.t_start
    stops = sorted(set(config.output_times) | {config.t_end})
    states = []
    if config.output_times and config.output_times[0] == t:
        states.append(FieldState(t, ComplexField(grid, a + u)))
        stops = [s for s in stops if s > t]
    xi = grid.xi
    sign = grid._sign
    mid = grid.n_points // 2
    cache = {}
    trace_t, trace_v, trace_vx = [], [], []
    lag = None
    last_good = FieldState(t, ComplexField(grid, a + u))
    n_steps = 0
    nl = config.nonlinear

    def finish(vals, lag, t):
        return _rotate(vals, a, lag, t) if nl and lag is not None else vals

    for stop in stops:
        # with a growing step the schedule is refreshed every 1% of t
        while t < stop * (1 - 1e-14):
            seg_end = min(stop, t * 1.01) if config.dt_power > 0 else stop
            n, h = _step_sizes(t, seg_end, config.dt, config.t_start, config.dt_power)
            if h not in cache:
                if len(cache) > 8:
                    cache.clear()
                cache[h] = free_propagator(grid, h)
            prop = cache[h]
            for _ in range(n):
                tm = t + 0.5 * h
                if nl:
                    u = _rotate(u, a, lag if lag is not None else t, tm)
                uh = prop * np.fft.fft(u)
                u = np.fft.ifft(uh)
                lag = tm
                t = t + h
                n_steps += 1
                if config.record_origin:
                    v0 = a + u[mid]
                    vx0 = np.sum(1j * xi * uh * sign) / grid.n_points
                    if nl:
                        k = 0.5 * math.log(t / lag)
                        rot = np.exp(1j * k * (abs(v0) ** 2 - a * a))
                        vx0 = (vx0 + 2j * k * v0 * (v0.conjugate() * vx0).real) * rot
                        v0 = v0 * rot
                    trace_t.append(t)
                    trace_v.append(v0)
                    trace_vx.append(vx0)
                if n_steps % config.check_every == 0:
                    if not np.all(np.isfinite(u)):
                        raise EvolutionAborted(f"non-finite field at t={t:.6g}", last_good, states)
                    last_good = FieldState(t, ComplexField(grid, a + finish(u, lag, t)))
            t = seg_end
        u = finish(u, lag, t)
        lag = None
        if not np.all(np.isfinite(u)):
            raise EvolutionAborted(f"non-finite field at t={t:.6g}", last_good, states)
        last_good = FieldState(t, ComplexField(grid, a + u))
        if not config.output_times or stop in config.output_times:
            states.append(last_good)
    origin = None
    if config.record_origin:
        origin = OriginTrace(np.array(trace_t), np.array(trace_v), np.array(trace_vx))
    return Trajectory(config, states, origin, n_steps)


def conserved_q(state: FieldState, a: float) -> float:
    u = state.u(a)
    w = u.real * (2 * a) + np.abs(u) ** 2
    return float(np.sum(w) * state.v.grid.spacing)


# pseudoconformal transform

@dataclass
class PsiSnapshot:
    t: float
    psi: ComplexField

    @property
    def x(self) -> np.ndarray:
        return self.psi.grid.x


def fourier_interpolate(grid: GridSpec, values: np.ndarray, points) -> np.ndarray:
    """Trigonometric interpolant of periodic samples at arbitrary points."""
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    modes = forward(grid, values)
    out = np.empty(pts.shape, dtype=complex)
    for i in range(0, pts.size, 256):
        p = pts.ravel()[i:i + 256]
        out.ravel()[i:i + 256] = np.exp(1j * np.outer(p, grid.xi)) @ modes
    return out / (2 * grid.half_length)


def pseudoconformal_map(state: FieldState, x=None) -> PsiSnapshot | np.ndarray:
    """psi(t', x) = exp(i x^2 / 4t') / sqrt(t') * conj(v)(1/t', x/t') with t' = 1/t.

    Without ``x`` the result lives on the v-grid scaled by t'.  With ``x``
    the field is interpolated and an array is returned.
    """
    if state.t < 1:
        raise ValueError("the map is defined for v-times t >= 1")
    g = state.v.grid
    tp = 1.0 / state.t
    if x is None:
        pg = GridSpec(g.n_points, g.half_length * tp)
        xs = pg.x
        vals = np.conj(state.v.values)
        return PsiSnapshot(tp, ComplexField(pg, np.exp(1j * xs ** 2 / (4 * tp)) / math.sqrt(tp) * vals))
    xs = np.asarray(x, dtype=float)
    y = xs / tp
    if np.any(np.abs(y) > g.half_length):
        raise ValueError("requested x range exceeds the scaled grid")
    vals = np.conj(fourier_interpolate(g, state.v.values, y))
    return np.exp(1j * xs ** 2 / (4 * tp)) / math.sqrt(tp) * vals


def inverse_pseudoconformal_map(snap: PsiSnapshot) -> FieldState:
    tp = snap.t
    pg = snap.psi.grid
    g = GridSpec(pg.n_points, pg.half_length / tp)
    x = pg.x
    v = np.conj(math.sqrt(tp) * np.exp(-1j * x ** 2 / (4 * tp)) * snap.psi.values)
    return FieldState(1.0 / tp, ComplexField(g, v))


# energy

@dataclass
class EnergyDiagnostic:
    t: float
    E: float
    production: float


# 1/(8t) is the potential weight for which dE/dt equals the production term
# along solutions of the equation above; "quarter" keeps 1/(4t) for comparison
ENERGY_WEIGHTS = {"consistent": 0.125, "quarter": 0.25}


def energy(state: FieldState, a: float, convention: str = "consistent") -> EnergyDiagnostic:
    """E = 1/2 int |v_x|^2 - (k/t) int (|v|^2 - a^2)^2 and its production k/t^2 int (...)^2."""
    k = ENERGY_WEIGHTS[convention]
    g = state.v.grid
    v = state.v.values
    vx = np.fft.ifft(1j * g.xi * np.fft.fft(v))
    u = state.u(a)
    w = (u.real * (2 * a) + np.abs(u) ** 2) ** 2
    h = g.spacing
    pot = float(np.sum(w) * h)
    E = 0.5 * float(np.sum(np.abs(vx) ** 2) * h) - k * pot / state.t
    return EnergyDiagnostic(state.t, E, k * pot / state.t ** 2)


def energy_identity_residual(states, a: float, convention: str = "consistent") -> np.ndarray:
    """Relative residual of the energy production identity at interior states.

    Centered differences in time make this meaningful only for states a
    few solver steps apart.
    """
    if len(states) < 3:
        raise ValueError("need at least three states")
    diags = [energy(s, a, convention) for s in states]
    out = []
    for k in range(1, len(diags) - 1):
        lo, hi = diags[k - 1], diags[k + 1]
        r = (hi.E - lo.E) / (hi.t - lo.t) - diags[k].production
        out.append(r / max(abs(diags[k].E), 1e-12))
    return np.array(out)


# scattering and J(t)

@dataclass
class ScatteringEstimate:
    t_probe: float
    f_plus: ComplexField
    cauchy_gap: float
    probe_times: np.ndarray
    gaps: np.ndarray
    monotone_from: float | None
    status: str
    fit: RateFit | None
    reference_exponent: float

    def summary(self) -> dict:
        return {"t_probe": self.t_probe, "cauchy_gap": self.cauchy_gap,
                "probe_times": self.probe_times.tolist(), "gaps": self.gaps.tolist(),
                "monotone_from": self.monotone_from, "status": self.status,
                "fit": None if self.fit is None else self.fit.to_dict(),
                "reference_exponent": self.reference_exponent}


def scattering_profile(state: FieldState, a: float) -> ComplexField:
    t = state.t
    u = ComplexField(state.v.grid, state.u(a) * np.exp(-0.5j * a * a * math.log(t)))
    return free_propagate(u, -(t - 1))


def scattering_state(states, a: float, probe_times, gamma: float = 0.0) -> ScatteringEstimate:
    probes = np.asarray(probe_times, dtype=float)
    if probes.size < 2 or probes[0] < 10 or np.any(np.diff(probes) <= 0):
        raise ValueError("probe times must be increasing and >= 10")
    by_t = {round(s.t, 9): s for s in states}
    profiles = []
    for t in probes:
        s = by_t.get(round(t, 9))
        if s is None:
            raise KeyError(f"no state at probe time {t}")
        profiles.append(scattering_profile(s, a))
    h = profiles[0].grid.spacing
    gaps = np.array([math.sqrt(np.sum(np.abs(q.values - p.values) ** 2) * h)
                     for p, q in zip(profiles, profiles[1:])])
    mono = np.diff(gaps) <= 0
    start = len(mono)
    while start > 0 and mono[start - 1]:
        start -= 1
    monotone_from = float(probes[start]) if gaps.size else None
    status = "ok" if start == 0 else "warning"
    if status == "warning":
        warnings.warn(f"Cauchy gaps not decreasing before t={monotone_from:g}")
    fit = None
    try:
        fit = fit_decay_rate(np.sqrt(probes[1:] * probes[:-1]), gaps)
    except FitRefused:
        pass
    return ScatteringEstimate(float(probes[-1]), profiles[-1], float(gaps[-1]), probes, gaps,
                              monotone_from, status, fit, -(0.25 - gamma - DELTA))


def j_operator(grid: GridSpec, u: np.ndarray, t: float, method: str = "conjugated") -> np.ndarray:
    """J(t)u = (x + 2it d_x)u.

    ``conjugated`` uses J(t) = exp(it d_xx) x exp(-it d_xx), which stays
    meaningful on the torus once u has spread over the box; ``direct``
    applies x u + 2it u_x.
    """
    x = grid.x
    if method == "direct":
        return x * u + 2j * t * np.fft.ifft(1j * grid.xi * np.fft.fft(u))
    if method != "conjugated":
        raise ValueError(f"unknown method {method!r}")
    p = free_propagator(grid, t)
    w = np.fft.ifft(np.conj(p) * np.fft.fft(u))
    return np.fft.ifft(p * np.fft.fft(x * w))


@dataclass
class JNormSeries:
    t: np.ndarray
    norms: np.ndarray
    fit: RateFit | None


def j_norm_series(states, a: float, method: str = "conjugated", window=None) -> JNormSeries:
    ts, ns = [], []
    for s in states:
        g = s.v.grid
        ju = j_operator(g, s.u(a), s.t, method)
        ts.append(s.t)
        ns.append(math.sqrt(np.sum(np.abs(ju) ** 2) * g.spacing))
    t, n = np.array(ts), np.array(ns)
    lo, hi = window if window is not None else (t.max() / 10, t.max())
    sel = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    fit = None
    try:
        fit = fit_decay_rate(t[sel], n[sel])
    except FitRefused:
        pass
    return JNormSeries(t, n, fit)
