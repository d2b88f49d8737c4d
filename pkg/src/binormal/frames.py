"""Parallel frame and curve reconstruction from a filament function psi(t, x).

The frame rows (T, e1, e2) obey F_x = K F with K built from (Re psi, Im psi)
and, at one base point, F_t = L F with L built from (psi_x, gamma). Both are
stepped with rotation exponentials, so orthonormality is kept to roundoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

ORTHO_TOL = 1e-8
_G1 = 0.5 - math.sqrt(3) / 6
_G2 = 0.5 + math.sqrt(3) / 6


@dataclass
class ParallelFramePoint:
    T: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        self.T, self.e1, self.e2 = (np.asarray(v, dtype=float) for v in (self.T, self.e1, self.e2))

    @property
    def N(self) -> np.ndarray:
        return self.e1 + 1j * self.e2

    @property
    def matrix(self) -> np.ndarray:
        return np.stack([self.T, self.e1, self.e2])

    @classmethod
    def from_matrix(cls, F) -> "ParallelFramePoint":
        F = np.asarray(F, dtype=float)
        return cls(F[0].copy(), F[1].copy(), F[2].copy())

    @classmethod
    def identity(cls) -> "ParallelFramePoint":
        return cls.from_matrix(np.eye(3))

    def defect(self) -> float:
        F = self.matrix
        return float(np.max(np.abs(F @ F.T - np.eye(3))))


@dataclass
class FrameField:
    """Parallel frame along x at a fixed time; ``psi`` holds the filament function at the nodes."""
    t: float
    x: np.ndarray
    T: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    psi: np.ndarray

    @property
    def N(self) -> np.ndarray:
        return self.e1 + 1j * self.e2

    def point(self, i: int) -> ParallelFramePoint:
        return ParallelFramePoint(self.T[i], self.e1[i], self.e2[i])

    def orthonormality_defect(self) -> float:
        F = np.stack([self.T, self.e1, self.e2], axis=1)
        return float(np.max(np.abs(F @ np.swapaxes(F, 1, 2) - np.eye(3))))


@dataclass
class TimeTrack:
    """Frame at a fixed base point x0 over a set of times."""
    x0: float
    t: np.ndarray
    T: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    psi: np.ndarray
    psi_x: np.ndarray

    @property
    def N(self) -> np.ndarray:
        return self.e1 + 1j * self.e2

    def point(self, i: int) -> ParallelFramePoint:
        return ParallelFramePoint(self.T[i], self.e1[i], self.e2[i])

    def velocity(self) -> np.ndarray:
        """chi_t = T ^ T_x = Im(conj(psi) N) at x0."""
        return np.imag(np.conj(self.psi)[:, None] * self.N)


@dataclass
class CurveSnapshot:
    t: float
    x: np.ndarray
    chi: np.ndarray
    frames: FrameField

    def max_stretch(self) -> float:
        """Largest excess of chord over parameter distance between neighbours."""
        chord = np.linalg.norm(np.diff(self.chi, axis=0), axis=1)
        return float(np.max(chord - np.diff(self.x)))


def gauge(psi, t: float, a: float) -> np.ndarray:
    return -0.5 * np.abs(psi) ** 2 + a * a / (2 * t)


def filament_function(c, tau, x) -> np.ndarray:
    """psi = c exp(i Theta) with Theta the trapezoid integral of tau from x = 0."""
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    theta = cumulative_trapezoid(np.broadcast_to(tau, x.shape), x, initial=0.0)
    theta -= np.interp(0.0, x, theta)
    return c * np.exp(1j * theta)


def self_similar_psi(a: float):
    """psi_a(t, x) = a exp(i x^2 / 4t) / sqrt(t) and its x-derivative."""
    def psi(t, x):
        return a * np.exp(1j * np.square(x) / (4 * t)) / np.sqrt(t)

    def psi_x(t, x):
        return (1j * np.asarray(x) / (2 * t)) * psi(t, x)

    return psi, psi_x


# rotation stepping

def _x_rotvec(psi) -> np.ndarray:
    # K = [[0, al, be], [-al, 0, 0], [-be, 0, 0]] is the hat map of (0, be, -al)
    psi = np.asarray(psi)
    return np.stack([np.zeros(psi.shape), psi.imag, -psi.real], axis=-1)


def _t_rotvec(psi_x, g) -> np.ndarray:
    # L = [[0, -be_x, al_x], [be_x, 0, g], [-al_x, -g, 0]] is the hat map of (-g, al_x, be_x)
    psi_x = np.asarray(psi_x)
    return np.stack([-np.broadcast_to(g, psi_x.shape), psi_x.real, psi_x.imag], axis=-1)


def _magnus4(w1: np.ndarray, w2: np.ndarray, h) -> np.ndarray:
    """Rotation matrices exp(Omega) of the two-point Gauss Magnus step.

    [hat u, hat v] = hat(u x v), so the commutator term is a cross product.
    """
    h = np.asarray(h, dtype=float)[..., None]
    omega = 0.5 * h * (w1 + w2) + (math.sqrt(3) / 12) * h * h * np.cross(w2, w1)
    return Rotation.from_rotvec(omega).as_matrix()


def _march(F0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    # prefix products E_k ... E_1 F0 by a log-depth scan
    out = np.concatenate([F0[None], np.asarray(steps)])
    d = 1
    while d < len(out):
        out[d:] = out[d:] @ out[:-d]
        d *= 2
    return out


def _as_function(values, nodes, name):
    if callable(values):
        return values
    values = np.asarray(values)
    if values.shape != np.shape(nodes):
        raise ValueError(f"{name} samples must match the node array")
    gaps = np.diff(nodes)
    if gaps.size and gaps.max() > 2 * np.median(gaps) * (1 + 1e-9):
        raise ValueError(f"{name} samples have a gap wider than two steps")
    return CubicSpline(nodes, values)


def _check_seed(seed: ParallelFramePoint):
    if seed.defect() > ORTHO_TOL:
        raise ValueError(f"seed frame not orthonormal (defect {seed.defect():.2e})")


def _transport(F0, nodes, rotvec_at):
    """Transport F0 from nodes[0] along the (monotone) nodes."""
    h = np.diff(nodes)
    lo = nodes[:-1]
    E = _magnus4(rotvec_at(lo + _G1 * h), rotvec_at(lo + _G2 * h), h)
    return _march(F0, E)


def transport_frame_x(t: float, psi, x, seed: ParallelFramePoint | None = None,
                      x0: float = 0.0) -> FrameField:
    """Frame along the node array ``x`` seeded at the node x0, integrated both ways.

    ``psi`` is a callable of x at time t or samples on ``x`` (spline-interpolated).
    """
    seed = ParallelFramePoint.identity() if seed is None else seed
    _check_seed(seed)
    x = np.asarray(x, dtype=float)
    i0 = int(np.argmin(np.abs(x - x0)))
    if abs(x[i0] - x0) > 1e-9 * max(1.0, abs(x0)):
        raise ValueError("x0 must be one of the nodes")
    f = _as_function(psi, x, "psi")

    def rv(s):
        return _x_rotvec(f(s))

    right = _transport(seed.matrix, x[i0:], rv)
    left = _transport(seed.matrix, x[i0::-1], rv)
    F = np.concatenate([left[::-1], right[1:]])
    return FrameField(t, x, F[:, 0].copy(), F[:, 1].copy(), F[:, 2].copy(), np.asarray(f(x), dtype=complex))


def transport_frame_t(times, psi, psi_x, a: float, seed: ParallelFramePoint | None = None,
                      t0: float | None = None, x0: float = 0.0) -> TimeTrack:
    """Frame at x0 over ``times`` from a seed at time t0 (a node; default the first).

    ``psi`` and ``psi_x`` are the values at x0, as callables of t or samples on ``times``.
    """
    seed = ParallelFramePoint.identity() if seed is None else seed
    _check_seed(seed)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must increase")
    t0 = times[0] if t0 is None else t0
    i0 = int(np.argmin(np.abs(times - t0)))
    if abs(times[i0] - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("t0 must be one of the times")
    fp = _as_function(psi, times, "psi")
    fpx = _as_function(psi_x, times, "psi_x")

    def rv(s):
        return _t_rotvec(fpx(s), gauge(fp(s), s, a))

    up = _transport(seed.matrix, times[i0:], rv)
    down = _transport(seed.matrix, times[i0::-1], rv)
    F = np.concatenate([down[::-1], up[1:]])
    return TimeTrack(x0, times, F[:, 0].copy(), F[:, 1].copy(), F[:, 2].copy(),
                     np.asarray(fp(times), dtype=complex), np.asarray(fpx(times), dtype=complex))


# curve

def _cumulative_corrected(x, f, fx, i0):
    """Cumulative integral of f from x[i0] by trapezoid with the endpoint-derivative correction."""
    h = np.diff(x)[:, None]
    piece = 0.5 * h * (f[1:] + f[:-1]) - h * h / 12 * (fx[1:] - fx[:-1])
    c = np.concatenate([np.zeros((1, f.shape[1])), np.cumsum(piece, axis=0)])
    return c - c[i0]


def time_leg(track: TimeTrack, t0: float, t: float) -> np.ndarray:
    """Integral of chi_t over [t0, t] at the base point (Simpson on the track nodes)."""
    if t == t0:
        return np.zeros(3)
    lo, hi = sorted((t0, t))
    sel = (track.t >= lo - 1e-12) & (track.t <= hi + 1e-12)
    ts = track.t[sel]
    if ts.size < 3 or abs(ts[0] - lo) > 1e-12 or abs(ts[-1] - hi) > 1e-12:
        raise ValueError("track must have nodes at both ends of the time leg")
    val = simpson(track.velocity()[sel], x=ts, axis=0)
    return val if t >= t0 else -val


def reconstruct_curve(frames: FrameField, chi_base, x0: float = 0.0) -> CurveSnapshot:
    """chi(t, x) = chi(t, x0) + int_{x0}^x T, with T_x = Re(conj(psi) N) used in the correction."""
    x = frames.x
    i0 = int(np.argmin(np.abs(x - x0)))
    Tx = np.real(np.conj(frames.psi)[:, None] * frames.N)
    chi = np.asarray(chi_base, dtype=float) + _cumulative_corrected(x, frames.T, Tx, i0)
    return CurveSnapshot(frames.t, x, chi, frames)


def reconstruct_flow(psi: Callable, psi_x: Callable, a: float, t: float, x, times,
                     seed: ParallelFramePoint | None = None, chi0=(0.0, 0.0, 0.0),
                     t0: float = 1.0, x0: float = 0.0) -> CurveSnapshot:
    """Curve at time t from psi(t, x): time leg at x0 from (t0, chi0), then the space leg.

    ``times`` must contain t0 and t.
    """
    times = np.asarray(times, dtype=float)
    track = transport_frame_t(times, lambda s: psi(s, x0), lambda s: psi_x(s, x0), a, seed, t0, x0)
    j = int(np.argmin(np.abs(times - t)))
    if abs(times[j] - t) > 1e-12:
        raise ValueError("t must be one of the times")
    base = np.asarray(chi0, dtype=float) + time_leg(track, t0, t)
    frames = transport_frame_x(t, lambda s: psi(t, s), x, track.point(j), x0)
    return reconstruct_curve(frames, base, x0)


# identities

@dataclass
class FramePatch:
    t: np.ndarray
    x: np.ndarray
    T: np.ndarray
    N: np.ndarray
    psi: np.ndarray
    psi_x: np.ndarray
    gamma: np.ndarray


def frame_patch(psi: Callable, psi_x: Callable, a: float, t, x, seed: ParallelFramePoint | None = None,
                t0: float | None = None, x0: float = 0.0) -> FramePatch:
    """Frames on a (t, x) grid: time transport at x0, then x transport on each row."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    track = transport_frame_t(t, lambda s: psi(s, x0), lambda s: psi_x(s, x0), a, seed, t0, x0)
    T = np.empty((t.size, x.size, 3))
    N = np.empty((t.size, x.size, 3), dtype=complex)
    for j, tj in enumerate(t):
        fr = transport_frame_x(tj, lambda s: psi(tj, s), x, track.point(j), x0)
        T[j], N[j] = fr.T, fr.N
    tt, xx = np.meshgrid(t, x, indexing="ij")
    p = psi(tt, xx)
    return FramePatch(t, x, T, N, p, psi_x(tt, xx), gauge(p, tt, a))


def _diff(f, h, axis, order):
    f = np.moveaxis(f, axis, 0)
    if order == 2:
        d = (f[2:] - f[:-2]) / (2 * h)
    else:
        d = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
    return np.moveaxis(d, 0, axis)


def verify_derivative_identities(patch: FramePatch, order: int = 2) -> dict:
    """Centered-difference residuals of

        T_x = Re(conj(psi) N),  N_x = -psi T,  T_t = Im(conj(psi_x) N),  N_t = -i psi_x T - i gamma N

    on the interior nodes, as sup and root-mean-square norms.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    nt, nx = patch.T.shape[:2]
    if min(nt, nx) < 5:
        raise ValueError("patch needs at least 5 x 5 nodes")
    ht, hx = np.diff(patch.t), np.diff(patch.x)
    if np.ptp(ht) > 1e-9 * ht[0] or np.ptp(hx) > 1e-9 * hx[0]:
        raise ValueError("patch must be uniform")
    ht, hx = ht[0], hx[0]
    m = order // 2
    inner = (slice(m, nt - m), slice(m, nx - m))
    T, N, p, px, g = patch.T, patch.N, patch.psi[..., None], patch.psi_x[..., None], patch.gamma[..., None]
    Tx = _diff(T, hx, 1, order)
    Nx = _diff(N, hx, 1, order)
    Tt = _diff(T, ht, 0, order)
    Nt = _diff(N, ht, 0, order)
    res = {
        "T_x": Tx[m:nt - m] - np.real(np.conj(p) * N)[inner],
        "N_x": Nx[m:nt - m] + (p * T)[inner],
        "T_t": Tt[:, m:nx - m] - np.imag(np.conj(px) * N)[inner],
        "N_t": Nt[:, m:nx - m] + (1j * px * T + 1j * g * N)[inner],
    }
    out = {}
    for k, r in res.items():
        mag = np.linalg.norm(np.abs(r), axis=-1)
        out[k] = {"sup": float(mag.max()), "rms": float(np.sqrt(np.mean(mag ** 2)))}
    return out


# Frenet frame

def _torsion_angle(tau, x, x_ref):
    x = np.asarray(x, dtype=float)
    th = cumulative_trapezoid(np.broadcast_to(tau, x.shape), x, initial=0.0)
    return th - np.interp(x_ref, x, th)


def frenet_to_parallel(T, n, b, tau, x, t: float = 0.0, x_ref: float = 0.0, psi=None) -> FrameField:
    """e1 + i e2 = (n + i b) exp(i Theta), Theta = int_{x_ref}^x tau."""
    th = _torsion_angle(tau, x, x_ref)[:, None]
    n, b = np.asarray(n, dtype=float), np.asarray(b, dtype=float)
    N = (n + 1j * b) * np.exp(1j * th)
    psi = np.zeros(len(th), dtype=complex) if psi is None else np.asarray(psi, dtype=complex)
    return FrameField(t, np.asarray(x, dtype=float), np.asarray(T, dtype=float).copy(), N.real.copy(), N.imag.copy(), psi)


def parallel_to_frenet(frames: FrameField, tau, x_ref: float = 0.0):
    th = _torsion_angle(tau, frames.x, x_ref)[:, None]
    nb = frames.N * np.exp(-1j * th)
    return frames.T.copy(), nb.real.copy(), nb.imag.copy()


# alignment

@dataclass
class Alignment:
    rotation: np.ndarray
    shift: np.ndarray
    aligned: np.ndarray
    max_error: float


def rigid_align(moving, target) -> Alignment:
    """Best rotation + translation of ``moving`` onto ``target`` (least squares)."""
    P = np.asarray(moving, dtype=float)
    Q = np.asarray(target, dtype=float)
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    rot, _ = Rotation.align_vectors(Q - cq, P - cp)
    R = rot.as_matrix()
    aligned = (P - cp) @ R.T + cq
    return Alignment(R, cq - cp @ R.T, aligned, float(np.max(np.linalg.norm(aligned - Q, axis=1))))
