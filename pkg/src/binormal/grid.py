"""Uniform periodic grid, Fourier transform conventions and norms.

The real line is replaced by the periodic box [-L, L) sampled at ``n``
points.  Fourier coefficients follow

    f_hat(xi) = integral f(x) exp(-i xi x) dx

approximated by a Riemann sum with weight ``spacing``, so Parseval reads
``||f||^2 = (1 / 2L) * sum |f_hat_k|^2``.  Arrays of modes are kept in
numpy FFT order (k = 0, 1, ..., n/2 - 1, -n/2, ..., -1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

MAX_DERIVATIVE_ORDER = 4


@dataclass(frozen=True)
class GridSpec:
    n_points: int = 4096
    half_length: float = 40 * np.pi

    def __post_init__(self):
        n = self.n_points
        if n < 16 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 16, got {n}")
        if not self.half_length > 0:
            raise ValueError("half_length must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        return -self.half_length + self.spacing * np.arange(self.n_points)

    @cached_property
    def xi(self) -> np.ndarray:
        """Angular frequencies pi*k/L in FFT order."""
        k = np.fft.fftfreq(self.n_points, d=1.0 / self.n_points)
        return np.pi * k / self.half_length

    @cached_property
    def _sign(self) -> np.ndarray:
        # exp(i xi_k L) = (-1)^k accounts for the grid starting at -L
        k = np.fft.fftfreq(self.n_points, d=1.0 / self.n_points).astype(int)
        return np.where(k % 2 == 0, 1.0, -1.0)

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "half_length": self.half_length}


@dataclass
class ComplexField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} samples, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite samples")


@dataclass
class SpectrumField:
    grid: GridSpec
    modes: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.xi


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, ComplexField) else np.asarray(f, dtype=complex)


def forward(grid: GridSpec, f) -> np.ndarray:
    """Continuum-normalized Fourier coefficients of samples ``f``."""
    return grid.spacing * grid._sign * np.fft.fft(_values(f))


def inverse(grid: GridSpec, modes: np.ndarray) -> np.ndarray:
    return np.fft.ifft(np.asarray(modes) * grid._sign) / grid.spacing


def transform(f: ComplexField) -> SpectrumField:
    return SpectrumField(f.grid, forward(f.grid, f))


def inverse_transform(s: SpectrumField) -> ComplexField:
    return ComplexField(s.grid, inverse(s.grid, s.modes))


def spectral_derivative(f: ComplexField, order: int = 1) -> ComplexField:
    if order < 1 or order > MAX_DERIVATIVE_ORDER:
        raise ValueError(f"derivative order must be in 1..{MAX_DERIVATIVE_ORDER}")
    g = f.grid
    mult = (1j * g.xi) ** order
    if order % 2 == 1:
        # the Nyquist mode has no well-defined odd derivative
        mult[g.n_points // 2] = 0.0
    return ComplexField(g, np.fft.ifft(mult * np.fft.fft(f.values)))


def derivative_array(grid: GridSpec, values: np.ndarray, order: int = 1) -> np.ndarray:
    return spectral_derivative(ComplexField(grid, values), order).values


def free_propagator(grid: GridSpec, dt: float) -> np.ndarray:
    """Multipliers of exp(i dt d_xx) in FFT order."""
    return np.exp(-1j * dt * grid.xi ** 2)


def free_propagate(f: ComplexField, dt: float) -> ComplexField:
    if not np.isfinite(dt):
        raise ValueError("dt must be finite")
    g = f.grid
    return ComplexField(g, np.fft.ifft(free_propagator(g, dt) * np.fft.fft(f.values)))


def l2_norm(f) -> float:
    if isinstance(f, ComplexField):
        h = f.grid.spacing
    else:
        raise TypeError("l2_norm expects a ComplexField")
    return float(np.sqrt(np.sum(np.abs(f.values) ** 2) * h))


def l2_norm_modes(s: SpectrumField) -> float:
    return float(np.sqrt(np.sum(np.abs(s.modes) ** 2) / (2.0 * s.grid.half_length)))


def xgamma_norm(f: ComplexField, t0: float = 1.0, gamma: float = 0.0) -> float:
    """Weighted norm t0^{-1/4}||f|| + t0^{gamma-1/2} sup_{xi^2<=1} |xi|^{2 gamma}|f_hat|.

    The supremum runs over grid frequencies only.
    """
    if t0 < 1:
        raise ValueError("t0 must be >= 1")
    if not 0.0 <= gamma <= 0.25:
        raise ValueError("gamma must lie in [0, 1/4]")
    g = f.grid
    fhat = np.abs(forward(g, f))
    low = g.xi ** 2 <= 1.0
    weight = np.abs(g.xi[low]) ** (2 * gamma) if gamma > 0 else 1.0
    sup = float(np.max(weight * fhat[low]))
    return t0 ** -0.25 * l2_norm(f) + t0 ** (gamma - 0.5) * sup


def upsample(grid: GridSpec, values: np.ndarray, factor: int) -> tuple[np.ndarray, np.ndarray]:
    """Trigonometric interpolation onto a grid ``factor`` times finer.

    Returns (x_fine, values_fine); exact for band-limited samples.
    """
    n = grid.n_points
    m = n * factor
    c = np.fft.fft(values)
    padded = np.zeros(m, dtype=complex)
    half = n // 2
    padded[:half] = c[:half]
    padded[-half:] = c[-half:]
    # split the Nyquist coefficient symmetrically
    padded[half] = 0.5 * c[half]
    padded[-half] = 0.5 * c[half]
    fine = np.fft.ifft(padded) * factor
    x_fine = -grid.half_length + (grid.spacing / factor) * np.arange(m)
    return x_fine, fine
