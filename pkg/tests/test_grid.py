import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from binormal.grid import (
    ComplexField, GridSpec, forward, free_propagate, inverse, l2_norm,
    l2_norm_modes, spectral_derivative, transform, upsample, xgamma_norm,
)


@pytest.fixture
def grid():
    return GridSpec(1024, 20 * np.pi)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(100, 1.0)
    with pytest.raises(ValueError):
        GridSpec(8, 1.0)
    g = GridSpec(64, 3.0)
    assert abs(g.spacing * g.n_points - 2 * g.half_length) < 1e-14


def test_field_rejects_nan(grid):
    v = np.zeros(grid.n_points, complex)
    v[3] = np.nan
    with pytest.raises(ValueError):
        ComplexField(grid, v)
    with pytest.raises(ValueError):
        ComplexField(grid, np.zeros(5))


def test_derivative_of_plane_wave(grid):
    xi1 = grid.xi[7]
    f = ComplexField(grid, np.exp(1j * xi1 * grid.x))
    d = spectral_derivative(f, 1)
    assert np.max(np.abs(d.values - 1j * xi1 * f.values)) < 1e-10


def test_derivative_of_constant(grid):
    f = ComplexField(grid, np.full(grid.n_points, 2.5 + 1j))
    assert np.max(np.abs(spectral_derivative(f, 2).values)) < 1e-12


def test_derivative_of_gaussian(grid):
    x = grid.x
    d = spectral_derivative(ComplexField(grid, np.exp(-x ** 2)), 1)
    assert np.max(np.abs(d.values - (-2 * x * np.exp(-x ** 2)))) < 1e-9


def test_derivative_order_guard(grid):
    f = ComplexField(grid, np.zeros(grid.n_points))
    with pytest.raises(ValueError):
        spectral_derivative(f, 5)


def test_free_propagate_identity_and_unitary(grid, rng):
    f = ComplexField(grid, np.exp(-grid.x ** 2) * (1 + rng.normal(size=grid.n_points) * 0.1))
    assert np.max(np.abs(free_propagate(f, 0.0).values - f.values)) < 1e-14
    g = free_propagate(f, 3.7)
    assert abs(l2_norm(g) / l2_norm(f) - 1) < 1e-12


def test_free_gaussian_matches_closed_form(grid):
    x = grid.x
    f = ComplexField(grid, np.exp(-x ** 2 / 2))
    g = free_propagate(f, 1.0)
    exact = np.exp(-x ** 2 / (2 * (1 + 2j))) / np.sqrt(1 + 2j)
    assert np.max(np.abs(g.values - exact)) < 1e-8


def test_l2_norm_examples(grid):
    assert l2_norm(ComplexField(grid, np.zeros(grid.n_points))) == 0.0
    one = ComplexField(grid, np.ones(grid.n_points))
    assert abs(l2_norm(one) - np.sqrt(2 * grid.half_length)) < 1e-12
    gauss = ComplexField(grid, np.exp(-grid.x ** 2))
    assert abs(l2_norm(gauss) - np.sqrt(np.sqrt(np.pi / 2))) < 1e-8
    assert abs(np.sqrt(np.sqrt(np.pi / 2)) - 1.11951) < 1e-5


def test_fourier_convention_gaussian(grid):
    # continuum transform of exp(-x^2) is sqrt(pi) exp(-xi^2/4)
    fhat = forward(grid, np.exp(-grid.x ** 2))
    assert np.max(np.abs(fhat - np.sqrt(np.pi) * np.exp(-grid.xi ** 2 / 4))) < 1e-12


def test_xgamma_trivial_cases(grid):
    assert xgamma_norm(ComplexField(grid, np.zeros(grid.n_points)), 1.0, 0.1) == 0.0
    f = ComplexField(grid, np.exp(-(grid.x - 1) ** 2))
    fhat = np.abs(forward(grid, f))
    expected = l2_norm(f) + fhat[grid.xi ** 2 <= 1].max()
    assert abs(xgamma_norm(f, 1.0, 0.0) - expected) < 1e-14


def test_xgamma_against_quadrature(grid):
    center = 1.0
    f = ComplexField(grid, np.exp(-(grid.x - center) ** 2))
    gamma = 0.125

    def ft_abs(xi):
        re = integrate.quad(lambda x: np.exp(-(x - center) ** 2) * np.cos(xi * x), -30, 30, limit=200)[0]
        im = integrate.quad(lambda x: -np.exp(-(x - center) ** 2) * np.sin(xi * x), -30, 30, limit=200)[0]
        return np.hypot(re, im)

    low = grid.xi[grid.xi ** 2 <= 1]
    sup = max(abs(k) ** (2 * gamma) * ft_abs(k) for k in low)
    l2 = np.sqrt(integrate.quad(lambda x: np.exp(-2 * (x - center) ** 2), -30, 30)[0])
    oracle = l2 + sup
    assert abs(xgamma_norm(f, 1.0, gamma) / oracle - 1) < 1e-3


def test_xgamma_rejects_bad_args(grid):
    f = ComplexField(grid, np.zeros(grid.n_points))
    with pytest.raises(ValueError):
        xgamma_norm(f, 0.5, 0.0)
    with pytest.raises(ValueError):
        xgamma_norm(f, 1.0, 0.3)


def test_upsample_band_limited(grid):
    f = np.exp(-grid.x ** 2 / 4) * np.exp(1j * grid.x)
    xf, ff = upsample(grid, f, 4)
    assert np.max(np.abs(ff - np.exp(-xf ** 2 / 4) * np.exp(1j * xf))) < 1e-10


def _random_field(grid, seed):
    r = np.random.default_rng(seed)
    return ComplexField(grid, r.normal(size=grid.n_points) + 1j * r.normal(size=grid.n_points))


def test_parseval_many_random_fields(grid):
    for seed in range(100):
        f = _random_field(grid, seed)
        assert abs(l2_norm(f) / l2_norm_modes(transform(f)) - 1) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_round_trip_identity(seed):
    g = GridSpec(256, 7.0)
    f = _random_field(g, seed)
    back = inverse(g, forward(g, f))
    assert np.linalg.norm(back - f.values) <= 1e-12 * np.linalg.norm(f.values)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_free_propagate_semigroup(a, b, seed):
    g = GridSpec(256, 7.0)
    f = _random_field(g, seed)
    one = free_propagate(f, a + b).values
    two = free_propagate(free_propagate(f, a), b).values
    assert np.linalg.norm(one - two) <= 1e-11 * np.linalg.norm(f.values)
