import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from nlsblowup.core import RadialField, RadialGrid, derive_params
from nlsblowup.dynamics import (CutoffSpec, dispersive_integral, energy, global_virial_rhs, local_mass, momentum,
                                momentum_bound, renormalized_view, self_similar_dispersive_constant)
from nlsblowup.errors import RangeExceeded, ZeroField
from nlsblowup.norms import gradient_norm_sq, power_integral

P33 = derive_params(3, 3.0)


def complex_field(seed, grid=None):
    rng = np.random.default_rng(seed)
    grid = grid or RadialGrid.uniform(16.0, 2049)
    r = grid.radii
    v = np.zeros(r.size, complex)
    for _ in range(3):
        c, w = rng.uniform(0, 6), rng.uniform(0.4, 2.0)
        v += (rng.normal() + 1j * rng.normal()) * np.exp(-((r - c) / w) ** 2 + 1j * rng.normal() * r)
    v[-1] = 0
    return RadialField(grid, v, P33)


@pytest.mark.parametrize("R", [0.5, 1.0, 3.0])
def test_cutoff_shapes(R):
    r = np.linspace(0, 4 * R, 4001)
    chi = CutoffSpec("chi", R)(r)
    assert np.all(chi[r <= R] == 1) and np.all(chi[r >= 2 * R] == 0)
    assert np.all(np.diff(chi) <= 1e-15)
    psi = CutoffSpec("psi", R)
    v = psi(r)
    assert np.allclose(v[r <= 2 * R], r[r <= 2 * R] ** 2 / 2, rtol=1e-14)
    assert np.all(v[r >= 3 * R] == 0)
    inside = (r > 0) & (r < 3 * R)
    assert np.all(psi.derivative(r, 1)[inside] ** 2 <= psi.C_psi * v[inside] * (1 + 1e-9))


def test_cutoff_laplacian_in_quadratic_region():
    c = CutoffSpec("psi", 2.0)
    r = np.linspace(0.1, 3.9, 50)
    assert np.allclose(c.laplacian(r, 3), 3.0)
    assert np.allclose(c.bilaplacian(r, 3), 0.0, atol=1e-12)


def test_cutoff_derivatives_match_finite_differences():
    c = CutoffSpec("chi", 1.0)
    r = np.linspace(1.05, 1.95, 19)
    h = 1e-5
    for k in range(3):
        fd = (c.derivative(r + h, k) - c.derivative(r - h, k)) / (2 * h)
        assert np.allclose(fd, c.derivative(r, k + 1), atol=1e-6)


def test_energy_small_amplitude(gauss):
    eps = 1e-3
    # 1/2 of (3/2) pi^(3/2) eps^2 minus a quartic term of order eps^4
    assert energy(gauss * eps) == pytest.approx(0.75 * math.pi**1.5 * eps**2, rel=1e-5)
    assert energy(gauss * 0.0) == 0.0


def test_negative_energy_threshold():
    g = RadialGrid.uniform(12.0, 8193)
    G2 = 4 * math.pi * integrate.quad(lambda r: (2 * r * math.exp(-r * r)) ** 2 * r * r, 0, np.inf)[0]
    G4 = 4 * math.pi * integrate.quad(lambda r: math.exp(-4 * r * r) * r * r, 0, np.inf)[0]
    A_star = math.sqrt(2 * G2 / G4)
    for A in (1.0, 3.0, 5.0):
        u = RadialField.from_function(g, P33, lambda r: A * np.exp(-r * r))
        assert energy(u) == pytest.approx(0.5 * A**2 * G2 - 0.25 * A**4 * G4, rel=1e-6)
    below = RadialField.from_function(g, P33, lambda r: 0.99 * A_star * np.exp(-r * r))
    above = RadialField.from_function(g, P33, lambda r: 1.01 * A_star * np.exp(-r * r))
    assert energy(below) > 0 > energy(above)
    assert A_star < 5.0  # the headline datum has negative energy


def test_local_mass_over_support(gauss):
    assert local_mass(gauss, CutoffSpec("chi", 9.0)) == pytest.approx(power_integral(gauss, 2), rel=1e-10)
    assert local_mass(gauss * 0.0, CutoffSpec("chi", 1.0)) == 0.0


def test_momentum_of_real_field(gauss):
    assert momentum(gauss, CutoffSpec("psi", 1.0)) == 0.0


@pytest.mark.parametrize("alpha", [0.3, -1.1])
def test_momentum_chirp_oracle(alpha):
    g = RadialGrid.uniform(12.0, 8193)
    u = RadialField.from_function(g, P33, lambda r: np.exp(-r * r / 2 + 1j * alpha * r * r))
    c = CutoffSpec("psi", 1.5)
    exact = 4 * math.pi * integrate.quad(
        lambda r: c.derivative(np.array([r]), 1)[0] * 2 * alpha * r * math.exp(-r * r) * r * r, 0, 4.5,
        points=[3.0], epsabs=0, epsrel=1e-12)[0]
    assert momentum(u, c) == pytest.approx(exact, rel=1e-5)


@given(st.integers(0, 10**6), st.sampled_from([0.5, 1.0, 2.0, 4.0]))
def test_momentum_cauchy_schwarz(seed, R):
    u = complex_field(seed)
    c = CutoffSpec("psi", R)
    assert abs(momentum(u, c)) <= momentum_bound(u, c) * (1 + 1e-9)


def test_dispersive_constant_gradient():
    t = np.linspace(0, 10, 11)
    val, ratio = dispersive_integral(t, np.full(t.size, 4.0), 7.5, 0.5)
    assert val == pytest.approx(4.0 * 7.5**2 / 2, rel=1e-14)
    assert ratio == pytest.approx(val / 7.5**1.5)
    with pytest.raises(RangeExceeded):
        dispersive_integral(t, np.ones(t.size), 11.0, 0.5)


@pytest.mark.parametrize("s_c", [0.5, 2 / 3])
def test_dispersive_self_similar_beta(s_c):
    t = np.concatenate([[0.0], np.geomspace(1e-14, 3.0, 200001)])
    g = np.concatenate([[0.0], t[1:] ** (s_c - 1)])
    _, ratio = dispersive_integral(t, g, 3.0, s_c)
    assert ratio == pytest.approx(self_similar_dispersive_constant(s_c), rel=1e-4)
    assert self_similar_dispersive_constant(s_c) == pytest.approx(1 / (s_c * (s_c + 1)))


@given(st.integers(0, 10**6))
def test_renormalized_view_unit_gradient(seed):
    u = complex_field(seed)
    view = renormalized_view(u)
    assert gradient_norm_sq(view.field) == pytest.approx(1.0, rel=1e-6)
    assert np.allclose(view.field.values, view.lam**P33.alpha * np.conj(u.values))


def test_renormalized_view_depth():
    g = RadialGrid.uniform(16.0, 2049)
    u = complex_field(3, g)
    v = renormalized_view(u).field
    again = renormalized_view(v.conj())
    assert again.lam == pytest.approx(1.0, rel=1e-12)
    lam = math.exp(-10.0)
    scaled = RadialField(v.grid.scaled(lam), lam ** (-P33.alpha) * v.values, P33)
    assert renormalized_view(scaled).N_t == pytest.approx(10.0, rel=1e-9)
    with pytest.raises(ZeroField):
        renormalized_view(u * 0.0)


def test_global_virial_rhs_formula(gauss):
    E = energy(gauss)
    G = gradient_norm_sq(gauss)
    assert global_virial_rhs(gauss) == pytest.approx(4 * 3 * 2 * E - 16 * 0.5 / 2 * G)
