import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsblowup.core import (RadialField, RadialGrid, ScalingAction, derive_params, interpolate, lambda_of,
                            rescale)
from nlsblowup.errors import DomainExceeded, NonFinite, OutOfRange, ZeroField
from nlsblowup.norms import gradient_norm_sq, lebesgue_norm


@pytest.mark.parametrize("N,p,s_c,p_c", [(3, 3.0, 0.5, 3.0), (3, 4.0, 5 / 6, 4.5), (4, 2.5, 2 / 3, 3.0),
                                         (5, 2.0, 0.5, 2.5)])
def test_derived_exponents(N, p, s_c, p_c):
    P = derive_params(N, p)
    assert P.s_c == pytest.approx(s_c, abs=1e-15)
    assert P.p_c == pytest.approx(p_c, abs=1e-15)
    assert P.alpha == pytest.approx(2 / (p - 1))


@pytest.mark.parametrize("N,p", [(3, 5.0), (3, 7 / 3), (3, 1.0), (2.5, 3.0), (1, 3.0), (3, 6.0)])
def test_out_of_range(N, p):
    with pytest.raises(OutOfRange):
        derive_params(N, p)


def test_sphere_area():
    assert derive_params(3, 3.0).omega == pytest.approx(4 * math.pi)
    assert derive_params(4, 2.5).omega == pytest.approx(2 * math.pi**2)


def test_grid_validation():
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.1, 1.0]))
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.0, 1.0, 1.0]))
    g = RadialGrid.log_uniform(10.0, 100, 1e-3)
    assert g.radii[0] == 0 and g.r_min == pytest.approx(1e-3) and g.r_max == 10.0
    assert np.allclose(g.radii[2:-1] / g.radii[1:-2], g.stretch)


def test_field_rejects_bad_values(grid, P):
    with pytest.raises(NonFinite):
        RadialField(grid, np.full(grid.M, np.nan), P)
    with pytest.raises(ValueError):
        RadialField(grid, np.zeros(3), P)


@given(st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_scaling_composition(a, b):
    assert ScalingAction(a).compose(ScalingAction(b)).lam == pytest.approx(a * b)


@given(st.floats(0.25, 4.0))
def test_rescale_preserves_critical_norms(lam):
    P = derive_params(3, 3.0)
    g = RadialGrid.uniform(30.0, 3001)
    u = RadialField.from_function(g, P, lambda r: np.exp(-r * r) * (1 + 0.3j * r))
    v = rescale(u, lam)
    assert lebesgue_norm(v, P.p_c, warn=False) == pytest.approx(lebesgue_norm(u, P.p_c, warn=False), rel=1e-12)
    # |grad| scales like lam^(2(1-s_c))
    assert gradient_norm_sq(v) == pytest.approx(lam ** (2 * (1 - P.s_c)) * gradient_norm_sq(u), rel=1e-12)


def test_rescale_onto_target(grid, gauss):
    lam = 0.5
    v = rescale(gauss, lam, target=RadialGrid.uniform(10.0, 2048))
    r = v.r
    # pchip drops to second order at the flat maximum, h = 5e-3
    assert np.max(np.abs(v.values - lam * np.exp(-(lam * r) ** 2 / 2))) < 1e-6
    with pytest.raises(DomainExceeded):
        rescale(gauss, 4.0, target=grid)


def test_lambda_of_normalizes(gauss):
    lam = lambda_of(gauss)
    v = rescale(gauss, lam)
    assert gradient_norm_sq(v) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ZeroField):
        lambda_of(gauss * 0.0)


def test_interpolate_exact_on_nodes(gauss):
    assert np.array_equal(interpolate(gauss, gauss.r[:50]), gauss.values[:50])
