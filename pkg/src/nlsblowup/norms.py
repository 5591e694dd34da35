"""Integral quantities of radial fields.

Quadrature conventions, shared with the solver so that conserved
quantities are exactly the ones the scheme conserves:

* node weights ``W_j`` are trapezoid weights of ``omega_N r^(N-1) dr``,
  except ``W_0`` which is the volume of the ball of radius ``r_1/2``;
* the gradient lives on cell midpoints: ``|grad u|^2 ~ sum_e K_e |Du_e|^2``
  with ``K_e = omega_N r_e^(N-1) Delta_e`` and ``Du_e`` the difference quotient;
* ball, ring and annulus integrals come from one cumulative function
  ``F_q(r)`` built from the piecewise-linear integrand, so masses are
  additive and nonnegative exactly, and ``F_q(r_max) = sum_j W_j |u_j|^q``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .core import RadialField, RadialGrid
from .errors import DomainExceeded, LadderEmpty, UnresolvedTailWarning, UnsupportedDimension

DEFAULT_TAIL_FLOOR = 1e-8
DEFAULT_LADDER_PER_OCTAVE = 8


def _cached(grid: RadialGrid, key, build):
    cache = grid._cache
    if key not in cache:
        val = build()
        val.setflags(write=False)
        cache[key] = val
    return cache[key]


def surface_area(N: int) -> float:
    return 2.0 * math.pi ** (N / 2.0) / math.gamma(N / 2.0)


def node_weights(grid: RadialGrid, N: int) -> np.ndarray:
    """Quadrature weights ``W_j`` for ``int f dx`` over the ball of radius r_max."""

    def build():
        r = grid.radii
        om = surface_area(N)
        d = np.diff(r)
        w = np.empty_like(r)
        w[1:-1] = om * r[1:-1] ** (N - 1) * (d[:-1] + d[1:]) / 2.0
        w[-1] = om * r[-1] ** (N - 1) * d[-1] / 2.0
        w[0] = om * (r[1] / 2.0) ** N / N
        return w

    return _cached(grid, ("W", N), build)


def edge_weights(grid: RadialGrid, N: int) -> np.ndarray:
    """Weights ``K_e = omega_N r_e^(N-1) Delta_e`` on cell midpoints."""

    def build():
        return surface_area(N) * grid.midpoints ** (N - 1) * grid.spacing

    return _cached(grid, ("K", N), build)


def radial_difference(u: RadialField) -> np.ndarray:
    """Difference quotients ``(u_{j+1} - u_j) / Delta_j`` on cell midpoints."""
    return np.diff(u.values) / u.grid.spacing


def tail_resolved(u: RadialField, floor: float = DEFAULT_TAIL_FLOOR, warn: bool = True) -> bool:
    ok = bool(abs(u.values[-1]) <= floor)
    if not ok and warn:
        warnings.warn(
            f"|u(r_max)| = {abs(u.values[-1]):.3g} exceeds the tail floor {floor:.3g}",
            UnresolvedTailWarning,
            stacklevel=3,
        )
    return ok


def power_integral(u: RadialField, q: float) -> float:
    """``int |u|^q dx`` with the node weights."""
    W = node_weights(u.grid, u.params.N)
    return float(np.dot(W, np.abs(u.values) ** q))


def lebesgue_norm(
    u: RadialField, q: float, tail_floor: float = DEFAULT_TAIL_FLOOR, warn: bool = True
) -> float:
    if q < 1:
        raise ValueError("Lebesgue exponent must be >= 1")
    tail_resolved(u, tail_floor, warn)
    return power_integral(u, q) ** (1.0 / q)


def gradient_norm_sq(u: RadialField) -> float:
    K = edge_weights(u.grid, u.params.N)
    return float(np.dot(K, np.abs(radial_difference(u)) ** 2))


# --- cumulative mass -------------------------------------------------------


def _integrand(u: RadialField, q: float) -> np.ndarray:
    return surface_area(u.params.N) * u.r ** (u.params.N - 1) * np.abs(u.values) ** q


def cumulative_nodes(u: RadialField, q: float) -> np.ndarray:
    """``F_q`` at the grid nodes (``F_q(0) = 0``)."""
    g = _integrand(u, q)
    d = u.grid.spacing
    W0 = node_weights(u.grid, u.params.N)[0]
    cells = 0.5 * d * (g[:-1] + g[1:])
    cells[0] += W0 * abs(u.values[0]) ** q
    return np.concatenate([[0.0], np.cumsum(cells)])


def cumulative_mass(u: RadialField, q: float, r) -> np.ndarray:
    """``F_q(r) = int_{|x| <= r} |u|^q dx`` at arbitrary radii in [0, r_max]."""
    r = np.asarray(r, dtype=float)
    grid = u.grid
    if r.size and (np.min(r) < 0 or np.max(r) > grid.r_max * (1 + 1e-12)):
        raise DomainExceeded("radius outside [0, r_max]")
    r = np.minimum(r, grid.r_max)
    g = _integrand(u, q)
    C = cumulative_nodes(u, q)
    rad = grid.radii
    j = np.clip(np.searchsorted(rad, r, side="right") - 1, 0, grid.M - 2)
    d = grid.spacing[j]
    x = r - rad[j]
    out = C[j] + x * g[j] + 0.5 * x * x * (g[j + 1] - g[j]) / d
    # origin cell also carries the ball of radius r_1/2 at |u_0|^q
    first = j == 0
    if np.any(first):
        N = u.params.N
        half = 0.5 * rad[1]
        out = np.where(
            first,
            out + surface_area(N) * abs(u.values[0]) ** q * np.minimum(r, half) ** N / N,
            out,
        )
    return out


def cumulative_gradient(u: RadialField, r) -> np.ndarray:
    """``int_{|x| <= r} |grad u|^2`` with ``|Du|^2`` constant on each cell.

    A partially covered cell contributes ``K_e |Du_e|^2`` times its covered
    share of shell volume, so ``cumulative_gradient(u, r_max)`` equals
    :func:`gradient_norm_sq` and ring integrals are additive.
    """
    r = np.asarray(r, dtype=float)
    grid = u.grid
    if r.size and (np.min(r) < 0 or np.max(r) > grid.r_max * (1 + 1e-12)):
        raise DomainExceeded("radius outside [0, r_max]")
    r = np.minimum(r, grid.r_max)
    N = u.params.N
    cell = edge_weights(grid, N) * np.abs(radial_difference(u)) ** 2
    C = np.concatenate([[0.0], np.cumsum(cell)])
    rad = grid.radii
    j = np.clip(np.searchsorted(rad, r, side="right") - 1, 0, grid.M - 2)
    lo, hi = rad[j] ** N, rad[j + 1] ** N
    share = (r**N - lo) / (hi - lo)
    return C[j] + cell[j] * share


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float

    def __post_init__(self):
        if not (0 <= self.r_in < self.r_out):
            raise ValueError(f"need 0 <= r_in < r_out, got [{self.r_in}, {self.r_out}]")

    def disjoint(self, other: "Annulus") -> bool:
        return self.r_out <= other.r_in or other.r_out <= self.r_in


def annulus_mass(u: RadialField, a: Annulus, weight_exponent: float = 2.0) -> float:
    if a.r_out > u.grid.r_max * (1 + 1e-12):
        raise DomainExceeded(f"annulus [{a.r_in}, {a.r_out}] leaves the grid")
    F = cumulative_mass(u, weight_exponent, [a.r_in, a.r_out])
    return float(max(F[1] - F[0], 0.0))


def mass_distribution(u: RadialField, R: float) -> float:
    """``R^(-2 s_c) int_{|x|<=R} |u|^2``."""
    if not 0 < R <= u.grid.r_max * (1 + 1e-12):
        raise DomainExceeded(f"R = {R} outside (0, r_max]")
    return float(cumulative_mass(u, 2.0, [R])[0] * R ** (-2.0 * u.params.s_c))


def holder_constant(N: int, p_c: float) -> float:
    """Best constant in ``R^(-2s_c) int_{B_R}|u|^2 <= C |u|_{p_c}^2``."""
    return (surface_area(N) / N) ** (1.0 - 2.0 / p_c)


# --- rho semi-norm ---------------------------------------------------------


def rho_ladder(R: float, r_max: float, per_octave: int = DEFAULT_LADDER_PER_OCTAVE) -> np.ndarray:
    """Radii ``R 2^(m/n) 2^k`` with ``2 R' <= r_max``.

    The octave factor is applied with ``ldexp`` so the ladder of ``2R`` is
    bitwise a subset of the ladder of ``R``.
    """
    if not R > 0:
        raise ValueError("base radius must be positive")
    if 2.0 * R > r_max:
        raise LadderEmpty(f"R = {R:.6g} exceeds r_max/2 = {r_max / 2:.6g}")
    base = R * np.exp2(np.arange(per_octave) / per_octave)
    octaves = int(math.floor(math.log2(r_max / (2.0 * R)))) + 2
    k = np.arange(octaves)
    cand = np.ldexp(base[None, :], k[:, None]).ravel()
    cand = np.sort(cand[2.0 * cand <= r_max])
    return cand


def ring_masses(u: RadialField, radii: np.ndarray) -> np.ndarray:
    """``int_{R' <= |x| <= 2R'} |u|^2`` for each ``R'``."""
    radii = np.asarray(radii, dtype=float)
    F = cumulative_mass(u, 2.0, np.concatenate([radii, 2.0 * radii]))
    n = radii.size
    return np.maximum(F[n:] - F[:n], 0.0)


def rho_seminorm(u: RadialField, R: float, per_octave: int = DEFAULT_LADDER_PER_OCTAVE) -> float:
    lad = rho_ladder(R, u.grid.r_max, per_octave)
    return float(np.max(lad ** (-2.0 * u.params.s_c) * ring_masses(u, lad)))


@dataclass(frozen=True)
class RhoProfile:
    base_radii: np.ndarray
    rho_values: np.ndarray
    dyadic_ladder: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["R", "rho"])
            for R, v in zip(self.base_radii, self.rho_values):
                w.writerow([repr(float(R)), repr(float(v))])


def rho_profile(
    u: RadialField, radii, per_octave: int = DEFAULT_LADDER_PER_OCTAVE
) -> RhoProfile:
    """``rho(u, R)`` on many base radii from one shared ladder.

    The ladder is the union of the per-radius ladders, and each value is the
    sup over its rungs ``R' >= R``. Those sets are nested, so the profile is
    exactly non-increasing, and each value is at least :func:`rho_seminorm`.
    Radii must be positive and at most ``r_max/2``.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    if not radii.size:
        return RhoProfile(radii, np.empty(0), np.empty(0))
    ladder = np.unique(np.concatenate([rho_ladder(R, u.grid.r_max, per_octave) for R in radii]))
    w = ladder ** (-2.0 * u.params.s_c) * ring_masses(u, ladder)
    tail_max = np.maximum.accumulate(w[::-1])[::-1]
    vals = tail_max[np.searchsorted(ladder, radii, side="left")]
    return RhoProfile(radii, vals, ladder)


# --- fractional Sobolev norm -----------------------------------------------


def _sphere_average(N: int, z: np.ndarray) -> np.ndarray:
    """Spherical mean of ``exp(-i x.xi)``: ``Gamma(N/2) (2/z)^(N/2-1) J_(N/2-1)(z)``."""
    if N == 3:
        return np.sinc(z / math.pi)
    nu = N / 2.0 - 1.0
    out = np.ones_like(z)
    nz = z > 1e-8
    zz = z[nz]
    out[nz] = math.gamma(N / 2.0) * (2.0 / zz) ** nu * special.jv(nu, zz)
    return out


def radial_fourier_transform(u: RadialField, xi: np.ndarray, chunk: int = 64) -> np.ndarray:
    """``u_hat(xi) = (2 pi)^(-N/2) int u(x) exp(-i x.xi) dx`` for radial ``u``.

    Uniform grids use plain trapezoid weights (spectrally accurate for smooth
    data below ``pi/h``). Nonuniform grids in N = 3 integrate the
    piecewise-linear interpolant of ``r u`` against ``sin(xi r)`` exactly, so
    coarse cells do not alias into high frequencies.
    """
    N = u.params.N
    xi = np.asarray(xi, dtype=float)
    out = np.empty(xi.shape, dtype=complex)
    if N == 3 and u.grid.spacing_mode != "uniform":
        r = u.r
        v = r * u.values
        slope = np.diff(v) / u.grid.spacing
        for a in range(0, xi.size, chunk):
            x = xi[a : a + chunk]
            ds = np.diff(np.sin(np.outer(x, r)), axis=1)
            tail = -v[-1] * np.cos(x * r[-1]) / x
            out[a : a + chunk] = (tail + ds @ slope / x**2) / x
        return out * 4.0 * math.pi * (2.0 * math.pi) ** -1.5
    # r^(N-1) vanishes at the origin: no ball-volume lump here
    W = node_weights(u.grid, N).copy()
    W[0] = 0.0
    wu = W * u.values
    for a in range(0, xi.size, chunk):
        k = _sphere_average(N, np.outer(xi[a : a + chunk], u.r))
        out[a : a + chunk] = k @ wu
    return out * (2.0 * math.pi) ** (-N / 2.0)


def sobolev_norm_sq(
    u: RadialField, s: float, hankel: bool = True, per_decade: int = 48
) -> float:
    """``int |xi|^(2s) |u_hat|^2 dxi`` by trapezoid in ``log xi``.

    The window starts at ``1e-4/r_max`` (``u_hat`` is treated as constant
    below it) and ends at ``pi/h`` on uniform grids, ``100 pi/h_min`` for
    the exact piecewise-linear transform, ``pi/h_max`` otherwise.
    """
    N = u.params.N
    if N % 2 == 0 and not hankel:
        raise UnsupportedDimension("even N needs the Fourier-Bessel quadrature (hankel=True)")
    d = u.grid.spacing
    lo = 1e-4 / u.grid.r_max
    if u.grid.spacing_mode == "uniform":
        hi = math.pi / float(np.min(d))
    elif N == 3:
        hi = 100.0 * math.pi / float(np.min(d))
    else:
        hi = math.pi / float(np.max(d))
    n = max(64, int(per_decade * math.log10(hi / lo)) + 1)
    t = np.linspace(math.log(lo), math.log(hi), n)
    xi = np.exp(t)
    uh2 = np.abs(radial_fourier_transform(u, xi)) ** 2
    e = 2.0 * s + N
    body = np.trapezoid(xi**e * uh2, t)
    below = uh2[0] * lo**e / e
    return float(surface_area(N) * (body + below))


def sobolev_critical_norm(u: RadialField, hankel: bool = True) -> float:
    return math.sqrt(sobolev_norm_sq(u, u.params.s_c, hankel=hankel))
