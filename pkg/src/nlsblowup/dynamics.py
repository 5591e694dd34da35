"""Energy, cutoff functionals and the localized flux/virial identities.

The discrete momentum uses the same staggered stencil as the gradient norm:
``Im sum_e K_e (Dc)_e conj(avg u)_e (Du)_e``. With this choice the
conservative time stepper satisfies the discrete flux law
``(M_c(t+dt) - M_c(t))/dt = 2 momentum_c(midpoint)`` exactly, so the flux
residual measured from recorded series is pure time-differencing error.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special
from scipy.interpolate import BPoly

from .core import RadialField, RadialGrid, ScalingAction, lambda_of, rescale
from .errors import InsufficientSampling, RangeExceeded
from .norms import (
    edge_weights,
    gradient_norm_sq,
    node_weights,
    power_integral,
    radial_difference,
    surface_area,
)

# ---------------------------------------------------------------- cutoffs


@lru_cache(maxsize=None)
def _bridge(kind: str) -> tuple:
    """Degree-7 Hermite bridge and its derivatives up to order 4."""
    if kind == "psi":
        b = BPoly.from_derivatives([2.0, 3.0], [[2.0, 2.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    else:
        b = BPoly.from_derivatives([1.0, 2.0], [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    return tuple([b] + [b.derivative(k) for k in range(1, 5)])


def _base(kind: str, x: np.ndarray, k: int) -> np.ndarray:
    """k-th derivative of the unit-scale cutoff."""
    x = np.asarray(x, dtype=float)
    lo, hi = (2.0, 3.0) if kind == "psi" else (1.0, 2.0)
    out = np.zeros_like(x)
    inner = x <= lo
    if kind == "psi":
        out[inner] = (0.5 * x[inner] ** 2, x[inner], 1.0, 0.0, 0.0)[k]
    elif k == 0:
        out[inner] = 1.0
    mid = (x > lo) & (x < hi)
    out[mid] = _bridge(kind)[k](x[mid])
    return out


@lru_cache(maxsize=None)
def _c_psi() -> float:
    x = np.linspace(2.0, 3.0, 100_001)[:-1]
    b = _bridge("psi")
    ratio = b[1](x) ** 2 / b[0](x)
    # inside r <= 2 the ratio is r^2 / (r^2/2) = 2
    return float(max(2.0, ratio.max()))


@dataclass(frozen=True)
class CutoffSpec:
    """Smooth radial cutoff at scale ``R``.

    ``psi``: ``R^2 psi(r/R)`` with ``psi = r^2/2`` on [0, 2] and 0 beyond 3.
    ``chi``: ``chi(r/R)`` with ``chi = 1`` on [0, 1] and 0 beyond 2.
    """

    kind: str
    R: float
    profile: str = "hermite7"

    def __post_init__(self):
        if self.kind not in ("psi", "chi"):
            raise ValueError(f"cutoff kind must be 'psi' or 'chi', got {self.kind!r}")
        if not self.R > 0:
            raise ValueError("cutoff scale must be positive")
        if self.profile != "hermite7":
            raise ValueError(f"unknown cutoff profile {self.profile!r}")

    @property
    def support(self) -> float:
        return (3.0 if self.kind == "psi" else 2.0) * self.R

    @property
    def flat_radius(self) -> float:
        """Radius below which the cutoff is exactly its polynomial core."""
        return (2.0 if self.kind == "psi" else 1.0) * self.R

    @property
    def C_psi(self) -> float:
        """Sup of ``|psi'|^2 / psi`` (scale-free)."""
        return _c_psi()

    def derivative(self, r, k: int = 0) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        scale = self.R ** (2 - k) if self.kind == "psi" else self.R ** (-k)
        return scale * _base(self.kind, r / self.R, k)

    def __call__(self, r) -> np.ndarray:
        return self.derivative(r, 0)

    def laplacian(self, r, N: int) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        core = self.kind == "psi"
        flat = r <= self.flat_radius
        rs = np.where(flat, 1.0, r)
        val = self.derivative(r, 2) + (N - 1) * self.derivative(r, 1) / rs
        return np.where(flat, float(N) if core else 0.0, val)

    def bilaplacian(self, r, N: int) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        flat = r <= self.flat_radius
        rs = np.where(flat, 1.0, r)
        d1, d2, d3, d4 = (self.derivative(r, k) for k in range(1, 5))
        val = d4 + 2 * (N - 1) * d3 / rs + (N - 1) * (N - 3) * (d2 / rs**2 - d1 / rs**3)
        return np.where(flat, 0.0, val)

    @property
    def breaks(self) -> tuple[float, float]:
        return (self.flat_radius, self.support)

    def laplacian_weights(self, grid: RadialGrid, N: int) -> np.ndarray:
        """Node weights of ``int Dc f`` for piecewise-linear ``f``."""
        return hat_weights(grid, N, lambda r: self.laplacian(r, N), self.support, self.breaks)

    def bilaplacian_weights(self, grid: RadialGrid, N: int) -> np.ndarray:
        """Node weights of ``int D^2c f`` for piecewise-linear ``f``.

        ``D^2c`` jumps at both ends of the bridge, so nodal trapezoid weights
        would be only first order with a node-alignment dependent constant.
        """
        return hat_weights(grid, N, lambda r: self.bilaplacian(r, N), self.support, self.breaks)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def hat_weights(grid: RadialGrid, N: int, f, upto: float, breaks=()) -> np.ndarray:
    """``w_j = omega int_0^upto f(r) phi_j(r) r^(N-1) dr`` with hat functions ``phi_j``.

    Intervals are split at ``breaks`` so that ``f`` may jump there; each
    piece uses 5-point Gauss-Legendre.
    """
    r = grid.radii
    om = surface_area(N)
    w = np.zeros(r.size)
    ne = int(np.searchsorted(r, upto, side="left"))
    ne = min(max(ne, 1), r.size - 1)
    a, b = r[:ne], r[1 : ne + 1]
    pieces = [(np.arange(ne), a, b)]
    split = np.zeros(ne, bool)
    for x in breaks:
        split |= (a < x) & (x < b)
    if split.any():
        idx = np.flatnonzero(split)
        pieces = [(np.flatnonzero(~split), a[~split], b[~split])]
        for e in idx:
            cuts = [r[e]] + sorted(x for x in breaks if r[e] < x < r[e + 1]) + [r[e + 1]]
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                pieces.append((np.array([e]), np.array([lo]), np.array([hi])))
    for e, lo, hi in pieces:
        if e.size == 0:
            continue
        pts = lo[:, None] + (hi - lo)[:, None] * _GL_X
        val = f(pts.ravel()).reshape(pts.shape) * pts ** (N - 1) * _GL_W * (hi - lo)[:, None]
        t = (pts - r[e][:, None]) / (r[e + 1] - r[e])[:, None]
        np.add.at(w, e, om * np.sum(val * (1.0 - t), axis=1))
        np.add.at(w, e + 1, om * np.sum(val * t, axis=1))
    return w


# ---------------------------------------------------------------- functionals


def energy(u: RadialField, coupling: float = 1.0) -> float:
    """``1/2 |grad u|^2 - coupling/(p+1) int |u|^(p+1)``."""
    p = u.params.p
    return 0.5 * gradient_norm_sq(u) - coupling * power_integral(u, p + 1.0) / (p + 1.0)


def local_mass(u: RadialField, c: CutoffSpec) -> float:
    """``int c |u|^2``."""
    W = node_weights(u.grid, u.params.N)
    return float(np.dot(W * c(u.r), np.abs(u.values) ** 2))


def momentum(u: RadialField, c: CutoffSpec) -> float:
    """``Im int grad c . grad u conj(u)`` on the staggered stencil."""
    K = edge_weights(u.grid, u.params.N)
    dc = np.diff(c(u.r)) / u.grid.spacing
    ubar = 0.5 * (u.values[1:] + u.values[:-1])
    return float(np.imag(np.sum(K * dc * np.conj(ubar) * radial_difference(u))))


def momentum_bound(u: RadialField, c: CutoffSpec) -> float:
    """Cauchy-Schwarz bound ``C_psi^(1/2) |grad u| (int psi |u|^2)^(1/2)``."""
    return math.sqrt(c.C_psi * gradient_norm_sq(u) * max(local_mass(u, c), 0.0))


def virial_terms(u: RadialField, c: CutoffSpec, coupling: float = 1.0) -> tuple[float, float, float]:
    """The three terms ``int c''|u'|^2``, ``1/4 int D^2c |u|^2`` and
    ``(1/2 - 1/(p+1)) int Dc |u|^(p+1)`` of the localized virial law."""
    N, p = u.params.N, u.params.p
    K = edge_weights(u.grid, N)
    rm = u.grid.midpoints
    a = float(np.dot(K * c.derivative(rm, 2), np.abs(radial_difference(u)) ** 2))
    m = np.abs(u.values)
    b = 0.25 * float(np.dot(c.bilaplacian_weights(u.grid, N), m**2))
    g = coupling * (0.5 - 1.0 / (p + 1.0)) * float(np.dot(c.laplacian_weights(u.grid, N), m ** (p + 1.0)))
    return a, b, g


def virial_rhs(u: RadialField, c: CutoffSpec, coupling: float = 1.0) -> float:
    """Right side of ``1/2 d/dt momentum_c``."""
    a, b, g = virial_terms(u, c, coupling)
    return a - b - g


def flux_scale(u: RadialField, c: CutoffSpec) -> float:
    """``int |c'| |u'| |u|``: size of the flux integrand, used to normalize."""
    K = edge_weights(u.grid, u.params.N)
    dc = np.abs(np.diff(c(u.r)) / u.grid.spacing)
    ubar = 0.5 * (np.abs(u.values[1:]) + np.abs(u.values[:-1]))
    return float(np.sum(K * dc * ubar * np.abs(radial_difference(u))))


def virial_scale(u: RadialField, c: CutoffSpec, coupling: float = 1.0) -> float:
    """Sum of the absolute virial integrands, used to normalize."""
    N, p = u.params.N, u.params.p
    K = edge_weights(u.grid, N)
    m = np.abs(u.values)
    a = np.dot(K * np.abs(c.derivative(u.grid.midpoints, 2)), np.abs(radial_difference(u)) ** 2)
    b = 0.25 * np.dot(np.abs(c.bilaplacian_weights(u.grid, N)), m**2)
    g = abs(coupling) * (0.5 - 1.0 / (p + 1.0)) * np.dot(np.abs(c.laplacian_weights(u.grid, N)), m ** (p + 1.0))
    return float(a + b + g)


def global_virial_rhs(u: RadialField, coupling: float = 1.0) -> float:
    """``d^2/dt^2 int |x|^2 |u|^2 = 4N(p-1)E - 16 s_c/(N - 2 s_c) |grad u|^2``."""
    N, p, s = u.params.N, u.params.p, u.params.s_c
    E = energy(u, coupling)
    return 4.0 * N * (p - 1.0) * E - 16.0 * s / (N - 2.0 * s) * gradient_norm_sq(u)


# ---------------------------------------------------------------- residuals


def _check_sampling(t: np.ndarray, dt_solver: float | None) -> None:
    if t.size < 3:
        raise InsufficientSampling("need at least three samples for centered differences")
    if np.any(np.diff(t) <= 0):
        raise InsufficientSampling("times must be strictly increasing")
    if dt_solver is not None and np.max(np.diff(t)) > 10.0 * dt_solver:
        raise InsufficientSampling(
            f"sampling step {np.max(np.diff(t)):.3g} exceeds 10x the solver step {dt_solver:.3g}"
        )


def centered_derivative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order derivative on a nonuniform time grid."""
    return np.gradient(y, t, edge_order=2)


def centered_derivative_from_increments(
    t: np.ndarray, dy: np.ndarray, gaps: np.ndarray | None = None
) -> np.ndarray:
    """The interior three-point derivative of ``np.gradient`` built from
    increments ``dy[k] = y[k] - y[k-1]`` (``dy[0]`` unused); ends are NaN.

    ``gaps[k] = t[k] - t[k-1]`` may be passed when the recorded times are
    too coarse to difference.
    """
    h = np.diff(t) if gaps is None else np.asarray(gaps, float)[1:]
    a, b = h[:-1], h[1:]
    inc_lo, inc_hi = dy[1:-1], dy[2:]
    out = np.full(t.shape, np.nan)
    out[1:-1] = (a * a * inc_hi + b * b * inc_lo) / (a * b * (a + b))
    return out


def identity_residual(
    t: np.ndarray, lhs_series: np.ndarray, rhs_series: np.ndarray, scale_series: np.ndarray,
    dt_solver: float | None = None, lhs_increments: np.ndarray | None = None,
    gaps: np.ndarray | None = None,
) -> float:
    """``max_k |1/2 d/dt lhs - rhs| / scale`` over interior samples.

    When ``lhs_increments`` is given the derivative is formed from it rather
    than from differences of ``lhs_series``.
    """
    t = np.asarray(t, float)
    _check_sampling(t, dt_solver)
    if lhs_increments is not None:
        d = 0.5 * centered_derivative_from_increments(t, np.asarray(lhs_increments, float), gaps)
    else:
        d = 0.5 * centered_derivative(t, np.asarray(lhs_series, float))
    res = np.abs(d - rhs_series)[1:-1]
    scale = np.maximum(np.asarray(scale_series, float)[1:-1], 1e-300)
    return float(np.max(res / scale))


def _gaps(traj, inc, upto):
    if inc is None or "gap" not in traj.columns:
        return None
    return traj.series("gap", upto=upto)[0]


def flux_identity_residual(traj, c: CutoffSpec, solver_callback=None, upto=None) -> float:
    """Flux law ``1/2 d/dt int c|u|^2 = Im int grad c . grad u conj(u)`` along ``traj``.

    ``traj`` must carry the columns written by :class:`Diagnostics` for ``c``.
    ``solver_callback`` is unused: the check reads recorded series only.
    """
    name = f"{c.kind}_{c.R:g}"
    t, L, Mo, S = traj.series("t", "lm_" + name, "mom_" + name, "fs_" + name, upto=upto)
    inc = traj.series("dlm_" + name, upto=upto)[0] if "dlm_" + name in traj.columns else None
    return identity_residual(t, L, Mo, S, traj.dt_max(upto), inc, _gaps(traj, inc, upto))


def virial_identity_residual(traj, c: CutoffSpec, solver_callback=None, upto=None) -> float:
    """Localized virial law for ``1/2 d/dt`` of the momentum along ``traj``."""
    name = f"{c.kind}_{c.R:g}"
    t, Mo, V, S = traj.series("t", "mom_" + name, "vir_" + name, "vs_" + name, upto=upto)
    inc = traj.series("dmom_" + name, upto=upto)[0] if "dmom_" + name in traj.columns else None
    return identity_residual(t, Mo, V, S, traj.dt_max(upto), inc, _gaps(traj, inc, upto))


def global_virial_residual(traj, upto=None) -> float:
    """``d^2/dt^2 int |x|^2|u|^2`` against ``4N(p-1)E - 16 s_c/(N-2s_c)|grad u|^2``.

    Uses ``x2`` (the second moment) and ``gvir`` columns; normalized by
    ``8 |grad u|^2``.
    """
    t, X, G, Gr = traj.series("t", "x2", "gvir", "grad_sq", upto=upto)
    _check_sampling(t, traj.dt_max(upto))
    d2 = centered_derivative(t, centered_derivative(t, X))
    sl = slice(2, -2)
    return float(np.max(np.abs(d2 - G)[sl] / (8.0 * Gr[sl])))


# ---------------------------------------------------------------- dispersive integral


def dispersive_integral(t: np.ndarray, grad_sq: np.ndarray, tau_star: float, s_c: float):
    """``int_0^tau* (tau* - tau) |grad v|^2 dtau`` and its ratio to ``tau*^(1+s_c)``.

    Trapezoid on the samples, with the integrand interpolated linearly at
    ``tau*`` when it falls between samples.
    """
    t = np.asarray(t, float)
    g = np.asarray(grad_sq, float)
    if tau_star < t[0] or tau_star > t[-1] * (1 + 1e-12):
        raise RangeExceeded(f"tau* = {tau_star} outside the recorded range [{t[0]}, {t[-1]}]")
    k = np.searchsorted(t, tau_star, side="right")
    tt = np.append(t[:k], tau_star) if t[k - 1] < tau_star else t[:k]
    gg = np.append(g[:k], np.interp(tau_star, t, g)) if t[k - 1] < tau_star else g[:k]
    val = float(np.trapezoid((tau_star - tt) * gg, tt))
    ratio = val / tau_star ** (1.0 + s_c) if tau_star > 0 else 0.0
    return val, ratio


def self_similar_dispersive_constant(s_c: float) -> float:
    """``B(2, s_c)``: value of the dispersive integral for ``|grad v|^2 = tau^(s_c-1)``."""
    return float(special.beta(2.0, s_c))


# ---------------------------------------------------------------- renormalization


@dataclass(frozen=True)
class RenormalizedView:
    field: RadialField
    lam: float

    @property
    def N_t(self) -> float:
        return -math.log(self.lam)


def renormalized_view(u: RadialField, target: RadialGrid | None = None) -> RenormalizedView:
    """``v(0) = Lambda_lam conj(u)`` with ``lam = lambda_of(u)`` (unit gradient)."""
    lam = lambda_of(u)
    v = rescale(u.conj(), ScalingAction(lam), target)
    return RenormalizedView(v, lam)
