"""Parameters, radial grids, radial fields and the scaling action.

Every field in the package is the radial section ``u(r)`` of a radially
symmetric function on ``R^N``; full-space integrals carry the surface
measure ``omega_N r^(N-1)``, which lives in :mod:`nlsblowup.norms`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import DomainExceeded, NonFinite, OutOfRange, ZeroField

# distance from the open interval (0, 1) below which s_c counts as a boundary
_SC_EPS = 1e-12


@dataclass(frozen=True)
class NLSParams:
    """Dimension ``N``, power ``p`` and the derived critical exponents."""

    N: int
    p: float
    s_c: float
    p_c: float

    @property
    def alpha(self) -> float:
        """Scaling weight 2/(p-1) of the amplitude."""
        return 2.0 / (self.p - 1.0)

    @property
    def omega(self) -> float:
        """Surface area of the unit sphere in R^N."""
        return 2.0 * math.pi ** (self.N / 2.0) / math.gamma(self.N / 2.0)

    def to_dict(self) -> dict:
        return {"N": self.N, "p": self.p, "s_c": self.s_c, "p_c": self.p_c}


def derive_params(N: int, p: float) -> NLSParams:
    """Build :class:`NLSParams`, rejecting anything outside 0 < s_c < 1."""
    if int(N) != N or N < 2:
        raise OutOfRange(f"dimension must be an integer >= 2, got {N}")
    if not p > 1.0:
        raise OutOfRange(f"nonlinearity power must exceed 1, got {p}")
    N = int(N)
    p = float(p)
    s_c = N / 2.0 - 2.0 / (p - 1.0)
    if not (_SC_EPS < s_c < 1.0 - _SC_EPS):
        raise OutOfRange(
            f"s_c = {s_c:.6g} for (N={N}, p={p}); need 0 < s_c < 1, "
            f"i.e. {1 + 4 / N:.6g} < p < {(N + 2) / (N - 2) if N > 2 else math.inf:.6g}"
        )
    p_c = N * (p - 1.0) / 2.0
    return NLSParams(N=N, p=p, s_c=s_c, p_c=p_c)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Strictly increasing radii with ``radii[0] == 0``.

    ``r_min`` is the first interior point and ``stretch`` the geometric ratio
    between consecutive interior points (1 for uniform grids).
    """

    radii: np.ndarray
    spacing_mode: str = "uniform"
    r_min: float = 0.0
    stretch: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("a radial grid needs at least two points")
        if r[0] != 0.0:
            raise ValueError("radial grids start at r = 0")
        if np.any(np.diff(r) <= 0):
            raise ValueError("radii must be strictly increasing")
        if self.spacing_mode not in ("uniform", "log"):
            raise ValueError(f"unknown spacing mode {self.spacing_mode!r}")
        object.__setattr__(self, "radii", _frozen(r))
        object.__setattr__(self, "r_min", float(r[1]))

    @classmethod
    def uniform(cls, r_max: float, M: int) -> "RadialGrid":
        r = np.linspace(0.0, r_max, M)
        return cls(r, "uniform", float(r[1]), 1.0)

    @classmethod
    def log_uniform(cls, r_max: float, M: int, r_min: float) -> "RadialGrid":
        """``r = 0`` followed by ``M - 1`` geometric points from r_min to r_max."""
        if not 0 < r_min < r_max:
            raise ValueError("need 0 < r_min < r_max")
        if M < 3:
            raise ValueError("log-uniform grids need M >= 3")
        k = np.arange(M - 1)
        q = (r_max / r_min) ** (1.0 / (M - 2))
        interior = r_min * q**k
        interior[-1] = r_max
        return cls(np.concatenate([[0.0], interior]), "log", r_min, q)

    @property
    def M(self) -> int:
        return self.radii.size

    @property
    def r_max(self) -> float:
        return float(self.radii[-1])

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.radii)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.radii[1:] + self.radii[:-1])

    def scaled(self, factor: float) -> "RadialGrid":
        """The same grid with every radius multiplied by ``factor``."""
        return RadialGrid(self.radii * factor, self.spacing_mode, self.r_min * factor, self.stretch)

    def same_as(self, other: "RadialGrid") -> bool:
        return self is other or (
            self.M == other.M and np.array_equal(self.radii, other.radii)
        )

    def header(self) -> dict:
        return {
            "grid_mode": self.spacing_mode,
            "r_max": self.r_max,
            "M": self.M,
            "r_min": self.r_min,
            "stretch": self.stretch,
        }


@dataclass(frozen=True, eq=False)
class RadialField:
    """Complex samples ``u(r_j)`` of a radial function on a :class:`RadialGrid`."""

    grid: RadialGrid
    values: np.ndarray
    params: NLSParams

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.grid.M,):
            raise ValueError(f"expected {self.grid.M} samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFinite("field values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_function(cls, grid: RadialGrid, params: NLSParams, fn) -> "RadialField":
        return cls(grid, fn(grid.radii), params)

    @property
    def r(self) -> np.ndarray:
        return self.grid.radii

    @property
    def modulus(self) -> np.ndarray:
        return np.abs(self.values)

    def with_values(self, values) -> "RadialField":
        return RadialField(self.grid, values, self.params)

    def conj(self) -> "RadialField":
        return self.with_values(np.conj(self.values))

    def __mul__(self, c) -> "RadialField":
        return self.with_values(self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ScalingAction:
    """``(Lambda_lam u)(r) = lam^(2/(p-1)) u(lam r)``."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"scale factor must be positive and finite, got {self.lam}")

    def compose(self, other: "ScalingAction") -> "ScalingAction":
        return ScalingAction(self.lam * other.lam)


def interpolate(u: RadialField, r: np.ndarray) -> np.ndarray:
    """Monotone cubic interpolation of real and imaginary parts."""
    r = np.asarray(r, dtype=float)
    if r.size and (r.min() < 0 or r.max() > u.grid.r_max * (1 + 1e-12)):
        raise DomainExceeded(
            f"evaluation radius {r.max():.6g} leaves the source domain [0, {u.grid.r_max:.6g}]"
        )
    r = np.minimum(r, u.grid.r_max)
    re = PchipInterpolator(u.r, u.values.real)(r)
    im = PchipInterpolator(u.r, u.values.imag)(r)
    return re + 1j * im


def rescale(
    u: RadialField, a: ScalingAction | float, target: Optional[RadialGrid] = None
) -> RadialField:
    """Apply the scaling action.

    Without ``target`` the result lives on the source grid divided by
    ``lam``, which makes the map exact (no interpolation). With a target grid
    the source is interpolated at ``lam * r``.
    """
    if not isinstance(a, ScalingAction):
        a = ScalingAction(float(a))
    lam = a.lam
    amp = lam ** u.params.alpha
    if target is None:
        if lam == 1.0:
            return u
        return RadialField(u.grid.scaled(1.0 / lam), amp * u.values, u.params)
    if lam == 1.0 and target.same_as(u.grid):
        return RadialField(target, u.values, u.params)
    if lam * target.r_max > u.grid.r_max * (1 + 1e-12):
        raise DomainExceeded(
            f"lam * r_max(target) = {lam * target.r_max:.6g} exceeds r_max(source) = {u.grid.r_max:.6g}"
        )
    return RadialField(target, amp * interpolate(u, lam * target.radii), u.params)


def lambda_of(u: RadialField) -> float:
    """Scale that brings ``u`` to unit gradient norm: ``|grad u|^(-1/(1-s_c))``."""
    from .norms import gradient_norm_sq

    g2 = gradient_norm_sq(u)
    if not g2 > 1e-300:
        raise ZeroField("gradient norm vanishes; lambda_u is undefined")
    return g2 ** (-0.5 / (1.0 - u.params.s_c))
