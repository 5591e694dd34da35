"""Shooting for the self-similar profile equation and its ground-state limit.

The radial ODE is

    P'' + (N-1)/y P' - P + i b (2/(p-1) P + y P') + g |P|^(p-1) P = 0,

with ``P(0) = P0`` real, ``P'(0) = 0`` and ``g`` the coupling (1 for the
equation itself, 0 for the linear check). It is integrated by an embedded
Dormand-Prince 5(4) pair compiled with numba: b > 0 shots out to y ~ 10^3
resolve an oscillation of frequency ~ b y, which needs around 10^6 steps.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy import integrate, special
from scipy.linalg import solve_banded

from .core import NLSParams, RadialField, RadialGrid, derive_params
from .errors import BisectionFailure, InsufficientRange, NonFinite, StiffnessFailure
from .norms import edge_weights, node_weights

# status codes returned by the integrator
RUNNING, REACHED, CROSSED, TURNED, OVERFLOW, STIFF, BAD = range(7)
CLASS_NAMES = {REACHED: "decays", CROSSED: "crosses-zero", TURNED: "grows", OVERFLOW: "grows"}

NSTATE = 7  # Re P, Im P, Re P', Im P', int|P|^2 y^(N-1), int|P'|^2 y^(N-1), int|P|^(p+1) y^(N-1)

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
])
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@njit(cache=True)
def _rhs(y, s, N, p, b, g, out):
    x, z, xp, zp = s[0], s[1], s[2], s[3]
    m2 = x * x + z * z
    m = math.sqrt(m2)
    nl = g * m ** (p - 1.0) if m > 0 else 0.0
    al = 2.0 / (p - 1.0)
    # P'' = -(N-1)/y P' + P - i b (al P + y P') - g|P|^(p-1) P
    rx = b * (al * x + y * xp)
    rz = b * (al * z + y * zp)
    out[0] = xp
    out[1] = zp
    out[2] = -(N - 1) / y * xp + x + rz - nl * x
    out[3] = -(N - 1) / y * zp + z - rx - nl * z
    w = y ** (N - 1)
    out[4] = m2 * w
    out[5] = (xp * xp + zp * zp) * w
    out[6] = m ** (p + 1.0) * w


@njit(cache=True)
def _dopri(y0, s0, outs, y_end, N, p, b, g, rtol, atol, hmax, classify, cap, max_steps):
    """Integrate from ``y0`` to ``y_end`` hitting every point of ``outs``.

    Returns ``(status, y_stop, states_at_outs, n_written, err_sum, steps)``.
    Error control uses the first four components only; the accumulated
    integrals are carried along.
    """
    n = s0.size
    K = np.zeros((7, n))
    s = s0.copy()
    tmp = np.empty(n)
    res = np.full((outs.size, n), np.nan)
    y = y0
    h = min(hmax, 1e-3 * max(1.0, y0))
    j = 0
    while j < outs.size and outs[j] <= y0:
        res[j] = s
        j += 1
    _rhs(y, s, N, p, b, g, K[0])
    err_sum = 0.0
    steps = 0
    while y < y_end:
        if steps >= max_steps:
            return STIFF, y, res, j, err_sum, steps
        target = y_end
        if j < outs.size and outs[j] < target:
            target = outs[j]
        hh = min(h, target - y)
        if hh < 1e-14 * max(1.0, y):
            return STIFF, y, res, j, err_sum, steps
        for st in range(1, 7):
            for i in range(n):
                acc = s[i]
                for q in range(st):
                    acc += hh * _A[st, q] * K[q, i]
                tmp[i] = acc
            _rhs(y + _C[st] * hh, tmp, N, p, b, g, K[st])
        # tmp now holds the 5th-order solution (FSAL row)
        en = 0.0
        for i in range(4):
            e = 0.0
            for q in range(7):
                e += _E[q] * K[q, i]
            e *= hh
            sc = atol + rtol * max(abs(s[i]), abs(tmp[i]))
            en += (e / sc) ** 2
        en = math.sqrt(en / 4.0)
        if not math.isfinite(en):
            return BAD, y, res, j, err_sum, steps
        steps += 1
        if en <= 1.0:
            xo = s[0]
            xpo = s[2]
            # snap onto the output point: landing an ulp short would leave a step below the floor
            y = y + hh if target - (y + hh) > 1e-12 * max(1.0, target) else target
            err_sum += en * rtol * max(abs(tmp[0]), abs(tmp[1]), atol / rtol)
            for i in range(n):
                s[i] = tmp[i]
            for i in range(n):
                K[0, i] = K[6, i]
            while j < outs.size and outs[j] <= y:
                res[j] = s
                j += 1
            mod = math.sqrt(s[0] * s[0] + s[1] * s[1])
            if mod > cap:
                return OVERFLOW, y, res, j, err_sum, steps
            if classify:
                if xo > 0 and s[0] <= 0:
                    return CROSSED, y, res, j, err_sum, steps
                if xpo <= 0 and s[2] > 0 and s[0] > 0:
                    return TURNED, y, res, j, err_sum, steps
            fac = 0.9 * en ** -0.2 if en > 0 else 5.0
            h = min(hmax, hh * min(5.0, max(0.2, fac)))
        else:
            h = hh * max(0.2, 0.9 * en ** -0.2)
    return REACHED, y, res, j, err_sum, steps


# ---------------------------------------------------------------- shooting


@dataclass(frozen=True)
class ProfileParams:
    b: float
    P0: float
    y_max: float = 30.0
    N: int = 3
    p: float = 3.0
    coupling: float = 1.0
    rtol: float = 1e-12
    atol: float = 1e-14
    h_max: float = 0.05

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b must be nonnegative")
        if not self.P0 > 0:
            raise ValueError("P0 must be positive")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")

    def refined(self, factor: int = 2) -> "ProfileParams":
        """Same shot at ``factor`` times the resolution (fifth order: rtol / factor^5)."""
        return ProfileParams(self.b, self.P0, self.y_max, self.N, self.p, self.coupling,
                             self.rtol / factor**5, self.atol / factor**5, self.h_max / factor)


@dataclass
class ShotResult:
    params: ProfileParams
    y: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    integrals: np.ndarray
    classification: str
    y_stop: float
    steps: int
    error_estimate: float
    tail_fit: dict = field(default_factory=dict)

    @property
    def profile(self) -> RadialField:
        """The shot on its output grid up to where it stopped."""
        k = int(np.searchsorted(self.y, self.y_stop, side="right"))
        k = max(k, 2)
        grid = RadialGrid(self.y[:k], "uniform" if _is_uniform(self.y[:k]) else "log")
        P = derive_params(self.params.N, self.params.p)
        return RadialField(grid, self.values[:k], P)

    def summary(self) -> dict:
        return {"params": asdict(self.params), "classification": self.classification,
                "y_stop": self.y_stop, "steps": self.steps, "error_estimate": self.error_estimate,
                "tail_fit": self.tail_fit}


def _is_uniform(y: np.ndarray) -> bool:
    d = np.diff(y)
    return bool(np.allclose(d, d[0], rtol=1e-9))


def series_start(pp: ProfileParams) -> tuple[float, np.ndarray]:
    """``(eps, state)`` from the even expansion ``P0 + c2 y^2``."""
    N, p, b, P0 = pp.N, pp.p, pp.b, pp.P0
    eps = 1e-6 * max(1.0, 1.0 / P0 ** ((p - 1.0) / 2.0))
    c2 = P0 * (1.0 - 1j * b * 2.0 / (p - 1.0) - pp.coupling * P0 ** (p - 1.0)) / (2.0 * N)
    P = P0 + c2 * eps**2
    dP = 2.0 * c2 * eps
    s = np.zeros(NSTATE)
    s[:4] = (P.real, P.imag, dP.real, dP.imag)
    s[4] = P0**2 * eps**N / N
    s[5] = abs(2 * c2) ** 2 * eps ** (N + 2) / (N + 2)
    s[6] = P0 ** (p + 1.0) * eps**N / N
    return eps, s


def output_grid(y_max: float, n: int = 4097) -> np.ndarray:
    return np.linspace(0.0, y_max, n)


def shoot(pp: ProfileParams, outs: np.ndarray | None = None, classify: bool | None = None,
          max_steps: int = 50_000_000) -> ShotResult:
    """Integrate one shot and classify it.

    For ``b = 0`` the orbit stops at the first zero crossing
    (``crosses-zero``), at the first interior minimum with ``P > 0`` or once
    ``|P| > 10 P0`` (``grows``); otherwise it reaches ``y_max`` (``decays``).
    For ``b > 0`` only the growth cap applies.
    """
    outs = output_grid(pp.y_max) if outs is None else np.asarray(outs, dtype=float)
    classify = (pp.b == 0.0) if classify is None else classify
    eps, s0 = series_start(pp)
    status, y_stop, res, nw, err, steps = _dopri(
        eps, s0, outs, pp.y_max, float(pp.N), float(pp.p), float(pp.b), float(pp.coupling),
        pp.rtol, pp.atol, pp.h_max, classify, 10.0 * pp.P0, max_steps)
    if status == STIFF:
        raise StiffnessFailure(f"step size collapsed near y = {y_stop:.6g} (P0 = {pp.P0!r}, b = {pp.b!r})")
    if status == BAD:
        raise NonFinite(f"non-finite state near y = {y_stop:.6g}")
    # y = 0 is the regular center
    res[0, :4] = (pp.P0, 0.0, 0.0, 0.0)
    res[0, 4:] = 0.0
    vals = res[:, 0] + 1j * res[:, 1]
    der = res[:, 2] + 1j * res[:, 3]
    cls = CLASS_NAMES[status]
    return ShotResult(pp, outs, vals, der, res[:, 4:], cls, float(y_stop), int(steps), float(err))


# ---------------------------------------------------------------- ground state


@dataclass
class Bisection:
    lo: float
    hi: float
    iterations: int
    widths: list

    @property
    def P0(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def bisect_ground_state(
    N: int = 3, p: float = 3.0, bracket=(0.1, 20.0), width: float = 0.0, y_max: float = 40.0,
    rtol: float = 1e-12, atol: float = 1e-14, h_max: float = 0.05, expand: int = 6,
) -> Bisection:
    """Bisect ``P0`` between a ``grows`` shot (below) and a ``crosses-zero`` shot (above).

    ``width = 0`` bisects until the bracket stops shrinking in floating point.
    """

    def cls(P0):
        pp = ProfileParams(0.0, P0, y_max, N, p, rtol=rtol, atol=atol, h_max=h_max)
        return shoot(pp, outs=np.array([0.0])).classification

    lo, hi = bracket
    for _ in range(expand + 1):
        if cls(lo) == "grows" and cls(hi) == "crosses-zero":
            break
        lo, hi = lo / 2.0, hi * 2.0
    else:
        raise BisectionFailure(f"no grows/crosses-zero bracket found up to [{lo}, {hi}]")
    widths = [hi - lo]
    it = 0
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        c = cls(mid)
        if c == "crosses-zero":
            hi = mid
        elif c == "grows":
            lo = mid
        else:
            # reached y_max without turning: treat as the boundary itself
            lo = hi = mid
            break
        it += 1
        widths.append(hi - lo)
    return Bisection(lo, hi, it, widths)


def bessel_tail(y: np.ndarray, N: int, A: float, derivative: bool = False) -> np.ndarray:
    """``A y^(1-N/2) K_(N/2-1)(y)``, the decaying solution of the linearized equation."""
    nu = N / 2.0 - 1.0
    y = np.asarray(y, dtype=float)
    if not derivative:
        return A * y ** (-nu) * special.kv(nu, y)
    # d/dy [y^-nu K_nu(y)] = -y^-nu K_(nu+1)(y)
    return -A * y ** (-nu) * special.kv(nu + 1.0, y)


@dataclass
class GroundState:
    field: RadialField
    P0: float
    bracket: Bisection
    y_match: float
    tail_amplitude: float
    derivative_mismatch: float
    integrals: dict

    def pohozaev(self) -> dict:
        return pohozaev_residuals(self.integrals, self.field.params)


def _match_point(lo: ShotResult, hi: ShotResult, rel: float = 1e-7) -> int:
    """Last output index where the two bracketing shots agree to ``rel``."""
    a, b = lo.values.real, hi.values.real
    n = min(int(np.searchsorted(lo.y, lo.y_stop)), int(np.searchsorted(hi.y, hi.y_stop)))
    bad = np.flatnonzero(np.abs(a[:n] - b[:n]) > rel * np.abs(0.5 * (a[:n] + b[:n])))
    return int(bad[0] - 1) if bad.size else n - 1


def ground_state(
    N: int = 3, p: float = 3.0, r_max: float = 30.0, M: int = 2**14 + 1,
    rtol: float = 1e-12, atol: float = 1e-14, h_max: float = 0.05, bisection: Bisection | None = None,
) -> GroundState:
    """The positive decaying solution of ``Delta Q - Q + Q^p = 0`` on a uniform grid.

    The bisected shot is used up to the last point where the two bracketing
    shots agree to 1e-7 relative; beyond it the decaying Bessel solution of
    the linearized equation is matched in value. The nonlinear term there is
    of relative size ``Q^(p-1)``, below 1e-6 for the default settings.
    """
    P = derive_params(N, p)
    bis = bisection or bisect_ground_state(N, p, rtol=rtol, atol=atol, h_max=h_max)
    outs = np.linspace(0.0, r_max, M)
    mk = lambda P0: shoot(ProfileParams(0.0, P0, r_max, N, p, rtol=rtol, atol=atol, h_max=h_max), outs=outs)
    lo, hi = mk(bis.lo), mk(bis.hi)
    k = _match_point(lo, hi)
    # the two bracketing shots agree up to k, so the midpoint does too
    q = 0.5 * (lo.values.real[: k + 1] + hi.values.real[: k + 1])
    dq = 0.5 * (lo.derivative.real[k] + hi.derivative.real[k])
    ym = outs[k]
    A = q[-1] / bessel_tail(ym, N, 1.0)
    mismatch = abs(bessel_tail(ym, N, A, derivative=True) - dq) / abs(dq)
    vals = np.empty(M)
    vals[: k + 1] = q
    vals[k + 1 :] = bessel_tail(outs[k + 1 :], N, A)
    ints = 0.5 * (lo.integrals[k] + hi.integrals[k])
    om = P.omega

    def tail_int(f):
        return integrate.quad(f, ym, np.inf, epsabs=0.0, epsrel=1e-12, limit=200)[0]

    t2 = tail_int(lambda y: bessel_tail(y, N, A) ** 2 * y ** (N - 1))
    tg = tail_int(lambda y: bessel_tail(y, N, A, True) ** 2 * y ** (N - 1))
    tp = tail_int(lambda y: bessel_tail(y, N, A) ** (p + 1.0) * y ** (N - 1))
    integrals = {
        "mass": om * (ints[0] + t2),
        "grad_sq": om * (ints[1] + tg),
        "pot": om * (ints[2] + tp),
    }
    grid = RadialGrid.uniform(r_max, M)
    return GroundState(RadialField(grid, vals, P), bis.P0, bis, float(ym), float(A), float(mismatch), integrals)


def discrete_ground_state(Q: RadialField, tol: float = 1e-13, maxit: int = 30) -> RadialField:
    """Newton solve of ``S q + W q - W q^p = 0`` started from ``Q``.

    ``S`` and ``W`` are the stiffness and mass weights used by the solver, so
    ``exp(i t) q`` is an exact solution of the semi-discrete equation and the
    only error left in a time step is the splitting error.
    """
    grid, P = Q.grid, Q.params
    n = grid.M - 1
    W = node_weights(grid, P.N)[:n]
    k = (edge_weights(grid, P.N) / grid.spacing**2)[:n]
    diag = k.copy()
    diag[1:] += k[:-1]
    q = np.array(Q.values.real[:n])
    for _ in range(maxit):
        f = np.empty(n)
        f[:-1] = q[1:] - q[:-1]
        f[-1] = -q[-1]
        f *= k
        Sq = -f
        Sq[1:] += f[:-1]
        F = Sq + W * (q - np.abs(q) ** (P.p - 1.0) * q)
        ab = np.zeros((3, n))
        ab[0, 1:] = -k[:-1]
        ab[1] = diag + W * (1.0 - P.p * np.abs(q) ** (P.p - 1.0))
        ab[2, :-1] = -k[:-1]
        dq = solve_banded((1, 1), ab, -F)
        q += dq
        if np.max(np.abs(dq)) <= tol * np.max(np.abs(q)):
            return RadialField(grid, np.append(q, 0.0).astype(complex), P)
    raise BisectionFailure(f"Newton iteration for the discrete ground state did not converge in {maxit} steps")


def pohozaev_residuals(ints: dict, P: NLSParams) -> dict:
    """Relative residuals of the two integral identities of ``Delta Q - Q + Q^p = 0``.

    Testing against ``Q`` gives ``|grad Q|^2 + |Q|^2 = int Q^(p+1)``; testing
    against ``y.grad Q`` gives ``(N-2)/2 |grad Q|^2 + N/2 |Q|^2 = N/(p+1) int Q^(p+1)``.
    """
    G, M2, Pp = ints["grad_sq"], ints["mass"], ints["pot"]
    N, p = P.N, P.p
    r1 = (G + M2 - Pp) / Pp
    r2 = ((N - 2) / 2 * G + N / 2 * M2 - N / (p + 1) * Pp) / (N / (p + 1) * Pp)
    return {"nehari": r1, "pohozaev": r2}


def pohozaev_energy(ints: dict, P: NLSParams) -> float:
    """``E(Q) = |grad Q|^2/2 - int Q^(p+1)/(p+1)``.

    Eliminating ``int Q^2`` between the two identities gives
    ``E(Q) = s_c/N |grad Q|^2``, positive whenever ``s_c > 0``.
    """
    return 0.5 * ints["grad_sq"] - ints["pot"] / (P.p + 1.0)


def decay_slope(Q: RadialField, window=(20.0, 30.0)) -> float:
    """Slope of ``log|Q|`` against ``y`` over ``window``."""
    r = Q.r
    sel = (r >= window[0]) & (r <= window[1])
    return float(np.polyfit(r[sel], np.log(np.abs(Q.values[sel])), 1)[0])


def linear_reference(y: np.ndarray, N: int, P0: float) -> np.ndarray:
    """Regular solution of ``P'' + (N-1)/y P' - P = 0`` with ``P(0) = P0``."""
    nu = N / 2.0 - 1.0
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, P0)
    nz = y > 0
    out[nz] = P0 * special.gamma(nu + 1.0) * (y[nz] / 2.0) ** (-nu) * special.iv(nu, y[nz])
    return out


# ---------------------------------------------------------------- tail


@dataclass
class TailReport:
    j: np.ndarray
    m: np.ndarray
    partial_sums: np.ndarray
    bounded_below: bool
    log_growth: float
    decay_exponent: float
    amplitude: float
    label: str = "heuristic tail score"

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}


def dyadic_ring_masses(y: np.ndarray, P: np.ndarray, N: int, s_c: float, j_max: int | None = None):
    """``m_j = 2^(-2 s_c j) int_{2^j}^{2^(j+1)} |P|^2 y^(N-1) dy`` from samples (trapezoid)."""
    y = np.asarray(y, float)
    f = np.abs(P) ** 2 * y ** (N - 1)
    C = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(y) * (f[1:] + f[:-1]))])
    top = int(math.floor(math.log2(y[-1]))) if j_max is None else j_max
    js = np.arange(0, top)
    F = np.interp(2.0 ** np.concatenate([js, js + 1]), y, C)
    n = js.size
    return js, (F[n:] - F[:n]) * 2.0 ** (-2.0 * s_c * js)


def tail_diagnostic(shot: ShotResult, floor_ratio: float = 0.1) -> TailReport:
    """Dyadic ring masses of the shot and the growth of their partial sums in ``log y``.

    ``bounded_below`` means the last half of the ``m_j`` stay above
    ``floor_ratio`` times their median, the signature of ``|P| ~ y^(-2/(p-1))``.
    """
    pp = shot.params
    if shot.y_stop < 8.0:
        raise InsufficientRange(f"shot stopped at y = {shot.y_stop:.3g}, need at least 8")
    P = derive_params(pp.N, pp.p)
    k = int(np.searchsorted(shot.y, shot.y_stop, side="right"))
    y, v = shot.y[:k], shot.values[:k]
    js, m = dyadic_ring_masses(y, v, pp.N, P.s_c)
    S = np.cumsum(m)
    half = m[m.size // 2 :]
    med = float(np.median(m)) if m.size else 0.0
    bounded = bool(m.size >= 3 and med > 0 and np.all(half >= floor_ratio * med))
    sl = slice(m.size // 2, None)
    growth = float(np.polyfit(js[sl] * math.log(2.0), S[sl], 1)[0]) if m.size - m.size // 2 >= 2 else math.nan
    far = y >= max(4.0, y[-1] / 8.0)
    far &= np.abs(v) > 0
    if np.count_nonzero(far) >= 2:
        slope, icpt = np.polyfit(np.log(y[far]), np.log(np.abs(v[far])), 1)
        dec, amp = float(-slope), float(math.exp(icpt))
    else:
        dec = amp = math.nan
    return TailReport(js, m, S, bounded, growth, dec, amp)


def sweep_b(bs, P0: float, N: int = 3, p: float = 3.0, y_max: float = 1024.0, n_out: int = 2**16 + 1,
            rtol: float = 1e-9, atol: float = 1e-12) -> list[dict]:
    """Shots over a grid of ``b`` at fixed ``P0`` scored by the tail diagnostic."""
    rows = []
    outs = np.linspace(0.0, y_max, n_out)
    for b in bs:
        pp = ProfileParams(float(b), P0, y_max, N, p, rtol=rtol, atol=atol, h_max=0.5)
        try:
            shot = shoot(pp, outs=outs)
            rep = tail_diagnostic(shot)
            rows.append({"b": float(b), "classification": shot.classification, "y_stop": shot.y_stop,
                         **{k: v for k, v in rep.to_dict().items() if k in ("bounded_below", "log_growth",
                                                                             "decay_exponent", "amplitude", "label")}})
        except (StiffnessFailure, NonFinite, InsufficientRange) as exc:
            rows.append({"b": float(b), "error": f"{type(exc).__name__}: {exc}"})
    return rows
