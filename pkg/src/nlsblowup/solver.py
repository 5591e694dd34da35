"""Time integration of ``i u_t = -Lap u - |u|^(p-1) u`` on a radial grid.

Space: ``-Lap ~ W^{-1} S`` with ``S = D^T K D`` (see :mod:`nlsblowup.norms`),
Neumann regularity at the origin and Dirichlet at ``r_max``. Two steppers:

* ``strang``: half nonlinear phase, Crank-Nicolson, half phase;
* ``conservative``: the midpoint scheme with the difference-quotient
  nonlinearity ``G = (F(|u+|^2) - F(|u|^2)) / (|u+|^2 - |u|^2)``,
  ``F(s) = 2 s^((p+1)/2)/(p+1)``, which conserves the discrete mass and the
  discrete energy ``1/2 u*Su - 1/(p+1) sum W |u|^(p+1)`` exactly. It is
  solved by fixed-point iteration, one tridiagonal solve per sweep.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import OptimizeWarning, curve_fit

from .core import NLSParams, RadialField, RadialGrid
from .dynamics import CutoffSpec
from .errors import InsufficientDecade, LinearSolveFailure, NonFinite
from .io import load_field, save_field
from .norms import edge_weights, node_weights
from .trajectory import Diagnostics, TrajectoryRecord


class Propagator:
    """Reusable linear algebra for one grid and one equation."""

    def __init__(self, grid: RadialGrid, params: NLSParams, coupling: float = 1.0):
        self.grid = grid
        self.params = params
        self.coupling = coupling
        N = params.N
        n = grid.M - 1  # last node is pinned to zero
        self.n = n
        self.W = np.array(node_weights(grid, N)[:n])
        k = edge_weights(grid, N) / grid.spacing**2
        self.k = k
        diag = np.zeros(n)
        diag += k[:n]
        diag[1:] += k[: n - 1]
        self.Sdiag = diag
        self.Soff = -k[: n - 1]

    def apply_S(self, v: np.ndarray, k: np.ndarray | None = None) -> np.ndarray:
        """``D^T k D v`` in flux form; the expanded tridiagonal product cancels
        catastrophically where ``v`` is smooth on a fine grid."""
        k = self.k[: self.n] if k is None else k
        f = np.empty_like(v)
        f[:-1] = v[1:] - v[:-1]
        f[-1] = -v[-1]
        f *= k
        out = -f
        out[1:] += f[:-1]
        return out

    def _solve(self, diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        ab = np.zeros((3, self.n), dtype=complex)
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        try:
            x = solve_banded((1, 1), ab, rhs, check_finite=False, overwrite_ab=True)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailure(str(exc)) from exc
        if not np.all(np.isfinite(x)):
            raise NonFinite("non-finite values after the linear solve")
        return x

    def phase(self, v: np.ndarray, dt: float) -> np.ndarray:
        if self.coupling == 0.0:
            return v
        return v * np.exp(1j * self.coupling * dt * np.abs(v) ** (self.params.p - 1.0))

    def crank_nicolson(self, v: np.ndarray, dt: float) -> np.ndarray:
        a = 0.5j * dt
        rhs = self.W * v - a * self.apply_S(v)
        return self._solve(self.W + a * self.Sdiag, a * self.Soff, rhs)

    def strang(self, v: np.ndarray, dt: float) -> np.ndarray:
        return self.phase(self.crank_nicolson(self.phase(v, 0.5 * dt), dt), 0.5 * dt)

    def _quotient(self, a2: np.ndarray, b2: np.ndarray) -> np.ndarray:
        """``(F(a2) - F(b2)) / (a2 - b2)`` with the derivative at coincidence."""
        p = self.params.p
        e = 0.5 * (p + 1.0)
        diff = a2 - b2
        close = np.abs(diff) <= 1e-8 * np.maximum(a2, b2)
        safe = np.where(close, 1.0, diff)
        q = (2.0 / (p + 1.0)) * (a2**e - b2**e) / safe
        return np.where(close, (0.5 * (a2 + b2)) ** (0.5 * (p - 1.0)), q)

    def _apply_S_ld(self, v: np.ndarray) -> np.ndarray:
        return self.apply_S(v, self._k_ld)

    def conservative(self, v: np.ndarray, dt: float, tol: float = 1e-15, maxit: int = 80):
        """One step of the energy-conserving scheme; returns ``(v_new, sweeps)``.

        Each sweep freezes ``G`` at the current iterate and solves for a
        correction whose right side, the residual
        ``W(v - w) - (i dt/2)(S - W G)(v + w)``, is formed in extended
        precision. On fine log grids ``|S||w|`` exceeds ``|S w|`` by the
        squared number of nodes per e-fold, so a residual formed in double
        precision would leave an energy error of that relative size per step.
        """
        if self.coupling == 0.0:
            return self.crank_nicolson(v, dt), 1
        if not hasattr(self, "_W_ld"):
            self._W_ld = self.W.astype(np.longdouble)
            self._k_ld = self.k[: self.n].astype(np.longdouble)
        a = 0.5j * dt
        a_ld = np.clongdouble(a)
        m0 = np.abs(v) ** 2
        v_ld = v.astype(np.clongdouble)
        w = self.strang(v, dt)
        off = a * self.Soff
        prev = math.inf
        for it in range(1, maxit + 1):
            G = self.coupling * self._quotient(np.abs(w) ** 2, m0)
            WG = self.W * G
            w_ld = w.astype(np.clongdouble)
            s_ld = v_ld + w_ld
            WG_ld = WG.astype(np.longdouble)
            res = self._W_ld * (v_ld - w_ld) - a_ld * (self._apply_S_ld(s_ld) - WG_ld * s_ld)
            delta = self._solve(self.W + a * self.Sdiag - a * WG, off, res.astype(complex))
            w = w + delta
            change = np.max(np.abs(delta))
            size = max(np.max(np.abs(w)), 1e-300)
            if change <= tol * size or (change > 0.5 * prev and change <= 1e-12 * size):
                return w, it
            prev = change
        raise LinearSolveFailure(f"fixed-point iteration did not converge in {maxit} sweeps")

    def advance(self, v: np.ndarray, dt: float, scheme: str) -> np.ndarray:
        if scheme == "strang":
            return self.strang(v, dt)
        if scheme == "conservative":
            return self.conservative(v, dt)[0]
        raise ValueError(f"unknown scheme {scheme!r}")


_PROPAGATORS: dict = {}


def propagator(grid: RadialGrid, params: NLSParams, coupling: float = 1.0) -> Propagator:
    key = (id(grid), params, coupling)
    hit = _PROPAGATORS.get(key)
    if hit is None or hit.grid is not grid:
        if len(_PROPAGATORS) > 16:
            _PROPAGATORS.clear()
        hit = Propagator(grid, params, coupling)
        _PROPAGATORS[key] = hit
    return hit


def step(u: RadialField, dt: float, scheme: str = "strang", coupling: float = 1.0) -> RadialField:
    """Advance ``u`` by ``dt``. The outer node stays pinned at zero."""
    prop = propagator(u.grid, u.params, coupling)
    v = prop.advance(np.array(u.values[:-1]), dt, scheme)
    return u.with_values(np.append(v, 0.0))


# ---------------------------------------------------------------- run


@dataclass
class StopCriteria:
    amplification: float = 1e3  # ratio of |grad u| to its initial value
    t_max: float = math.inf
    max_steps: int = 100_000
    wall_clock: float = math.inf  # seconds
    stop_when_unreliable: bool = True


@dataclass
class SolverConfig:
    dt_init: float = 1e-3
    cfl_like: float = 1.0
    scheme: str = "conservative"
    r_max: float = 20.0
    M: int = 4096
    grid_mode: str = "uniform"
    r_min: float = 1e-6
    stop: StopCriteria = field(default_factory=StopCriteria)
    record_every: int = 1
    profile_every: int = 1
    dt_max: float = 1e-2
    h2_cap: Optional[float] = None  # if set, dt <= h2_cap * min(h)^2
    coupling: float = 1.0
    energy_tol: float = 1e-6
    boundary_floor: float = 1e-8  # allowed mass fraction in [0.9 r_max, r_max]
    min_focus_nodes: int = 4
    chi_radii: Sequence[float] = (1.0, 2.0, 4.0)
    psi_radii: Sequence[float] = (1.0, 2.0)
    anchor_halfsteps: bool = True  # snapshot where lam_u crosses exp(-k/2)
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        if not self.stop.amplification > 1:
            raise ValueError("amplification factor must exceed 1")

    def make_grid(self) -> RadialGrid:
        if self.grid_mode == "uniform":
            return RadialGrid.uniform(self.r_max, self.M)
        return RadialGrid.log_uniform(self.r_max, self.M, self.r_min)

    def cutoffs(self) -> list[CutoffSpec]:
        return [CutoffSpec("chi", R) for R in self.chi_radii] + [
            CutoffSpec("psi", R) for R in self.psi_radii
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chi_radii"] = list(self.chi_radii)
        d["psi_radii"] = list(self.psi_radii)
        return d


def next_dt(umax: float, cfg: SolverConfig, params: NLSParams, grid: RadialGrid) -> float:
    """``min(dt_max, cfl * 0.1 / |u|_inf^(p-1))`` with an optional ``h^2`` cap."""
    dt = cfg.dt_max
    if umax > 0 and cfg.coupling:
        dt = min(dt, cfg.cfl_like * 0.1 / (abs(cfg.coupling) * umax ** (params.p - 1.0)))
    if cfg.h2_cap:
        dt = min(dt, cfg.h2_cap * float(np.min(grid.spacing)) ** 2)
    return dt


def _reliable(row: dict, ref: dict, cfg: SolverConfig) -> tuple[bool, str]:
    scale = max(abs(ref["energy"]), ref["grad_sq"], 1e-300)
    if abs(row["energy"] - ref["energy"]) > cfg.energy_tol * scale:
        return False, "energy drift"
    if row["shell"] > cfg.boundary_floor:
        return False, "boundary mass"
    if row["focus_nodes"] < cfg.min_focus_nodes:
        return False, "focus unresolved"
    return True, ""


def run(
    u0: RadialField,
    cfg: SolverConfig,
    t0: float = 0.0,
    step0: int = 0,
    reference: Optional[dict] = None,
    dt_first: Optional[float] = None,
) -> TrajectoryRecord:
    """Integrate until a stop criterion fires.

    ``reference`` carries the initial energy and gradient when resuming from a
    checkpoint, so reliability is judged against the original data.
    """
    grid, P = u0.grid, u0.params
    prop = propagator(grid, P, cfg.coupling)
    diag = Diagnostics(grid, P, cfg.cutoffs(), cfg.coupling)
    rec = TrajectoryRecord(P, grid, ladder=diag.ladder)
    rec.meta["config"] = cfg.to_dict()

    v = np.array(u0.values[:-1])
    t = t0
    k = step0
    row0 = diag.row(u0.values)
    ref = reference or {"energy": row0["energy"], "grad_sq": row0["grad_sq"], "lam": row0["lam"]}
    rec.meta["reference"] = ref
    # zero data has nothing to amplify
    g_target = ref["grad_sq"] * cfg.stop.amplification**2 if ref["grad_sq"] > 0 else math.inf
    anchor_k = _anchor_index(ref["lam"]) if cfg.anchor_halfsteps else None
    wall0 = time.perf_counter()
    dt = dt_first if dt_first is not None else min(cfg.dt_init, next_dt(row0["umax"], cfg, P, grid))
    reason = "max steps"
    unreliable = False

    def record(vals: np.ndarray, row: dict, dt_used: float, elapsed: float):
        nonlocal unreliable, anchor_k
        ok, why = _reliable(row, ref, cfg)
        # "gap" is the exact time since the previous sample; differences of
        # "t" lose digits once dt falls near ulp(t)
        row = {"t": t, "step": k, "dt": dt_used, "gap": elapsed, **row, "reliable": float(ok)}
        rec.append(row)
        idx = len(rec) - 1
        if ok and not unreliable:
            rec.horizon = idx
        elif not ok and not unreliable:
            unreliable = True
            rec.meta["horizon_reason"] = why
        if idx % cfg.profile_every == 0 or not ok:
            F2, Fpc = diag.profiles(RadialField(grid, vals, P))
            rec.profile_idx.append(idx)
            rec.profile_F2.append(F2)
            rec.profile_Fpc.append(Fpc)
        if anchor_k is not None and ok and row["lam"] <= math.exp(-anchor_k / 2.0):
            rec.snapshots.append({"t": t, "index": idx, "k": anchor_k, "lam": row["lam"],
                                  "values": np.array(vals)})
            while row["lam"] <= math.exp(-anchor_k / 2.0):
                anchor_k += 1

    full = np.append(v, 0.0)
    record(full, row0, math.nan, math.nan)
    rec.snapshots.insert(0, {"t": t, "index": 0, "k": -1, "lam": row0["lam"], "values": full})
    last_ok = full
    t_comp = 0.0
    prev_rec = full
    gap = 0.0
    try:
        while True:
            if k - step0 >= cfg.stop.max_steps:
                reason = "max steps"
                break
            if t >= cfg.stop.t_max:
                reason = "t_max"
                break
            if time.perf_counter() - wall0 > cfg.stop.wall_clock:
                reason = "wall clock"
                break
            dt_step = min(dt, cfg.stop.t_max - t) if math.isfinite(cfg.stop.t_max) else dt
            v = prop.advance(v, dt_step, cfg.scheme)
            # compensated time accumulation: dt shrinks far below ulp(t)
            y = dt_step - t_comp
            t_new = t + y
            t_comp = (t_new - t) - y
            t = t_new
            gap += dt_step
            k += 1
            full = np.append(v, 0.0)
            if not np.all(np.isfinite(full)):
                raise NonFinite("field became non-finite")
            if (k - step0) % cfg.record_every == 0:
                row = diag.row(full, prev_rec)
                prev_rec = full
                record(full, row, dt_step, gap)
                gap = 0.0
            else:
                row = diag.row(full)
            if not unreliable:
                last_ok = full
            dt = next_dt(row["umax"], cfg, P, grid)
            if cfg.checkpoint_every and cfg.checkpoint_dir and (k - step0) % cfg.checkpoint_every == 0:
                write_checkpoint(RadialField(grid, full, P), t, k, dt, ref, cfg.checkpoint_dir)
            if row["grad_sq"] >= g_target:
                reason = "amplification reached"
                break
            if unreliable and cfg.stop.stop_when_unreliable:
                reason = "reliability lost: " + rec.meta.get("horizon_reason", "")
                break
    except (NonFinite, LinearSolveFailure) as exc:
        reason = f"failure: {type(exc).__name__}: {exc}"
        rec.meta["failure"] = reason
    rec.meta["stop_reason"] = reason
    rec.meta["steps"] = k
    rec.meta["t_final"] = t
    rec.meta["dt_next"] = dt
    rec.meta["wall_seconds"] = time.perf_counter() - wall0
    rec.snapshots.append({"t": float(rec.columns["t"][rec.horizon]), "index": rec.horizon,
                          "k": -2, "lam": float(rec.columns["lam"][rec.horizon]), "values": last_ok})
    rec.final_field = RadialField(grid, full, P)
    return rec


def _anchor_index(lam0: float) -> int:
    """First ``k`` with ``exp(-k/2) < lam0``."""
    return int(math.floor(-2.0 * math.log(lam0))) + 1 if lam0 > 0 else 0


# ---------------------------------------------------------------- checkpoints


def write_checkpoint(u: RadialField, t: float, k: int, dt: float, ref: dict, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = save_field(u, d / "checkpoint", {"t": t, "step": k, "dt": dt, "reference": ref})
    return stem


def resume(directory, cfg: SolverConfig) -> TrajectoryRecord:
    """Continue a run from the checkpoint in ``directory``."""
    u, head = load_field(Path(directory) / "checkpoint")
    return run(u, cfg, t0=head["t"], step0=head["step"], reference=head["reference"], dt_first=head["dt"])


# ---------------------------------------------------------------- blow-up time


@dataclass
class BlowupEstimate:
    T_est: float
    b: float
    fit_window: tuple
    fit_exponent: float
    fit_residual: float
    exponent_stderr: float
    model_mismatch: bool
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def blowup_window(t: np.ndarray, lam: np.ndarray, decades: float = 2.0,
                  min_samples: int = 20, min_contraction: float = 4.0) -> slice:
    """Samples whose ``lam`` lies within ``decades`` of the last value."""
    if lam.size < 2:
        raise InsufficientDecade("trajectory too short")
    lam_end = lam[-1]
    start = np.nonzero(lam > lam_end * 10.0**decades)[0]
    i0 = int(start[-1]) + 1 if start.size else 0
    sl = slice(i0, lam.size)
    n = lam.size - i0
    contraction = float(np.max(lam[sl]) / lam_end)
    if n < min_samples or contraction < min_contraction:
        raise InsufficientDecade(
            f"fit window has {n} samples and contraction {contraction:.3g}; "
            f"need >= {min_samples} samples and >= {min_contraction}x"
        )
    return sl


def fit_blowup(t: np.ndarray, lam: np.ndarray, mismatch_tol: float = 1e-2,
               window: Optional[slice] = None) -> BlowupEstimate:
    """Linear fit ``lam^2 = 2b(T - t)`` plus a joint fit ``lam = c (T - t)^alpha``."""
    t = np.asarray(t, float)
    lam = np.asarray(lam, float)
    sl = window if window is not None else blowup_window(t, lam)
    tw, lw = t[sl], lam[sl]
    A = np.column_stack([np.ones_like(tw), -tw])
    (c0, c1), *_ = np.linalg.lstsq(A, lw**2, rcond=None)
    b = 0.5 * c1
    T = c0 / c1
    resid = lw**2 - (c0 - c1 * tw)
    rel = float(np.sqrt(np.mean(resid**2)) / np.sqrt(np.mean(lw**4)))

    # joint fit of log lam = logc + alpha log(T - t), with T = t_last + exp(s)
    t_last = tw[-1]
    span = tw[-1] - tw[0]
    gap0 = T - t_last if T > t_last else 1e-3 * span
    x = t_last - tw

    def model(_, logc, alpha, s):
        return logc + alpha * np.log(x + np.exp(s))

    s0 = math.log(gap0)
    a0 = float(np.polyfit(np.log(x + gap0), np.log(lw), 1)[0])
    c0_ = float(np.mean(np.log(lw) - a0 * np.log(x + gap0)))
    try:
        with warnings.catch_warnings():
            # exact synthetic input leaves no residual to estimate a covariance from
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(model, tw, np.log(lw), p0=[c0_, a0, s0], maxfev=20000)
        alpha = float(popt[1])
        se = float(np.sqrt(max(pcov[1, 1], 0.0))) if np.all(np.isfinite(pcov)) else math.nan
    except (RuntimeError, ValueError):
        alpha, se = math.nan, math.nan
    return BlowupEstimate(
        T_est=float(T), b=float(b), fit_window=(float(tw[0]), float(tw[-1])),
        fit_exponent=alpha, fit_residual=rel, exponent_stderr=se,
        model_mismatch=bool(rel > mismatch_tol), n_samples=int(tw.size),
    )


def estimate_blowup_time(traj: TrajectoryRecord, decades: float = 2.0) -> BlowupEstimate:
    t, lam = traj.series("t", "lam", upto="horizon")
    return fit_blowup(t, lam, window=blowup_window(t, lam, decades))
