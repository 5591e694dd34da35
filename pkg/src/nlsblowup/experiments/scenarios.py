"""Scenario runners: blow-up with critical-norm growth, the dispersion, rho and
weighted-mass observables along renormalized views, and the channel construction.

Every runner returns a JSON-ready dict with a ``findings`` list; an empty list
means every observed bound held.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.integrate import cumulative_trapezoid

from ..core import RadialField
from ..dynamics import CutoffSpec, energy, momentum, renormalized_view
from ..errors import InsufficientDepth, NoBlowup, RangeExceeded
from ..norms import cumulative_mass, mass_distribution
from ..solver import BlowupEstimate, blowup_window, fit_blowup, run
from ..trajectory import TrajectoryRecord
from .backward import (BackwardView, anchor_field, anchor_indices, backward_view, ball_mass,
                       rho_from_profile)
from .channels import FINDERS, L_of, build_report, channel_indices
from .constants import Constants
from .manifest import RunManifest

GAMMA_BRACKET = (1.0 / 12.0, 0.75)  # N = p = 3 lower and upper growth exponents


# ---------------------------------------------------------------- anchors


def select_anchors(rec: TrajectoryRecord, which="all") -> list[int]:
    """Anchor sample indices: ``"all"``, ``"last"``, or anchor orders ``k``."""
    idx = anchor_indices(rec)
    if not idx:
        raise InsufficientDepth("the record holds no anchor snapshots")
    if which in (None, "all"):
        return idx
    if which == "last":
        return idx[-1:]
    if isinstance(which, str):
        which = [int(float(x)) for x in which.replace(",", " ").split()]
    by_k = {int(s["k"]): int(s["index"]) for s in rec.snapshots if s.get("k", -1) >= 0}
    missing = [k for k in which if k not in by_k]
    if missing:
        raise KeyError(f"no anchors of order {missing}; available {sorted(by_k)}")
    return [by_k[k] for k in which]


def anchor_order(rec: TrajectoryRecord, idx: int) -> int:
    for s in rec.snapshots:
        if s["index"] == idx and s.get("k", -1) >= 0:
            return int(s["k"])
    return -1


# ---------------------------------------------------------------- blow-up


@dataclass
class GrowthFit:
    gamma: float
    stderr: float
    intercept: float
    n: int

    @property
    def lower95(self) -> float:
        return self.gamma - 1.96 * self.stderr


def fit_critical_growth(time_to_blowup, lpc) -> GrowthFit:
    """Least squares ``log |u|_{L^{p_c}} = c + gamma log|log(T - t)|``."""
    ttb = np.asarray(time_to_blowup, float)
    y = np.log(np.asarray(lpc, float))
    keep = (ttb > 0) & (ttb < math.exp(-1.0))
    x = np.log(np.abs(np.log(ttb[keep])))
    if keep.sum() < 3:
        raise RangeExceeded("need at least three samples with T - t < 1/e")
    r = stats.linregress(x, y[keep])
    return GrowthFit(float(r.slope), float(r.stderr), float(r.intercept), int(keep.sum()))


def time_to_last(rec: TrajectoryRecord, upto="horizon") -> np.ndarray:
    """Exact ``t_last - t_j`` from the step gaps."""
    (gap,) = rec.series("gap", upto=upto)
    g = np.array(gap)
    g[0] = 0.0
    return np.concatenate([np.cumsum(g[:0:-1])[::-1], [0.0]])


def blowup_estimate(rec: TrajectoryRecord, decades: float = 2.0) -> tuple[BlowupEstimate, np.ndarray]:
    """Blow-up fit in the variable ``t - t_last``; returns the estimate with
    ``T_est`` measured from the last reliable sample, and ``T - t`` per sample."""
    s = time_to_last(rec)
    (lam,) = rec.series("lam", upto="horizon")
    est = fit_blowup(-s, lam, window=blowup_window(-s, lam, decades))
    return est, s + est.T_est


def analyze_blowup(rec: TrajectoryRecord, amplification: float | None = None) -> dict:
    """Critical-norm growth and blow-up fit of a finished record."""
    P = rec.params
    G = rec.column("grad_sq")
    amp = math.sqrt(G[rec.horizon] / G[0])
    need = amplification if amplification is not None else rec.meta.get("config", {}).get("stop", {}).get(
        "amplification", 1e3)
    E = rec.column("energy")
    out = {
        "samples": len(rec),
        "horizon": rec.horizon,
        "t_horizon": rec.t_horizon,
        "stop_reason": rec.meta.get("stop_reason", ""),
        "amplification": amp,
        "energy_drift": float(np.max(np.abs(E[: rec.horizon + 1] - E[0])) / max(abs(E[0]), G[0])),
        "lpc_initial": float(rec.columns["lpc"][0]),
        "lpc_final": float(rec.columns["lpc"][rec.horizon]),
        "findings": [],
    }
    if amp < need * (1 - 1e-9):
        out["blowup"] = False
        out["growth"] = False
        raise NoBlowup(f"gradient amplified {amp:.4g}x, below the threshold {need:g}x", out)
    est, ttb = blowup_estimate(rec)
    (t_last,) = rec.series("t", upto="horizon")
    (lpc,) = rec.series("lpc", upto="horizon")
    fit = fit_critical_growth(ttb, lpc)
    out.update({
        "blowup": True,
        "T_est": float(t_last[-1] + est.T_est),
        "T_minus_t_last": est.T_est,
        "alpha": est.fit_exponent,
        "alpha_stderr": est.exponent_stderr,
        "b": est.b,
        "lambda_fit_residual": est.fit_residual,
        "gamma_emp": fit.gamma,
        "gamma_stderr": fit.stderr,
        "gamma_lower95": fit.lower95,
        "growth": bool(fit.lower95 > 0),
    })
    if (P.N, P.p) == (3, 3.0):
        out["gamma_bracket"] = list(GAMMA_BRACKET)
        out["gamma_in_bracket"] = bool(GAMMA_BRACKET[0] <= fit.gamma <= GAMMA_BRACKET[1])
    if not out["growth"]:
        out["findings"].append("critical norm growth not resolved at 95%")
    if not 0.45 <= est.fit_exponent <= 0.55:
        out["findings"].append(f"lambda exponent {est.fit_exponent:.4f} outside [0.45, 0.55]")
    return out


def scenario_blowup(m: RunManifest, out_dir=None) -> tuple[TrajectoryRecord, dict]:
    """Run the manifest, archive the record and analyze the blow-up.

    Raises :class:`NoBlowup` (report attached as ``args[1]``) when the
    amplification target is missed.
    """
    u0 = m.initial_data()
    E0 = energy(u0, m.solver.coupling)
    if m.data.require_negative_energy and not E0 < 0:
        raise ValueError(f"initial energy {E0:.6g} is not negative")
    rec = run(u0, m.solver)
    rec.meta["manifest_digest"] = m.digest()
    rec.meta["manifest"] = m.to_ini()
    if out_dir is not None:
        rec.to_dir(out_dir)
    rep = {"scenario": "blowup", "manifest_digest": m.digest(), "initial_energy": E0}
    try:
        rep |= analyze_blowup(rec, m.solver.stop.amplification)
    except NoBlowup as exc:
        exc.args[1].update(rep)
        raise
    return rec, rep


def critical_series(rec: TrajectoryRecord) -> dict:
    """Columns for the plot-ready CSV of the growth fit."""
    est, ttb = blowup_estimate(rec)
    t, lpc, lam = rec.series("t", "lpc", "lam", upto="horizon")
    return {"t": t, "T_minus_t": ttb, "abs_log_T_minus_t": np.abs(np.log(ttb)), "lpc": lpc, "lam": lam}


# ---------------------------------------------------------------- dispersion and rho


def _tau_cap(view: BackwardView) -> float:
    """``tau* = 2/lambda_u(t)``, cut at the recorded range."""
    return min(2.0 * math.exp(view.N_t), view.tau_max)


def dispersive_series(tau: np.ndarray, grad_v: np.ndarray, s_c: float) -> np.ndarray:
    """``int_0^T (T - tau)|grad v|^2 / T^(1+s_c)`` at every sample ``T = tau_j``
    (trapezoid, so it equals :func:`nlsblowup.dynamics.dispersive_integral`)."""
    I0 = cumulative_trapezoid(grad_v, tau, initial=0.0)
    I1 = cumulative_trapezoid(tau * grad_v, tau, initial=0.0)
    out = np.zeros_like(tau)
    pos = tau > 0
    out[pos] = (tau[pos] * I0[pos] - I1[pos]) / tau[pos] ** (1.0 + s_c)
    return out


def rho_series(view: BackwardView, A: float, sel: np.ndarray) -> np.ndarray:
    """``rho(v(tau), A sqrt(tau))`` on the selected samples."""
    rec = view.record
    return np.array([
        rho_from_profile(rec, int(view.samples[j]), view.lam_u * A * math.sqrt(view.tau[j]))
        for j in np.flatnonzero(sel)
    ])


def _escapes(tau: np.ndarray, series: np.ndarray, rate: float) -> bool:
    """Monotone escape: the series peaks at its end and, over the last quarter
    of the ``log tau`` range, still grows faster than ``tau^rate``."""
    ok = (tau > 0) & (series > 0)
    if ok.sum() < 8:
        return False
    lt, ls = np.log(tau[ok]), np.log(series[ok])
    tail = lt >= lt[-1] - 0.25 * (lt[-1] - lt[0])
    if tail.sum() < 3 or np.argmax(ls) < ls.size - 2:
        return False
    return bool(np.polyfit(lt[tail], ls[tail], 1)[0] > rate)


def _alpha1(view: BackwardView, sel: np.ndarray, bound: float, M0: float) -> float:
    """Smallest ``a >= 0`` with ``max rho(v, M0^a sqrt(tau)) <= bound``."""
    if M0 <= 1.0:
        return math.nan
    f = lambda a: float(rho_series(view, M0**a, sel).max()) - bound
    if f(0.0) <= 0:
        return 0.0
    hi = 1.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 64:
            return math.inf
    return float(optimize.brentq(f, 0.0, hi, xtol=1e-4))


def momentum_check(view: BackwardView, v0: RadialField, A: float, tau0: np.ndarray, M0: float) -> np.ndarray:
    """``(Im int grad psi_R . grad v0 conj(v0) + N(p-1)E(v0) tau0/2) / (M0^2 A^(2(1+s_c)) tau0^s_c)``
    with ``R = A sqrt(tau0)``; NaN where the cutoff leaves the grid."""
    P = v0.params
    s = P.s_c
    E = view.energy_v0()
    out = np.full(tau0.shape, np.nan)
    for j, t0 in enumerate(tau0):
        R = A * math.sqrt(t0)
        c = CutoffSpec("psi", R)
        if not R > 0 or c.support > v0.grid.r_max:
            continue
        val = momentum(v0, c) + P.N * (P.p - 1.0) * E * t0 / 2.0
        out[j] = val / (M0**2 * A ** (2.0 * (1.0 + s)) * t0**s)
    return out


def _ladder(tau: np.ndarray, cap: float, n: int = 12) -> np.ndarray:
    """Up to ``n`` recorded positive times, log-spaced, at most ``cap``."""
    cand = np.flatnonzero((tau > 0) & (tau <= cap))
    if not cand.size:
        return cand
    targets = np.geomspace(tau[cand[0]], tau[cand[-1]], n)
    pick = np.unique(cand[np.clip(np.searchsorted(tau[cand], targets), 0, cand.size - 1)])
    return pick


def prop31_anchor(view: BackwardView, consts: Constants, A_ladder=(1.0, 2.0, 4.0, 8.0)) -> dict:
    rec = view.record
    P = rec.params
    M0 = 4.0 * view.lpc() / consts.C_GN
    cap = _tau_cap(view)
    sel = (view.tau > 0) & (view.tau <= cap)
    disp = dispersive_series(view.tau, view.grad_v, P.s_c)[sel]
    v0 = renormalized_view(anchor_field(rec, view.anchor)).field
    picks = _ladder(view.tau, cap)
    rate = 0.5 * (1.0 - P.s_c)  # half the growth rate of the ratio at constant gradient
    rho = {}
    mom = {}
    for A in A_ladder:
        series = rho_series(view, A, sel)
        rho[repr(float(A))] = {
            "max_over_M0sq": float(series.max() / M0**2),
            "escape": _escapes(view.tau[sel], series, rate),
        }
        mom[repr(float(A))] = momentum_check(view, v0, A, view.tau[picks], M0).tolist()
    dmax = float(disp.max())
    return {
        "k": anchor_order(rec, view.anchor),
        "anchor": view.anchor,
        "t": view.t_anchor,
        "N_t": view.N_t,
        "M0": M0,
        "tau_star": cap,
        "samples": int(sel.sum()),
        "energy_v0": view.energy_v0(),
        "energy_condition": float(cap ** (1.0 - P.s_c) * max(view.energy_v0(), 0.0)),
        "dispersive_max": dmax,
        "dispersive_escape": _escapes(view.tau[sel], disp, rate),
        "alpha2": math.log(dmax) / math.log(M0) if M0 > 1 and dmax > 0 else math.nan,
        "alpha1": _alpha1(view, sel, consts.C1 * M0**2, M0),
        "rho": rho,
        "momentum_tau0": view.tau[picks].tolist(),
        "momentum": mom,
    }


def scenario_prop31(rec: TrajectoryRecord, consts: Constants, anchors="all",
                    A_ladder=(1.0, 2.0, 4.0, 8.0)) -> dict:
    rows = [prop31_anchor(backward_view(rec, a), consts, A_ladder) for a in select_anchors(rec, anchors)]
    findings = []
    for r in rows:
        if r["dispersive_escape"]:
            findings.append(f"anchor k={r['k']}: dispersive ratio escapes")
        for A, d in r["rho"].items():
            if d["escape"]:
                findings.append(f"anchor k={r['k']}: rho at A={A} escapes")
    a1 = [r["alpha1"] for r in rows if math.isfinite(r["alpha1"])]
    a2 = [r["alpha2"] for r in rows if math.isfinite(r["alpha2"])]
    return {
        "scenario": "prop31",
        "constants_file": consts.path,
        "anchors": rows,
        "alpha1_emp": max(a1) if a1 else math.nan,
        "alpha2_emp": max(0.0, max(a2)) if a2 else math.nan,
        "findings": findings,
    }


# ---------------------------------------------------------------- weighted local mass


def weighted_ball(u: RadialField, lam_u: float, lam_v: float, D) -> np.ndarray:
    """``lam_v^(-2 s_c) int_{|x| <= D lam_v} |v(0)|^2`` read off ``u = u(t)``."""
    s = u.params.s_c
    r = np.minimum(np.asarray(D, float) * lam_v * lam_u, u.grid.r_max)
    return (lam_u * lam_v) ** (-2.0 * s) * cumulative_mass(u, 2.0, r)


def smallest_D(u: RadialField, lam_u: float, lam_v: float, threshold: float) -> float:
    """Least ``D`` with weighted ball mass at least ``threshold``; NaN if never."""
    D_max = u.grid.r_max / (lam_u * lam_v)
    f = lambda D: float(weighted_ball(u, lam_u, lam_v, D)) - threshold
    if f(D_max) < 0:
        return math.nan
    grid = np.geomspace(D_max * 1e-12, D_max, 241)
    vals = weighted_ball(u, lam_u, lam_v, grid) - threshold
    j = int(np.argmax(vals >= 0))
    if j == 0:
        return float(grid[0])
    return float(optimize.brentq(f, grid[j - 1], grid[j], xtol=1e-12 * grid[j], rtol=1e-12))


def flux_drift(view: BackwardView, j: int, D: np.ndarray) -> np.ndarray:
    """``lam_v^(-2s_c) |int_{|x|<=D lam_v} |v(tau)|^2 - |v(0)|^2|`` at sample ``j``
    of the view, with ``lam_v = lam_v(tau_j)``, from stored profiles."""
    rec = view.record
    s = rec.params.s_c
    lv = view.lam_v[j]
    r = np.minimum(D * lv * view.lam_u, rec.grid.r_max)
    a = ball_mass(rec, int(view.samples[j]), r)
    b = ball_mass(rec, int(view.samples[0]), r)
    return (view.lam_u * lv) ** (-2.0 * s) * np.abs(a - b)


def prop32_anchor(view: BackwardView, consts: Constants, thresholds=(0.01, 0.1, 0.5)) -> dict:
    rec = view.record
    P = rec.params
    u = anchor_field(rec, view.anchor)
    M0 = 4.0 * view.lpc() / consts.C_GN
    cap = min(math.exp(view.N_t), view.tau_max)  # tau_0 <= tau*/2
    picks = np.concatenate([[0], _ladder(view.tau, cap, 16)]).astype(int)
    E = view.energy_v0()
    rows = []
    for j in picks:
        lv = float(view.lam_v[j])
        Fs = math.sqrt(view.tau[j]) / lv
        D = {repr(th): smallest_D(u, view.lam_u, lv, th) for th in thresholds}
        Dg = np.geomspace(1.0, u.grid.r_max / (view.lam_u * lv), 25)
        drift = flux_drift(view, j, Dg) if j > 0 else np.zeros_like(Dg)
        rows.append({
            "tau0": float(view.tau[j]),
            "lam_v": lv,
            "F_star": Fs,
            "energetic": float(lv ** (2.0 * (1.0 - P.s_c)) * E),
            "energetic_ok": bool(lv ** (2.0 * (1.0 - P.s_c)) * E <= 0.25),
            "D": D,
            "D_ratio": {k: v / max(1.0, Fs) for k, v in D.items()},
            "drift_D": Dg.tolist(),
            "drift": drift.tolist(),
            "drift_monotone": _monotone_within(drift, 0.05),
            # both balls are empty as D -> 0, so the drift rises before it decays
            "drift_peak_D": float(Dg[int(np.argmax(drift))]),
            "drift_monotone_beyond_peak": _monotone_within(drift[int(np.argmax(drift)):], 0.05),
        })
    a3 = {}
    for th in thresholds:
        vals = [r["D_ratio"][repr(th)] for r in rows if math.isfinite(r["D_ratio"][repr(th)])]
        a3[repr(th)] = (max(math.log(max(x, 1e-300)) for x in vals) / math.log(M0)
                        if vals and M0 > 1 else math.nan)
    return {
        "k": anchor_order(rec, view.anchor),
        "anchor": view.anchor,
        "t": view.t_anchor,
        "N_t": view.N_t,
        "M0": M0,
        "rows": rows,
        "alpha3": a3,
    }


def _monotone_within(x: np.ndarray, rel: float) -> bool:
    """Nonincreasing up to rises of ``rel`` times the series maximum."""
    if x.size < 2:
        return True
    top = float(np.max(x))
    return bool(np.all(np.diff(x) <= rel * top + 1e-300))


def mass_distribution_series(u: RadialField, n: int = 40) -> dict:
    """``g(R) = R^(-2s_c) int_{|x| <= R} |u|^2`` on a geometric ladder."""
    r = u.grid.radii
    lo = r[1] if r[1] > 0 else u.grid.r_max * 1e-6
    R = np.geomspace(max(lo, u.grid.r_max * 1e-6), u.grid.r_max, n)
    return {"R": R.tolist(), "g": [mass_distribution(u, x) for x in R]}


def scenario_prop32(rec: TrajectoryRecord, consts: Constants, anchors="all",
                    thresholds=(0.01, 0.1, 0.5)) -> dict:
    rows = [prop32_anchor(backward_view(rec, a), consts, thresholds) for a in select_anchors(rec, anchors)]
    findings = []
    for r in rows:
        for q in r["rows"]:
            if not q["energetic_ok"]:
                findings.append(f"anchor k={r['k']} tau0={q['tau0']:.4g}: energetic constraint fails")
            if not math.isfinite(q["D"][repr(thresholds[0])]):
                findings.append(f"anchor k={r['k']} tau0={q['tau0']:.4g}: no threshold crossing")
    a3 = {}
    for th in thresholds:
        vals = [r["alpha3"][repr(th)] for r in rows if math.isfinite(r["alpha3"][repr(th)])]
        a3[repr(th)] = max(vals) if vals else math.nan
    return {
        "scenario": "prop32",
        "constants_file": consts.path,
        "anchors": rows,
        "alpha3_emp": a3,
        "initial_mass_distribution": mass_distribution_series(rec.snapshot(0)[1]),
        "findings": findings,
    }


# ---------------------------------------------------------------- channels


def channels_anchor(view: BackwardView, consts: Constants, rule: str = "first") -> dict:
    u = anchor_field(view.record, view.anchor)
    rep = build_report(u, view.lam_u, view.tau, view.lam_v, consts.C_GN, consts.alpha2, consts.alpha4,
                       t_anchor=view.t_anchor, constants_file=consts.path, rule=rule)
    d = rep.to_dict()
    d["k"] = anchor_order(view.record, view.anchor)
    d["anchor"] = view.anchor
    return d


def scenario_channels(rec: TrajectoryRecord, consts: Constants, anchors="all", rule: str = "first") -> dict:
    rows = []
    findings = []
    for a in select_anchors(rec, anchors):
        view = backward_view(rec, a)
        try:
            d = channels_anchor(view, consts, rule)
        except InsufficientDepth as exc:
            findings.append(f"anchor {a}: {exc}")
            continue
        rows.append(d)
        for i in d["missing"]:
            findings.append(f"anchor k={d['k']}: no channel for i={i}")
    return {
        "scenario": "channels",
        "rule": rule,
        "constants_file": consts.path,
        "anchors": rows,
        "findings": findings,
    }


def alpha4_from_channels(rec: TrajectoryRecord, consts: Constants, threshold: float,
                         rules=("first", "proof")) -> float:
    """Smallest ``a`` with ``M_t^a >= D_threshold(tau_i)`` over all anchors and channels."""
    worst = 0.0
    for a in select_anchors(rec, "all"):
        view = backward_view(rec, a)
        u = anchor_field(rec, a)
        M = 4.0 * view.lpc() / consts.C_GN
        L = L_of(M, consts.alpha2, rec.params.s_c)
        for rule in rules:
            finder = FINDERS[rule]
            for i in channel_indices(view.N_t):
                c = finder(view.tau, view.lam_v, i, L)
                if c is None:
                    continue
                D = smallest_D(u, view.lam_u, c.lam_v, threshold)
                if math.isfinite(D) and D > 1 and M > 1:
                    worst = max(worst, math.log(D) / math.log(M))
    return worst
