"""Renormalized backward trajectories read off a recorded run.

At an anchor sample ``t`` the rescaled field is
``v(tau, x) = lam^(2/(p-1)) conj(u(t - lam^2 tau, lam x))`` with
``lam = lambda_u(t)``. Nothing is re-simulated: every quantity of ``v`` is a
rescaled column or stored profile of the record.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from ..core import NLSParams, RadialField, RadialGrid
from ..dynamics import renormalized_view
from ..errors import InsufficientSampling
from ..trajectory import Diagnostics, TrajectoryRecord


@dataclass(frozen=True)
class BackwardView:
    """Samples of ``v`` at increasing ``tau`` (index 0 is the anchor itself)."""

    record: TrajectoryRecord
    anchor: int
    t_anchor: float
    lam_u: float
    tau: np.ndarray
    lam_v: np.ndarray
    grad_v: np.ndarray  # |grad v(tau)|^2
    samples: np.ndarray  # record index of each tau

    @property
    def params(self) -> NLSParams:
        return self.record.params

    @property
    def N_t(self) -> float:
        return -math.log(self.lam_u)

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1])

    @property
    def F(self) -> np.ndarray:
        """Parabolic ratio ``sqrt(tau)/lam_v(tau)``."""
        return np.sqrt(self.tau) / self.lam_v

    def lambda_v(self, tau) -> np.ndarray:
        """``lam_v`` between samples, monotone cubic in ``(tau, log lam_v)``."""
        f = PchipInterpolator(self.tau, np.log(self.lam_v), extrapolate=False)
        return np.exp(f(np.asarray(tau, float)))

    def physical_time(self, tau) -> np.ndarray:
        return self.t_anchor - self.lam_u**2 * np.asarray(tau, float)

    def energy_v0(self) -> float:
        """``E(v(0)) = lam^(2(1-s_c)) E(u(t))``."""
        s = self.params.s_c
        return self.lam_u ** (2.0 * (1.0 - s)) * float(self.record.columns["energy"][self.anchor])

    def lpc(self) -> float:
        """``|v(0)|_{L^{p_c}}``, equal to ``|u(t)|_{L^{p_c}}`` by scale invariance."""
        return float(self.record.columns["lpc"][self.anchor])


def backward_view(rec: TrajectoryRecord, anchor: int) -> BackwardView:
    """View of ``rec`` renormalized at sample ``anchor``.

    ``t - t_j`` is accumulated from the recorded step gaps rather than
    differenced, so ``tau`` stays exact where ``t`` has run out of digits.
    """
    if not 0 <= anchor < len(rec):
        raise IndexError(f"anchor {anchor} outside the record")
    t = rec.column("t")[: anchor + 1]
    lam = rec.column("lam")[: anchor + 1]
    grad = rec.column("grad_sq")[: anchor + 1]
    if "gap" in rec.columns:
        gap = rec.column("gap")[: anchor + 1]
        gap[0] = 0.0
        sigma = np.concatenate([np.cumsum(gap[:0:-1])[::-1], [0.0]])
    else:
        sigma = t[-1] - t
    lam_u = float(lam[-1])
    s = rec.params.s_c
    order = np.arange(anchor, -1, -1)
    tau = sigma[order] / lam_u**2
    if np.any(np.diff(tau) <= 0):
        raise InsufficientSampling("renormalized times are not strictly increasing")
    return BackwardView(
        record=rec,
        anchor=anchor,
        t_anchor=float(t[-1]),
        lam_u=lam_u,
        tau=tau,
        lam_v=lam[order] / lam_u,
        grad_v=grad[order] * lam_u ** (2.0 * (1.0 - s)),
        samples=order,
    )


def lambda_u_at(rec: TrajectoryRecord, t) -> np.ndarray:
    """``lambda_u`` at physical times, monotone cubic in ``(t, log lam)``."""
    tt, lam = rec.series("t", "lam")
    return np.exp(PchipInterpolator(tt, np.log(lam), extrapolate=False)(np.asarray(t, float)))


def anchor_field(rec: TrajectoryRecord, anchor: int) -> RadialField:
    """Stored snapshot ``u(t)`` at sample ``anchor``."""
    for k, s in enumerate(rec.snapshots):
        if s["index"] == anchor:
            return rec.snapshot(k)[1]
    raise KeyError(f"no snapshot stored for sample {anchor}")


def anchor_indices(rec: TrajectoryRecord, upto: str | int = "horizon") -> list[int]:
    """Samples where ``lambda_u`` first drops below ``exp(-k/2)``, in time order."""
    stop = rec._stop(upto)
    idx = sorted({int(s["index"]) for s in rec.snapshots if s.get("k", -1) >= 0 and s["index"] < stop})
    return idx


def v0_field(rec: TrajectoryRecord, anchor: int) -> RadialField:
    """``v(0)`` itself, on the anchor grid divided by ``lambda_u``."""
    return renormalized_view(anchor_field(rec, anchor)).field


# ---------------------------------------------------------------- profile reads


def ball_mass(rec: TrajectoryRecord, sample: int, r) -> np.ndarray:
    """``int_{|x| <= r} |u|^2`` at a recorded sample, from its stored profile.

    Radii below the first ladder rung scale like ``r^N`` from it.
    """
    r = np.atleast_1d(np.asarray(r, float))
    lad = rec.ladder
    F2 = rec.profile_at(sample, "F2")
    f = PchipInterpolator(np.log(lad), F2, extrapolate=False)
    out = np.empty_like(r)
    lo = r < lad[0]
    hi = r > lad[-1]
    mid = ~(lo | hi)
    out[mid] = f(np.log(r[mid]))
    out[lo] = F2[0] * (r[lo] / lad[0]) ** rec.params.N
    out[hi] = F2[-1]
    return out


def rho_from_profile(rec: TrajectoryRecord, sample: int, R: float) -> float:
    """``rho(u, R)`` at a recorded sample, sup taken over ``R`` and the
    profile ladder rungs above it with ``2R' <= r_max``."""
    lad = rec.ladder
    r_max = rec.grid.r_max
    if 2.0 * R > r_max:
        return 0.0
    rungs = lad[(lad > R) & (2.0 * lad <= r_max)]
    Rp = np.concatenate([[R], rungs])
    F = ball_mass(rec, sample, np.concatenate([Rp, 2.0 * Rp]))
    n = Rp.size
    ring = np.maximum(F[n:] - F[:n], 0.0)
    return float(np.max(Rp ** (-2.0 * rec.params.s_c) * ring))


# ---------------------------------------------------------------- synthetic records


def synthetic_record(
    P: NLSParams,
    grid: RadialGrid,
    times: np.ndarray,
    lam_of_t,
    shape,
    snapshot_every: int | None = None,
) -> TrajectoryRecord:
    """Record of the non-dynamical family ``u(t, r) = l^(-2/(p-1)) shape(r/l)``, ``l = lam_of_t(t)``.

    Diagnostics are computed from the sampled fields exactly as a solver run
    would, and anchors follow the ``exp(-k/2)`` crossings of ``lambda_u``.
    ``snapshot_every`` also stores every n-th field.
    """
    diag = Diagnostics(grid, P)
    rec = TrajectoryRecord(P, grid, ladder=diag.ladder)
    rec.meta["synthetic"] = True
    anchor_k = None
    prev_t = None
    for j, t in enumerate(np.asarray(times, float)):
        l = float(lam_of_t(t))
        vals = l ** (-P.alpha) * shape(grid.radii / l)
        vals = np.asarray(vals, complex)
        vals[-1] = 0.0
        row = diag.row(vals)
        gap = math.nan if prev_t is None else t - prev_t
        prev_t = t
        rec.append({"t": t, "step": j, "dt": gap, "gap": gap, **row, "reliable": 1.0})
        idx = len(rec) - 1
        rec.horizon = idx
        F2, Fpc = diag.profiles(RadialField(grid, vals, P))
        rec.profile_idx.append(idx)
        rec.profile_F2.append(F2)
        rec.profile_Fpc.append(Fpc)
        lam_u = row["lam"]
        if anchor_k is None:
            anchor_k = int(math.floor(-2.0 * math.log(lam_u))) + 1
            rec.snapshots.append({"t": t, "index": idx, "k": -1, "lam": lam_u, "values": vals})
        elif lam_u <= math.exp(-anchor_k / 2.0):
            rec.snapshots.append({"t": t, "index": idx, "k": anchor_k, "lam": lam_u, "values": vals})
            while lam_u <= math.exp(-anchor_k / 2.0):
                anchor_k += 1
        elif snapshot_every and idx % snapshot_every == 0:
            rec.snapshots.append({"t": t, "index": idx, "k": -3, "lam": lam_u, "values": vals})
    return rec

