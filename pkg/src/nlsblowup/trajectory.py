"""Trajectory records and the per-sample diagnostics written into them."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import NLSParams, RadialField, RadialGrid, derive_params
from .dynamics import CutoffSpec
from .io import load_field, save_field
from .norms import cumulative_mass, edge_weights, node_weights


def mass_ladder(r_lo: float, r_max: float, per_octave: int = 16) -> np.ndarray:
    """Global geometric radii ``2^(k/n)`` covering ``[r_lo, r_max]``."""
    k0 = math.floor(math.log2(r_lo) * per_octave)
    k1 = math.floor(math.log2(r_max) * per_octave)
    return np.exp2(np.arange(k0, k1 + 1) / per_octave)


class Diagnostics:
    """Evaluates one row of scalar diagnostics for a field on a fixed grid.

    Cutoff arrays are built once. Column names for a cutoff ``c`` are
    ``lm_/mom_/vir_/fs_/vs_`` followed by ``<kind>_<R>``.
    """

    def __init__(
        self,
        grid: RadialGrid,
        params: NLSParams,
        cutoffs: Sequence[CutoffSpec] = (),
        coupling: float = 1.0,
        ladder_per_octave: int = 16,
    ):
        self.grid = grid
        self.params = params
        self.coupling = coupling
        N = params.N
        self.W = node_weights(grid, N)
        self.K = edge_weights(grid, N)
        self.h = grid.spacing
        r = grid.radii
        rm = grid.midpoints
        self.r2 = r**2
        self.shell = r >= 0.9 * grid.r_max
        self.cut = []
        for c in cutoffs:
            if c.support > grid.r_max:
                raise ValueError(f"cutoff {c} leaves the grid")
            v = c(r)
            self.cut.append(
                (
                    f"{c.kind}_{c.R:g}",
                    self.W * v,
                    self.K * np.diff(v) / self.h,
                    self.K * c.derivative(rm, 2),
                    c.bilaplacian_weights(grid, N),
                    c.laplacian_weights(grid, N),
                    self.W * (v - 1.0),
                )
            )
        self.ladder = mass_ladder(max(grid.r_min, 1e-300), grid.r_max, ladder_per_octave)

    def row(self, u: np.ndarray, prev: np.ndarray | None = None) -> dict:
        """Scalar diagnostics of ``u``.

        With ``prev`` (the previous recorded field) the increments of the
        cutoff masses and momenta are also formed node by node, which keeps
        them accurate when the step is far below ``ulp(mass)/|dmass/dt|``.
        """
        p = self.params.p
        s = self.params.s_c
        N = self.params.N
        m = np.abs(u)
        m2 = m * m
        du = np.diff(u) / self.h
        adu2 = np.abs(du) ** 2
        mass = float(self.W @ m2)
        grad = float(self.K @ adu2)
        pot = float(self.W @ m ** (p + 1.0))
        lpc = float(self.W @ m**self.params.p_c)
        E = 0.5 * grad - self.coupling * pot / (p + 1.0)
        lam = grad ** (-0.5 / (1.0 - s)) if grad > 0 else math.inf
        focus = int(np.count_nonzero((self.grid.radii > 0) & (self.grid.radii <= lam)))
        out = {
            "mass": mass,
            "grad_sq": grad,
            "pot": pot,
            "energy": E,
            "lpc": lpc ** (1.0 / self.params.p_c),
            "lam": lam,
            "umax": float(m.max()),
            "tail": float(m[-1]),
            "shell": float(self.W[self.shell] @ m2[self.shell]) / mass if mass > 0 else 0.0,
            "focus_nodes": focus,
            "x2": float(self.W @ (self.r2 * m2)),
            "gvir": 4.0 * N * (p - 1.0) * E - 16.0 * s / (N - 2.0 * s) * grad,
        }
        ubar = 0.5 * (u[1:] + u[:-1])
        abar = 0.5 * (m[1:] + m[:-1])
        cross = np.conj(ubar) * du
        mp = m ** (p + 1.0)
        kk = self.coupling * (0.5 - 1.0 / (p + 1.0))
        for name, Wc, Kdc, Kc2, Wb, Wl, _ in self.cut:
            out["lm_" + name] = float(Wc @ m2)
            out["mom_" + name] = float(np.imag(Kdc @ cross))
            out["fs_" + name] = float(np.abs(Kdc) @ (abar * np.abs(du)))
            a = float(Kc2 @ adu2)
            b = 0.25 * float(Wb @ m2)
            g = kk * float(Wl @ mp)
            out["vir_" + name] = a - b - g
            out["vs_" + name] = abs(a) + float(np.abs(Wb) @ m2) * 0.25 + abs(kk) * float(np.abs(Wl) @ mp)
        if prev is not None:
            du_ = u - prev
            dm2 = np.real(du_ * np.conj(u + prev))
            dd = np.diff(du_) / self.h
            dub = 0.5 * (du_[1:] + du_[:-1])
            ubp = 0.5 * (prev[1:] + prev[:-1])
            dcross = np.conj(dub) * du + np.conj(ubp) * dd
            for name, _, Kdc, _, _, _, Wm in self.cut:
                # the scheme conserves sum(W|u|^2), so the increment is carried
                # by the region where c < 1 and the flat core drops out
                out["dlm_" + name] = float(Wm @ dm2)
                out["dmom_" + name] = float(np.imag(Kdc @ dcross))
        return out

    def profiles(self, field_: RadialField) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative ``L^2`` and ``L^{p_c}`` masses at the ladder radii."""
        return (
            cumulative_mass(field_, 2.0, self.ladder),
            cumulative_mass(field_, self.params.p_c, self.ladder),
        )


@dataclass
class TrajectoryRecord:
    """Append-only time series of diagnostics plus anchor snapshots.

    ``horizon`` is the index of the last sample inside the reliable prefix.
    """

    params: NLSParams
    grid: RadialGrid
    columns: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    ladder: np.ndarray | None = None
    profile_idx: list = field(default_factory=list)
    profile_F2: list = field(default_factory=list)
    profile_Fpc: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    horizon: int = -1

    def append(self, row: dict) -> None:
        n = len(self)
        for k, v in row.items():
            col = self.columns.setdefault(k, [math.nan] * n)
            col.append(v)
        for k, col in self.columns.items():
            if len(col) == n:
                col.append(math.nan)

    def __len__(self) -> int:
        return len(self.columns["t"]) if "t" in self.columns else 0

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.columns[name], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    @property
    def t_horizon(self) -> float:
        return float(self.columns["t"][self.horizon]) if self.horizon >= 0 else math.nan

    def _stop(self, upto) -> int:
        if upto is None or upto == "all":
            return len(self)
        if upto == "horizon":
            return self.horizon + 1
        return int(upto)

    def series(self, *names: str, upto=None) -> tuple[np.ndarray, ...]:
        n = self._stop(upto)
        return tuple(self.column(k)[:n] for k in names)

    def dt_max(self, upto=None) -> float | None:
        if "dt" not in self.columns:
            return None
        (dt,) = self.series("dt", upto=upto)
        dt = dt[np.isfinite(dt)]
        return float(dt.max()) if dt.size else None

    # ---- profile reads

    def profile_at(self, idx: int, which: str = "F2") -> np.ndarray:
        """Cumulative mass profile stored for sample ``idx``."""
        j = self.profile_idx.index(idx)
        return (self.profile_F2 if which == "F2" else self.profile_Fpc)[j]

    def nearest_profile(self, t: float) -> int:
        """Sample index of the stored profile closest in time to ``t``."""
        tt = self.times[self.profile_idx]
        return self.profile_idx[int(np.argmin(np.abs(tt - t)))]

    def snapshot(self, k: int) -> tuple[dict, RadialField]:
        s = self.snapshots[k]
        return s, RadialField(self.grid, s["values"], self.params)

    # ---- persistence

    def to_dir(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        names = list(self.columns)
        with open(path / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in zip(*(self.columns[k] for k in names)):
                w.writerow([repr(float(x)) for x in row])
        snaps = []
        for i, s in enumerate(self.snapshots):
            stem = path / "snapshots" / f"snap_{i:03d}"
            save_field(RadialField(self.grid, s["values"], self.params), stem,
                       {k: v for k, v in s.items() if k != "values"})
            snaps.append({k: v for k, v in s.items() if k != "values"} | {"file": stem.name})
        np.savez_compressed(
            path / "profiles.npz",
            ladder=self.ladder if self.ladder is not None else np.empty(0),
            idx=np.asarray(self.profile_idx, dtype=np.int64),
            F2=np.asarray(self.profile_F2),
            Fpc=np.asarray(self.profile_Fpc),
            radii=self.grid.radii,
        )
        manifest = {
            "params": self.params.to_dict(),
            "grid": self.grid.header(),
            "horizon": self.horizon,
            "t_horizon": self.t_horizon,
            "snapshots": snaps,
            "meta": self.meta,
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default))
        return path

    @classmethod
    def from_dir(cls, path) -> "TrajectoryRecord":
        path = Path(path)
        man = json.loads((path / "manifest.json").read_text())
        P = derive_params(man["params"]["N"], man["params"]["p"])
        prof = np.load(path / "profiles.npz")
        g = man["grid"]
        grid = RadialGrid(prof["radii"], g["grid_mode"], g["r_min"], g["stretch"])
        with open(path / "trajectory.csv") as fh:
            rows = list(csv.reader(fh))
        cols = {k: [float(r[i]) for r in rows[1:]] for i, k in enumerate(rows[0])}
        snaps = []
        for s in man["snapshots"]:
            f, _ = load_field(path / "snapshots" / s["file"])
            snaps.append({k: v for k, v in s.items() if k != "file"} | {"values": f.values})
        return cls(
            params=P,
            grid=grid,
            columns=cols,
            meta=man["meta"],
            ladder=prof["ladder"],
            profile_idx=[int(i) for i in prof["idx"]],
            profile_F2=list(prof["F2"]),
            profile_Fpc=list(prof["Fpc"]),
            snapshots=snaps,
            horizon=int(man["horizon"]),
        )


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def interpolated_profile(ladder: np.ndarray, F: np.ndarray):
    """Monotone interpolant of a cumulative profile in ``log r``."""
    return PchipInterpolator(np.log(ladder), F, extrapolate=True)
