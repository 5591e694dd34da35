"""Energy and radial Gagliardo-Nirenberg inequalities with empirical constants.

The constants in both inequalities are existential, so they are replaced here
by suprema over a seeded random corpus, followed by an audit on a fresh
corpus with a bounded failure margin.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import NLSParams, RadialField, RadialGrid, derive_params
from .dynamics import CutoffSpec, energy
from .errors import DegenerateField, DomainExceeded
from .norms import (
    DEFAULT_LADDER_PER_OCTAVE,
    cumulative_gradient,
    cumulative_mass,
    gradient_norm_sq,
    lebesgue_norm,
    power_integral,
    rho_seminorm,
)

DEFAULT_ETAS = (0.05, 0.1, 0.5, 1.0)
TOL_IDENTITY = 1e-3
TOL_AUDIT = 5e-2


# ---------------------------------------------------------------- exponents


def exponent_identities(P: NLSParams) -> tuple[float, float]:
    """Residuals of the two exponent identities used in the ring estimate.

    ``(N-1)(p-1)/2 - (p+3)s_c/2 = (5-p)(1-s_c)/2`` and
    ``N(p+1)/2 - N - s_c(p+1) = 2(1-s_c)``.
    """
    N, p, s = P.N, P.p, P.s_c
    a = (N - 1) * (p - 1) / 2 - (p + 3) * s / 2 - (5 - p) * (1 - s) / 2
    b = N * (p + 1) / 2 - N - s * (p + 1) - 2 * (1 - s)
    return a, b


def check_exponent_identities(P: NLSParams, tol: float = 1e-12) -> None:
    a, b = exponent_identities(P)
    if abs(a) > tol or abs(b) > tol:
        raise ArithmeticError(f"exponent identities fail for N={P.N}, p={P.p}: {a:.3e}, {b:.3e}")


def rho_bracket(rho: np.ndarray | float, p: float) -> np.ndarray | float:
    """``rho^((p+3)/(5-p)) + rho^((p+1)/2)``."""
    if p >= 5:
        raise ValueError("the ring estimate needs p < 5")
    return rho ** ((p + 3) / (5 - p)) + rho ** ((p + 1) / 2)


# ---------------------------------------------------------------- value types


@dataclass
class GNConstants:
    N: int
    p: float
    C_GN: float
    C_eta: dict
    corpus_id: str
    manifest: dict = field(default_factory=dict)

    def c_eta(self, eta: float) -> float:
        for k, v in self.C_eta.items():
            if math.isclose(float(k), eta, rel_tol=1e-12):
                return float(v)
        raise KeyError(f"no calibrated constant for eta = {eta}")

    def to_json(self, path=None) -> str:
        d = asdict(self)
        d["C_eta"] = {repr(float(k)): float(v) for k, v in self.C_eta.items()}
        text = json.dumps(d, indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "GNConstants":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        d = json.loads(text)
        d["C_eta"] = {float(k): float(v) for k, v in d["C_eta"].items()}
        return cls(**d)


@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    margin: float
    witness: dict
    passed: bool
    tol_rel: float = TOL_AUDIT

    def to_json(self) -> str:
        return json.dumps(asdict(self), default=float)


def _report(lhs: float, rhs: float, witness: dict, tol_rel: float) -> InequalityReport:
    margin = rhs - lhs
    return InequalityReport(lhs, rhs, margin, witness, bool(margin >= -tol_rel * abs(rhs)), tol_rel)


# ---------------------------------------------------------------- energy GN


def gn_ratio(u: RadialField) -> float:
    """``int |u|^(p+1) / (|u|_{p_c}^(p-1) |grad u|^2)`` (scale invariant)."""
    P = u.params
    g = gradient_norm_sq(u)
    if not g > 0:
        raise DegenerateField("zero gradient norm")
    lpc = lebesgue_norm(u, P.p_c, warn=False)
    return power_integral(u, P.p + 1.0) / (lpc ** (P.p - 1.0) * g)


def cgn_from_ratio(ratio: float, p: float) -> float:
    """Largest ``C`` with ``E >= 1/2 |grad u|^2 (1 - (|u|_{p_c}/C)^(p-1))`` at this ratio."""
    return ((p + 1.0) / (2.0 * ratio)) ** (1.0 / (p - 1.0))


def estimate_cgn(corpus: Sequence[RadialField]) -> tuple[float, int]:
    """``C_GN`` from the corpus sup of :func:`gn_ratio`; returns ``(C_GN, argmax)``."""
    if not corpus:
        raise ValueError("empty corpus")
    ratios = np.array([gn_ratio(u) for u in corpus])
    i = int(np.argmax(ratios))
    return cgn_from_ratio(float(ratios[i]), corpus[0].params.p), i


def check_energy_gn(u: RadialField, c: GNConstants, tol_rel: float = TOL_AUDIT) -> InequalityReport:
    P = u.params
    g = gradient_norm_sq(u)
    lpc = lebesgue_norm(u, P.p_c, warn=False)
    lhs = 0.5 * g * (1.0 - (lpc / c.C_GN) ** (P.p - 1.0))
    return _report(lhs, energy(u), {"check": "energy_gn", "C_GN": c.C_GN}, tol_rel)


# ---------------------------------------------------------------- radial GN


@dataclass
class RingData:
    """Per-radius ingredients of the two radial GN checks."""

    D: np.ndarray
    rho: np.ndarray
    ring_pot: np.ndarray
    ring_grad: np.ndarray
    ext_pot: np.ndarray
    ext_grad: np.ndarray

    def bracket(self, P: NLSParams) -> np.ndarray:
        return rho_bracket(self.rho, P.p) / self.D ** (2.0 * (1.0 - P.s_c))


def ring_data(u: RadialField, D, per_octave: int = DEFAULT_LADDER_PER_OCTAVE) -> RingData:
    """Ring ``[D, 2D]`` and exterior ``|x| >= D`` integrals plus ``rho(u, D)``."""
    D = np.sort(np.asarray(D, dtype=float))
    if D.size and 2 * D[-1] > u.grid.r_max * (1 + 1e-12):
        raise DomainExceeded("ring [D, 2D] leaves the grid")
    q = u.params.p + 1.0
    r_max = u.grid.r_max
    pts = np.concatenate([D, 2 * D, [r_max]])
    F = cumulative_mass(u, q, pts)
    G = cumulative_gradient(u, pts)
    n = D.size
    # per-radius ladders keep each value independent of the other probes
    rho = np.array([rho_seminorm(u, x, per_octave) for x in D])
    return RingData(
        D=D,
        rho=rho,
        ring_pot=np.maximum(F[n : 2 * n] - F[:n], 0.0),
        ring_grad=np.maximum(G[n : 2 * n] - G[:n], 0.0),
        ext_pot=np.maximum(F[-1] - F[:n], 0.0),
        ext_grad=np.maximum(G[-1] - G[:n], 0.0),
    )


def check_radial_gn_ring(
    u: RadialField, D: float, eta: float, c: GNConstants | float, tol_rel: float = TOL_AUDIT
) -> InequalityReport:
    """``int_{D<=|x|<=2D}|u|^(p+1)`` against ``eta |grad u|^2_ring + C_eta rho-bracket / D^(2(1-s_c))``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    C = c.c_eta(eta) if isinstance(c, GNConstants) else float(c)
    d = ring_data(u, [D])
    rhs = eta * d.ring_grad[0] + C * d.bracket(u.params)[0]
    w = {"check": "ring", "D": float(D), "eta": eta, "C_eta": C, "rho": float(d.rho[0])}
    return _report(float(d.ring_pot[0]), float(rhs), w, tol_rel)


def check_radial_gn_exterior(
    u: RadialField, R: float, eta: float, c: GNConstants | float, tol_rel: float = TOL_AUDIT
) -> InequalityReport:
    """Exterior version over ``|x| >= R``.

    The witness also carries ``dyadic_defect``: the exterior integral minus
    the sum over rings ``[2^j R, 2^(j+1) R]`` inside the grid, which is zero
    up to roundoff when ``R`` divides ``r_max`` dyadically.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    if 4 * R > u.grid.r_max * (1 + 1e-12):
        raise DomainExceeded("exterior check needs R <= r_max/4")
    C = c.c_eta(eta) if isinstance(c, GNConstants) else float(c)
    d = ring_data(u, [R])
    rhs = eta * d.ext_grad[0] + C * d.bracket(u.params)[0]
    rungs = R * 2.0 ** np.arange(int(math.floor(math.log2(u.grid.r_max / R) + 1e-12)) + 1)
    F = cumulative_mass(u, u.params.p + 1.0, rungs)
    defect = float(d.ext_pot[0] - (F[-1] - F[0]))
    w = {"check": "exterior", "R": float(R), "eta": eta, "C_eta": C, "rho": float(d.rho[0]),
         "dyadic_defect": defect}
    return _report(float(d.ext_pot[0]), float(rhs), w, tol_rel)


def probe_radii(grid: RadialGrid, per_octave: int = 4, octaves: int = 8) -> np.ndarray:
    """Radii ``D`` with ``2D <= r_max`` used to probe the ring and exterior checks."""
    top = grid.r_max / 2.0
    return top * 2.0 ** (-np.arange(octaves * per_octave + 1) / per_octave)


def c_eta_witness(u: RadialField, eta: float, D: np.ndarray | None = None) -> float:
    """Smallest ``C`` making both radial checks hold for ``u`` at the probe radii."""
    D = probe_radii(u.grid) if D is None else D
    d = ring_data(u, D)
    B = d.bracket(u.params)
    with np.errstate(divide="ignore", invalid="ignore"):
        ring = np.where(B > 0, (d.ring_pot - eta * d.ring_grad) / B, 0.0)
        ext_ok = 4 * d.D <= u.grid.r_max * (1 + 1e-12)
        ext = np.where((B > 0) & ext_ok, (d.ext_pot - eta * d.ext_grad) / B, 0.0)
    return float(max(0.0, ring.max(initial=0.0), ext.max(initial=0.0)))


# ---------------------------------------------------------------- corpus


CORPUS_FAMILIES = ("gaussian", "rings", "power", "mixture")


def corpus_grid(r_max: float = 32.0, M: int = 2049) -> RadialGrid:
    return RadialGrid.uniform(r_max, M)


def _gaussian(rng, r, P):
    A = math.exp(rng.uniform(math.log(0.1), math.log(5.0)))
    w = rng.uniform(0.3, 3.0)
    return A * np.exp(-0.5 * (r / w) ** 2), {"A": A, "w": w}


RING_BOUNDS = {"c": (0.0, 1.0 / 3.0), "w": (0.2, 2.0), "a": (0.1, 3.0)}


def ring_bumps(r: np.ndarray, c, w, a) -> np.ndarray:
    return sum(ak * np.exp(-(((r - ck) / wk) ** 2)) for ck, wk, ak in zip(c, w, a))


def _rings(rng, r, P, r_max):
    K = int(rng.integers(1, 5))
    c = rng.uniform(0.0, r_max * RING_BOUNDS["c"][1], K)
    w = rng.uniform(*RING_BOUNDS["w"], K)
    a = np.exp(rng.uniform(*np.log(RING_BOUNDS["a"]), K))
    return ring_bumps(r, c, w, a), {"c": c.tolist(), "w": w.tolist(), "a": a.tolist()}


def _power(rng, r, P, r_max):
    a = rng.uniform(2.0 / (P.p - 1.0), P.N / 2.0)
    r0 = rng.uniform(0.2, 2.0)
    Rc = rng.uniform(r_max / 8.0, r_max / 2.0 - 0.5)
    A = math.exp(rng.uniform(math.log(0.2), math.log(3.0)))
    v = A * r0**a * (r * r + r0 * r0) ** (-a / 2.0) * CutoffSpec("chi", Rc)(r)
    return v, {"a": a, "r0": r0, "Rc": Rc, "A": A}


def random_field(rng: np.random.Generator, grid: RadialGrid, P: NLSParams, family: str):
    """One corpus member; returns ``(field, description)``."""
    r = grid.radii
    if family == "gaussian":
        v, d = _gaussian(rng, r, P)
    elif family == "rings":
        v, d = _rings(rng, r, P, grid.r_max)
    elif family == "power":
        v, d = _power(rng, r, P, grid.r_max)
    elif family == "mixture":
        parts = [random_field(rng, grid, P, str(rng.choice(CORPUS_FAMILIES[:3]))) for _ in range(int(rng.integers(2, 4)))]
        th = rng.uniform(0, 2 * math.pi, len(parts))
        beta = rng.uniform(-0.5, 0.5)
        v = sum(np.exp(1j * t) * f.values for t, (f, _) in zip(th, parts)) * np.exp(1j * beta * r * r)
        v = v * CutoffSpec("chi", grid.r_max / 2.0)(r)
        d = {"parts": [x for _, x in parts], "phases": th.tolist(), "chirp": beta}
    else:
        raise ValueError(f"unknown corpus family {family!r}")
    return RadialField(grid, v, P), {"family": family, **d}


def make_corpus(
    P: NLSParams, n: int, seed: int, grid: RadialGrid | None = None
) -> tuple[list[RadialField], dict]:
    """``n`` fields cycling through the families, from ``default_rng(seed)``."""
    grid = corpus_grid() if grid is None else grid
    rng = np.random.default_rng(seed)
    fields, desc = [], []
    for i in range(n):
        f, d = random_field(rng, grid, P, CORPUS_FAMILIES[i % len(CORPUS_FAMILIES)])
        fields.append(f)
        desc.append(d)
    manifest = {"seed": seed, "n": n, "r_max": grid.r_max, "M": grid.M, "families": list(CORPUS_FAMILIES)}
    return fields, {"manifest": manifest, "members": desc}


def corpus_id(P: NLSParams, seed: int, n: int) -> str:
    return f"N{P.N}-p{P.p:g}-seed{seed}-n{n}"


def calibrate(
    corpus: Sequence[RadialField], etas: Iterable[float] = DEFAULT_ETAS, cid: str = "", manifest: dict | None = None
) -> GNConstants:
    """``C_GN`` and ``C_eta`` as suprema over ``corpus``."""
    P = corpus[0].params
    check_exponent_identities(P)
    C_GN, imax = estimate_cgn(corpus)
    C_eta = {}
    for eta in etas:
        C_eta[float(eta)] = max(c_eta_witness(u, eta) for u in corpus)
    man = dict(manifest or {})
    man["maximizer"] = imax
    return GNConstants(P.N, P.p, C_GN, C_eta, cid, man)


def _to_box(z: np.ndarray, K: int, r_max: float):
    """Unconstrained coordinates to bump parameters inside ``RING_BOUNDS``."""
    sig = 0.5 * (1.0 + np.tanh(z))
    c = r_max * (RING_BOUNDS["c"][0] + sig[:K] * (RING_BOUNDS["c"][1] - RING_BOUNDS["c"][0]))
    w = RING_BOUNDS["w"][0] + sig[K : 2 * K] * (RING_BOUNDS["w"][1] - RING_BOUNDS["w"][0])
    la = np.log(RING_BOUNDS["a"])
    a = np.exp(la[0] + sig[2 * K :] * (la[1] - la[0]))
    return c, w, a


def _from_box(c, w, a, r_max: float) -> np.ndarray:
    def inv(x, lo, hi):
        s = np.clip((np.asarray(x) - lo) / (hi - lo), 1e-6, 1 - 1e-6)
        return np.arctanh(2 * s - 1)

    la = np.log(RING_BOUNDS["a"])
    return np.concatenate([
        inv(np.asarray(c) / r_max, *RING_BOUNDS["c"]),
        inv(w, *RING_BOUNDS["w"]),
        inv(np.log(a), *la),
    ])


def refine_c_eta(
    c: GNConstants, corpus: Sequence[RadialField], members: Sequence[dict], top: int = 3,
    maxiter: int = 150,
) -> GNConstants:
    """Push each ``C_eta`` toward the sup over the ring-bump family.

    Starting from the ``top`` ring-family witnesses, Nelder-Mead maximizes
    :func:`c_eta_witness` over the bump centers, widths and amplitudes,
    kept inside the sampling box of the corpus.
    """
    from scipy.optimize import minimize

    grid, P = corpus[0].grid, corpus[0].params
    r = grid.radii
    idx = [i for i, m in enumerate(members) if m.get("family") == "rings"]
    found = []
    for eta in c.C_eta:
        scores = sorted(idx, key=lambda i: -c_eta_witness(corpus[i], eta))[:top]
        for i in scores:
            m = members[i]
            K = len(m["c"])

            def neg(z):
                cc, ww, aa = _to_box(z, K, grid.r_max)
                return -c_eta_witness(RadialField(grid, ring_bumps(r, cc, ww, aa), P), eta)

            z0 = _from_box(m["c"], m["w"], m["a"], grid.r_max)
            res = minimize(neg, z0, method="Nelder-Mead", options={"maxiter": maxiter, "xatol": 1e-3, "fatol": 1e-9})
            found.append(RadialField(grid, ring_bumps(r, *_to_box(res.x, K, grid.r_max)), P))
    # a witness at eta also bounds every smaller eta, so score all of them
    new = {eta: max(C0, max(c_eta_witness(u, eta) for u in found)) for eta, C0 in c.C_eta.items()}
    man = dict(c.manifest)
    man["refined"] = {"top": top, "maxiter": maxiter}
    return GNConstants(c.N, c.p, c.C_GN, new, c.corpus_id + "+refined", man)


def augment(c: GNConstants, fields: Sequence[RadialField], tag: str = "aug") -> GNConstants:
    """Fold extra fields into the suprema (used after audit failures)."""
    if not fields:
        return c
    C_GN = min(c.C_GN, estimate_cgn(fields)[0])
    C_eta = {k: max(v, max(c_eta_witness(u, k) for u in fields)) for k, v in c.C_eta.items()}
    return GNConstants(c.N, c.p, C_GN, C_eta, f"{c.corpus_id}+{tag}{len(fields)}", dict(c.manifest))


@dataclass
class AuditSummary:
    checks: int = 0
    failures: int = 0
    violations: int = 0
    worst_margin_rel: float = math.inf
    failed_members: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def add(self, lhs, rhs, idx: int, tol_rel: float) -> None:
        lhs = np.atleast_1d(lhs)
        rhs = np.atleast_1d(rhs)
        if lhs.size == 0:
            return
        m = (rhs - lhs) / np.maximum(np.abs(rhs), 1e-300)
        self.checks += m.size
        bad = m < 0
        self.failures += int(bad.sum())
        self.violations += int((m < -tol_rel).sum())
        self.worst_margin_rel = min(self.worst_margin_rel, float(m.min()))
        if bad.any() and idx not in self.failed_members:
            self.failed_members.append(idx)


AUDIT_KINDS = ("energy_gn", "ring", "exterior")


def audit(
    c: GNConstants, corpus: Sequence[RadialField], etas: Iterable[float] | None = None,
    tol_rel: float = TOL_AUDIT,
) -> dict[str, AuditSummary]:
    """Evaluate every check on ``corpus``, summarized per kind.

    ``failures`` counts negative margins; ``violations`` counts margins
    below ``-tol_rel |rhs|``.
    """
    etas = list(c.C_eta) if etas is None else list(etas)
    out = {k: AuditSummary() for k in AUDIT_KINDS}
    for i, u in enumerate(corpus):
        P = u.params
        g = gradient_norm_sq(u)
        lpc = lebesgue_norm(u, P.p_c, warn=False)
        out["energy_gn"].add(0.5 * g * (1.0 - (lpc / c.C_GN) ** (P.p - 1.0)), energy(u), i, tol_rel)
        d = ring_data(u, probe_radii(u.grid))
        B = d.bracket(P)
        ext = 4 * d.D <= u.grid.r_max * (1 + 1e-12)
        for eta in etas:
            C = c.c_eta(eta)
            out["ring"].add(d.ring_pot, eta * d.ring_grad + C * B, i, tol_rel)
            out["exterior"].add(d.ext_pot[ext], eta * d.ext_grad[ext] + C * B[ext], i, tol_rel)
    return out


def default_params() -> NLSParams:
    return derive_params(3, 3.0)
