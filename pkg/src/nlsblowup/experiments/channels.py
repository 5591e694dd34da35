"""Channels, annuli and the critical-norm certificate at one renormalization anchor."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import NLSParams, RadialField, RadialGrid
from ..errors import InsufficientDepth
from ..norms import Annulus, cumulative_mass, power_integral


@dataclass(frozen=True)
class Channel:
    i: int
    tau: float
    lam_v: float
    F: float


def L_of(M: float, alpha2: float, s_c: float) -> float:
    """``(100 M^alpha2)^(1/(2(1-s_c)))``."""
    return (100.0 * M**alpha2) ** (1.0 / (2.0 * (1.0 - s_c)))


def channel_window(i: int, L: float) -> tuple[float, float]:
    """Admissible ``lam_v`` range ``[e^((i-1)/2)/(10L), 10 e^(i/2)/L]``."""
    return math.exp((i - 1) / 2.0) / (10.0 * L), 10.0 * math.exp(i / 2.0) / L


def channel_ok(c: Channel, L: float) -> bool:
    lo, hi = channel_window(c.i, L)
    return c.tau <= math.exp(c.i) and c.F <= L and lo <= c.lam_v <= hi


def find_channel(tau: np.ndarray, lam_v: np.ndarray, i: int, L: float) -> Channel | None:
    """First recorded ``tau`` in ``[0, e^i]`` meeting both channel conditions."""
    lo, hi = channel_window(i, L)
    F = np.sqrt(tau) / lam_v
    ok = (tau <= math.exp(i)) & (F <= L) & (lam_v >= lo) & (lam_v <= hi)
    hit = np.flatnonzero(ok)
    if not hit.size:
        return None
    j = int(hit[0])
    return Channel(i, float(tau[j]), float(lam_v[j]), float(F[j]))


def find_channel_proof(tau: np.ndarray, lam_v: np.ndarray, i: int, L: float) -> Channel | None:
    """Channel picked as in the existence argument.

    If ``lam_v`` exceeds ``e^((i+1)/2)/L`` somewhere in ``[0, e^i]``, take the
    first such sample (the discrete crossing); otherwise the first
    ``tau`` in ``[e^(i-1), e^i]`` with ``F <= L``. The pick is kept only if
    it meets the channel conditions, which coarse sampling can spoil.
    """
    F = np.sqrt(tau) / lam_v
    inside = tau <= math.exp(i)
    above = np.flatnonzero(inside & (lam_v > math.exp((i + 1) / 2.0) / L))
    if above.size:
        j = int(above[0])
    else:
        late = np.flatnonzero(inside & (tau >= math.exp(i - 1)) & (F <= L))
        if not late.size:
            return None
        j = int(late[0])
    c = Channel(i, float(tau[j]), float(lam_v[j]), float(F[j]))
    return c if channel_ok(c, L) else None


FINDERS = {"first": find_channel, "proof": find_channel_proof}


def channel_indices(N_t: float) -> range:
    """Integers in ``[sqrt(N_t), N_t]``."""
    return range(math.ceil(math.sqrt(N_t)), math.floor(N_t) + 1)


def spacing(M: float, alpha4: float) -> int:
    """Smallest integer ``p > 1`` with ``1000 M^(2 alpha4) <= e^(p/2)``."""
    return max(2, math.ceil(2.0 * math.log(1000.0 * M ** (2.0 * alpha4)) - 1e-12))


@dataclass
class AnnulusMass:
    i: int
    r_in: float  # in v-coordinates
    r_out: float
    mass: float
    clipped: bool

    def annulus(self) -> Annulus:
        return Annulus(self.r_in, self.r_out)


def annuli_masses(u: RadialField, lam_u: float, scales: dict, factor: float) -> list[AnnulusMass]:
    """``int_{C_i} |v(0)|^{p_c}`` for ``C_i = [s/factor, factor s]``.

    The ``p_c`` mass is scale invariant, so it is read off ``u`` itself on
    the annulus multiplied by ``lam_u``. Annuli reaching past the grid are
    clipped at ``r_max`` and flagged.
    """
    r_max = u.grid.r_max / lam_u
    out = []
    for i, s in scales.items():
        lo, hi = s / factor, s * factor
        clipped = hi > r_max
        hi = min(hi, r_max)
        if lo >= hi:
            out.append(AnnulusMass(i, lo, hi, 0.0, True))
            continue
        F = cumulative_mass(u, u.params.p_c, [lam_u * lo, lam_u * hi])
        out.append(AnnulusMass(i, lo, hi, float(max(F[1] - F[0], 0.0)), clipped))
    return out


def greedy_disjoint(items: list[AnnulusMass]) -> list[AnnulusMass]:
    """Largest pairwise-disjoint subfamily (earliest outer radius first)."""
    chosen: list[AnnulusMass] = []
    for a in sorted(items, key=lambda a: (a.r_out, a.i)):
        if not chosen or chosen[-1].r_out <= a.r_in:
            chosen.append(a)
    return sorted(chosen, key=lambda a: a.i)


def stride_family(items: list[AnnulusMass], start: int, p: int) -> list[AnnulusMass]:
    """Annuli with index ``start + k p``."""
    return [a for a in items if a.i >= start and (a.i - start) % p == 0]


def assert_disjoint(items: list[AnnulusMass]) -> None:
    for a, b in zip(items, items[1:]):
        s = sorted([a, b], key=lambda x: x.r_in)
        if not s[0].r_out <= s[1].r_in:
            raise AssertionError(f"annuli {a.i} and {b.i} overlap")
    for j, a in enumerate(items):
        for b in items[j + 1 :]:
            if not a.annulus().disjoint(b.annulus()):
                raise AssertionError(f"annuli {a.i} and {b.i} overlap")


@dataclass
class Certificate:
    branch: str  # "wide spacing" when p(t) >= sqrt(N_t), else "disjoint stride"
    family: list  # indices of the annuli summed
    min_mass: float
    count: int
    bound: float  # count * min_mass
    total: float  # sum of the family masses
    direct: float  # |v(0)|_{L^{p_c}}^{p_c}
    predicted_count: float  # N_t / (10 p(t))

    @property
    def sound(self) -> bool:
        return self.total <= self.direct * (1.0 + 1e-6)


def certificate(
    u: RadialField, lam_u: float, masses: list[AnnulusMass], N_t: float, p_t: int
) -> Certificate:
    """Assemble the lower bound on ``|v(0)|_{L^{p_c}}^{p_c}``.

    When ``p(t) < sqrt(N_t)`` the family is every ``p(t)``-th annulus from
    the first index, as in the disjointness argument; otherwise the spacing
    argument alone settles the bound and the largest disjoint subfamily is
    used instead.
    """
    root = math.sqrt(N_t)
    if p_t < root:
        branch = "disjoint stride"
        fam = stride_family(masses, math.ceil(root), p_t)
    else:
        branch = "wide spacing"
        fam = greedy_disjoint(masses)
    assert_disjoint(fam)
    direct = power_integral(u, u.params.p_c)
    ms = [a.mass for a in fam]
    mn = min(ms) if ms else 0.0
    return Certificate(
        branch=branch,
        family=[a.i for a in fam],
        min_mass=mn,
        count=len(fam),
        bound=len(fam) * mn,
        total=float(sum(ms)),
        direct=direct,
        predicted_count=N_t / (10.0 * p_t),
    )


@dataclass
class ChannelReport:
    t_anchor: float
    N_t: float
    M_t: float
    L_t: float
    alpha2: float
    alpha4: float
    p_t: int
    channels: list
    missing: list  # indices with no channel (findings)
    annuli: list
    lower_bound_cert: dict
    constants_file: str = ""
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def check(self) -> None:
        """Hard structural checks: channel inequalities, disjointness, soundness."""
        for c in self.channels:
            ch = Channel(**c) if isinstance(c, dict) else c
            if not channel_ok(ch, self.L_t):
                raise AssertionError(f"channel {ch.i} violates its window: {ch}")
        fam = set(self.lower_bound_cert["family"])
        chosen = [AnnulusMass(**a) for a in self.annuli if a["i"] in fam]
        assert_disjoint(chosen)
        cert = self.lower_bound_cert
        if cert["total"] > cert["direct"] * (1.0 + 1e-6):
            raise AssertionError("certificate exceeds the direct p_c norm")


def build_report(
    u: RadialField,
    lam_u: float,
    tau: np.ndarray,
    lam_v: np.ndarray,
    C_GN: float,
    alpha2: float,
    alpha4: float,
    t_anchor: float = math.nan,
    constants_file: str = "",
    min_depth: float = 1.0,
    rule: str = "first",
) -> ChannelReport:
    """Channel search, annuli and certificate from ``u(t)`` and its backward scales."""
    P = u.params
    N_t = -math.log(lam_u)
    if N_t < min_depth:
        raise InsufficientDepth(f"N(t) = {N_t:.3g} below {min_depth}")
    lpc = power_integral(u, P.p_c) ** (1.0 / P.p_c)
    M = 4.0 * lpc / C_GN
    L = L_of(M, alpha2, P.s_c)
    finder = FINDERS[rule]
    found, missing = [], []
    for i in channel_indices(N_t):
        c = finder(tau, lam_v, i, L)
        if c is None:
            missing.append(i)
        else:
            found.append(c)
    factor = M**alpha4
    masses = annuli_masses(u, lam_u, {c.i: c.lam_v for c in found}, factor)
    p_t = spacing(M, alpha4)
    cert = certificate(u, lam_u, masses, N_t, p_t)
    rep = ChannelReport(
        t_anchor=t_anchor, N_t=N_t, M_t=M, L_t=L, alpha2=alpha2, alpha4=alpha4, p_t=p_t,
        channels=[asdict(c) for c in found], missing=missing,
        annuli=[asdict(a) for a in masses], lower_bound_cert=asdict(cert) | {"sound": cert.sound},
        constants_file=constants_file,
        notes={"rule": rule, "L_below_exp_half_root_N": L < math.exp(math.sqrt(N_t) / 2.0)},
    )
    rep.check()
    return rep


# ---------------------------------------------------------------- synthetic multi-scale data


def multiscale_field(grid: RadialGrid, P: NLSParams, ks, mass: float = 1.0, width: float = 0.03) -> RadialField:
    """Sum of bumps ``exp(-(log r - k/2)^2 / (2 width^2))``, each scaled to
    ``p_c`` mass ``mass`` on ``grid``."""
    r = grid.radii
    lr = np.log(np.maximum(r, 1e-300))
    total = np.zeros(r.size)
    for k in ks:
        b = np.where(r > 0, np.exp(-((lr - k / 2.0) ** 2) / (2.0 * width**2)), 0.0)
        m = power_integral(RadialField(grid, b.astype(complex), P), P.p_c)
        total += b * (mass / m) ** (1.0 / P.p_c)
    return RadialField(grid, total.astype(complex), P)
