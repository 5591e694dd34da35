import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlsblowup.core import RadialGrid, derive_params, rescale
from nlsblowup.inequalities import (GNConstants, audit, augment, c_eta_witness, calibrate, check_energy_gn,
                                    check_exponent_identities, check_radial_gn_exterior, check_radial_gn_ring,
                                    corpus_grid, corpus_id, estimate_cgn, exponent_identities, gn_ratio,
                                    make_corpus, probe_radii, random_field, rho_bracket)

P33 = derive_params(3, 3.0)
PARAMS = [(3, 3.0), (3, 4.0), (4, 2.5), (5, 2.0)]


@pytest.mark.parametrize("N,p", PARAMS)
def test_exponent_identities(N, p):
    a, b = exponent_identities(derive_params(N, p))
    assert abs(a) < 1e-12 and abs(b) < 1e-12
    check_exponent_identities(derive_params(N, p))


def test_rho_bracket_cubic():
    assert rho_bracket(2.0, 3.0) == pytest.approx(2.0**3 + 2.0**2)
    with pytest.raises(ValueError):
        rho_bracket(1.0, 5.0)


def _member(seed, family):
    rng = np.random.default_rng(seed)
    return random_field(rng, corpus_grid(), P33, family)[0]


@given(st.integers(0, 10**5), st.sampled_from(["gaussian", "rings", "power", "mixture"]))
def test_gn_ratio_scale_invariant(seed, family):
    u = _member(seed, family)
    for lam in (0.5, 2.0):
        assert gn_ratio(rescale(u, lam)) == pytest.approx(gn_ratio(u), rel=1e-10)


@pytest.mark.parametrize("lam", [0.5, 2.0])
@pytest.mark.parametrize("family", ["gaussian", "rings", "mixture"])
def test_radial_gn_scale_covariance(lam, family):
    u = _member(7, family)
    v = rescale(u, lam)
    k = lam ** (2 * (1 - P33.s_c))
    for D in (0.5, 2.0, 6.0):
        a = check_radial_gn_ring(u, D, 0.1, 0.01)
        b = check_radial_gn_ring(v, D / lam, 0.1, 0.01)
        assert b.lhs == pytest.approx(k * a.lhs, rel=1e-3)
        assert b.rhs == pytest.approx(k * a.rhs, rel=1e-3)
        a = check_radial_gn_exterior(u, D, 0.1, 0.01)
        b = check_radial_gn_exterior(v, D / lam, 0.1, 0.01)
        assert b.lhs == pytest.approx(k * a.lhs, rel=1e-3)
        assert b.rhs == pytest.approx(k * a.rhs, rel=1e-3)


@given(st.integers(0, 10**5), st.sampled_from([0.05, 0.5]))
def test_witness_is_tight(seed, eta):
    u = _member(seed, "rings")
    C = c_eta_witness(u, eta)
    D = probe_radii(u.grid)
    worst = min(check_radial_gn_ring(u, x, eta, C, tol_rel=0.0).margin for x in D)
    assert worst >= -1e-9 * max(1.0, C)


def test_calibrated_energy_gn_holds_on_its_corpus():
    fields, desc = make_corpus(P33, 40, 11)
    c = calibrate(fields, cid=corpus_id(P33, 11, 40), manifest=desc["manifest"])
    assert c.C_GN == pytest.approx(estimate_cgn(fields)[0])
    assert all(check_energy_gn(u, c, tol_rel=1e-12).passed for u in fields)
    res = audit(c, fields, tol_rel=1e-9)
    assert all(s.passed for s in res.values())


def test_audit_counts_violations():
    fields, _ = make_corpus(P33, 12, 3)
    c = calibrate(fields)
    weak = GNConstants(3, 3.0, c.C_GN * 2, {k: v / 10 for k, v in c.C_eta.items()}, "weak")
    res = audit(weak, fields)
    assert res["energy_gn"].violations > 0 and not res["energy_gn"].passed
    again = augment(weak, fields)
    assert all(s.passed for s in audit(again, fields, tol_rel=1e-9).values())


def test_corpus_deterministic():
    a, da = make_corpus(P33, 8, 5)
    b, db = make_corpus(P33, 8, 5)
    assert da == db
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_constants_json_roundtrip(tmp_path):
    c = GNConstants(3, 3.0, 3.9, {0.1: 0.02, 0.5: 0.005}, "x", {"seed": 1})
    c.to_json(tmp_path / "c.json")
    d = GNConstants.from_json(tmp_path / "c.json")
    assert d == c and d.c_eta(0.5) == 0.005
    with pytest.raises(KeyError):
        d.c_eta(0.2)


def test_corpus_grid_shape():
    g = corpus_grid()
    assert isinstance(g, RadialGrid) and g.r_max == 32.0
