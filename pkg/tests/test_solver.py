import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.core import RadialField, RadialGrid, derive_params
from nlsblowup.errors import InsufficientDecade
from nlsblowup.norms import node_weights
from nlsblowup.profile import discrete_ground_state, ground_state
from nlsblowup.solver import (SolverConfig, StopCriteria, fit_blowup, propagator, resume, run, step)
from nlsblowup.trajectory import TrajectoryRecord

P = derive_params(3, 3.0)


def _mass(u):
    return float(node_weights(u.grid, 3) @ np.abs(u.values) ** 2)


def _l2(grid, a, b):
    return float(np.sqrt(node_weights(grid, 3) @ np.abs(a - b) ** 2))


def focusing(grid, amp=3.0, chirp=0.3):
    return RadialField.from_function(grid, P, lambda r: amp * np.exp(-r**2) * np.exp(1j * chirp * r**2))


def short_cfg(**kw):
    stop = StopCriteria(amplification=1e9, t_max=kw.pop("t_max", np.inf), max_steps=kw.pop("max_steps", 40))
    base = dict(dt_init=1e-4, dt_max=1e-4, cfl_like=1e9, r_max=10.0, M=1024, chi_radii=(1.0, 2.0),
                psi_radii=(1.0,), min_focus_nodes=0)
    base.update(kw)
    return SolverConfig(stop=stop, **base)


def test_free_gaussian_matches_complex_width():
    grid = RadialGrid.uniform(24.0, 4096)
    u = RadialField.from_function(grid, P, lambda r: np.exp(-r**2 / 2))
    dt, n = 5e-4, 1000
    for _ in range(n):
        u = step(u, dt, "strang", coupling=0.0)
    w = 1.0 + 2j * (dt * n)
    exact = w**-1.5 * np.exp(-grid.radii**2 / (2 * w))
    assert _l2(grid, u.values, exact) / np.sqrt(_mass(u)) < 1e-5


@pytest.mark.parametrize("scheme", ["strang", "conservative"])
def test_mass_conserved_each_step(scheme):
    u = focusing(RadialGrid.uniform(10.0, 1024))
    m0 = _mass(u)
    for _ in range(20):
        u2 = step(u, 1e-3, scheme)
        assert abs(_mass(u2) - _mass(u)) < 1e-12 * m0
        u = u2


def test_conservative_scheme_holds_energy():
    cfg = short_cfg(max_steps=200)
    rec = run(focusing(cfg.make_grid()), cfg)
    E = rec.column("energy")
    assert np.max(np.abs(E - E[0])) < 1e-9 * rec.column("grad_sq")[0]


def test_stationary_state_splitting_error_is_third_order():
    gs = ground_state(r_max=30.0, M=4097)
    q = discrete_ground_state(gs.field)
    prop = propagator(q.grid, q.params)
    v = np.array(q.values[:-1])
    errs = []
    for dt in (0.02, 0.01, 0.005, 0.0025):
        w = prop.strang(v, dt)
        errs.append(np.sqrt(prop.W @ np.abs(w - np.exp(1j * dt) * v) ** 2))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 6.5) & (ratios < 9.0))
    # the conservative step keeps the stationary phase as well
    w = prop.conservative(v, 0.01)[0]
    assert np.sqrt(prop.W @ np.abs(w - np.exp(0.01j) * v) ** 2) < 1e-3


@pytest.mark.parametrize("scheme", ["strang", "conservative"])
def test_scaling_equivariance(scheme):
    lam = 2.0
    g = RadialGrid.uniform(10.0, 1024)
    gl = RadialGrid.uniform(10.0 * lam, 1024)
    u = focusing(g)
    ul = RadialField(gl, lam ** -P.alpha * u.values, P)
    for _ in range(10):
        u = step(u, 1e-3, scheme)
        ul = step(ul, 1e-3 * lam**2, scheme)
    assert np.max(np.abs(lam ** -P.alpha * u.values - ul.values)) < 1e-11 * np.max(np.abs(ul.values))


@pytest.mark.parametrize("scheme", ["strang", "conservative"])
def test_time_reversal_with_conjugation(scheme):
    u0 = focusing(RadialGrid.uniform(10.0, 1024))
    u = u0
    for _ in range(10):
        u = step(u, 1e-3, scheme)
    u = u.with_values(np.conj(u.values))
    for _ in range(10):
        u = step(u, 1e-3, scheme)
    assert np.max(np.abs(np.conj(u.values) - u0.values)) < 1e-11 * np.max(np.abs(u0.values))


def test_zero_data_stays_zero():
    cfg = short_cfg(max_steps=5, anchor_halfsteps=False)
    u = RadialField(cfg.make_grid(), np.zeros(1024, complex), P)
    rec = run(u, cfg)
    assert rec.meta["stop_reason"] == "max steps"
    assert np.all(rec.final_field.values == 0)


def test_small_data_disperses():
    cfg = short_cfg(r_max=40.0, M=4096, dt_init=1e-2, dt_max=1e-2, max_steps=100, anchor_halfsteps=False)
    cfg.stop.stop_when_unreliable = False
    rec = run(RadialField.from_function(cfg.make_grid(), P, lambda r: 0.1 * np.exp(-r**2)), cfg)
    # the gradient norm is nearly conserved; the amplitude spreads out
    umax, g = rec.column("umax"), rec.column("grad_sq")
    assert umax[-1] < 0.2 * umax[0]
    assert np.all(np.diff(umax) <= 0)
    assert g[-1] == pytest.approx(g[0], rel=1e-2)


def test_checkpoint_resume_is_bit_identical(tmp_path):
    full = run(focusing(short_cfg().make_grid()), short_cfg(max_steps=40))
    first = run(focusing(short_cfg().make_grid()),
                short_cfg(max_steps=20, checkpoint_every=20, checkpoint_dir=str(tmp_path)))
    assert first.meta["steps"] == 20
    rest = resume(tmp_path, short_cfg(max_steps=20))
    assert rest.meta["steps"] == 40
    assert np.array_equal(rest.final_field.values, full.final_field.values)
    assert rest.meta["t_final"] == full.meta["t_final"]


def test_record_round_trip(tmp_path):
    cfg = short_cfg(max_steps=30)
    rec = run(focusing(cfg.make_grid(), amp=6.0), cfg)
    back = TrajectoryRecord.from_dir(rec.to_dir(tmp_path / "rec"))
    assert len(back) == len(rec)
    assert back.horizon == rec.horizon
    for name in ("t", "lam", "grad_sq", "energy"):
        assert np.array_equal(back.column(name), rec.column(name))
    for a, b in zip(back.snapshots, rec.snapshots):
        assert np.array_equal(a["values"], b["values"])


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(dt_init=0.0)
    with pytest.raises(ValueError):
        SolverConfig(stop=StopCriteria(amplification=1.0))


def test_blowup_fit_on_exact_self_similar_scales():
    t = 1.0 - np.geomspace(1.0, 1e-4, 400)
    lam = np.sqrt(2 * 0.5 * (1.0 - t))
    est = fit_blowup(t, lam)
    assert est.T_est == pytest.approx(1.0, abs=1e-10)
    assert est.b == pytest.approx(0.5, abs=1e-10)
    assert est.fit_exponent == pytest.approx(0.5, abs=1e-6)
    assert est.fit_residual < 1e-10
    assert not est.model_mismatch


def test_blowup_fit_flags_other_exponent():
    t = 1.0 - np.geomspace(1.0, 1e-4, 400)
    est = fit_blowup(t, (1.0 - t) ** 0.7)
    assert est.fit_exponent == pytest.approx(0.7, abs=1e-4)
    assert est.model_mismatch


def test_blowup_fit_needs_contraction():
    t = np.linspace(0.0, 0.5, 100)
    with pytest.raises(InsufficientDecade):
        fit_blowup(t, np.sqrt(1.0 - t))


@settings(max_examples=15)
@given(st.floats(0.5, 5.0), st.floats(0.1, 2.0))
def test_blowup_fit_recovers_T_and_b(T, b):
    t = T - np.geomspace(T, T * 1e-4, 200)
    est = fit_blowup(t, np.sqrt(2 * b * (T - t)))
    assert est.T_est == pytest.approx(T, rel=1e-8)
    assert est.b == pytest.approx(b, rel=1e-8)
