import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chpme.barriers import PowerBarrier, WeightedNorm, existence_time, sub_parameters, super_amplitude
from chpme.comparison import certify_coeff_bound
from chpme.geometry import Euclidean, ExpPower, Hyperbolic, ModelManifold, RadialGrid
from chpme.profile import integrate_profile, rescale_profile
from chpme.solver import (Boundary, NewtonFailure, RadialState, barenblatt, barenblatt_study,
                          blowup_exponent, boundary_flux, comparison_test, existence_window_check,
                          expand_domain, solve, step)

HYP3 = ModelManifold(3, Hyperbolic())
EUC3 = ModelManifold(3, Euclidean())


def log_slope(f, R):
    e = 1e-6 * R
    return (math.log(float(f(R + e))) - math.log(float(f(R - e)))) / (2 * e)


@pytest.fixture(scope="module")
def profile_T1():
    return rescale_profile(integrate_profile(HYP3, 1.0, 2.0, 1000.0), 1.0)


# ---------------------------------------------------------------- single steps

def test_zero_fixed_point():
    g = RadialGrid(HYP3, 10.0, 100)
    new, its = step(RadialState(0.0, np.zeros(100), g), 0.1, 2.0)
    assert its == 0 and np.all(new.u == 0) and new.t == pytest.approx(0.1)


def test_constant_interior_unchanged():
    g = RadialGrid(HYP3, 30.0, 300)
    u = np.full(300, 0.7)
    new, _ = step(RadialState(0.0, u, g), 1e-3, 2.0, Boundary.dirichlet(0.0))
    far = g.centers < 20
    np.testing.assert_allclose(new.u[far], 0.7, atol=1e-12)
    same, _ = step(RadialState(0.0, u, g), 0.5, 3.0, Boundary.dirichlet(0.7))
    np.testing.assert_allclose(same.u, 0.7, atol=1e-12)


def test_step_rejects_bad_dt_and_state():
    g = RadialGrid(EUC3, 1.0, 10)
    with pytest.raises(ValueError):
        step(RadialState(0.0, np.zeros(10), g), 0.0, 2.0)
    with pytest.raises(ValueError):
        RadialState(0.0, np.zeros(9), g)
    with pytest.raises(ValueError):
        RadialState(0.0, np.full(10, np.nan), g)
    with pytest.raises(ValueError):
        Boundary("periodic")


def test_newton_failure_raised():
    g = RadialGrid(EUC3, 5.0, 50)
    u = np.where(g.centers < 1, 50.0, 0.0)
    with pytest.raises(NewtonFailure):
        step(RadialState(0.0, u, g), 10.0, 4.0, max_iter=1)


def test_odd_symmetry():
    g = RadialGrid(HYP3, 8.0, 80)
    u = np.exp(-g.centers**2) * np.cos(g.centers)
    a, _ = step(RadialState(0.0, u, g), 0.05, 3.0)
    b, _ = step(RadialState(0.0, -u, g), 0.05, 3.0)
    np.testing.assert_allclose(a.u, -b.u, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(vals=st.lists(st.floats(0, 5), min_size=40, max_size=40), m=st.floats(1.2, 4), dt=st.floats(1e-3, 1.0))
def test_positivity_preserved(vals, m, dt):
    g = RadialGrid(EUC3, 4.0, 40)
    new, _ = step(RadialState(0.0, np.array(vals), g), dt, m)
    assert np.all(new.u >= -1e-9 * max(1.0, max(vals)))


# ---------------------------------------------------------------- conservation

def test_mass_conserved_compact_support():
    g = RadialGrid(HYP3, 15.0, 300)
    u0 = np.maximum(1 - g.centers**2, 0.0)
    rep = solve(HYP3, g, u0, 2.0, 0.5, fixed_dt=0.01)
    mass = rep.trajectory[:, 3]
    assert np.all(np.abs(mass - mass[0]) <= 1e-8 * mass[0])


@pytest.mark.parametrize("bc", [Boundary.dirichlet(0.0), Boundary.dirichlet(0.3),
                                Boundary.trace(lambda t: 0.2 + t), Boundary.tail_slope(0.5)])
def test_mass_balance_with_boundary_flux(bc):
    g = RadialGrid(EUC3, 4.0, 80)
    state = RadialState(0.0, 0.5 + 0.1 * np.cos(g.centers), g)
    for _ in range(20):
        new, _ = step(state, 0.01, 2.0, bc)
        gain = new.mass - state.mass
        flux = 0.01 * boundary_flux(new, 2.0, bc)
        assert abs(gain - flux) <= 1e-8 * new.mass
        state = new


# ---------------------------------------------------------------- Barenblatt

def test_barenblatt_closed_form_solves_pme():
    # d/dt of the closed form against its Laplacian of u^m inside the support
    rho = np.linspace(0.1, 1.5, 30)
    t, e = 1.5, 1e-5
    ut = (barenblatt(rho, t + e, 3, 2.0) - barenblatt(rho, t - e, 3, 2.0)) / (2 * e)
    d = 1e-4
    um = lambda r: barenblatt(r, t, 3, 2.0) ** 2  # noqa: E731
    lap = (um(rho + d) - 2 * um(rho) + um(rho - d)) / d**2 + 2 / rho * (um(rho + d) - um(rho - d)) / (2 * d)
    np.testing.assert_allclose(ut, lap, rtol=1e-5, atol=1e-7)


def test_barenblatt_refinement():
    errs, contr = barenblatt_study((100, 200, 400))
    assert errs[-1] <= 0.02
    assert min(contr) >= 1.7


# ---------------------------------------------------------------- solve

def test_compact_data_reach_horizon_and_norm_decreases():
    g = RadialGrid(HYP3, 20.0, 200)
    u0 = np.maximum(1 - (g.centers / 2) ** 2, 0.0)
    norm = WeightedNorm(1.0, 1.0, 2.0)
    rep = solve(HYP3, g, u0, 2.0, 1.0, norm)
    assert rep.status == "ReachedHorizon" and rep.t_est is None
    assert np.all(np.diff(rep.trajectory[:, 2]) <= 1e-12)
    assert np.all(np.diff(rep.times) > 0)


def test_report_serialization():
    g = RadialGrid(EUC3, 5.0, 50)
    rep = solve(EUC3, g, np.ones(50), 2.0, 0.1, output_times=[0.05])
    rec = json.loads(rep.to_json())
    assert rec["status"] == "ReachedHorizon" and rec["t_final"] == pytest.approx(0.1)
    lines = rep.trajectory_csv().splitlines()
    assert lines[0] == "t,max_u,weighted_norm,mass" and len(lines) == rep.trajectory.shape[0] + 1
    assert 0.05 in rep.snapshots


def test_stalled_step_reported():
    g = RadialGrid(EUC3, 5.0, 50)
    rep = solve(EUC3, g, np.ones(50), 2.0, 1.0, max_steps=3)
    assert rep.status == "StalledStep" and "reason" in rep.diagnostics


def test_manifold_mismatch():
    with pytest.raises(ValueError):
        solve(EUC3, RadialGrid(HYP3, 5.0, 50), np.ones(50), 2.0, 1.0)


@pytest.fixture(scope="module")
def blowup_run(profile_T1):
    g = RadialGrid(HYP3, 20.0, 400)
    u0 = profile_T1(g.centers)
    bc = Boundary.tail_slope(log_slope(profile_T1, 20.0))
    rep = solve(HYP3, g, u0, 2.0, 2.0, bc=bc, output_times=np.arange(1, 9) / 10)
    return rep, u0


def test_separable_blowup(blowup_run):
    rep, u0 = blowup_run
    assert rep.status == "BlowUp"
    assert 0.8 <= rep.t_est <= 1.2
    for t, snap in rep.snapshots.items():
        q = snap / u0
        assert (q.max() - q.min()) / q.mean() <= 0.02
        # amplitude follows (1 - t/T)^-1 up to the first-order time error
        assert q.mean() == pytest.approx(1 / (1 - t), rel=0.05)


def test_blowup_exponent(blowup_run):
    rep, _ = blowup_run
    q = blowup_exponent(rep, rep.t_est)
    assert abs(q - 1.0) <= 0.15
    with pytest.raises(ValueError):
        blowup_exponent(rep, 100.0, window=(0.99, 0.999))


def test_existence_window_for_profile(profile_T1, blowup_run):
    rep, _ = blowup_run
    rho = profile_T1.rho
    win = existence_window_check(HYP3, rho, profile_T1.W, 2.0, WeightedNorm(1.0, 1.0, 2.0),
                                 cert_rho_max=50.0)
    assert win.consistent and win.T_upper is not None
    assert win.T_lower <= rep.t_est <= win.T_upper


def test_existence_window_super_datum_and_compact():
    rho = np.linspace(0, 200, 4001)
    norm = WeightedNorm(1.0, 1.0, 2.0)
    cp = certify_coeff_bound(HYP3, "upper", 1.0, rho_max=200.0).constant
    a = super_amplitude(cp, 1.0, 2.0)
    b = PowerBarrier(a, 1.0, 1.0, 2.0)
    win = existence_window_check(HYP3, rho, 3 * b(rho), 2.0, norm)
    assert win.T_lower == existence_time(win.norm, super_amplitude(win.c_prime, 1.0, 2.0), 2.0)
    assert win.T_lower == pytest.approx(1 / 3, rel=1e-12)
    compact = existence_window_check(HYP3, rho, np.maximum(1 - rho, 0), 2.0, norm)
    assert compact.T_upper is None and compact.consistent


# ---------------------------------------------------------------- comparison

def test_comparison_identical_data():
    g = RadialGrid(EUC3, 6.0, 120)
    f = lambda r: barenblatt(r, 1.0, 3, 2.0)  # noqa: E731
    ok, viol, _ = comparison_test(EUC3, g, f, f, 2.0, 1.0, dt=0.02)
    assert ok and viol == 0.0


def test_comparison_half_barenblatt():
    g = RadialGrid(EUC3, 6.0, 120)
    f = lambda r: barenblatt(r, 1.0, 3, 2.0)  # noqa: E731
    ok, viol, tol = comparison_test(EUC3, g, lambda r: 0.5 * f(r), f, 2.0, 1.0, dt=0.02)
    assert ok and viol <= 0


def test_comparison_sub_vs_super_gap_grows():
    R = 20.0
    g = RadialGrid(HYP3, R, 400)
    cp = certify_coeff_bound(HYP3, "upper", 1.0, rho_max=R).constant
    cpp = certify_coeff_bound(HYP3, "lower", 1.0, rho_max=R).constant
    r, a = sub_parameters(cpp, 1.0, 3, 2.0)
    sub = PowerBarrier(a, r, 1.0, 2.0, T=1.0, role="sub")
    sup = PowerBarrier(super_amplitude(cp, 1.0, 2.0), 1.0, 1.0, 2.0, T=super_amplitude(cp, 1.0, 2.0) / a * 0.5)
    # scale the super datum above the sub datum everywhere
    k = float(np.max(sub(g.centers) / sup(g.centers))) * 1.01
    hi = lambda x: k * sup(x)  # noqa: E731
    ok, viol, tol = comparison_test(HYP3, g, sub, hi, 2.0, 0.05, dt=1e-3,
                                    bc_low=Boundary.dirichlet(0.0), bc_high=Boundary.dirichlet(float(hi(R))))
    assert ok and viol <= tol


# ---------------------------------------------------------------- domain expansion

def test_expansion_zero_datum():
    rep = expand_domain(HYP3, lambda r: np.zeros_like(r), 2.0, [5.0, 10.0], 0.2, h=0.1, dt=0.02)
    assert rep.monotone and rep.sup_differences == [0.0]


def test_expansion_finite_propagation():
    f = lambda r: np.maximum(1 - r**2, 0.0)  # noqa: E731
    rep = expand_domain(EUC3, f, 2.0, [10.0, 20.0], 0.2, h=0.1, dt=0.01)
    assert rep.monotone and rep.sup_differences[0] <= rep.tolerance * 1e-6


def test_expansion_sub_barrier_monotone():
    cpp = certify_coeff_bound(HYP3, "lower", 1.0, rho_max=80.0).constant
    r, a = sub_parameters(cpp, 1.0, 3, 2.0)
    sub = PowerBarrier(a, r, 1.0, 2.0, role="sub")
    rep = expand_domain(HYP3, sub, 2.0, [20.0, 40.0, 80.0], 0.05, h=0.1, dt=2.5e-3,
                        output_times=[0.01, 0.025, 0.05])
    assert rep.monotone
    assert rep.differences_decrease
    with pytest.raises(ValueError):
        expand_domain(HYP3, sub, 2.0, [40.0, 20.0], 0.05, h=0.1, dt=1e-3)


def test_expansion_rejects_negative_data():
    with pytest.raises(ValueError):
        expand_domain(EUC3, lambda r: r - 1, 2.0, [2.0, 4.0], 0.1, h=0.1, dt=0.01)


def test_exp_power_smoke():
    man = ModelManifold(3, ExpPower(1.0, 0.5))
    g = RadialGrid(man, 10.0, 100)
    rep = solve(man, g, np.exp(-g.centers**2), 2.0, 0.5)
    assert rep.status == "ReachedHorizon" and np.all(rep.final.u >= -1e-12)
