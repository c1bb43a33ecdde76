"""Radial profile solver: identities, frozen values, cache round trip."""

import numpy as np
import pytest

import oracles
from sbpcluster import (InvalidExponent, constants, evaluate, load_profile,
                        ode_residual, save_profile, solve_ground_state)


def test_independent_shooter_reproduces_frozen_center_value():
    u0 = oracles.shoot_center_value(3.0)
    assert abs(u0 - oracles.FROZEN["u0"][3.0]) < 1e-7


def test_center_value_matches_frozen(profile3):
    assert abs(profile3.u[0] - oracles.FROZEN["u0"][3.0]) < 1e-6


def test_center_value_stable_under_tolerance(profile3, profile3_loose):
    assert abs(profile3.u[0] - profile3_loose.u[0]) < 1e-6


def test_nehari_identity(profile3):
    c = constants(profile3)
    lhs = c.norm_grad_sq + c.norm_l2_sq
    assert abs(lhs - c.norm_lp1) / c.norm_lp1 < 1e-7


def test_pohozaev_identity(profile3):
    c = constants(profile3)
    lhs = 0.5 * c.norm_grad_sq + 1.5 * c.norm_l2_sq
    rhs = 3.0 / (profile3.p + 1.0) * c.norm_lp1
    assert abs(lhs - rhs) / rhs < 1e-7


def test_constants_match_frozen(profile3):
    ref = oracles.FROZEN["radial"][3.0]
    c = constants(profile3)
    pairs = [(c.c0, ref["c0"]), (c.c1, ref["c1"]),
             (c.norm_l2_sq, ref["l2"]), (c.norm_grad_sq, ref["grad"]),
             (c.norm_lp1, ref["lp1"]), (c.abs_moment, ref["absmom"]),
             (c.norm_d1U_h1_sq, ref["d1_h1"])]
    for got, want in pairs:
        assert abs(got - want) / abs(want) < 1e-7


def test_constants_match_independent_quadrature(profile3):
    """Full rederivation by the reference shooter and Simpson quadrature."""
    ref = oracles.radial_constants(3.0)
    c = constants(profile3)
    assert abs(c.norm_l2_sq - ref["l2"]) / ref["l2"] < 1e-7
    assert abs(c.norm_grad_sq - ref["grad"]) / ref["grad"] < 1e-7
    assert abs(c.norm_d1U_h1_sq - ref["d1_h1"]) / ref["d1_h1"] < 1e-7


def test_sigma_and_gamma(profile3):
    c = constants(profile3)
    assert c.sigma == 1.0
    assert c.gamma == pytest.approx(2.0, abs=1e-12)


def test_ode_residual_within_tolerance(profile3, profile3_loose):
    assert ode_residual(profile3) <= 1e-8
    assert ode_residual(profile3_loose) <= 1e-5
    # refining the measurement points must not reveal a hidden defect
    assert ode_residual(profile3, refine=4) <= 10.0 * 1e-8


def test_decay_rate_fit(profile3):
    assert 0.9 < profile3.eta_fit <= 1.01


def test_profile_shape(profile3):
    assert profile3.u[0] > profile3.u[-1] > 0.0
    assert np.all(profile3.u > 0.0)
    assert np.all(np.diff(profile3.u) < 0.0)
    assert profile3.du[0] == 0.0
    assert np.all(profile3.du[1:] < 0.0)


def test_evaluate_at_nodes(profile3):
    idx = [0, 10, 500, len(profile3.nodes) - 1]
    u, du = evaluate(profile3, profile3.nodes[idx])
    assert np.allclose(u, profile3.u[idx], rtol=1e-12, atol=0.0)
    assert np.allclose(du, profile3.du[idx], rtol=1e-12, atol=1e-300)


def test_evaluate_tail_continuation(profile3):
    r = profile3.r_max
    u_in, _ = evaluate(profile3, r - 1e-9)
    u_out, _ = evaluate(profile3, r + 1e-9)
    assert abs(u_in - u_out) / u_in < 1e-6
    # far field follows  B e^{-s} / s  at the exact asymptotic rate
    u1, _ = evaluate(profile3, r + 1.0)
    u2, _ = evaluate(profile3, r + 2.0)
    expected = np.exp(-1.0) * (r + 1.0) / (r + 2.0)
    assert abs(u2 / u1 - expected) / expected < 1e-9


def test_evaluate_scalar_shape(profile3):
    u, du = evaluate(profile3, 1.5)
    assert np.ndim(u) == 0 and np.ndim(du) == 0


def test_invalid_exponent_rejected():
    for bad in (1.0, 5.0, 0.5, 6.0):
        with pytest.raises(InvalidExponent):
            solve_ground_state(bad)


def test_r_max_invariance(profile3_loose):
    other = solve_ground_state(3.0, r_max=30.0, tol=1e-5)
    assert abs(other.u[0] - profile3_loose.u[0]) < 1e-7


def test_save_load_round_trip(tmp_path, profile3_loose):
    path = tmp_path / "profile.txt"
    save_profile(profile3_loose, path)
    back = load_profile(path)
    assert back.p == profile3_loose.p
    assert back.r_max == profile3_loose.r_max
    assert back.eta_fit == profile3_loose.eta_fit
    assert np.array_equal(back.nodes, profile3_loose.nodes)
    assert np.array_equal(back.u, profile3_loose.u)
    assert np.array_equal(back.du, profile3_loose.du)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not a profile\n1 2 3\n")
    with pytest.raises(ValueError):
        load_profile(path)
