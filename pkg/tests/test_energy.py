"""Energy functional: values, Riesz gradients, Hessian action, grid constants."""

import math

import numpy as np
import pytest

import oracles
from sbpcluster import (UniformGrid, inner_h1, make_params, norm_h1,
                        radial_potential)
from sbpcluster.ansatz import potential_value, refined_peak
from sbpcluster.bpfield import BPParams, quad_form
from sbpcluster.energy import (energy, grid_constants, gradient,
                               hessian_apply, make_context, partial_peak,
                               sampled_peak)
from sbpcluster.errors import GridMismatch
from sbpcluster.fields import ScalarField3D, laplacian


def _bumps(grid, rng, count=3, spread=1.5):
    """Sum of a few random Gaussians, comfortably resolved and decayed."""
    pts = grid.mesh()
    vals = np.zeros((grid.n,) * 3)
    for _ in range(count):
        c = rng.uniform(-spread, spread, size=3)
        w = rng.uniform(0.8, 1.6)
        amp = rng.uniform(0.5, 1.5)
        r2 = sum((pts[i] - c[i]) ** 2 for i in range(3))
        vals += amp * np.exp(-r2 / (2.0 * w * w))
    return ScalarField3D(grid, vals)


@pytest.fixture(scope="module")
def small_ctx(profile3):
    par = make_params(0.1)
    grid = UniformGrid(half_width=6.0, n=32)
    return make_context(par, None, grid, profile3, bp_enabled=True)


def test_grid_constants_converge_to_radial(profile3):
    """Refined-peak grid norms converge to the radial-quadrature constants."""
    frozen = oracles.FROZEN["radial"][3.0]
    errs = {}
    for n in (64, 128):
        gc = grid_constants(profile3, UniformGrid(half_width=9.0, n=n))
        errs[n] = (abs(gc.c0 - frozen["c0"]) / abs(frozen["c0"]),
                   abs(gc.c1 - frozen["c1"]) / abs(frozen["c1"]))
    assert errs[128][0] < errs[64][0] / 100.0
    assert errs[128][1] < errs[64][1] / 100.0
    assert errs[128][0] < 1e-5
    assert errs[128][1] < 1e-5


def test_grid_constants_all_fields(profile3):
    frozen = oracles.FROZEN["radial"][3.0]
    gc = grid_constants(profile3, UniformGrid(half_width=9.0, n=128))
    for attr, key, tol in [("norm_l2_sq", "l2", 1e-5),
                           ("norm_grad_sq", "grad", 1e-5),
                           ("norm_lp1", "lp1", 1e-5),
                           ("norm_d1U_h1_sq", "d1_h1", 1e-5),
                           # |x| weight has a corner at the origin, so the
                           # trapezoidal lattice sum is only first order there
                           ("abs_moment", "absmom", 1e-3)]:
        val = getattr(gc, attr)
        assert abs(val - frozen[key]) / abs(frozen[key]) < tol, attr
    assert gc.sigma == 1.0
    assert gc.gamma == 2.0


def test_peak_energy_identity(profile3):
    """With constant potential and the quartic coupling off, the refined
    peak's energy is c0 + c1 by the very arithmetic that defines them."""
    par = make_params(0.1)
    grid = UniformGrid(half_width=9.0, n=64)
    gc = grid_constants(profile3, grid)
    ctx = make_context(par, None, grid, profile3, bp_enabled=False)
    val = energy(ctx, refined_peak(profile3, grid))
    assert abs(val - (gc.c0 + gc.c1)) / abs(val) < 1e-13


def test_bp_toggle_is_quartic_term(profile3):
    par = make_params(0.1)
    grid = UniformGrid(half_width=6.0, n=32)
    pts = grid.mesh()
    u = ScalarField3D(grid, 1.3 * np.exp(-sum(p ** 2 for p in pts) / 2.2))
    on = make_context(par, None, grid, profile3, bp_enabled=True)
    off = make_context(par, None, grid, profile3, bp_enabled=False)
    diff = energy(on, u) - energy(off, u)
    quart = par.eps ** 3 / 4.0 * quad_form(u, u, u, u,
                                           BPParams(a=par.a, eps=par.eps))
    assert abs(diff - quart) / abs(quart) < 1e-12


def test_gradient_matches_difference_quotient(small_ctx):
    rng = np.random.default_rng(11)
    u = _bumps(small_ctx.grid, rng)
    g = gradient(small_ctx, u)
    for _ in range(5):
        w = _bumps(small_ctx.grid, rng)
        t = 1e-4
        fd = (energy(small_ctx, u + w * t)
              - energy(small_ctx, u + w * (-t))) / (2.0 * t)
        an = inner_h1(g, w)
        assert abs(fd - an) / abs(an) < 1e-6


def test_gradient_is_riesz_representative(small_ctx):
    """inner_h1(gradient, w) equals the integral of the first-variation
    density against w, checked without any finite-difference step."""
    from sbpcluster.bpfield import solve_potential_spectral
    from sbpcluster.fields import integrate
    rng = np.random.default_rng(5)
    u = _bumps(small_ctx.grid, rng)
    p = small_ctx.params.p
    phi = solve_potential_spectral(u * u, small_ctx.bp)
    dens = (laplacian(u) * (-1.0)).values \
        + small_ctx.v_eps.values * u.values \
        + small_ctx.params.eps ** 3 * phi.values * u.values \
        - np.abs(u.values) ** (p - 1.0) * u.values
    dens = ScalarField3D(small_ctx.grid, dens)
    g = gradient(small_ctx, u)
    for _ in range(3):
        w = _bumps(small_ctx.grid, rng)
        lhs = inner_h1(g, w)
        rhs = integrate(dens * w)
        assert abs(lhs - rhs) / abs(rhs) < 1e-10


def test_hessian_matches_difference_quotient(small_ctx):
    rng = np.random.default_rng(17)
    u = _bumps(small_ctx.grid, rng)
    for _ in range(3):
        w = _bumps(small_ctx.grid, rng)
        t = 1e-3
        fd = (gradient(small_ctx, u + w * t)
              - gradient(small_ctx, u + w * (-t))) * (1.0 / (2.0 * t))
        hw = hessian_apply(small_ctx, u, w)
        assert norm_h1(fd - hw) / norm_h1(hw) < 1e-4


def test_hessian_symmetric(small_ctx):
    rng = np.random.default_rng(23)
    u = _bumps(small_ctx.grid, rng)
    ws = [_bumps(small_ctx.grid, rng) for _ in range(3)]
    for i in range(3):
        for j in range(i + 1, 3):
            a = inner_h1(hessian_apply(small_ctx, u, ws[i]), ws[j])
            b = inner_h1(ws[i], hessian_apply(small_ctx, u, ws[j]))
            assert abs(a - b) / abs(a) < 1e-12


def test_sampled_peak_approaches_refined(profile3):
    rels = []
    for n in (64, 96):
        grid = UniformGrid(half_width=9.0, n=n)
        s = sampled_peak(profile3, grid)
        r = refined_peak(profile3, grid)
        rels.append(norm_h1(s - r) / norm_h1(r))
    assert rels[0] < 0.02
    assert rels[1] < 1e-3
    assert rels[1] < rels[0]


def test_partial_peak_is_spatial_derivative(profile3):
    """Moving the center by +d changes the sample by -d times the spatial
    partial derivative, so the center difference quotient is -partial_peak."""
    grid = UniformGrid(half_width=9.0, n=64)
    d = 1e-4
    for center in [(0.0, 0.0, 0.0), (0.3, 0.0, 0.0)]:
        for axis in (0, 2):
            hi = list(center)
            lo = list(center)
            hi[axis] += d
            lo[axis] -= d
            fd = (sampled_peak(profile3, grid, center=tuple(hi))
                  - sampled_peak(profile3, grid, center=tuple(lo))) \
                * (1.0 / (2.0 * d))
            pp = partial_peak(profile3, grid, axis, center=center)
            assert norm_h1(fd + pp) / norm_h1(pp) < 1e-6


def test_context_potential_sampling(profile3):
    par = make_params(0.1)
    pot = radial_potential()
    grid = UniformGrid(half_width=6.0, n=32)
    ctx = make_context(par, pot, grid, profile3)
    ax = grid.axis()
    for idx in [(3, 20, 9), (16, 16, 16), (0, 0, 0)]:
        pt = (par.eps * ax[idx[0]], par.eps * ax[idx[1]],
              par.eps * ax[idx[2]])
        assert ctx.v_eps.values[idx] == pytest.approx(
            potential_value(pot, pt), rel=1e-12)
    flat = make_context(par, None, grid, profile3)
    assert np.all(flat.v_eps.values == 1.0)


def test_grid_mismatch_rejected(profile3, small_ctx):
    other = UniformGrid(half_width=6.0, n=48)
    u = ScalarField3D(other, np.zeros((48,) * 3))
    with pytest.raises(GridMismatch):
        energy(small_ctx, u)
    with pytest.raises(GridMismatch):
        gradient(small_ctx, u)
    with pytest.raises(GridMismatch):
        hessian_apply(small_ctx, u, u)
