"""The semiclassical energy functional, its H1 Riesz gradient and Hessian.

I(u) = 1/2 integral(|grad u|^2 + V_eps u^2)
     + (eps^3/4) integral(phi[u^2] u^2)
     - 1/(p+1) integral(|u|^{p+1})

with phi[s] the screened-kernel potential of the source s.  Gradients are
returned as H1 Riesz representatives: g solves (-Lap + 1) g = (first
variation density), so inner_h1(g, w) equals the directional derivative for
every grid field w, an identity of the discrete arithmetic itself.  The
plain (mass 1) H1 product is the single metric used for gradients,
projections and norms throughout.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .ansatz import (chord, potential_field, refined_peak,
                     refined_peak_gradients)
from .bpfield import BPParams, quad_form, solve_potential_spectral
from .errors import GridMismatch
from .fields import (ScalarField3D, UniformGrid, _k2_rfft, constant_field,
                     inner_h1, integrate)
from .groundstate import GroundStateConstants, evaluate


@dataclass(frozen=True)
class EnergyContext:
    params: object
    pot: object
    grid: UniformGrid
    v_eps: ScalarField3D
    profile: object
    bp_enabled: bool = True

    @property
    def bp(self):
        return BPParams(a=self.params.a, eps=self.params.eps)


def make_context(params, pot, grid, profile, bp_enabled=True):
    """Assemble the context; pot = None means the constant potential 1
    (the translation-invariant control problem)."""
    if pot is None:
        v_eps = constant_field(grid, 1.0)
    else:
        v_eps = potential_field(pot, params.eps, grid)
    return EnergyContext(params=params, pot=pot, grid=grid, v_eps=v_eps,
                         profile=profile, bp_enabled=bp_enabled)


def _odd_power(vals, p):
    """u |u|^{p-1}, continuous through 0 for p > 1."""
    return np.sign(vals) * np.abs(vals) ** p


def energy(ctx, u):
    if u.grid != ctx.grid:
        raise GridMismatch(f"{u.grid} vs {ctx.grid}")
    p = ctx.params.p
    val = 0.5 * inner_h1(u, u, mass=ctx.v_eps)
    if ctx.bp_enabled:
        val += ctx.params.eps ** 3 / 4.0 * quad_form(u, u, u, u, ctx.bp)
    val -= integrate(ScalarField3D(ctx.grid, np.abs(u.values)
                                   ** (p + 1.0))) / (p + 1.0)
    return val


def _riesz(grid, u_vals, zero_order_vals):
    """Solve (-Lap + 1) g = -Lap u + zero_order in one spectral pass."""
    k2, _ = _k2_rfft(grid.half_width, grid.n)
    gh = (k2 * sfft.rfftn(u_vals) + sfft.rfftn(zero_order_vals)) / (k2 + 1.0)
    return ScalarField3D(grid, sfft.irfftn(gh, s=u_vals.shape))


def gradient(ctx, u, phi_u2=None):
    """H1 Riesz representative of the first variation at u.

    phi_u2 may be passed in when the potential of u^2 is already known.
    """
    if u.grid != ctx.grid:
        raise GridMismatch(f"{u.grid} vs {ctx.grid}")
    p = ctx.params.p
    zero_order = ctx.v_eps.values * u.values - _odd_power(u.values, p)
    if ctx.bp_enabled:
        if phi_u2 is None:
            phi_u2 = solve_potential_spectral(u * u, ctx.bp)
        zero_order = zero_order + (ctx.params.eps ** 3
                                   * phi_u2.values * u.values)
    return _riesz(ctx.grid, u.values, zero_order)


def hessian_apply(ctx, u, w, phi_u2=None):
    """H1 Riesz representative of the second variation at u applied to w.

    The screened-field coupling contributes phi[u^2] w + 2 phi[u w] u; the
    first potential depends only on u and can be precomputed once when the
    Hessian is applied repeatedly at a fixed base point.
    """
    if u.grid != ctx.grid or w.grid != ctx.grid:
        raise GridMismatch("hessian_apply fields on mismatched grids")
    p = ctx.params.p
    zero_order = (ctx.v_eps.values * w.values
                  - p * np.abs(u.values) ** (p - 1.0) * w.values)
    if ctx.bp_enabled:
        if phi_u2 is None:
            phi_u2 = solve_potential_spectral(u * u, ctx.bp)
        phi_uw = solve_potential_spectral(u * w, ctx.bp)
        zero_order = zero_order + ctx.params.eps ** 3 * (
            phi_u2.values * w.values + 2.0 * phi_uw.values * u.values)
    return _riesz(ctx.grid, w.values, zero_order)


def sampled_peak(profile, grid, center=(0.0, 0.0, 0.0)):
    """The ground-state hump sampled on the grid."""
    vals, _ = evaluate(profile, grid.radius(center))
    return ScalarField3D(grid, vals)


def partial_peak(profile, grid, axis, center=(0.0, 0.0, 0.0)):
    """The translation derivative d_axis U sampled on the grid."""
    rad = grid.radius(center)
    _, du = evaluate(profile, rad)
    x = grid.axis() - center[axis]
    shape = [1, 1, 1]
    shape[axis] = grid.n
    coord = x.reshape(shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(rad > 0.0, du / rad, 0.0) * coord
    return ScalarField3D(grid, vals)


def grid_constants(profile, grid):
    """GroundStateConstants recomputed from the refined grid peak.

    Used when comparing grid-evaluated cluster energies against the
    closed-form expansion: the ansatz is built from the refined peak, so
    the expansion constants must be its grid norms, not radial-quadrature
    values; the offset between the two would otherwise swamp the small
    terms being measured.
    """
    u = refined_peak(profile, grid)
    p = profile.p
    l2 = integrate(u * u)
    h1 = inner_h1(u, u)
    grad = h1 - l2
    lp1 = integrate(ScalarField3D(grid, np.abs(u.values) ** (p + 1.0)))
    rad = grid.radius()
    absmom = integrate(ScalarField3D(grid, rad * u.values ** 2))
    d1 = refined_peak_gradients(profile, grid)[0]
    return GroundStateConstants(
        c0=0.5 * grad - lp1 / (p + 1.0),
        c1=0.5 * l2,
        norm_l2_sq=l2,
        norm_grad_sq=grad,
        norm_lp1=lp1,
        norm_d1U_h1_sq=inner_h1(d1, d1),
        sigma=min(1.0, p - 1.0),
        gamma=chord(2, 2, 1),
        abs_moment=absmom,
    )
