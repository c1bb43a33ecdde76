"""Independent reference values and reference implementations.

Everything the test suite compares against lives here and is computed by
deliberately different methods from the package: a plain fixed-step RK4
shooter for the radial profile, Simpson quadrature with an analytic tail
for the radial norm constants, and a zero-padded FFT convolution against
an explicit 1/r kernel for the unscreened pair energy.  The FROZEN block
was produced by these routines (64 bisection rounds, h = 2e-3) and is
pinned so regressions show up as drift against fixed numbers, not against
a moving oracle.
"""

import numpy as np
import scipy.fft as sfft

# center values u(0) and radial integrals of the decaying node-free
# solution of  -u'' - (2/r) u' + u = u^p.  Integrals are over R^3, so
# each carries the 4 pi r^2 weight; "d1_h1" is the squared H1 norm of a
# first partial derivative of the profile.
FROZEN = {
    "u0": {
        2.0: 4.19168295444,
        2.5: 4.20874570702,
        3.0: 4.33738767998,
        4.0: 5.22387856031,
    },
    "radial": {
        2.0: {"c0": -21.83011836, "c1": 65.49035507, "l2": 130.98071015,
              "grad": 130.98071015, "lp1": 261.96142030,
              "absmom": 182.62855596, "d1_h1": 135.47677952},
        2.5: {"c0": 4.61636513, "c1": 23.08182564, "l2": 46.16365128,
              "grad": 83.09457231, "lp1": 129.25822359},
        3.0: {"c0": 9.44862565, "c1": 9.44862565, "l2": 18.89725130,
              "grad": 56.69175391, "lp1": 75.58900521,
              "absmom": 16.59466367, "d1_h1": 194.75978211},
        4.0: {"c0": 7.98549174, "c1": 1.59709835, "l2": 3.19419671,
              "grad": 28.74777027, "lp1": 31.94196698},
    },
}


def _classify(p, u0, h, r_max):
    """+1 if the shot crosses zero (center value too large), -1 if it
    turns back up while positive (too small), 0 if undecided by r_max."""
    r = h
    u = u0 + (u0 - u0 ** p) * r * r / 6.0
    v = (u0 - u0 ** p) * r / 3.0

    def rhs(r, u, v):
        return v, u - abs(u) ** (p - 1.0) * u - 2.0 * v / r

    while r < r_max:
        k1u, k1v = rhs(r, u, v)
        k2u, k2v = rhs(r + 0.5 * h, u + 0.5 * h * k1u, v + 0.5 * h * k1v)
        k3u, k3v = rhs(r + 0.5 * h, u + 0.5 * h * k2u, v + 0.5 * h * k2v)
        k4u, k4v = rhs(r + h, u + h * k3u, v + h * k3v)
        u += h * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
        v += h * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        r += h
        if u <= 0.0:
            return 1
        if v > 0.0 and u < 1.0:
            return -1
    return 0


def shoot_center_value(p, lo=1.5, hi=20.0, h=2e-3, r_max=14.0, rounds=64):
    """Bisect u(0) between overshoot and undershoot trajectories."""
    assert _classify(p, hi, h, r_max) == 1
    assert _classify(p, lo, h, r_max) == -1
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        side = _classify(p, mid, h, r_max)
        if side == 1:
            hi = mid
        elif side == -1:
            lo = mid
        else:
            # undecided: the shot tracks the decaying solution past r_max,
            # which only happens within rounding of the critical value
            break
        if hi - lo < 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def _trajectory(p, u0, h, r_max):
    """RK4 trajectory (r, u, u') started from the cubic Taylor seed."""
    m = int(round(r_max / h))
    rs = np.arange(m + 1) * h
    us = np.empty(m + 1)
    vs = np.empty(m + 1)
    us[0], vs[0] = u0, 0.0
    r = h
    u = u0 + (u0 - u0 ** p) * r * r / 6.0
    v = (u0 - u0 ** p) * r / 3.0
    us[1], vs[1] = u, v

    def rhs(r, u, v):
        return v, u - abs(u) ** (p - 1.0) * u - 2.0 * v / r

    for i in range(2, m + 1):
        k1u, k1v = rhs(r, u, v)
        k2u, k2v = rhs(r + 0.5 * h, u + 0.5 * h * k1u, v + 0.5 * h * k1v)
        k3u, k3v = rhs(r + 0.5 * h, u + 0.5 * h * k2u, v + 0.5 * h * k2v)
        k4u, k4v = rhs(r + h, u + h * k3u, v + h * k3v)
        u += h * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) / 6.0
        v += h * (k1v + 2.0 * k2v + 2.0 * k3v + k4v) / 6.0
        r += h
        us[i], vs[i] = u, v
    return rs, us, vs


def radial_constants(p, h=2e-3, r_tail=9.0, r_max=14.0):
    """Simpson quadrature of the R^3 norm integrals, tail-corrected.

    Beyond r_tail the profile is replaced by B e^{-r}/r with B fitted at
    r_tail; the only tail integral that matters at the 1e-10 level is the
    quadratic one, added in closed form.
    """
    from scipy.integrate import simpson

    u0 = shoot_center_value(p, h=h, r_max=r_max)
    rs, us, vs = _trajectory(p, u0, h, r_tail)
    w = 4.0 * np.pi * rs * rs
    tail_b = us[-1] * r_tail * np.exp(r_tail)
    tail_q = 4.0 * np.pi * tail_b ** 2 * 0.5 * np.exp(-2.0 * r_tail)

    l2 = simpson(w * us ** 2, x=rs) + tail_q
    grad = simpson(w * vs ** 2, x=rs) + tail_q
    lp1 = simpson(w * np.abs(us) ** (p + 1.0), x=rs)
    absmom = simpson(w * rs * us ** 2, x=rs) \
        + 4.0 * np.pi * tail_b ** 2 * 0.5 * (r_tail + 0.5) \
        * np.exp(-2.0 * r_tail)

    # Hessian column integrand for one partial derivative; u'' through the
    # ODE itself so no differencing error enters
    upp = us - np.abs(us) ** (p - 1.0) * us
    upp[1:] -= 2.0 * vs[1:] / rs[1:]
    dev = upp.copy()
    dev[1:] -= vs[1:] / rs[1:]
    dev[0] = 0.0
    ratio = np.zeros_like(us)
    ratio[1:] = vs[1:] / rs[1:]
    ratio[0] = upp[0]
    col = dev * dev / 3.0 + 2.0 * dev * ratio / 3.0 + ratio * ratio
    d1_grad = simpson(w * col, x=rs) + 2.0 * tail_q / 3.0
    d1_h1 = d1_grad + grad / 3.0

    return {
        "u0": u0,
        "c0": 0.5 * grad - lp1 / (p + 1.0),
        "c1": 0.5 * l2,
        "l2": l2,
        "grad": grad,
        "lp1": lp1,
        "absmom": absmom,
        "d1_h1": d1_h1,
    }


def coulomb_pair_energy(src_vals, other_vals, n, h, eps):
    """(eps^3/2) * integral of phi_src * other for the unscreened field.

    phi_src(x) = (1/eps) * sum_y src(y) h^3 / |x-y|, evaluated by linear
    (zero-padded, non-circular) FFT convolution with the explicit kernel;
    the singular cell is averaged as 1/(h/2).  This is the Coulomb control
    the screened interaction is contrasted with, built without touching
    the package's field solvers.
    """
    big = 2 * n
    idx = np.arange(big)
    coord = ((idx + n) % big - n) * h
    x = coord[:, None, None]
    y = coord[None, :, None]
    z = coord[None, None, :]
    rr = np.sqrt(x * x + y * y + z * z)
    rr[0, 0, 0] = 0.5 * h
    kernel = 1.0 / rr
    pad = np.zeros((big, big, big))
    pad[:n, :n, :n] = src_vals
    conv = sfft.irfftn(sfft.rfftn(pad) * sfft.rfftn(kernel),
                       s=(big, big, big))[:n, :n, :n]
    phi = conv * h ** 3 / eps
    return 0.5 * eps ** 3 * float(np.sum(phi * other_vals)) * h ** 3


def fit_slope(xs, ys):
    """Least-squares exponent of ys ~ xs^slope."""
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)),
                            np.log(np.asarray(ys, dtype=float)), 1)[0])
