"""K-gon geometry, the flat-bottom potential family, the admissible radius
window, the multipeak ansatz W and its tangent-space machinery.

Peaks sit at P(r, theta, phi_j) with phi_j = phi + 2 pi j / K, so the cluster
is a regular K-gon of radius r on a great circle of the sphere.  The ansatz
W is the sum of ground-state copies centered at the peaks; its parameter
derivatives span the tangent space used by the reduction.

Peak centers are snapped to the grid lattice and the copies are built by
rolling a Newton-refined discrete ground state, so translation is exact and
ansatz residuals carry no discretization floor.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import groundstate
from .errors import (AlphaTooSmall, NoConvergence, PeaksUnresolved,
                     SingularGram)
from .fields import (ScalarField3D, axis_gradients, inner_h1,
                     invert_helmholtz, require_margin)

ALPHA_FLOOR = 3.0 + math.sqrt(7.0)


# ---------------------------------------------------------------------------
# geometry

@dataclass(frozen=True)
class PeakConfig:
    r: float
    theta: float
    phi: float
    K: int

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"r = {self.r} must be positive")
        if self.K < 2:
            raise ValueError(f"K = {self.K} must be >= 2")


@dataclass(frozen=True)
class GeneralConfig:
    centers: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 1:
            raise ValueError("centers must be a (K, 3) array")
        object.__setattr__(self, "centers", c)
        k = c.shape[0]
        for i in range(k):
            for j in range(i + 1, k):
                if np.array_equal(c[i], c[j]):
                    raise ValueError(f"centers {i} and {j} coincide")


def sphere_point(theta, phi):
    return np.array([math.cos(theta) * math.sin(phi),
                     math.sin(theta) * math.sin(phi),
                     math.cos(phi)])


def peak_positions(cfg):
    """The K points r * P(1, theta, phi + 2 pi j / K), j = 1..K."""
    out = np.empty((cfg.K, 3))
    for j in range(1, cfg.K + 1):
        phi_j = cfg.phi + 2.0 * math.pi * j / cfg.K
        out[j - 1] = cfg.r * sphere_point(cfg.theta, phi_j)
    return out


def chord(K, j, k):
    """|d_{j,k}| = sqrt(2 - 2 cos(2 pi (j-k)/K)), unit-sphere chord length."""
    return math.sqrt(max(0.0, 2.0 - 2.0 * math.cos(2.0 * math.pi
                                                   * (j - k) / K)))


def chord_vector(K, j, k):
    """d_{j,k} as a vector on the unit sphere (theta = 0 convention)."""
    return (sphere_point(0.0, 2.0 * math.pi * j / K)
            - sphere_point(0.0, 2.0 * math.pi * k / K))


# ---------------------------------------------------------------------------
# potential family

def _bump(u):
    """exp(-1/u) continued by zero; the C-infinity transition ingredient."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smoothstep(t):
    """C-infinity monotone step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    a = _bump(t)
    b = _bump(1.0 - t)
    return a / (a + b)


# cutoff amplitude: the dip of s below 1.  Kept tiny so the third and
# fourth derivatives of the compressed step stay within the unit
# smoothness budget of the inner quadratic (see sampled_c31_norm).
_CUT_DEPTH = 2.0 ** -20
_QUAD_SHAVE = 1.0 - 2.0 ** -10


@dataclass(frozen=True)
class PotentialSpec:
    """V = 1 + g^alpha on the unit ball, blended to the constant 2 outside.

    g(x) = c (x^T A x) s(|x|) with A = hess, s a C-infinity cutoff equal
    to 1 up to |x| = 3/4 and decreasing to the floor 1 - 2^-20 by |x| = 1;
    c = (1 - 2^-10) / (2 lambda_max(A)) keeps the sampled C^{3,1} norm of
    g at or below 1.  Between |x| = 1 and 2 the potential blends smoothly
    into the constant 2.
    """

    alpha: float
    hess: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        if self.alpha <= ALPHA_FLOOR:
            raise AlphaTooSmall(
                f"alpha = {self.alpha} <= 3+sqrt(7) = {ALPHA_FLOOR:.6f}")
        a = np.asarray(self.hess, dtype=float)
        if a.shape != (3, 3) or not np.allclose(a, a.T):
            raise ValueError("hess must be a symmetric 3x3 matrix")
        eig = np.linalg.eigvalsh(a)
        if eig[0] <= 0:
            raise ValueError(f"hess not positive-definite (eigs {eig})")
        object.__setattr__(self, "hess", a)

    @property
    def coeff(self):
        lam_max = float(np.linalg.eigvalsh(self.hess)[-1])
        return _QUAD_SHAVE / (2.0 * lam_max)


def radial_potential(alpha=6.0):
    return PotentialSpec(alpha=alpha)


def anisotropic_potential(alpha=6.0):
    return PotentialSpec(alpha=alpha, hess=np.diag([1.0, 1.5, 2.0]))


def g_value(pot, pts):
    """The flatness-generating function g at points of shape (..., 3)."""
    pts = np.asarray(pts, dtype=float)
    quad = np.einsum("...i,ij,...j->...", pts, pot.hess, pts)
    rad = np.linalg.norm(pts, axis=-1)
    s = 1.0 - _CUT_DEPTH * smoothstep((rad - 0.75) * 4.0)
    return pot.coeff * quad * s


def potential_value(pot, pts):
    """V at arbitrary points; vectorized over the leading axes."""
    pts = np.asarray(pts, dtype=float)
    rad = np.linalg.norm(pts, axis=-1)
    inner = 1.0 + g_value(pot, pts) ** pot.alpha
    w = smoothstep(rad - 1.0)
    return (1.0 - w) * inner + 2.0 * w


def potential_field(pot, eps, grid):
    """V_eps sampled on the grid: V(eps x)."""
    x = grid.axis() * eps
    pts = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1)
    return ScalarField3D(grid, potential_value(pot, pts))


def sampled_c31_norm(pot, n_points=200, seed=20240817, step=4e-3):
    """Sampled C^{3,1} norm of g on the unit ball.

    Directional finite differences up to order three at random interior
    points and directions, plus a difference-quotient estimate of the
    Lipschitz seminorm of the third derivatives.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n_points, 3))
    pts *= (rng.uniform(0.0, 1.0, size=n_points) ** (1.0 / 3.0)
            / np.linalg.norm(pts, axis=1))[:, None]
    pts *= 1.0 - 5.0 * step
    dirs = rng.normal(size=(12, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    dirs = np.vstack([np.eye(3), dirs])

    worst = 0.0
    lip = 0.0
    offsets = np.arange(-3, 4)
    d3_stencil = np.array([-1.0, 8.0, -13.0, 0.0, 13.0, -8.0, 1.0]) / 8.0
    d1_stencil = np.array([0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0]) / 2.0
    d2_stencil = np.array([0.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0])
    for e in dirs:
        line = pts[:, None, :] + step * offsets[None, :, None] * e[None, None]
        vals = g_value(pot, line)
        worst = max(worst, float(np.max(np.abs(vals[:, 3]))))
        for stencil, order in ((d1_stencil, 1), (d2_stencil, 2),
                               (d3_stencil, 3)):
            deriv = vals @ stencil / step ** order
            worst = max(worst, float(np.max(np.abs(deriv))))
            if order == 3:
                shift = g_value(pot, line + 4.0 * step * e)
                deriv_shift = shift @ d3_stencil / step ** 3
                lip = max(lip, float(np.max(np.abs(deriv_shift - deriv)))
                          / (4.0 * step))
    return max(worst, lip)


# ---------------------------------------------------------------------------
# exponents and the admissible window

def choose_exponents(alpha):
    """Midpoint lambda of its window, half-window beta."""
    if alpha <= ALPHA_FLOOR:
        raise AlphaTooSmall(
            f"alpha = {alpha} <= 3+sqrt(7) = {ALPHA_FLOOR:.6f}")
    lam_lo = 2.0 * (alpha + 2.0) / (alpha - 1.0)
    lam_hi = min(2.0 * alpha - 8.0, alpha)
    if lam_hi <= lam_lo:
        raise AlphaTooSmall(f"empty lambda window ({lam_lo}, {lam_hi})")
    lam = 0.5 * (lam_lo + lam_hi)
    beta = 0.5 * (alpha - lam) / (alpha + 1.0)
    return lam, beta


@dataclass(frozen=True)
class ReductionParams:
    eps: float
    a: float
    p: float
    alpha: float
    lam: float
    beta: float
    tol_aux: float = None
    krylov_tol: float = None
    max_outer: int = 40
    max_krylov: int = 200

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps = {self.eps} outside (0, 1)")
        if self.a <= 0:
            raise ValueError(f"a = {self.a} must be positive")
        if not 1.0 < self.p < 5.0:
            raise ValueError(f"p = {self.p} outside (1, 5)")
        lam_lo = 2.0 * (self.alpha + 2.0) / (self.alpha - 1.0)
        lam_hi = min(2.0 * self.alpha - 8.0, self.alpha)
        if lam_hi <= lam_lo:
            raise AlphaTooSmall(f"empty lambda window at alpha={self.alpha}")
        if not lam_lo < self.lam < lam_hi:
            raise ValueError(
                f"lambda = {self.lam} outside ({lam_lo:.4f}, {lam_hi:.4f})")
        beta_hi = (self.alpha - self.lam) / (self.alpha + 1.0)
        if not 0.0 < self.beta < beta_hi:
            raise ValueError(f"beta = {self.beta} outside (0, {beta_hi:.4f})")
        if self.tol_aux is None:
            object.__setattr__(self, "tol_aux", 1e-2 * self.eps ** 2)
        if self.krylov_tol is None:
            object.__setattr__(self, "krylov_tol", 1e-3 * self.eps ** 2)


def make_params(eps, a=1.0, p=3.0, alpha=6.0, lam=None, beta=None, **kw):
    lam_auto, beta_auto = choose_exponents(alpha)
    lam = lam_auto if lam is None else lam
    beta = beta_auto if beta is None else beta
    return ReductionParams(eps=eps, a=a, p=p, alpha=alpha, lam=lam,
                           beta=beta, **kw)


def canonical_radius(params):
    """eps^{-(alpha-lambda)/(alpha+1)}, always inside the admissible window."""
    return params.eps ** (-(params.alpha - params.lam) / (params.alpha + 1.0))


def _directions_26():
    out = []
    for ix in (-1, 0, 1):
        for iy in (-1, 0, 1):
            for iz in (-1, 0, 1):
                if ix == iy == iz == 0:
                    continue
                v = np.array([ix, iy, iz], dtype=float)
                out.append(v / np.linalg.norm(v))
    return np.array(out)


def _max_v_on_sphere(pot, radius):
    """max of V over |x| = radius: coarse 26-direction scan, then a local
    tangent-plane refinement around the best direction."""
    dirs = _directions_26()
    vals = potential_value(pot, radius * dirs)
    best = dirs[int(np.argmax(vals))]
    t1 = np.cross(best, [1.0, 0.0, 0.0])
    if np.linalg.norm(t1) < 1e-8:
        t1 = np.cross(best, [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(best, t1)
    span = np.linspace(-0.5, 0.5, 9)
    cand = (best[None, None] + span[:, None, None] * t1[None, None]
            + span[None, :, None] * t2[None, None]).reshape(-1, 3)
    cand /= np.linalg.norm(cand, axis=1)[:, None]
    return float(np.max(potential_value(pot, radius * cand)))


def admissible_interval(params, pot):
    """The window (r_lo, r_hi) of cluster radii, or None when empty.

    r_lo = eps^{beta - (alpha-lambda)/(alpha+1)} and
    r_hi = eps^{-alpha/(alpha+1)}, additionally capped by the flatness
    constraint max_{|x|=1} V(eps r x) < 1 + eps^{3 alpha/(alpha+1)}.
    """
    eps, alpha, lam, beta = params.eps, params.alpha, params.lam, params.beta
    r_lo = eps ** (beta - (alpha - lam) / (alpha + 1.0))
    r_hi = eps ** (-alpha / (alpha + 1.0))
    cap = 1.0 + eps ** (3.0 * alpha / (alpha + 1.0))

    if _max_v_on_sphere(pot, eps * r_lo) >= cap:
        return None
    if _max_v_on_sphere(pot, eps * r_hi) >= cap:
        # first crossing of the flatness cap, by bisection in r
        lo, hi = r_lo, r_hi
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if _max_v_on_sphere(pot, eps * mid) >= cap:
                hi = mid
            else:
                lo = mid
        r_hi = lo
    if r_hi <= r_lo:
        return None
    return (r_lo, r_hi)


# ---------------------------------------------------------------------------
# the grid-native peak
#
# Sampling the radial profile on the lattice leaves a discretization defect
# in the discrete gradient that is flat in eps and orders of magnitude above
# the overlap/coupling terms the reduction is supposed to resolve.  A few
# Newton steps push the sampled peak onto the exact critical point of the
# discrete limit functional; translating that object by whole lattice shifts
# is then exact, so every ansatz residual is pure physics (overlap, potential
# well, repulsive coupling) down to roundoff.

_PEAK_CACHE = {}
_PEAK_CACHE_CAP = 3


def _peak_key(profile, grid):
    return (round(profile.p, 12), round(profile.r_max, 9),
            round(profile.eta_fit, 9), len(profile.nodes),
            grid.n, round(grid.half_width, 9))


def _limit_newton(u0_vals, p, grid):
    """Newton iteration for (-lap + 1)u = |u|^{p-1}u from a sampled start."""
    f = ScalarField3D(grid, u0_vals.copy())

    def grad_of(u):
        fp = np.abs(u.values) ** (p - 1.0) * u.values
        return u - invert_helmholtz(ScalarField3D(grid, fp))

    for it in range(14):
        g = grad_of(f)
        gn = math.sqrt(inner_h1(g, g))
        if gn < 1e-11:
            return f
        coef = p * np.abs(f.values) ** (p - 1.0)

        def hess(w):
            return w - invert_helmholtz(ScalarField3D(grid, coef * w.values))

        # conjugate residual on the (indefinite, symmetric) Hessian; the
        # Newton step from the sampled profile stays in the right basin
        d = ScalarField3D(grid, np.zeros_like(f.values))
        r = g
        ar = hess(r)
        pdir, apdir = r, ar
        rz = inner_h1(r, ar)
        tol = max(1e-4 * gn, 1e-13)
        for _ in range(80):
            denom = inner_h1(apdir, apdir)
            if denom <= 0.0 or rz == 0.0:
                break
            alpha = rz / denom
            d = d + alpha * pdir
            r = r - alpha * apdir
            if math.sqrt(inner_h1(r, r)) < tol:
                break
            ar = hess(r)
            rz_new = inner_h1(r, ar)
            beta = rz_new / rz
            rz = rz_new
            pdir = r + beta * pdir
            apdir = ar + beta * apdir
        f = f - d
    g = grad_of(f)
    gn = math.sqrt(inner_h1(g, g))
    if gn > 1e-9:
        raise NoConvergence(
            f"peak refinement stalled at |grad| = {gn:.3e}",
            iterations=14, residual=gn)
    return f


def refined_peak(profile, grid):
    """The centered discrete ground state on this grid (cached).

    Starts from the sampled radial profile and Newton-solves the discrete
    limit equation so the field is a critical point to roundoff.  The same
    object serves every eps: the limit equation has no eps in it.
    """
    key = _peak_key(profile, grid)
    hit = _PEAK_CACHE.get(key)
    if hit is not None:
        return hit[0]
    rad = grid.radius((0.0, 0.0, 0.0))
    u0, _ = groundstate.evaluate(profile, rad)
    peak = _limit_newton(u0, profile.p, grid)
    center = float(peak.values[grid.n // 2, grid.n // 2, grid.n // 2])
    if not 0.5 * profile.u[0] < center < 2.0 * profile.u[0]:
        raise NoConvergence(
            f"refined peak center {center:.4f} far from {profile.u[0]:.4f}")
    grads = axis_gradients(peak)
    if len(_PEAK_CACHE) >= _PEAK_CACHE_CAP:
        _PEAK_CACHE.pop(next(iter(_PEAK_CACHE)))
    _PEAK_CACHE[key] = (peak, grads)
    return peak


def refined_peak_gradients(profile, grid):
    """Spectral partials of the refined peak along the axes (cached)."""
    refined_peak(profile, grid)
    return _PEAK_CACHE[_peak_key(profile, grid)][1]


def lattice_shifts(positions, grid):
    """Integer lattice shifts nearest to the requested centers."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return np.rint(positions / grid.spacing).astype(int)


def snap_positions(positions, grid):
    """Centers moved to their nearest lattice points.

    Peak translation is implemented by rolling the refined peak, which is
    exact only for whole lattice shifts, so every consumer of the positions
    (fields, interaction formulas, separation checks) must use the snapped
    values; mixing snapped fields with unsnapped formulas reintroduces an
    O(h) mismatch.
    """
    return lattice_shifts(positions, grid) * grid.spacing


def _rolled(vals, shift):
    return np.roll(vals, tuple(int(s) for s in shift), axis=(0, 1, 2))


# ---------------------------------------------------------------------------
# the multipeak ansatz and its tangent space

def _sorted_positions(positions):
    """Lexicographic order makes peak sums independent of labeling."""
    order = np.lexsort((positions[:, 2], positions[:, 1], positions[:, 0]))
    return positions[order]


def _check_resolved(positions, grid):
    k = positions.shape[0]
    min_d = np.inf
    for i in range(k):
        for j in range(i + 1, k):
            min_d = min(min_d, float(np.linalg.norm(positions[i]
                                                    - positions[j])))
    if min_d < 4.0 * grid.spacing:
        raise PeaksUnresolved(
            f"min peak distance {min_d:.4f} < 4h = {4 * grid.spacing:.4f}")
    return min_d


def sum_of_peaks(positions, profile, grid, check=True):
    """Sum of discrete ground-state copies at the snapped centers."""
    positions = _sorted_positions(np.atleast_2d(
        np.asarray(positions, dtype=float)))
    shifts = lattice_shifts(positions, grid)
    snapped = shifts * grid.spacing
    if check:
        radius = float(np.max(np.linalg.norm(snapped, axis=1)))
        require_margin(grid, radius, profile.eta_fit)
        if snapped.shape[0] > 1:
            _check_resolved(snapped, grid)
    base = refined_peak(profile, grid).values
    total = np.zeros((grid.n,) * 3)
    for shift in shifts:
        total += _rolled(base, shift)
    return ScalarField3D(grid, total)


def build_W(cfg, profile, grid):
    """The K-gon ansatz W(x) = sum_j U(x - P_j), peaks on lattice points."""
    return sum_of_peaks(peak_positions(cfg), profile, grid)


def _peak_gradient_dot(positions, vectors, profile, grid):
    """-sum_j grad U(x - P_j) . v_j for per-peak direction vectors v_j."""
    shifts = lattice_shifts(positions, grid)
    grads = refined_peak_gradients(profile, grid)
    total = np.zeros((grid.n,) * 3)
    for shift, vec in zip(shifts, np.atleast_2d(vectors)):
        for axis in range(3):
            if vec[axis] != 0.0:
                total -= vec[axis] * _rolled(grads[axis].values, shift)
    return ScalarField3D(grid, total)


DIRECTIONS = ("rad", "azi", "pol")


def tangent_basis(cfg, profile, grid):
    """Parameter derivatives of W in the order (rad, azi, pol).

    rad:  d/dr,   unit vectors P(1, theta, phi_j);
    azi:  d/dtheta, vectors r(-sin theta sin phi_j, cos theta sin phi_j, 0);
    pol:  d/dphi, vectors r(cos theta cos phi_j, sin theta cos phi_j,
                            -sin phi_j).
    """
    positions = peak_positions(cfg)
    r, th = cfg.r, cfg.theta
    vec_rad = np.empty((cfg.K, 3))
    vec_azi = np.empty((cfg.K, 3))
    vec_pol = np.empty((cfg.K, 3))
    for j in range(1, cfg.K + 1):
        phi_j = cfg.phi + 2.0 * math.pi * j / cfg.K
        vec_rad[j - 1] = sphere_point(th, phi_j)
        vec_azi[j - 1] = r * np.array([-math.sin(th) * math.sin(phi_j),
                                       math.cos(th) * math.sin(phi_j), 0.0])
        vec_pol[j - 1] = r * np.array([math.cos(th) * math.cos(phi_j),
                                       math.sin(th) * math.cos(phi_j),
                                       -math.sin(phi_j)])
    fields = []
    for vecs in (vec_rad, vec_azi, vec_pol):
        fields.append(_peak_gradient_dot(positions, vecs, profile, grid))
    return tuple(fields)


def translation_basis(gc, profile, grid):
    """All 3K per-peak translation derivatives -d_i U(x - zeta_j)."""
    out = []
    for pos in np.asarray(gc.centers, dtype=float):
        for axis in range(3):
            vec = np.zeros(3)
            vec[axis] = 1.0
            out.append(_peak_gradient_dot(pos[None, :], vec[None, :],
                                          profile, grid))
    return out


def gram_matrix_of(tangents):
    k = len(tangents)
    g = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            g[i, j] = g[j, i] = inner_h1(tangents[i], tangents[j])
    eig = np.linalg.eigvalsh(g)
    if eig[0] < 1e-10 * eig[-1]:
        raise SingularGram(f"Gram eigenvalues {eig}")
    return g


def gram_matrix(cfg, profile, grid):
    """H1 Gram matrix of the three tangent fields."""
    return gram_matrix_of(tangent_basis(cfg, profile, grid))


def overlap(cfg, profile, grid, j, k):
    """H1 inner product of the j-th and k-th peak copies (1-based)."""
    if j == k:
        raise ValueError("overlap needs two distinct peaks")
    shifts = lattice_shifts(peak_positions(cfg), grid)
    base = refined_peak(profile, grid).values
    uj = ScalarField3D(grid, _rolled(base, shifts[j - 1]))
    uk = ScalarField3D(grid, _rolled(base, shifts[k - 1]))
    return inner_h1(uj, uk)
