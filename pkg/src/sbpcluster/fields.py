"""Uniform cubic grid, scalar fields, quadrature and spectral operators.

The box is [-L, L)^3 sampled at n points per axis (n even), with periodic
indexing.  Fields store values[i, j, k] = f(x_i, y_j, z_k); the on-disk dump
format is x-fastest, so dump/load transpose.  All integrals are the periodic
trapezoid h^3 * sum, which is spectrally accurate for smooth decaying
integrands, and all derivatives are spectral.
"""

import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .errors import AliasWarning, GridMismatch, GridTooSmall

DUMP_MAGIC = b"SBPF1"


@dataclass(frozen=True)
class UniformGrid:
    half_width: float
    n: int

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError(f"half_width {self.half_width} must be positive")
        if self.n < 32 or self.n % 2:
            raise ValueError(f"n = {self.n} must be even and >= 32")

    @property
    def spacing(self):
        return 2.0 * self.half_width / self.n

    def axis(self):
        """Sample coordinates along one axis, covering [-L, L)."""
        return (np.arange(self.n) - self.n // 2) * self.spacing

    def mesh(self):
        x = self.axis()
        return np.meshgrid(x, x, x, indexing="ij")

    def radius(self, center=(0.0, 0.0, 0.0)):
        """Distance-to-center field as a plain array."""
        x = self.axis()
        dx = x - center[0]
        dy = x - center[1]
        dz = x - center[2]
        return np.sqrt(dx[:, None, None] ** 2 + dy[None, :, None] ** 2
                       + dz[None, None, :] ** 2)


@lru_cache(maxsize=8)
def _k2_rfft(half_width, n):
    """|k|^2 on the rfftn layout plus the Hermitian double-count weights."""
    k = 2.0 * np.pi * sfft.fftfreq(n, d=2.0 * half_width / n)
    kz = k[: n // 2 + 1]
    k2 = (k[:, None, None] ** 2 + k[None, :, None] ** 2
          + kz[None, None, :] ** 2)
    w = np.full(k2.shape, 2.0)
    w[..., 0] = 1.0
    w[..., -1] = 1.0
    k2.flags.writeable = False
    w.flags.writeable = False
    return k2, w


@lru_cache(maxsize=8)
def _k_axes(half_width, n):
    """Angular wavenumbers along a full axis and along the rfft half-axis."""
    k = 2.0 * np.pi * sfft.fftfreq(n, d=2.0 * half_width / n)
    kz = k[: n // 2 + 1].copy()
    k.flags.writeable = False
    kz.flags.writeable = False
    return k, kz


def axis_gradients(f):
    """Spectral partial derivatives of a field along the three axes."""
    k, kz = _k_axes(f.grid.half_width, f.grid.n)
    fh = sfft.rfftn(f.values)
    gx = sfft.irfftn(1j * k[:, None, None] * fh, s=f.values.shape)
    gy = sfft.irfftn(1j * k[None, :, None] * fh, s=f.values.shape)
    gz = sfft.irfftn(1j * kz[None, None, :] * fh, s=f.values.shape)
    return (ScalarField3D(f.grid, gx), ScalarField3D(f.grid, gy),
            ScalarField3D(f.grid, gz))


@dataclass(frozen=True)
class ScalarField3D:
    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if self.values.shape != (n, n, n):
            raise ValueError(
                f"values shape {self.values.shape} != {(n, n, n)}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    def _match(self, other):
        if isinstance(other, ScalarField3D):
            if other.grid != self.grid:
                raise GridMismatch(
                    f"{self.grid} vs {other.grid}")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField3D(self.grid, self.values + self._match(other))

    def __sub__(self, other):
        return ScalarField3D(self.grid, self.values - self._match(other))

    def __mul__(self, other):
        return ScalarField3D(self.grid, self.values * self._match(other))

    def __rmul__(self, scalar):
        return ScalarField3D(self.grid, scalar * self.values)

    def __neg__(self):
        return ScalarField3D(self.grid, -self.values)


def constant_field(grid, c):
    return ScalarField3D(grid, np.full((grid.n,) * 3, float(c)))


def integrate(f):
    """h^3 * pairwise sum over the box."""
    return float(np.sum(f.values)) * f.grid.spacing ** 3


def require_margin(grid, peak_radius, eta_fit):
    """Box must hold the outermost peak plus a 12-decay-length skirt."""
    needed = peak_radius + 12.0 / eta_fit
    if grid.half_width < needed:
        raise GridTooSmall(
            f"half_width {grid.half_width:.3f} < {needed:.3f} "
            f"(peak radius {peak_radius:.3f} + 12/eta)")


def inner_h1(f, g, mass=1.0):
    """integral(grad f . grad g + mass * f * g).

    The gradient part is evaluated in the transform domain (Parseval), which
    makes the bilinear form exactly symmetric; mass may be a constant or a
    field (the external-potential weight gives the weighted inner product).
    """
    if g.grid != f.grid:
        raise GridMismatch(f"{f.grid} vs {g.grid}")
    n = f.grid.n
    k2, w = _k2_rfft(f.grid.half_width, n)
    fh = sfft.rfftn(f.values)
    gh = sfft.rfftn(g.values)
    grad_part = float(np.sum(w * k2 * (fh.real * gh.real
                                       + fh.imag * gh.imag)))
    grad_part *= f.grid.spacing ** 3 / n ** 3
    if isinstance(mass, ScalarField3D):
        if mass.grid != f.grid:
            raise GridMismatch(f"{f.grid} vs {mass.grid}")
        mv = mass.values
    else:
        mv = mass
    mass_part = float(np.sum(mv * f.values * g.values)) * f.grid.spacing ** 3
    return grad_part + mass_part


def norm_h1(f, mass=1.0):
    return np.sqrt(max(inner_h1(f, f, mass), 0.0))


def spectrum_tail_fraction(fh, grid):
    """Fraction of spectral energy above 0.8x the Nyquist wavenumber."""
    k2, w = _k2_rfft(grid.half_width, grid.n)
    k_ny = np.pi / grid.spacing
    power = w * (fh.real ** 2 + fh.imag ** 2)
    total = float(np.sum(power))
    if total == 0.0:
        return 0.0
    hot = float(np.sum(power[k2 > (0.8 * k_ny) ** 2]))
    return hot / total


def laplacian(f):
    """Spectral Laplacian; warns when the field is not grid-resolved."""
    fh = sfft.rfftn(f.values)
    tail = spectrum_tail_fraction(fh, f.grid)
    if tail > 1e-6:
        warnings.warn(
            f"{tail:.2e} of spectral energy above 0.8x Nyquist",
            AliasWarning)
    k2, _ = _k2_rfft(f.grid.half_width, f.grid.n)
    out = sfft.irfftn(-k2 * fh, s=f.values.shape)
    return ScalarField3D(f.grid, out)


def invert_helmholtz(f):
    """(-Laplacian + 1)^{-1} f, the Riesz map of the plain H1 product."""
    k2, _ = _k2_rfft(f.grid.half_width, f.grid.n)
    out = sfft.irfftn(sfft.rfftn(f.values) / (k2 + 1.0), s=f.values.shape)
    return ScalarField3D(f.grid, out)


def dump_field(f, path):
    """Binary dump: magic, n and L as little-endian 64-bit, then the
    samples as little-endian doubles with x varying fastest."""
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<q", f.grid.n))
        fh.write(struct.pack("<d", f.grid.half_width))
        fh.write(f.values.transpose(2, 1, 0).astype("<f8").tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != DUMP_MAGIC:
            raise ValueError(f"bad magic {magic!r} in {path}")
        n = struct.unpack("<q", fh.read(8))[0]
        half_width = struct.unpack("<d", fh.read(8))[0]
        raw = np.frombuffer(fh.read(8 * n ** 3), dtype="<f8")
    values = raw.reshape(n, n, n).transpose(2, 1, 0).astype(np.float64)
    return ScalarField3D(UniformGrid(half_width, int(n)), values)
