"""Periodic cubic grid with Fourier-space differential kernels.

All fields live on a uniform n x n x n mesh over a cube of side
``box_length`` with periodic boundary conditions.  Derivatives, the free
Schroedinger propagator and the Coulomb (Hartree) solve are exact on the
resolved Fourier modes:

    laplacian       multiplier -|k|^2
    gradient        multiplier  i k
    free_propagate  multiplier  exp(-i dt |k|^2 / 2)   (atomic units)
    poisson_hartree multiplier  4 pi / |k|^2, k != 0 gauged to zero

Wavenumbers follow the FFT layout, k_m = 2 pi m / box_length with
m in {0, 1, ..., n/2 - 1, -n/2, ..., -1}; the Nyquist plane keeps its
signed representative.  Everything is float64/complex128.
"""

import numpy as np
import scipy.fft as _fft

__all__ = ["Grid"]


def _check_field(grid, f, name="field"):
    f = np.asarray(f)
    if f.shape[-3:] != grid.shape:
        raise ValueError(
            f"{name} has shape {f.shape}, expected trailing {grid.shape}"
        )
    if not np.isfinite(f).all():
        raise ValueError(f"{name} contains non-finite values")
    return f


class Grid:
    """Geometry and spectral kernels for one periodic cube.

    Parameters
    ----------
    n : int
        Points per axis.  Must be a power of two, at least 8, so that
        split-radix FFTs and dyadic refinement studies stay exact.
    box_length : float
        Edge length of the periodic cube (bohr).

    Attributes
    ----------
    spacing : float
        Mesh spacing ``box_length / n``.
    cell_volume : float
        ``spacing**3``; quadrature weight of one mesh cell.
    axis : ndarray, shape (n,)
        Coordinates 0, h, ..., (n-1) h along one edge.
    k1 : ndarray, shape (n,)
        Wavenumbers along one axis in FFT order.
    k2 : ndarray, shape (n, n, n)
        |k|^2 on the full mesh.
    """

    def __init__(self, n, box_length):
        n = int(n)
        if n < 8 or (n & (n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {n}")
        box_length = float(box_length)
        if not np.isfinite(box_length) or box_length <= 0.0:
            raise ValueError(f"box_length must be positive, got {box_length}")
        self.n = n
        self.box_length = box_length
        self.shape = (n, n, n)
        self.spacing = box_length / n
        self.cell_volume = self.spacing ** 3
        self.volume = box_length ** 3
        self.axis = self.spacing * np.arange(n)
        self.k1 = 2.0 * np.pi * _fft.fftfreq(n, d=self.spacing)
        kx = self.k1[:, None, None]
        ky = self.k1[None, :, None]
        kz = self.k1[None, None, :]
        self.k2 = kx ** 2 + ky ** 2 + kz ** 2
        # rfft layout of k^2 for real-field Poisson solves
        k1r = 2.0 * np.pi * _fft.rfftfreq(n, d=self.spacing)
        self._k2r = kx ** 2 + ky ** 2 + k1r[None, None, :] ** 2
        # 4 pi / k^2 with the k = 0 mode gauged to zero
        with np.errstate(divide="ignore"):
            inv = np.where(self.k2 > 0.0, 4.0 * np.pi / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
            invr = np.where(self._k2r > 0.0, 4.0 * np.pi / np.where(self._k2r > 0, self._k2r, 1.0), 0.0)
        self._coulomb = inv
        self._coulomb_r = invr

    def __repr__(self):
        return f"Grid(n={self.n}, box_length={self.box_length})"

    def __eq__(self, other):
        return (
            isinstance(other, Grid)
            and other.n == self.n
            and other.box_length == self.box_length
        )

    def __hash__(self):
        return hash((self.n, self.box_length))

    # -- integration and interpolation ------------------------------------

    def integrate(self, f):
        """Trapezoid-on-the-torus quadrature: cell_volume times the sum."""
        f = _check_field(self, f)
        return self.cell_volume * f.sum(axis=(-3, -2, -1))

    def interpolate_at(self, f, point):
        """Trilinear interpolation of ``f`` at a 3-vector ``point``.

        The point is wrapped into the periodic box first.  Leading axes of
        ``f`` broadcast, so a (3, n, n, n) force field evaluates to a
        3-vector.  Exact at mesh nodes and for fields linear per axis.
        """
        f = _check_field(self, f)
        p = np.asarray(point, dtype=float)
        if p.shape != (3,) or not np.isfinite(p).all():
            raise ValueError(f"point must be a finite 3-vector, got {point!r}")
        u = np.mod(p, self.box_length) / self.spacing
        i0 = np.floor(u).astype(int) % self.n
        w1 = u - np.floor(u)
        w0 = 1.0 - w1
        i1 = (i0 + 1) % self.n
        out = 0.0
        for ax, wx in ((i0[0], w0[0]), (i1[0], w1[0])):
            for ay, wy in ((i0[1], w0[1]), (i1[1], w1[1])):
                for az, wz in ((i0[2], w0[2]), (i1[2], w1[2])):
                    out = out + (wx * wy * wz) * f[..., ax, ay, az]
        return out

    # -- spectral kernels ---------------------------------------------------

    def laplacian(self, f):
        """Spectral Laplacian, multiplier -|k|^2."""
        f = _check_field(self, f)
        if np.iscomplexobj(f):
            return _fft.ifftn(-self.k2 * _fft.fftn(f, axes=(-3, -2, -1)), axes=(-3, -2, -1))
        out = _fft.irfftn(-self._k2r * _fft.rfftn(f, axes=(-3, -2, -1)), s=self.shape, axes=(-3, -2, -1))
        return out

    def gradient(self, f):
        """Spectral gradient.  Returns an array of shape (3,) + f.shape."""
        f = _check_field(self, f)
        fh = _fft.fftn(f, axes=(-3, -2, -1))
        out = np.empty((3,) + f.shape, dtype=complex)
        kx = self.k1[:, None, None]
        ky = self.k1[None, :, None]
        kz = self.k1[None, None, :]
        out[0] = _fft.ifftn(1j * kx * fh, axes=(-3, -2, -1))
        out[1] = _fft.ifftn(1j * ky * fh, axes=(-3, -2, -1))
        out[2] = _fft.ifftn(1j * kz * fh, axes=(-3, -2, -1))
        if not np.iscomplexobj(f):
            return out.real
        return out

    def free_propagate(self, f, dt):
        """Apply exp(i dt Laplacian / 2), the free propagator, exactly."""
        f = _check_field(self, f)
        dt = float(dt)
        if not np.isfinite(dt):
            raise ValueError("dt must be finite")
        phase = np.exp(-0.5j * dt * self.k2)
        return _fft.ifftn(phase * _fft.fftn(f, axes=(-3, -2, -1)), axes=(-3, -2, -1))

    def poisson_hartree(self, rho):
        """Solve  Delta v = -4 pi rho  with the k = 0 mode of v set to zero.

        Equivalent to convolving the mean-subtracted density with the
        periodic Coulomb kernel; the omitted mean fixes the gauge so the
        result always integrates to zero.  Real densities use the r2c
        transform; complex input (orbital pair products) is accepted and
        solved mode by mode.
        """
        rho = _check_field(self, rho, "rho")
        if np.iscomplexobj(rho):
            return _fft.ifftn(self._coulomb * _fft.fftn(rho, axes=(-3, -2, -1)), axes=(-3, -2, -1))
        return _fft.irfftn(self._coulomb_r * _fft.rfftn(rho, axes=(-3, -2, -1)), s=self.shape, axes=(-3, -2, -1))
