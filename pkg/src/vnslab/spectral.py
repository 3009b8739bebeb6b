"""Periodic Fourier substrate for the fluid side.

Fields are plain numpy arrays. A real field on the grid has shape
``(N, N, N)`` (scalar) or ``(3, N, N, N)`` (vector); its Fourier
coefficients have the same shape and complex dtype.  The transform is
normalized so that the discrete Plancherel identity

    sum |u|^2 * (L/N)^3 == sum |u_hat|^2

holds, i.e. ``u_hat[k] = L**-1.5 * integral(u * exp(-i k.x))``.  With this
convention ``integral(u) = L**1.5 * u_hat[0]``.

Odd-order derivatives (gradient, divergence, Leray projection) use the
wavenumbers with the Nyquist component zeroed so that real fields stay
real; the heat operator uses the full ``|k|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

_AXES = (-3, -2, -1)


@dataclass(frozen=True)
class Grid3:
    """Cubic periodic box ``[0, L)^3`` sampled on ``N^3`` nodes."""

    L: float
    N: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")
        if self.N < 8 or self.N & (self.N - 1):
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx**3

    @property
    def volume(self) -> float:
        return self.L**3

    @cached_property
    def _norm(self) -> float:
        return self.L**1.5 / self.N**3

    @cached_property
    def mode_index(self) -> np.ndarray:
        """Integer wavenumbers along one axis, FFT ordering."""
        return np.fft.fftfreq(self.N, 1.0 / self.N).astype(np.int64)

    @cached_property
    def k1d(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.mode_index

    @cached_property
    def kd1d(self) -> np.ndarray:
        # derivative wavenumbers; the Nyquist entry has no real counterpart
        kd = self.k1d.copy()
        kd[self.N // 2] = 0.0
        return kd

    @cached_property
    def kvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.k1d
        return k[:, None, None], k[None, :, None], k[None, None, :]

    @cached_property
    def kdvec(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.kd1d
        return k[:, None, None], k[None, :, None], k[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky, kz = self.kvec
        return kx**2 + ky**2 + kz**2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def kd2(self) -> np.ndarray:
        kx, ky, kz = self.kdvec
        return kx**2 + ky**2 + kz**2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        n = np.abs(self.mode_index)
        keep = n < self.dealias_fraction * self.N / 2
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates along one axis."""
        return np.arange(self.N) * self.dx

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self.nodes
        return np.meshgrid(x, x, x, indexing="ij")

    def fft(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._check(u)
        return sfft.fftn(u, axes=_AXES) * self._norm

    def ifft(self, u_hat: np.ndarray) -> np.ndarray:
        self._check(u_hat)
        # spectra of real fields are Hermitian, so the half spectrum suffices
        half = u_hat[..., : self.N // 2 + 1]
        return sfft.irfftn(half, s=(self.N,) * 3, axes=_AXES) / self._norm

    def _check(self, a: np.ndarray):
        if a.shape[-3:] != (self.N,) * 3:
            raise ValueError(f"array shape {a.shape} does not match grid N={self.N}")


def fft_roundtrip(grid: Grid3, u: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(u)):
        raise ValueError("field contains non-finite samples")
    return grid.ifft(grid.fft(u))


def is_hermitian(grid: Grid3, u_hat: np.ndarray, tol: float = 1e-12) -> bool:
    """True when ``u_hat(-k) == conj(u_hat(k))`` (coefficients of a real field)."""
    flipped = np.roll(np.flip(u_hat, axis=_AXES), 1, axis=_AXES)
    scale = max(np.abs(u_hat).max(), 1e-300)
    return bool(np.abs(flipped - np.conj(u_hat)).max() <= tol * scale)


def _require_vector(grid: Grid3, f_hat: np.ndarray):
    if f_hat.shape != (3,) + (grid.N,) * 3:
        raise ValueError(f"expected a 3-component field, got shape {f_hat.shape}")


def divergence_hat(grid: Grid3, f_hat: np.ndarray) -> np.ndarray:
    _require_vector(grid, f_hat)
    kx, ky, kz = grid.kdvec
    return 1j * (kx * f_hat[0] + ky * f_hat[1] + kz * f_hat[2])


def leray_project(grid: Grid3, f_hat: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto divergence-free fields, mode by mode."""
    _require_vector(grid, f_hat)
    kx, ky, kz = grid.kdvec
    kd2 = grid.kd2
    kdotf = kx * f_hat[0] + ky * f_hat[1] + kz * f_hat[2]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(kd2 > 0, kdotf / np.where(kd2 > 0, kd2, 1.0), 0.0)
    return np.stack([f_hat[0] - kx * c, f_hat[1] - ky * c, f_hat[2] - kz * c])


def heat_evolve(grid: Grid3, u_hat: np.ndarray, dt: float) -> np.ndarray:
    if dt < 0:
        raise ValueError(f"dt must be nonnegative, got {dt}")
    return u_hat * np.exp(-grid.k2 * dt)


def sobolev_norm(grid: Grid3, u_hat: np.ndarray, s: float) -> float:
    """Homogeneous ``H^s`` norm; ``s == 0`` gives the full L2 norm."""
    p = np.abs(u_hat) ** 2
    if p.ndim == 4:
        p = p.sum(axis=0)
    if s == 0:
        return float(np.sqrt(p.sum()))
    k2 = grid.k2
    nz = k2 > 0
    return float(np.sqrt((k2[nz] ** s * p[nz]).sum()))


def low_mode_energy(grid: Grid3, u_hat: np.ndarray, g: float) -> float:
    """Energy carried by the modes inside the ball ``|k| <= g``."""
    if g < 0:
        raise ValueError("cutoff radius must be nonnegative")
    p = np.abs(u_hat) ** 2
    if p.ndim == 4:
        p = p.sum(axis=0)
    return float(p[grid.kmag <= g].sum())


def gradient_tensor(grid: Grid3, u_hat: np.ndarray) -> np.ndarray:
    """Real ``G[a, b] = d u_a / d x_b`` with shape ``(3, 3, N, N, N)``."""
    _require_vector(grid, u_hat)
    kd = grid.kdvec
    g_hat = np.stack([np.stack([1j * kd[b] * u_hat[a] for b in range(3)]) for a in range(3)])
    return grid.ifft(g_hat)


def laplacian_hat(grid: Grid3, u_hat: np.ndarray) -> np.ndarray:
    return -grid.k2 * u_hat


def grad_sup_norm(grid: Grid3, u_hat: np.ndarray) -> float:
    """Grid maximum of the Frobenius norm of the velocity gradient."""
    g = gradient_tensor(grid, u_hat)
    return float(np.sqrt((g**2).sum(axis=(0, 1))).max())


def pointwise_norm(f: np.ndarray, grid: Grid3) -> np.ndarray:
    """Euclidean norm over the leading component axes of a grid field."""
    n = grid.N
    if f.shape == (n, n, n):
        return np.abs(f)
    return np.sqrt((f.reshape((-1, n, n, n)) ** 2).sum(axis=0))


def lp_norm(grid: Grid3, f: np.ndarray, p: float) -> float:
    """``L^p`` norm of a real grid field (box quadrature, pointwise Euclidean)."""
    a = pointwise_norm(f, grid)
    if np.isinf(p):
        return float(a.max())
    return float(((a**p).sum() * grid.cell_volume) ** (1.0 / p))
