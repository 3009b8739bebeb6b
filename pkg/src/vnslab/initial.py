"""Initial velocity fields."""
from __future__ import annotations

import numpy as np

from .coupling import PrescribedField
from .spectral import Grid3, leray_project


def random_solenoidal(grid: Grid3, kmax: float, rms: float, seed: int = 0,
                      keep_mean: bool = False) -> np.ndarray:
    """Divergence-free random field with modes ``0 < |k| <= kmax``, scaled to ``rms``.

    ``rms`` is the root-mean-square of the velocity magnitude over the box.
    Returns Fourier coefficients.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((3,) + (grid.N,) * 3)
    u_hat = grid.fft(noise)
    band = (grid.kmag <= kmax) & (grid.kmag > 0 if not keep_mean else True)
    u_hat = leray_project(grid, u_hat * band)
    return _scale_rms(grid, u_hat, rms)


def _scale_rms(grid, u_hat, rms):
    energy = float((np.abs(u_hat) ** 2).sum())
    if energy == 0:
        return u_hat
    return u_hat * (rms * np.sqrt(grid.volume / energy))


def gaussian_bump(grid: Grid3, amplitude: float, width: float,
                  direction=(1.0, 0.0, 0.0), solenoidal: bool = True,
                  center=None) -> np.ndarray:
    """Gaussian velocity bump ``A d exp(-|x-c|^2 / 2 width^2)`` in Fourier space.

    With ``solenoidal`` the field is Leray-projected (its mean is kept).
    """
    c = np.full(3, grid.L / 2) if center is None else np.asarray(center, dtype=float)
    X, Y, Z = grid.mesh()
    r2 = (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2
    prof = amplitude * np.exp(-r2 / (2 * width**2))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    u_hat = grid.fft(d[:, None, None, None] * prof[None])
    return leray_project(grid, u_hat) if solenoidal else u_hat


def constant_field(grid: Grid3, U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    return grid.fft(np.broadcast_to(U[:, None, None, None], (3,) + (grid.N,) * 3).copy())


def manufactured_field(L: float, amplitude: float):
    """Smooth divergence-free periodic flow with a slow time modulation.

    ``u = A (1 + sin(t)/2) (sin(k y), sin(k z), sin(k x))`` with ``k = 2 pi / L``.
    """
    k = 2 * np.pi / L

    def amp(t):
        return amplitude * (1 + 0.5 * np.sin(t))

    def velocity(t, pos):
        s = np.sin(k * pos)
        return amp(t) * np.stack([s[:, 1], s[:, 2], s[:, 0]], axis=1)

    def gradient(t, pos):
        c = k * np.cos(k * pos) * amp(t)
        G = np.zeros((pos.shape[0], 3, 3))
        G[:, 0, 1] = c[:, 1]
        G[:, 1, 2] = c[:, 2]
        G[:, 2, 0] = c[:, 0]
        return G

    return PrescribedField(velocity, gradient)
