"""Incompressible Navier-Stokes with unit viscosity on the periodic box.

The pressure is eliminated by Leray projection.  Time stepping uses an
integrating factor ``exp(-|k|^2 dt)`` for the viscous term and explicit
midpoint (RK2) for the advection and the external force.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .errors import SimulationAborted, StepRejected
from .spectral import Grid3, heat_evolve, leray_project, pointwise_norm

# force(t, u_real) -> real (3, N, N, N) array
ForceLike = Union[None, np.ndarray, Callable[[float, np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class FluidState:
    grid: Grid3
    u_hat: np.ndarray
    t: float = 0.0

    def u_real(self) -> np.ndarray:
        return self.grid.ifft(self.u_hat)

    def divergence_residual(self) -> float:
        """max_k |k.u(k)| / (|k||u(k)| + eps)."""
        kx, ky, kz = self.grid.kdvec
        u = self.u_hat
        kdotu = np.abs(kx * u[0] + ky * u[1] + kz * u[2])
        denom = np.sqrt(self.grid.kd2) * np.sqrt((np.abs(u) ** 2).sum(axis=0))
        return float((kdotu / (denom + np.finfo(float).eps)).max())


@dataclass(frozen=True)
class NsStepParams:
    dt: float
    nonlinear: bool = True
    cfl: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


def nonlinear_term(grid: Grid3, u_hat: np.ndarray) -> np.ndarray:
    """Projected, dealiased spectral form of ``div(u (x) u)``."""
    mask = grid.dealias_mask
    u = grid.ifft(u_hat * mask)
    kd = grid.kdvec
    out = np.zeros_like(u_hat)
    for a in range(3):
        for b in range(a, 3):
            t_hat = grid.fft(u[a] * u[b])
            out[a] += 1j * kd[b] * t_hat
            if b != a:
                out[b] += 1j * kd[a] * t_hat
    return leray_project(grid, out * mask)


def _force_hat(grid: Grid3, force: ForceLike, t: float, u_real: np.ndarray):
    if force is None:
        return None
    f = force(t, u_real) if callable(force) else force
    return leray_project(grid, grid.fft(f))


def check_cfl(grid: Grid3, u_real: np.ndarray, dt: float, cfl: float = 0.5) -> float:
    """Return the CFL number ``dt max|u| / dx``; raise when it exceeds ``cfl``."""
    umax = float(pointwise_norm(u_real, grid).max())
    if not np.isfinite(umax):
        raise SimulationAborted("non-finite fluid velocity")
    c = dt * umax / grid.dx
    if c > cfl:
        raise StepRejected(f"fluid CFL {c:.3g} exceeds {cfl} (dt={dt}, max|u|={umax:.3g})")
    return c


def ns_step(state: FluidState, force: ForceLike, params: NsStepParams) -> FluidState:
    """Advance the fluid by one step of integrating-factor midpoint.

    ``force`` is ``None``, a fixed real field, or a callable ``(t, u_real)``
    evaluated at each stage.  Without force and nonlinearity the step is
    exactly ``heat_evolve``.
    """
    grid = state.grid
    dt = params.dt
    u_hat = state.u_hat
    u_real = grid.ifft(u_hat)
    check_cfl(grid, u_real, dt, params.cfl)

    def rhs(t, uh, ur):
        r = None
        if params.nonlinear:
            r = -nonlinear_term(grid, uh)
        fh = _force_hat(grid, force, t, ur)
        if fh is not None:
            r = fh if r is None else r + fh
        return r

    r0 = rhs(state.t, u_hat, u_real)
    if r0 is None:
        new = heat_evolve(grid, u_hat, dt)
    else:
        half = np.exp(-grid.k2 * (dt / 2))
        mid = half * (u_hat + (dt / 2) * r0)
        mid_real = grid.ifft(mid) if callable(force) else None
        r1 = rhs(state.t + dt / 2, mid, mid_real)
        new = heat_evolve(grid, u_hat, dt) + dt * half * r1
    if not np.all(np.isfinite(new)):
        raise SimulationAborted(f"non-finite fluid state after step at t={state.t}")
    return replace(state, u_hat=new, t=state.t + dt)


def heat_baseline(grid: Grid3, u0_hat: np.ndarray, t: float) -> np.ndarray:
    """Free heat flow from ``u0``; the reference solution of the splitting argument."""
    return heat_evolve(grid, u0_hat, t)
