"""Particle representation of the kinetic density and its characteristics.

Each particle carries a fixed weight; the phase-space Jacobian of the
characteristic flow is accounted for implicitly because weights never
change.  Grid-to-particle interpolation and particle-to-grid deposition
share the same trilinear (cloud-in-cell) kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import special
from scipy.stats import norm, qmc

from . import _cic
from .errors import SimulationAborted, StepRejected
from .spectral import Grid3

Sampler = Callable[[np.ndarray], np.ndarray]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleEnsemble:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("x", "v", "w"):
            a = getattr(self, name)
            if not (isinstance(a, np.ndarray) and not a.flags.writeable):
                object.__setattr__(self, name, _frozen(a))
        n = self.w.shape[0]
        if self.x.shape != (n, 3) or self.v.shape != (n, 3):
            raise ValueError("positions and velocities must have shape (n, 3)")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise SimulationAborted("non-finite particle data")
        if np.any(self.w < 0):
            raise ValueError("weights must be nonnegative")
        if n and abs(self.w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to one, got {self.w.sum()!r}")

    @property
    def count(self) -> int:
        return self.w.shape[0]

    def with_phase(self, x, v) -> "ParticleEnsemble":
        # weights are shared, never copied or rewritten
        return ParticleEnsemble(_frozen(x), _frozen(v), self.w)


@dataclass(frozen=True)
class MomentFields:
    """Deposited velocity moments: density, flux and scalar moments ``m_p``."""

    rho: Optional[np.ndarray] = None
    j: Optional[np.ndarray] = None
    m: dict = field(default_factory=dict)


def wrap(grid: Grid3, x: np.ndarray) -> np.ndarray:
    y = np.mod(x, grid.L)
    # np.mod can return L itself for tiny negative inputs
    y[y >= grid.L] = 0.0
    return y


def cic_stencil(grid: Grid3, positions: np.ndarray):
    """Flat node indices ``(8, n)`` and trilinear weights ``(8, n)``."""
    n = grid.N
    s = np.asarray(positions, dtype=float) / grid.dx
    i0 = np.floor(s).astype(np.int64)
    f = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    g = 1.0 - f
    idx = np.empty((8, s.shape[0]), dtype=np.int64)
    wts = np.empty((8, s.shape[0]))
    c = 0
    for ox in (0, 1):
        ix = i1[:, 0] if ox else i0[:, 0]
        wx = f[:, 0] if ox else g[:, 0]
        for oy in (0, 1):
            iy = i1[:, 1] if oy else i0[:, 1]
            wy = f[:, 1] if oy else g[:, 1]
            for oz in (0, 1):
                iz = i1[:, 2] if oz else i0[:, 2]
                wz = f[:, 2] if oz else g[:, 2]
                idx[c] = (ix * n + iy) * n + iz
                wts[c] = wx * wy * wz
                c += 1
    return idx, wts


def interpolate_field(grid: Grid3, u: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of a scalar or vector grid field at positions.

    Returns shape ``(n,)`` for a scalar field and ``(n, c)`` otherwise.
    """
    if not np.all(np.isfinite(u)):
        raise SimulationAborted("non-finite field passed to interpolation")
    n = grid.N
    fields = np.ascontiguousarray(u, dtype=float).reshape((-1, n, n, n))
    pos = np.ascontiguousarray(positions, dtype=float).reshape((-1, 3))
    out = np.empty((pos.shape[0], fields.shape[0]))
    _cic.interpolate(fields, pos, grid.dx, out)
    return out[:, 0] if u.ndim == 3 else out


def grid_sampler(grid: Grid3, u_real: np.ndarray) -> Sampler:
    return lambda pos: interpolate_field(grid, u_real, pos)


def zero_sampler(pos: np.ndarray) -> np.ndarray:
    return np.zeros_like(pos)


def _as_sampler(u, grid: Optional[Grid3]) -> Sampler:
    if u is None:
        return zero_sampler
    if callable(u):
        return u
    if grid is None:
        raise ValueError("a grid is required to interpolate a grid field")
    return grid_sampler(grid, u)


def push_particles(
    ens: ParticleEnsemble,
    u: Union[None, np.ndarray, Sampler],
    dt: float,
    grid: Optional[Grid3] = None,
    cfl: float = 0.5,
) -> ParticleEnsemble:
    """Exponential integrator for ``X' = V, V' = u(X) - V`` over one step.

    The fluid velocity is frozen at ``u* = u(X_mid)`` where ``X_mid`` is a
    half-step predictor; with ``u*`` frozen the drag ODE is integrated
    exactly.  ``u`` may be a grid array (needs ``grid``), a callable on
    positions, or ``None`` for ``u == 0``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if isinstance(u, np.ndarray) and grid is not None:
        return _push_on_grid(ens, u, dt, grid, cfl)
    sample = _as_sampler(u, grid)
    x, v = ens.x, ens.v
    u0 = sample(x)
    x_mid = x + u0 * (dt / 2) - (v - u0) * np.expm1(-dt / 2)
    if grid is not None:
        x_mid = wrap(grid, x_mid)
    us = sample(x_mid)
    rel = v - us
    v_new = us + rel * math.exp(-dt)
    disp = us * dt - rel * math.expm1(-dt)
    if grid is not None:
        dmax = float(np.abs(disp).max()) if disp.size else 0.0
        if dmax > cfl * grid.dx:
            raise StepRejected(f"particle displacement {dmax:.3g} exceeds {cfl} dx")
        x_new = wrap(grid, x + disp)
    else:
        x_new = x + disp
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise SimulationAborted("non-finite particle state")
    return ens.with_phase(x_new, v_new)


def _push_on_grid(ens, u, dt, grid, cfl):
    if not np.all(np.isfinite(u)):
        raise SimulationAborted("non-finite fluid velocity passed to particle push")
    x_new = np.empty_like(ens.x)
    v_new = np.empty_like(ens.v)
    dmax = _cic.push(np.ascontiguousarray(u, dtype=float), np.ascontiguousarray(ens.x),
                     np.ascontiguousarray(ens.v), grid.dx, grid.L, dt, x_new, v_new)
    if dmax > cfl * grid.dx:
        raise StepRejected(f"particle displacement {dmax:.3g} exceeds {cfl} dx")
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise SimulationAborted("non-finite particle state")
    return ens.with_phase(x_new, v_new)


def frozen_step(x, v, ustar, dt):
    """Exact drag flow over ``dt`` with frozen fluid velocity ``ustar``."""
    rel = v - ustar
    return x + ustar * dt - rel * math.expm1(-dt), ustar + rel * math.exp(-dt)


def frozen_step_inverse(x, v, ustar, dt):
    """Inverse of :func:`frozen_step` (backward exact drag flow)."""
    v0 = ustar + (v - ustar) * math.exp(dt)
    return x - ustar * dt + (v0 - ustar) * math.expm1(-dt), v0


def deposit_moments(
    ens: ParticleEnsemble, grid: Grid3, orders: Sequence[float] = (0, 1)
) -> MomentFields:
    """Cloud-in-cell deposition of ``w``, ``w v`` and ``w |v|^p`` per cell volume."""
    for p in orders:
        if not (p == 0 or p == 1 or p >= 2):
            raise ValueError(f"unsupported moment order {p!r}")
    speed2 = (ens.v**2).sum(axis=1)
    cols = []
    for p in orders:
        if p == 0:
            cols.append(ens.w)
        elif p == 1:
            cols.extend(ens.w * ens.v[:, a] for a in range(3))
        else:
            cols.append(ens.w * speed2 ** (p / 2))
    n = grid.N
    out = np.zeros((len(cols), n, n, n))
    if cols:
        _cic.deposit(np.ascontiguousarray(ens.x), np.stack(cols, axis=1), grid.dx, out)
    out /= grid.cell_volume
    rho = j = None
    m = {}
    c = 0
    for p in orders:
        if p == 0:
            rho = out[c]
            c += 1
        elif p == 1:
            j = out[c:c + 3]
            c += 3
        else:
            m[p] = out[c]
            c += 1
    return MomentFields(rho=rho, j=j, m=m)


def moment_sup(moments: MomentFields, p: float) -> float:
    """Grid maximum of the deposited moment ``m_p``."""
    if p == 0:
        return float(moments.rho.max())
    return float(moments.m[p].max())


# --- characteristics and the straightening map --------------------------------


@dataclass
class CharacteristicsFlow:
    """Stored fluid velocity history used to integrate characteristics backward.

    ``fields[i]`` is the real velocity ``(3, N, N, N)`` at ``times[i]``; the
    velocity between snapshots is linearly interpolated in time.  A grid of
    ``None`` with callable fields is also accepted for analytic velocities.
    """

    grid: Optional[Grid3]
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    dt: float = 0.01

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    def record(self, t: float, u_real):
        if self.times and t <= self.times[-1]:
            raise ValueError("snapshot times must increase")
        self.times.append(float(t))
        self.fields.append(u_real)

    def velocity(self, s: float, pos: np.ndarray) -> np.ndarray:
        if not self.fields:
            return np.zeros_like(pos)
        times = self.times
        if s <= times[0] or len(times) == 1:
            return self._eval(0, pos)
        if s >= times[-1]:
            return self._eval(len(times) - 1, pos)
        i = int(np.searchsorted(times, s)) - 1
        th = (s - times[i]) / (times[i + 1] - times[i])
        return (1 - th) * self._eval(i, pos) + th * self._eval(i + 1, pos)

    def _eval(self, i, pos):
        f = self.fields[i]
        if callable(f):
            return f(pos)
        return interpolate_field(self.grid, f, pos)

    def backward(self, t: float, x: np.ndarray, v: np.ndarray):
        """Integrate from ``(t, x, v)`` back to time 0; returns ``(X(0), V(0))``."""
        nsteps = max(1, int(math.ceil(t / self.dt - 1e-12)))
        h = t / nsteps
        x = np.array(x, dtype=float)
        v = np.array(v, dtype=float)
        s = t
        for _ in range(nsteps):
            u0 = self.velocity(s, x)
            xm, _ = frozen_step_inverse(x, v, u0, h / 2)
            us = self.velocity(s - h / 2, xm)
            x, v = frozen_step_inverse(x, v, us, h)
            s -= h
        return x, v


def flow_jacobian(flow: CharacteristicsFlow, t: float, x, v, fd_eps: float = 1e-4) -> np.ndarray:
    """``|det D_v Gamma_{t,x}(v)|`` for ``Gamma_{t,x}: v -> V(0; t, x, v)``.

    Central differences in each velocity direction; ``x`` and ``v`` may be
    single triples or arrays of shape ``(m, 3)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    vscale = max(1.0, float(np.abs(v).max()))
    if not fd_eps > 1e-7 * vscale:
        raise ValueError(f"fd_eps={fd_eps} too small: difference quotient dominated by rounding")
    m = x.shape[0]
    xs, vs = [], []
    for b in range(3):
        for sgn in (1.0, -1.0):
            dv = np.zeros(3)
            dv[b] = sgn * fd_eps
            xs.append(x)
            vs.append(v + dv)
    _, v0 = flow.backward(t, np.concatenate(xs), np.concatenate(vs))
    v0 = v0.reshape(6, m, 3)
    jac = np.empty((m, 3, 3))
    for b in range(3):
        jac[:, :, b] = (v0[2 * b] - v0[2 * b + 1]) / (2 * fd_eps)
    return np.abs(np.linalg.det(jac))


# --- initial kinetic data ------------------------------------------------------


@dataclass(frozen=True)
class BumpMaxwellian:
    """``f0(x, v) = rho0(x) M(v)``: compact polynomial bump times a Gaussian.

    ``rho0(x) ∝ (1 - |x - c|^2 / R^2)^2`` on ``|x - c| < R`` (unit mass) and
    ``M`` is the normalized Gaussian of standard deviation ``sigma_v`` per
    component centred at ``drift``.  ``radius=None`` means uniform density
    on the box.
    """

    radius: Optional[float]
    sigma_v: float
    center: tuple = (0.0, 0.0, 0.0)
    drift: tuple = (0.0, 0.0, 0.0)
    box: float = 2 * np.pi

    def rho0_max(self) -> float:
        if self.radius is None:
            return 1.0 / self.box**3
        return 105.0 / (32.0 * np.pi * self.radius**3)

    def linf_l1(self) -> float:
        """``|| f0 ||_{L^1_v L^inf_x}``; equals ``max rho0`` for a product density."""
        return self.rho0_max()

    def moment(self, alpha: float) -> float:
        """``M_alpha f0 = E|v|^alpha`` (closed form for zero drift)."""
        s = self.sigma_v
        if np.any(np.asarray(self.drift) != 0):
            raise NotImplementedError("closed-form moments need zero drift")
        if s == 0:
            return 0.0 if alpha > 0 else 1.0
        return float(s**alpha * 2 ** (alpha / 2) * special.gamma((3 + alpha) / 2) / special.gamma(1.5))

    def pointwise_decay(self, q: float) -> float:
        """``N_q(f0) = sup (1 + |v|^q) f0``, maximized over the speed on a fine scan."""
        s = self.sigma_v
        if s == 0:
            return float("inf")
        c = self.rho0_max() * (2 * np.pi * s**2) ** -1.5
        shift = float(np.linalg.norm(self.drift))
        # at fixed speed |v| the Gaussian peaks with v parallel to the drift
        r = np.linspace(0.0, shift + 12 * s + 2 * q**0.5 * s, 200001)
        g = (1 + r**q) * np.exp(-((r - shift) ** 2) / (2 * s**2))
        return float(c * g.max())

    def radial_ppf(self, u: np.ndarray) -> np.ndarray:
        r = np.linspace(0.0, 1.0, 4097)
        cdf = 35 * r**3 / 3 - 14 * r**5 + 5 * r**7  # normalized ∫ s^2 (1-s^2)^2
        cdf /= cdf[-1]
        return self.radius * np.interp(u, cdf, r)

    def sample(self, n: int, seed: int = 0, stratified: bool = True,
               zero_momentum: bool = False) -> ParticleEnsemble:
        """Draw ``n`` equal-weight particles.

        Stratified mode uses a Latin hypercube in the six phase-space
        coordinates followed by inverse-CDF transforms.
        """
        if n <= 0:
            raise ValueError("particle count must be positive")
        if stratified:
            u = qmc.LatinHypercube(d=6, seed=np.random.default_rng(seed)).random(n)
        else:
            u = np.random.default_rng(seed).random((n, 6))
        u = np.clip(u, 1e-12, 1 - 1e-12)
        c = np.asarray(self.center, dtype=float)
        if self.radius is None:
            x = u[:, :3] * self.box
        else:
            r = self.radial_ppf(u[:, 0])
            mu = 2 * u[:, 1] - 1
            phi = 2 * np.pi * u[:, 2]
            st = np.sqrt(1 - mu**2)
            x = c + r[:, None] * np.stack([st * np.cos(phi), st * np.sin(phi), mu], axis=1)
        x = np.mod(x, self.box)
        v = np.asarray(self.drift, dtype=float) + self.sigma_v * norm.ppf(u[:, 3:])
        if zero_momentum:
            v = v - v.mean(axis=0) + np.asarray(self.drift, dtype=float)
        w = np.full(n, 1.0 / n)
        return ParticleEnsemble(x, v, w)
