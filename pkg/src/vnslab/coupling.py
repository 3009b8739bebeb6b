"""Two-way coupling of the fluid and the particle phase.

One system step is kinetic half step, fluid step driven by the drag
reaction ``F = j - rho u``, kinetic half step.  The same trilinear kernel
is used in both directions so the discrete exchange is adjoint-consistent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import SchemaError, StepRejected
from .fluid import FluidState, NsStepParams, ns_step
from .kinetic import MomentFields, ParticleEnsemble, deposit_moments, push_particles
from .spectral import Grid3

MODES = ("torus", "large-box")
FLUID_MODELS = ("ns", "stokes", "off", "prescribed")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BrinkmanField:
    F: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class PrescribedField:
    """Analytic fluid velocity ``u(t, x)`` used instead of solving the fluid.

    ``velocity(t, pos)`` returns ``(n, 3)``; ``gradient(t, pos)`` returns
    ``(n, 3, 3)`` with entry ``[a, b] = d u_a / d x_b``.
    """

    velocity: Callable[[float, np.ndarray], np.ndarray]
    gradient: Callable[[float, np.ndarray], np.ndarray]

    def on_grid(self, grid: Grid3, t: float) -> np.ndarray:
        X, Y, Z = grid.mesh()
        pos = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        return self.velocity(t, pos).T.reshape((3,) + (grid.N,) * 3)


@dataclass(frozen=True)
class StepOptions:
    dt: float
    fluid: str = "ns"
    kinetic: bool = True
    cfl: float = 0.5
    prescribed: Optional[PrescribedField] = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.fluid not in FLUID_MODELS:
            raise ValueError(f"fluid model must be one of {FLUID_MODELS}")
        if self.fluid == "prescribed" and self.prescribed is None:
            raise ValueError("prescribed fluid model needs a PrescribedField")


@dataclass(frozen=True)
class SystemState:
    fluid: FluidState
    particles: ParticleEnsemble
    moments: MomentFields
    t: float = 0.0
    mode: str = "torus"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.fluid.t != self.t:
            raise ValueError("fluid clock and system clock disagree")

    @property
    def grid(self) -> Grid3:
        return self.fluid.grid


def make_state(grid: Grid3, u_hat: np.ndarray, particles: ParticleEnsemble,
               t: float = 0.0, mode: str = "torus") -> SystemState:
    moments = deposit_moments(particles, grid, (0, 1))
    return SystemState(FluidState(grid, u_hat, t), particles, moments, t, mode)


def assemble_brinkman(moments: MomentFields, u: np.ndarray, t: float = 0.0) -> BrinkmanField:
    if moments.rho.shape != u.shape[1:] or moments.j.shape != u.shape:
        raise ValueError("moments and velocity live on different grids")
    return BrinkmanField(moments.j - moments.rho[None] * u, t)


def _brinkman_force(moments: MomentFields):
    rho, j = moments.rho, moments.j
    return lambda t, u: j - rho[None] * u


def step_system(state: SystemState, opts: StepOptions) -> SystemState:
    """Advance the coupled system by ``opts.dt``.

    With the fluid switched off (``u == 0``) or prescribed, the particles
    take one full push; with the particles switched off the fluid takes one
    unforced step.  Both limits coincide with the single-physics steppers.
    """
    grid = state.grid
    dt = opts.dt
    t = state.t
    try:
        if opts.fluid in ("off", "prescribed"):
            fluid = state.fluid
            ens = state.particles
            if opts.kinetic:
                if opts.fluid == "off":
                    ens = push_particles(ens, None, dt, grid, opts.cfl)
                else:
                    field_mid = opts.prescribed.velocity
                    ens = push_particles(ens, lambda pos: field_mid(t + dt / 2, pos), dt,
                                         grid, opts.cfl)
            if opts.fluid == "prescribed":
                fluid = FluidState(grid, grid.fft(opts.prescribed.on_grid(grid, t + dt)), t + dt)
            else:
                fluid = replace(fluid, t=t + dt)
        else:
            params = NsStepParams(dt, nonlinear=(opts.fluid == "ns"), cfl=opts.cfl)
            if not opts.kinetic:
                fluid = ns_step(state.fluid, None, params)
                ens = state.particles
            else:
                u_old = state.fluid.u_real()
                ens = push_particles(state.particles, u_old, dt / 2, grid, opts.cfl)
                mid = deposit_moments(ens, grid, (0, 1))
                fluid = ns_step(state.fluid, _brinkman_force(mid), params)
                ens = push_particles(ens, fluid.u_real(), dt / 2, grid, opts.cfl)
    except StepRejected as exc:
        raise StepRejected(f"step at t={t:.6g}, dt={dt:.3g}: {exc}") from exc
    moments = deposit_moments(ens, grid, (0, 1)) if opts.kinetic else state.moments
    return SystemState(fluid, ens, moments, t + dt, state.mode)


def total_momentum(state: SystemState) -> np.ndarray:
    """``integral(u) + sum w v``."""
    grid = state.grid
    fluid = np.real(state.fluid.u_hat[:, 0, 0, 0]) * grid.L**1.5
    return fluid + state.particles.w @ state.particles.v


# --- checkpoints --------------------------------------------------------------


def save_checkpoint(path, state: SystemState, extra: Optional[dict] = None,
                    arrays: Optional[dict] = None):
    """Write a bit-exact ``.npz`` snapshot with JSON metadata.

    ``extra`` must be JSON-serializable; ``arrays`` are stored alongside
    under an ``extra_`` prefix.
    """
    g = state.grid
    meta = {
        "version": CHECKPOINT_VERSION,
        "L": g.L,
        "N": g.N,
        "dealias_fraction": g.dealias_fraction,
        "t": state.t,
        "mode": state.mode,
        "extra": extra or {},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    payload = {f"extra_{k}": np.asarray(a) for k, a in (arrays or {}).items()}
    np.savez(tmp, meta=np.array(json.dumps(meta)), u_hat=state.fluid.u_hat,
             x=state.particles.x, v=state.particles.v, w=state.particles.w, **payload)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[SystemState, dict, dict]:
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(str(z["meta"]))
        except (KeyError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{path}: missing or unreadable checkpoint metadata") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise SchemaError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        grid = Grid3(meta["L"], meta["N"], meta["dealias_fraction"])
        ens = ParticleEnsemble(z["x"], z["v"], z["w"])
        state = make_state(grid, z["u_hat"].copy(), ens, meta["t"], meta["mode"])
        arrays = {k[6:]: z[k].copy() for k in z.files if k.startswith("extra_")}
    return state, meta.get("extra", {}), arrays
