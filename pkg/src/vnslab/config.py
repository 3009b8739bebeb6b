"""Run configuration: nested dataclasses, validation, YAML round-trip, presets."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

import yaml

from .errors import ConfigError

CONFIG_SCHEMA_VERSION = 1


@dataclass
class GridConfig:
    L: float = 2 * math.pi
    N: int = 32
    dealias: float = 2.0 / 3.0


@dataclass
class ParticleConfig:
    count: int = 10000
    sigma_v: float = 0.05
    radius: Optional[float] = None  # None: uniform density on the box
    center: Optional[list] = None  # None: box centre
    drift: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    seed: int = 0
    stratified: bool = True
    zero_momentum: bool = False


@dataclass
class FluidConfig:
    model: str = "ns"  # ns | stokes | off | prescribed
    init: str = "modes"  # modes | gaussian | gaussian-plain | constant | zero
    amplitude: float = 0.01
    kmax: float = 2.0
    width: float = 1.0
    direction: list = field(default_factory=lambda: [1.0, 0.0, 0.0])
    constant: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    zero_mean: bool = False
    seed: int = 1
    prescribed: str = "none"  # none | manufactured


@dataclass
class TimeConfig:
    dt: float = 5e-3
    T_end: float = 1.0
    sample_every: int = 1
    cfl: float = 0.5
    # sample every step while t < dense_until (resolves fast initial transients)
    dense_until: float = 0.0

    def is_sample(self, step: int, n_steps: int) -> bool:
        return step % self.sample_every == 0 or step == n_steps or step * self.dt < self.dense_until + 1e-12


@dataclass
class ScheduleConfig:
    alpha: float = 1.0
    C0: float = 0.0


@dataclass
class MonitorConfig:
    delta0: float = 0.5
    C_star: float = 1.0
    gamma_list: list = field(default_factory=lambda: [0.25])
    p_list: list = field(default_factory=lambda: [2, 3, 4])
    gn_p: float = 4.0
    brinkman_tol: float = 0.05
    jacobian_times: list = field(default_factory=list)
    jacobian_probes: int = 100
    jacobian_record_every: int = 2
    jacobian_fd_eps: float = 1e-4
    fit_window: Optional[list] = None  # [t_min, t_max]; None: last 90% of the run


@dataclass
class OutputConfig:
    directory: str = "runs"
    checkpoint_every: int = 0  # steps; 0 disables


@dataclass
class RunConfig:
    name: str = "custom"
    mode: str = "torus"  # torus | large-box
    kinetic: bool = True
    grid: GridConfig = field(default_factory=GridConfig)
    particles: ParticleConfig = field(default_factory=ParticleConfig)
    fluid: FluidConfig = field(default_factory=FluidConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def n_steps(self) -> int:
        return int(round(self.time.T_end / self.time.dt))


def _check(cond: bool, path: str, msg: str, errors: list):
    if not cond:
        errors.append(f"{path}: {msg}")


def validate(cfg: RunConfig) -> RunConfig:
    """Raise :class:`ConfigError` listing every violated constraint by field path."""
    e: list[str] = []
    _check(cfg.mode in ("torus", "large-box"), "mode", "must be 'torus' or 'large-box'", e)
    g = cfg.grid
    _check(g.L > 0, "grid.L", "must be positive", e)
    _check(isinstance(g.N, int) and g.N >= 8 and not g.N & (g.N - 1), "grid.N",
           "must be a power of two >= 8", e)
    _check(0 < g.dealias <= 1, "grid.dealias", "must lie in (0, 1]", e)
    p = cfg.particles
    _check(isinstance(p.count, int) and p.count >= 0, "particles.count", "must be a nonnegative integer", e)
    _check(not cfg.kinetic or p.count > 0, "particles.count", "must be positive when kinetic is on", e)
    _check(p.sigma_v >= 0, "particles.sigma_v", "must be nonnegative", e)
    _check(p.radius is None or p.radius > 0, "particles.radius", "must be positive or null", e)
    _check(p.radius is None or 2 * p.radius <= g.L, "particles.radius", "bump must fit in the box", e)
    _check(len(p.drift) == 3, "particles.drift", "must have three components", e)
    _check(p.center is None or len(p.center) == 3, "particles.center", "must have three components", e)
    f = cfg.fluid
    _check(f.model in ("ns", "stokes", "off", "prescribed"), "fluid.model",
           "must be one of ns, stokes, off, prescribed", e)
    _check(f.init in ("modes", "gaussian", "gaussian-plain", "constant", "zero"), "fluid.init",
           "must be one of modes, gaussian, gaussian-plain, constant, zero", e)
    _check(f.amplitude >= 0, "fluid.amplitude", "must be nonnegative", e)
    _check(f.kmax > 0, "fluid.kmax", "must be positive", e)
    _check(f.width > 0, "fluid.width", "must be positive", e)
    _check(f.prescribed in ("none", "manufactured"), "fluid.prescribed", "must be 'none' or 'manufactured'", e)
    _check((f.model == "prescribed") == (f.prescribed != "none"), "fluid.prescribed",
           "a prescribed field is required exactly when fluid.model is 'prescribed'", e)
    t = cfg.time
    _check(t.dt > 0, "time.dt", "must be positive", e)
    _check(t.T_end > 0, "time.T_end", "must be positive", e)
    _check(t.T_end <= 0 or t.dt <= 0 or abs(t.T_end / t.dt - round(t.T_end / t.dt)) < 1e-9,
           "time.T_end", "must be an integer multiple of time.dt", e)
    _check(isinstance(t.sample_every, int) and t.sample_every >= 1, "time.sample_every",
           "must be a positive integer", e)
    _check(0 < t.cfl <= 1, "time.cfl", "must lie in (0, 1]", e)
    _check(t.dense_until >= 0, "time.dense_until", "must be nonnegative", e)
    s = cfg.schedule
    _check(0 < s.alpha < 1.5, "schedule.alpha", "must lie in (0, 3/2)", e)
    _check(s.C0 >= 0, "schedule.C0", "must be nonnegative", e)
    m = cfg.monitors
    _check(0 < m.delta0 <= 1, "monitors.delta0", "must lie in (0, 1]", e)
    _check(m.C_star > 0, "monitors.C_star", "must be positive", e)
    _check(all(x >= 0 for x in m.gamma_list), "monitors.gamma_list", "entries must be nonnegative", e)
    _check(len(m.p_list) > 0 and all(x >= 2 for x in m.p_list), "monitors.p_list",
           "entries must be at least 2", e)
    _check(m.gn_p > 3, "monitors.gn_p", "must exceed 3", e)
    _check(m.brinkman_tol >= 0, "monitors.brinkman_tol", "must be nonnegative", e)
    _check(all(0 < x <= t.T_end for x in m.jacobian_times), "monitors.jacobian_times",
           "entries must lie in (0, T_end]", e)
    _check(m.jacobian_probes >= 1, "monitors.jacobian_probes", "must be positive", e)
    _check(m.jacobian_record_every >= 1, "monitors.jacobian_record_every", "must be positive", e)
    _check(m.jacobian_fd_eps > 0, "monitors.jacobian_fd_eps", "must be positive", e)
    _check(m.fit_window is None or (len(m.fit_window) == 2 and m.fit_window[0] < m.fit_window[1]),
           "monitors.fit_window", "must be null or an increasing pair", e)
    _check(cfg.output.checkpoint_every >= 0, "output.checkpoint_every", "must be nonnegative", e)
    if e:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(e))
    return cfg


# --- serialization ---------------------------------------------------------------


def to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["schema_version"] = CONFIG_SCHEMA_VERSION
    return d


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        sub = getattr(defaults, name)
        where = f"{path}.{name}" if path else name
        if is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, where)
        else:
            kwargs[name] = _coerce(sub, value, where)
    return cls(**kwargs)


def _coerce(default, value, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    return value


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {CONFIG_SCHEMA_VERSION}, got {version!r}")
    return validate(_build(RunConfig, data, ""))


def dumps(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def loads(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_dict(data or {})


def load(path) -> RunConfig:
    with open(path) as fh:
        return loads(fh.read())


def save(cfg: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


# --- presets -----------------------------------------------------------------------


def _heat_baseline() -> RunConfig:
    """Free viscous decay of a localized solenoidal bump in a large box."""
    return RunConfig(
        name="heat-baseline", mode="large-box", kinetic=False,
        grid=GridConfig(L=40.0, N=64),
        particles=ParticleConfig(count=0),
        fluid=FluidConfig(model="stokes", init="gaussian", amplitude=0.01, width=1.0),
        time=TimeConfig(dt=0.05, T_end=50.0, sample_every=10, dense_until=2.0),
        monitors=MonitorConfig(fit_window=[5.0, 50.0]),
    )


def _equilibrium() -> RunConfig:
    """Uniform flow carrying particles at the same velocity: nothing dissipates."""
    U = [0.1, -0.05, 0.02]
    return RunConfig(
        name="equilibrium", mode="torus",
        grid=GridConfig(N=16),
        particles=ParticleConfig(count=2000, sigma_v=0.0, drift=list(U)),
        fluid=FluidConfig(model="ns", init="constant", constant=list(U)),
        time=TimeConfig(dt=0.01, T_end=1.0, sample_every=10),
    )


def _torus_small_data() -> RunConfig:
    """Weak flow and a slow, spatially uniform spray on the periodic box."""
    return RunConfig(
        name="torus-small-data", mode="torus",
        grid=GridConfig(N=32),
        particles=ParticleConfig(count=100_000, sigma_v=0.04, seed=2, zero_momentum=True),
        fluid=FluidConfig(model="ns", init="modes", amplitude=0.006, kmax=2.0, seed=1),
        time=TimeConfig(dt=5e-3, T_end=8.0, sample_every=5),
        monitors=MonitorConfig(jacobian_times=[0.5, 1.0, 2.0], fit_window=[1.0, 8.0]),
    )


def _largebox_small_data() -> RunConfig:
    """Localized data in a box eight times wider than the data support."""
    return RunConfig(
        name="largebox-small-data", mode="large-box",
        grid=GridConfig(L=80.0, N=64),
        particles=ParticleConfig(count=20_000, sigma_v=0.05, radius=5.0, seed=3, zero_momentum=True),
        fluid=FluidConfig(model="ns", init="gaussian", amplitude=0.01, width=2.5, zero_mean=True),
        time=TimeConfig(dt=0.1, T_end=30.0, sample_every=5, dense_until=2.0),
        monitors=MonitorConfig(fit_window=[5.0, 30.0]),
    )


def _manufactured_field() -> RunConfig:
    """Particles transported in a prescribed smooth time-dependent flow."""
    return RunConfig(
        name="manufactured-field", mode="torus",
        grid=GridConfig(N=16),
        particles=ParticleConfig(count=20_000, sigma_v=0.3, seed=4),
        fluid=FluidConfig(model="prescribed", init="zero", amplitude=0.5, prescribed="manufactured"),
        time=TimeConfig(dt=0.01, T_end=2.0, sample_every=1),
    )


def _drag_only() -> RunConfig:
    """Fluid switched off (u = 0): particles slow down by pure drag."""
    return RunConfig(
        name="drag-only", mode="torus",
        grid=GridConfig(N=8),
        particles=ParticleConfig(count=1000, sigma_v=1.0, seed=5),
        fluid=FluidConfig(model="off", init="zero"),
        time=TimeConfig(dt=5e-5, T_end=0.25, sample_every=1),
    )


_PRESETS = {
    "heat-baseline": _heat_baseline,
    "equilibrium": _equilibrium,
    "torus-small-data": _torus_small_data,
    "largebox-small-data": _largebox_small_data,
    "manufactured-field": _manufactured_field,
    "drag-only": _drag_only,
}


def presets() -> dict[str, RunConfig]:
    return {name: validate(make()) for name, make in _PRESETS.items()}


def preset(name: str) -> RunConfig:
    try:
        return validate(_PRESETS[name]())
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}") from None


def preset_doc(name: str) -> str:
    return (_PRESETS[name].__doc__ or "").strip()


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Copy with dotted-path overrides, e.g. ``{"time.dt": 1e-3}``."""
    out = copy.deepcopy(cfg)
    for key, value in changes.items():
        obj = out
        parts = key.split(".")
        for part in parts[:-1]:
            obj = getattr(obj, part)
        if not hasattr(obj, parts[-1]):
            raise ConfigError(f"{key}: unknown field")
        setattr(obj, parts[-1], value)
    return validate(out)
