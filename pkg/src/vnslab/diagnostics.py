"""Functionals of the coupled state, time-integrated probes, and the sample recorder.

Instantaneous quantities take a :class:`SystemState`; history-level
probes take a mapping of column name to array, as produced by
:class:`Recorder` or read back from its CSV.  Every time integral uses the
trapezoid rule on the sampling grid.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .coupling import PrescribedField, SystemState, total_momentum
from .kinetic import ParticleEnsemble, cic_stencil, deposit_moments, interpolate_field
from .spectral import (gradient_tensor, laplacian_hat, low_mode_energy, lp_norm,
                       sobolev_norm)

SCHEMA_VERSION = 1
SCHEMA_LINE = f"# vnslab-diagnostics v{SCHEMA_VERSION}"
CORE_COLUMNS = ("t", "E", "D", "D_fluid", "D_kin", "D_3", "D_4", "W1", "modE", "low_mode",
                "grad_inf", "grad_inf_int", "f_h12_int", "mp3_sup")
GN_VARIANTS = ("linf_l2", "linf_lp", "grad_lp", "grad_linf")


@dataclass(frozen=True)
class ProbeReport:
    name: str
    lhs: float
    rhs: float
    passed: bool
    tolerance: float = 0.0
    note: str = ""

    @property
    def ratio(self) -> float:
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs == 0 else math.inf

    def record(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio,
                "pass": self.passed, "tolerance": self.tolerance, "note": self.note}


# --- instantaneous functionals ------------------------------------------------


def fluid_energy(state: SystemState) -> float:
    return 0.5 * float((np.abs(state.fluid.u_hat) ** 2).sum())


def kinetic_energy(ens: ParticleEnsemble) -> float:
    return 0.5 * float(ens.w @ (ens.v**2).sum(axis=1))


def energy(state: SystemState) -> float:
    """``|u|^2/2`` integrated plus ``sum w |v|^2 / 2``."""
    return fluid_energy(state) + kinetic_energy(state.particles)


def fluid_at_particles(state: SystemState, u_real: Optional[np.ndarray] = None) -> np.ndarray:
    if state.particles.count == 0:
        return np.zeros((0, 3))
    if u_real is None:
        u_real = state.fluid.u_real()
    return interpolate_field(state.grid, u_real, state.particles.x)


def fluid_dissipation(state: SystemState) -> float:
    return sobolev_norm(state.grid, state.fluid.u_hat, 1.0) ** 2


def higher_dissipation(state: SystemState, p: float, u_part: Optional[np.ndarray] = None) -> float:
    """``sum w |u(x) - v|^p`` with ``u`` interpolated at the particles."""
    if p < 2:
        raise ValueError(f"order p must be at least 2, got {p}")
    if u_part is None:
        u_part = fluid_at_particles(state)
    rel2 = ((u_part - state.particles.v) ** 2).sum(axis=1)
    return float(state.particles.w @ rel2 ** (p / 2))


def dissipation(state: SystemState, u_part: Optional[np.ndarray] = None) -> tuple[float, float, float]:
    """``(D, D_fluid, D_kin)``."""
    d_kin = higher_dissipation(state, 2, u_part)
    d_fluid = fluid_dissipation(state)
    return d_fluid + d_kin, d_fluid, d_kin


def wasserstein_v(ens: ParticleEnsemble) -> float:
    """``sum w |v|``: transport cost to the same spatial density at rest."""
    return float(ens.w @ np.sqrt((ens.v**2).sum(axis=1)))


def modulated_energy(state: SystemState) -> float:
    """Energy relative to the monokinetic equilibrium at a common velocity.

    ``<j>`` is the mass-weighted mean particle velocity ``sum w v`` and
    ``<u>`` the box mean of the fluid velocity.
    """
    if state.mode != "torus":
        raise ValueError("modulated energy is defined on the periodic torus only")
    ens = state.particles
    jbar = ens.w @ ens.v if ens.count else np.zeros(3)
    ubar = np.real(state.fluid.u_hat[:, 0, 0, 0]) / state.grid.L**1.5
    kin = 0.5 * float(ens.w @ ((ens.v - jbar) ** 2).sum(axis=1)) if ens.count else 0.0
    p = (np.abs(state.fluid.u_hat) ** 2).sum(axis=0)
    flu = 0.5 * float(p.sum() - p[0, 0, 0])
    return kin + flu + 0.25 * float(((jbar - ubar) ** 2).sum())


def brinkman_field(state: SystemState, u_real: Optional[np.ndarray] = None) -> np.ndarray:
    if u_real is None:
        u_real = state.fluid.u_real()
    m = state.moments
    return m.j - m.rho[None] * u_real


def brinkman_hminus_sq(state: SystemState, F: Optional[np.ndarray] = None) -> float:
    """``|| F ||^2`` in the homogeneous ``H^{-1/2}`` norm (mean mode excluded)."""
    if F is None:
        F = brinkman_field(state)
    return sobolev_norm(state.grid, state.grid.fft(F), -0.5) ** 2


def brinkman_lp_vs_dp(state: SystemState, p: float, tol: float = 0.05,
                      u_real: Optional[np.ndarray] = None,
                      u_part: Optional[np.ndarray] = None) -> ProbeReport:
    """``||j - rho u||_p`` against ``||rho||_inf^{(p-1)/p} D_p^{1/p}``.

    The bound carries a rounding allowance proportional to ``||j||_p +
    ||rho u||_p`` so that a force that vanishes up to cancellation passes.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if u_real is None:
        u_real = state.fluid.u_real()
    if u_part is None:
        u_part = fluid_at_particles(state, u_real)
    m = state.moments
    rho_u = m.rho[None] * u_real
    lhs = lp_norm(state.grid, m.j - rho_u, p)
    rel = ((u_part - state.particles.v) ** 2).sum(axis=1)
    dp = float(state.particles.w @ rel ** (p / 2))
    atol = 64 * np.finfo(float).eps * (lp_norm(state.grid, m.j, p) + lp_norm(state.grid, rho_u, p))
    rhs = float(m.rho.max()) ** ((p - 1) / p) * dp ** (1 / p) + atol
    return ProbeReport(f"brinkman_lp_p{p:g}", lhs, rhs, lhs <= rhs * (1 + tol), tol,
                       "deposited force against particle-level dissipation")


def nodal_dissipation(state: SystemState, p: float, u_real: Optional[np.ndarray] = None) -> float:
    """``sum_i w_i sum_c S_c(x_i) |v_i - u(node_c)|^p`` over the trilinear stencil.

    With this node-level dissipation the deposited force obeys the Brinkman
    bound exactly (Holder on each node), so its distance to the
    particle-level ``D_p`` measures the discretization defect of the probe.
    """
    ens = state.particles
    if ens.count == 0:
        return 0.0
    if u_real is None:
        u_real = state.fluid.u_real()
    idx, wts = cic_stencil(state.grid, ens.x)
    u_flat = u_real.reshape(3, -1)
    total = np.zeros(ens.count)
    for c in range(8):
        rel2 = ((u_flat[:, idx[c]].T - ens.v) ** 2).sum(axis=1)
        total += wts[c] * rel2 ** (p / 2)
    return float(ens.w @ total)


def brinkman_consistency_slack(state: SystemState, p: float,
                               u_real: Optional[np.ndarray] = None,
                               u_part: Optional[np.ndarray] = None) -> float:
    """``|D_p^nodal - D_p| / D_p``; zero when ``D_p`` vanishes."""
    if u_real is None:
        u_real = state.fluid.u_real()
    dp = higher_dissipation(state, p, fluid_at_particles(state, u_real) if u_part is None else u_part)
    if dp == 0:
        return 0.0
    return abs(nodal_dissipation(state, p, u_real) - dp) / dp


def gn_exponent(variant: str, p: Optional[float] = None) -> float:
    if variant == "linf_l2":
        return 0.75
    if p is None or not p > 3:
        raise ValueError(f"variant {variant!r} needs p > 3")
    if variant == "linf_lp":
        return 3 * p / (7 * p - 6)
    if variant == "grad_lp":
        return (5 * p - 6) / (7 * p - 6)
    if variant == "grad_linf":
        return 5 * p / (7 * p - 6)
    raise ValueError(f"unknown variant {variant!r}; expected one of {GN_VARIANTS}")


def gn_ratio_probe(state: SystemState, variant: str, p: Optional[float] = None,
                   bound: float = math.inf, *, u_real: Optional[np.ndarray] = None,
                   G: Optional[np.ndarray] = None,
                   lap_real: Optional[np.ndarray] = None) -> ProbeReport:
    """Interpolation ratio ``lhs / (||Lap u||^theta ||u||_2^(1-theta))``.

    Scale- and amplitude-invariant; ``bound`` is an optional ceiling used
    for the pass flag (default: finite).  ``u_real``, ``G`` and ``lap_real``
    may be passed in to reuse transforms across variants.
    """
    theta = gn_exponent(variant, p)
    grid = state.grid
    u_hat = state.fluid.u_hat
    u2 = sobolev_norm(grid, u_hat, 0)
    q = 2 if variant == "linf_l2" else p
    if lap_real is None:
        lap_real = grid.ifft(laplacian_hat(grid, u_hat))
    lap = lp_norm(grid, lap_real, q)
    if variant in ("linf_l2", "linf_lp"):
        lhs = lp_norm(grid, grid.ifft(u_hat) if u_real is None else u_real, math.inf)
    else:
        if G is None:
            G = gradient_tensor(grid, u_hat)
        lhs = lp_norm(grid, G, math.inf if variant == "grad_linf" else p)
    rhs = lap**theta * u2 ** (1 - theta)
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return ProbeReport(f"gn_{variant}", lhs, rhs, bool(np.isfinite(ratio) and ratio <= bound),
                       note=f"theta={theta:.6g}")


def mp_sup(moments, p: float) -> float:
    """Grid maximum of the deposited moment ``m_p``."""
    if p == 0:
        return float(moments.rho.max())
    return float(moments.m[p].max())


def mixed_term(w, v, u_part, dudt_part, grad_part, p: float) -> float:
    """``sum w [d_s u + (v . grad) u] . (v - u) |v - u|^(p-2)`` at the particles."""
    rel = v - u_part
    mag2 = (rel**2).sum(axis=1)
    conv = np.einsum("nab,nb->na", grad_part, v)
    dot = ((dudt_part + conv) * rel).sum(axis=1)
    if p == 2:
        return float(w @ dot)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(mag2 > 0, mag2 ** ((p - 2) / 2), 0.0)
    return float(w @ (dot * fac))


# --- splitting schedule ---------------------------------------------------------


@dataclass(frozen=True)
class SplittingSchedule:
    """Frequency cutoffs of the Fourier splitting argument."""

    alpha: float
    C0: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha < 1.5:
            raise ValueError("alpha must lie in (0, 3/2)")
        if self.C0 < 0:
            raise ValueError("C0 must be nonnegative")

    def g2(self, t):
        return 2 * self.alpha * (1 + self.C0) / (10 + np.asarray(t, dtype=float))

    def gtilde2(self, t):
        return self.alpha / (10 + np.asarray(t, dtype=float))

    def gbar2(self, t):
        return self.g2(t) / (4 * (1 + self.C0))

    def growth_factor(self, t):
        """``exp(int_0^t gtilde^2)`` in closed form."""
        return ((10 + np.asarray(t, dtype=float)) / 10) ** self.alpha


# --- history-level probes -----------------------------------------------------------

History = Mapping[str, np.ndarray]


def running_integral(t, y) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size == 0:
        return np.zeros(0)
    return cumulative_trapezoid(y, t, initial=0.0)


def energy_balance_residual(history: History, tol: float = 0.05) -> ProbeReport:
    """Max over samples of ``|E(t) + int_0^t D - E(0)| / E(0)``."""
    t = np.asarray(history["t"], dtype=float)
    E = np.asarray(history["E"], dtype=float)
    if t.size < 2:
        raise ValueError("energy balance needs at least two samples")
    res = np.abs(E + running_integral(t, history["D"]) - E[0])
    if E[0] == 0:
        r = float(res.max())
        return ProbeReport("energy_balance", r, 0.0, r <= tol, tol, "absolute residual (E(0) = 0)")
    r = float(res.max() / E[0])
    return ProbeReport("energy_balance", r, 1.0, r <= tol, tol, "relative to E(0)")


def splitting_probe(history: History, sched: SplittingSchedule) -> ProbeReport:
    """Low-mode energy against the heat part plus the two source terms; sup ratio."""
    t = np.asarray(history["t"], dtype=float)
    low = np.asarray(history["low_mode"], dtype=float)
    g2 = sched.g2(t)
    rhs = (np.asarray(history["heat_l2sq"], dtype=float)
           + g2**2.5 * np.asarray(history["u_l2sq_int"], dtype=float) ** 2
           + g2**1.5 * np.asarray(history["F_l1_int"], dtype=float) ** 2)
    pos = rhs > 0
    if not pos.any():
        lhs = float(low.max()) if low.size else 0.0
        return ProbeReport("splitting", lhs, 0.0, lhs == 0.0, note="degenerate: absolute report")
    ratios = low[pos] / rhs[pos]
    k = int(np.argmax(ratios))
    return ProbeReport("splitting", float(low[pos][k]), float(rhs[pos][k]),
                       bool(np.isfinite(ratios).all()), note="sup over samples; bounded, constant unknown")


def dp_identity_terms(t, Dp, mixed, p: float, gamma: Optional[float] = None):
    """Running LHS and RHS of the weighted higher-dissipation identity.

    ``phi = 1`` when ``gamma`` is None, else ``phi(s) = (1 + s)^(p gamma)``.
    """
    t = np.asarray(t, dtype=float)
    Dp = np.asarray(Dp, dtype=float)
    mixed = np.asarray(mixed, dtype=float)
    if gamma is None:
        phi, dphi = np.ones_like(t), np.zeros_like(t)
    else:
        e = p * gamma
        phi = (1 + t) ** e
        dphi = e * (1 + t) ** (e - 1)
    lhs = running_integral(t, phi * Dp)
    rhs = (running_integral(t, dphi * Dp) / p - running_integral(t, phi * mixed)
           - (phi * Dp - phi[0] * Dp[0]) / p)
    return lhs, rhs


def dp_identity_residual(history: History, p: float, gamma: Optional[float] = None,
                         tol: float = 0.05, Dp=None, mixed=None) -> ProbeReport:
    """Residual of the integrated identity along characteristics for ``D_p``.

    Reported as ``max |lhs - rhs| / max |lhs|`` over the sampled window.
    """
    t = np.asarray(history["t"], dtype=float)
    if t.size < 3:
        raise ValueError("identity residual needs at least three samples")
    if Dp is None:
        Dp = history[dp_column(p)]
    if mixed is None:
        mixed = history[f"mixed_p{p:g}"]
    lhs, rhs = dp_identity_terms(t, Dp, mixed, p, gamma)
    err = float(np.abs(lhs - rhs).max())
    scale = float(np.abs(lhs).max())
    name = f"dp_identity_p{p:g}" + ("" if gamma is None else f"_g{gamma:g}")
    if scale == 0:
        return ProbeReport(name, err, 0.0, err <= tol, tol, "absolute residual")
    return ProbeReport(name, err / scale, 1.0, err / scale <= tol, tol, "relative residual")


def dp_column(p: float) -> str:
    return "D_kin" if p == 2 else f"D_{p:g}"


def weighted_dissipation_integral(history: History, alpha: float, which: str = "kinetic") -> np.ndarray:
    """Running ``int_0^t D_which (1 + s)^alpha ds``."""
    col = {"kinetic": "D_kin", "fluid": "D_fluid"}.get(which)
    if col is None:
        raise ValueError("which must be 'kinetic' or 'fluid'")
    if not 0 < alpha < 1.5:
        raise ValueError("alpha must lie in (0, 3/2)")
    t = np.asarray(history["t"], dtype=float)
    return running_integral(t, np.asarray(history[col], dtype=float) * (1 + t) ** alpha)


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    r2: float
    n: int
    dropped: int
    kind: str


def decay_fit(t, values, t_min: float = 0.0, t_max: float = math.inf,
              kind: str = "power") -> DecayFit:
    """Least-squares slope of ``log(value)`` against ``log(1 + t)`` or ``t``.

    Nonpositive values are dropped and counted.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    sel = (t >= t_min) & (t <= t_max)
    t, y = t[sel], y[sel]
    good = np.isfinite(y) & (y > 0)
    dropped = int((~good).sum())
    t, y = t[good], y[good]
    if t.size < 10:
        raise ValueError(f"decay fit needs at least 10 positive samples, got {t.size}")
    if kind == "power":
        x = np.log1p(t)
    elif kind == "exp":
        x = t
    else:
        raise ValueError("kind must be 'power' or 'exp'")
    ly = np.log(y)
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss_res = float(((ly - fit) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(coef[0]), r2, int(t.size), dropped, kind)


def strong_existence_monitor(history: History, C_star: float = 1.0) -> ProbeReport:
    """``||u0||^2_{H^1/2} + C* int ||F||^2_{H^-1/2}`` against ``1 / C*^2``."""
    u0 = float(np.asarray(history["u0_h12sq"], dtype=float)[0])
    stat = u0 + C_star * np.asarray(history["f_h12_int"], dtype=float)
    top = float(stat.max())
    threshold = 1.0 / C_star**2
    return ProbeReport("strong_existence", top, threshold, top < threshold,
                       note=f"C*={C_star:g}; max over samples")


def _crossing(t: np.ndarray, integ: np.ndarray, level: float) -> Optional[float]:
    cross = np.nonzero(integ >= level)[0]
    if cross.size == 0:
        return None
    k = int(cross[0])
    if k == 0:
        return float(t[0])
    th = (level - integ[k - 1]) / (integ[k] - integ[k - 1])
    return float(t[k - 1] + th * (t[k] - t[k - 1]))


def bootstrap_monitor(history: History, delta0: float = 0.5) -> ProbeReport:
    """Running ``int ||grad u||_inf`` and its first crossing of ``delta0``."""
    t = np.asarray(history["t"], dtype=float)
    integ = running_integral(t, history["grad_inf"])
    total = float(integ[-1]) if integ.size else 0.0
    tc = _crossing(t, integ, delta0)
    if tc is None:
        return ProbeReport("bootstrap", total, delta0, True, note="no crossing")
    return ProbeReport("bootstrap", total, delta0, False, note=f"crossing at t={tc:.6g}")


def first_crossing(history: History, delta0: float) -> Optional[float]:
    """Time at which the running ``int ||grad u||_inf`` first reaches ``delta0``."""
    t = np.asarray(history["t"], dtype=float)
    return _crossing(t, running_integral(t, history["grad_inf"]), delta0)


# --- recorder ------------------------------------------------------------------------


@dataclass(frozen=True)
class RecorderSettings:
    p_list: tuple = (2, 3, 4)
    gamma_list: tuple = (0.25,)
    gn_p: float = 4.0
    schedule: SplittingSchedule = field(default_factory=lambda: SplittingSchedule(1.0, 0.0))
    brinkman_tol: float = 0.05


@dataclass
class _Snap:
    t: float
    state: SystemState
    u_real: np.ndarray
    row: dict


class Recorder:
    """Collects one diagnostics row per observed state.

    Quantities that need ``d_s u`` (the mixed terms and the weighted
    parabolic norms) use centred differences of neighbouring samples, so
    a row is completed when the next sample arrives, or at :meth:`finish`
    with one-sided differences.
    """

    def __init__(self, settings: RecorderSettings, u0_hat: np.ndarray,
                 prescribed: Optional[PrescribedField] = None):
        self.settings = settings
        self.prescribed = prescribed
        self.u0_hat = u0_hat
        self.rows: list[dict] = []
        self._snaps: list[_Snap] = []
        self._last: Optional[dict] = None
        self._u0_h12sq: Optional[float] = None
        self._mixed_orders = sorted(set(settings.p_list) | {2, 3, 4})
        self._wkeys = [(g, p) for g in settings.gamma_list for p in settings.p_list]

    @property
    def columns(self) -> list[str]:
        cols = list(CORE_COLUMNS)
        cols += ["E_fluid", "E_kin", "mass", "px", "py", "pz", "rho_sup", "heat_l2sq",
                 "u_l2sq", "u_l2sq_int", "F_l1", "F_l1_int", "F_h12sq", "u0_h12sq"]
        cols += [dp_column(p) for p in self._mixed_orders if dp_column(p) not in cols]
        cols += [f"mixed_p{p:g}" for p in self._mixed_orders]
        cols += [f"brink_p{p:g}" for p in (2, 3, 4)]
        cols += [f"gn_{v}" for v in GN_VARIANTS]
        for g, p in self._wkeys:
            cols += [f"wdt_g{g:g}_p{p:g}", f"wlap_g{g:g}_p{p:g}"]
        return cols

    def observe(self, state: SystemState):
        self._snaps.append(self._instant(state))
        if len(self._snaps) >= 2:
            self._complete(len(self._snaps) - 2)
        if len(self._snaps) > 3:
            self._snaps.pop(0)

    def _instant(self, state: SystemState) -> _Snap:
        grid = state.grid
        u_real = state.fluid.u_real()
        u_hat = state.fluid.u_hat
        ens = state.particles
        u_part = self._u_at(state.t, u_real, state, ens.x)
        row: dict = {"t": state.t}
        d, d_fluid, d_kin = dissipation(state, u_part)
        e_f, e_k = fluid_energy(state), kinetic_energy(ens)
        row.update(E=e_f + e_k, D=d, D_fluid=d_fluid, D_kin=d_kin, E_fluid=e_f, E_kin=e_k)
        for p in self._mixed_orders:
            if p != 2:
                row[dp_column(p)] = higher_dissipation(state, p, u_part)
        row["W1"] = wasserstein_v(ens)
        row["modE"] = modulated_energy(state) if state.mode == "torus" else math.nan
        sched = self.settings.schedule
        row["low_mode"] = low_mode_energy(grid, u_hat, float(np.sqrt(sched.g2(state.t))))
        G = gradient_tensor(grid, u_hat)
        row["grad_inf"] = float(np.sqrt((G**2).sum(axis=(0, 1))).max())
        F = brinkman_field(state, u_real)
        row["F_h12sq"] = brinkman_hminus_sq(state, F)
        row["F_l1"] = lp_norm(grid, F, 1)
        m3 = deposit_moments(ens, grid, (3,))
        row["mp3_sup"] = mp_sup(m3, 3)
        row["mass"] = float(ens.w.sum())
        row["px"], row["py"], row["pz"] = (float(c) for c in total_momentum(state))
        row["rho_sup"] = float(state.moments.rho.max())
        row["heat_l2sq"] = float((np.abs(self.u0_hat) ** 2 * np.exp(-2 * grid.k2 * state.t)).sum())
        row["u_l2sq"] = 2 * e_f
        if self._u0_h12sq is None:
            self._u0_h12sq = sobolev_norm(grid, self.u0_hat, 0.5) ** 2
        row["u0_h12sq"] = self._u0_h12sq
        for p in (2, 3, 4):
            row[f"brink_p{p}"] = brinkman_lp_vs_dp(state, p, self.settings.brinkman_tol,
                                                   u_real, u_part).ratio
        lap_real = grid.ifft(laplacian_hat(grid, u_hat))
        for v in GN_VARIANTS:
            p_gn = None if v == "linf_l2" else self.settings.gn_p
            row[f"gn_{v}"] = gn_ratio_probe(state, v, p_gn, u_real=u_real, G=G,
                                            lap_real=lap_real).ratio

        row["_G"] = G
        row["_lap"] = lap_real
        row["_u_part"] = u_part
        return _Snap(state.t, state, u_real, row)

    def export(self) -> tuple[list[SystemState], Optional[dict]]:
        """Pending snapshots and running totals needed to resume recording."""
        return [s.state for s in self._snaps[-2:]], copy.deepcopy(self._last)

    def restore(self, rows: list[dict], states: Sequence[SystemState], last: Optional[dict]):
        """Rebuild the recorder at a checkpoint written right after an observation.

        ``states`` are the last two observed states (the older one already
        has its row among ``rows``); instantaneous values are recomputed,
        which reproduces them bit for bit.
        """
        self.rows = list(rows)
        self._snaps = []
        for k, st in enumerate(states):
            self._snaps.append(self._instant(st))
            if k < len(states) - 1:
                self._snaps[-1].row["done"] = True
        self._last = copy.deepcopy(last)

    def finish(self) -> list[dict]:
        if self._snaps and "done" not in self._snaps[-1].row:
            self._complete(len(self._snaps) - 1)
        return self.rows

    def _u_at(self, t, u_real, state, pos):
        if self.prescribed is not None:
            return self.prescribed.velocity(t, pos)
        return interpolate_field(state.grid, u_real, pos)

    def _grad_at(self, snap: _Snap, pos):
        if self.prescribed is not None:
            return self.prescribed.gradient(snap.t, pos)
        G = snap.row["_G"].reshape((9,) + snap.u_real.shape[1:])
        return interpolate_field(snap.state.grid, G, pos).reshape(-1, 3, 3)

    def _complete(self, i: int):
        snaps = self._snaps
        cur = snaps[i]
        prev = snaps[i - 1] if i >= 1 else None
        nxt = snaps[i + 1] if i + 1 < len(snaps) else None
        a, b = prev or cur, nxt or cur
        ens = cur.state.particles
        grid = cur.state.grid
        row = cur.row
        if a is b:
            dudt_p = np.zeros_like(ens.v)
            dudt_g = np.zeros_like(cur.u_real)
        else:
            h = b.t - a.t
            ua = self._u_at(a.t, a.u_real, a.state, ens.x)
            ub = self._u_at(b.t, b.u_real, b.state, ens.x)
            dudt_p = (ub - ua) / h
            dudt_g = (b.u_real - a.u_real) / h
        grad_p = self._grad_at(cur, ens.x)
        for p in self._mixed_orders:
            row[f"mixed_p{p:g}"] = mixed_term(ens.w, ens.v, row["_u_part"], dudt_p, grad_p, p)
        lap = row["_lap"]
        inst = {}
        for g, p in self._wkeys:
            wgt = (1 + cur.t) ** (g * p)
            inst[(g, p)] = (wgt * lp_norm(grid, dudt_g, p) ** p, wgt * lp_norm(grid, lap, p) ** p)
        self._accumulate(row, inst)
        row["done"] = True
        self.rows.append({c: row[c] for c in self.columns})

    def _accumulate(self, row, inst):
        integrands = {"grad_inf_int": row["grad_inf"], "f_h12_int": row["F_h12sq"],
                      "u_l2sq_int": row["u_l2sq"], "F_l1_int": row["F_l1"]}
        for (g, p), (a, b) in inst.items():
            integrands[f"wdt_g{g:g}_p{p:g}"] = a
            integrands[f"wlap_g{g:g}_p{p:g}"] = b
        last = self._last
        totals = {}
        for k, y in integrands.items():
            if last is None:
                totals[k] = 0.0
            else:
                totals[k] = last["tot"][k] + 0.5 * (row["t"] - last["t"]) * (y + last["y"][k])
        self._last = {"t": row["t"], "y": integrands, "tot": totals}
        for k in ("grad_inf_int", "f_h12_int", "u_l2sq_int", "F_l1_int"):
            row[k] = totals[k]
        for g, p in self._wkeys:
            for pre in ("wdt", "wlap"):
                key = f"{pre}_g{g:g}_p{p:g}"
                row[key] = totals[key] ** (1 / p)


def history_from_rows(rows: Sequence[dict]) -> dict:
    if not rows:
        return {}
    return {k: np.array([r[k] for r in rows], dtype=float) for k in rows[0]}
