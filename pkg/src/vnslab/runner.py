"""Run orchestration: build the initial state, step, record, checkpoint, summarize."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from .config import RunConfig
from .coupling import (PrescribedField, StepOptions, SystemState, load_checkpoint, make_state,
                       save_checkpoint, step_system)
from .diagnostics import (CORE_COLUMNS, SCHEMA_LINE, ProbeReport, Recorder, RecorderSettings,
                          SplittingSchedule, bootstrap_monitor, decay_fit, dp_identity_residual,
                          energy_balance_residual, splitting_probe, strong_existence_monitor,
                          weighted_dissipation_integral)
from .errors import SchemaError, SimulationAborted, StepRejected
from .initial import constant_field, gaussian_bump, manufactured_field, random_solenoidal
from .kinetic import BumpMaxwellian, CharacteristicsFlow, ParticleEnsemble, flow_jacobian
from .spectral import Grid3, lp_norm

log = logging.getLogger(__name__)


@dataclass
class RunArtifacts:
    directory: Path
    csv_path: Path
    probes_path: Path
    summary_path: Path
    checkpoints: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


# --- construction --------------------------------------------------------------------


def initial_density(cfg: RunConfig) -> BumpMaxwellian:
    p = cfg.particles
    L = cfg.grid.L
    center = tuple(p.center) if p.center is not None else (L / 2,) * 3
    return BumpMaxwellian(p.radius, p.sigma_v, center, tuple(p.drift), L)


def initial_velocity(cfg: RunConfig, grid: Grid3) -> np.ndarray:
    f = cfg.fluid
    if f.init == "modes":
        u_hat = random_solenoidal(grid, f.kmax, f.amplitude, f.seed)
    elif f.init in ("gaussian", "gaussian-plain"):
        u_hat = gaussian_bump(grid, f.amplitude, f.width, f.direction,
                              solenoidal=(f.init == "gaussian"))
    elif f.init == "constant":
        u_hat = constant_field(grid, f.constant)
    else:
        u_hat = np.zeros((3,) + (grid.N,) * 3, dtype=complex)
    if f.zero_mean:
        u_hat = u_hat.copy()
        u_hat[:, 0, 0, 0] = 0.0
    return u_hat


def prescribed_field(cfg: RunConfig) -> Optional[PrescribedField]:
    if cfg.fluid.prescribed == "manufactured":
        return manufactured_field(cfg.grid.L, cfg.fluid.amplitude)
    return None


def build_initial_state(cfg: RunConfig):
    """Return ``(state, u0_hat, prescribed)`` for a validated config."""
    grid = Grid3(cfg.grid.L, cfg.grid.N, cfg.grid.dealias)
    prescribed = prescribed_field(cfg)
    if prescribed is not None:
        u0_hat = grid.fft(prescribed.on_grid(grid, 0.0))
    else:
        u0_hat = initial_velocity(cfg, grid)
    if cfg.particles.count > 0:
        p = cfg.particles
        ens = initial_density(cfg).sample(p.count, p.seed, p.stratified, p.zero_momentum)
    else:
        ens = ParticleEnsemble(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0))
    return make_state(grid, u0_hat, ens, 0.0, cfg.mode), u0_hat, prescribed


def step_options(cfg: RunConfig, prescribed: Optional[PrescribedField]) -> StepOptions:
    return StepOptions(cfg.time.dt, cfg.fluid.model, cfg.kinetic, cfg.time.cfl, prescribed)


def recorder_settings(cfg: RunConfig) -> RecorderSettings:
    m = cfg.monitors
    return RecorderSettings(
        p_list=tuple(m.p_list), gamma_list=tuple(m.gamma_list), gn_p=m.gn_p,
        schedule=SplittingSchedule(cfg.schedule.alpha, cfg.schedule.C0),
        brinkman_tol=m.brinkman_tol,
    )


# --- output ----------------------------------------------------------------------------


def write_csv(path: Path, columns: list, rows: list):
    with open(path, "w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in columns])


def read_csv(path) -> dict:
    """Read a diagnostics CSV into column arrays, checking the schema."""
    path = Path(path)
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    if lines[0].strip() != SCHEMA_LINE:
        raise SchemaError(f"{path}: line 1: expected schema line {SCHEMA_LINE!r}, got {lines[0]!r}")
    reader = list(csv.reader(lines[1:]))
    if not reader:
        raise SchemaError(f"{path}: missing header row")
    header = reader[0]
    missing = [c for c in CORE_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path}: header lacks required columns {missing}")
    if len(reader) < 2:
        raise SchemaError(f"{path}: no data rows")
    data = {c: [] for c in header}
    for i, row in enumerate(reader[1:], start=3):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {i}: expected {len(header)} fields, got {len(row)}")
        for c, x in zip(header, row):
            try:
                data[c].append(float(x))
            except ValueError:
                raise SchemaError(f"{path}: row {i}, column {c!r}: not a number: {x!r}") from None
    return {c: np.array(v) for c, v in data.items()}


# --- probes and summary ------------------------------------------------------------------


def _fit_window(cfg: Optional[RunConfig], t: np.ndarray):
    if cfg is not None and cfg.monitors.fit_window is not None:
        return tuple(cfg.monitors.fit_window)
    T = float(t[-1])
    return 0.1 * T, T


def evaluate(history: dict, cfg: Optional[RunConfig] = None) -> tuple[list, dict]:
    """Probe reports and a summary dictionary for a recorded history.

    Reports flagged ``asserted`` decide the probe-failure exit status.
    """
    m = cfg.monitors if cfg is not None else cfgmod.MonitorConfig()
    sched_cfg = cfg.schedule if cfg is not None else cfgmod.ScheduleConfig()
    t = history["t"]
    reports: list[tuple[ProbeReport, bool]] = []
    summary: dict = {"samples": int(t.size), "t_end": float(t[-1])}

    # with a prescribed flow the fluid is not a solution, so balance laws are only reported
    closed = cfg is None or cfg.fluid.model != "prescribed"
    if t.size >= 2:
        reports.append((energy_balance_residual(history), closed))
    if "u0_h12sq" in history:
        reports.append((strong_existence_monitor(history, m.C_star), closed))
    reports.append((bootstrap_monitor(history, m.delta0), closed))
    if "heat_l2sq" in history:
        reports.append((splitting_probe(history, SplittingSchedule(sched_cfg.alpha, sched_cfg.C0)), False))

    kinetic = bool(np.any(history.get("mass", np.zeros(1)) > 0))
    if kinetic and t.size >= 3:
        for p in m.p_list:
            if f"mixed_p{p:g}" in history:
                reports.append((dp_identity_residual(history, p), False))
                for g in m.gamma_list:
                    reports.append((dp_identity_residual(history, p, g), False))
        for p in (2, 3, 4):
            col = history.get(f"brink_p{p}")
            if col is not None:
                worst = float(np.max(col))
                reports.append((ProbeReport(f"brinkman_lp_p{p}", worst, 1.0,
                                            worst <= 1 + m.brinkman_tol, m.brinkman_tol,
                                            "max over samples of lhs/rhs"), True))
        mass = history["mass"]
        reports.append((ProbeReport("mass", float(np.abs(mass - mass[0]).max()), 0.0,
                                    bool(np.all(mass == mass[0])), note="exact constancy"), True))
        w1_excess = float(np.max(history["W1"] - np.sqrt(2 * history["E"])))
        reports.append((ProbeReport("w1_bound", w1_excess, 0.0, w1_excess <= 0,
                                    note="max of W1 - sqrt(2E)"), True))
        summary["w1_decreasing"] = bool(np.all(np.diff(history["W1"]) < 0))
        if "rho_sup" in history and cfg is not None and cfg.particles.count > 0:
            f0 = initial_density(cfg).linf_l1()
            summary["rho_sup_constant"] = float(history["rho_sup"].max() / f0)

    if "px" in history:
        P = np.stack([history["px"], history["py"], history["pz"]], axis=1)
        scale = float(history["p_scale"][0]) if "p_scale" in history else 1.0
        drift = float(np.abs(P - P[0]).max()) / max(scale, 1e-300) / max(float(t[-1]), 1e-300)
        summary["momentum_drift_rate"] = drift

    dE = np.diff(history["E"])
    summary["energy_monotone"] = bool(np.all(dE <= 0))
    gn_cols = [c for c in history if c.startswith("gn_")]
    summary["gn_sup"] = {c: float(np.max(history[c])) for c in gn_cols}

    t0, t1 = _fit_window(cfg, t)
    fits = {}
    for col, kind in (("E", "power"), ("u_l2sq", "power"), ("modE", "exp"), ("mp3_sup", "power")):
        if col not in history or np.all(np.isnan(history[col])):
            continue
        y = history[col] if col != "u_l2sq" else np.sqrt(history[col])
        name = "u_l2" if col == "u_l2sq" else col
        try:
            f = decay_fit(t, y, t0, t1, kind)
            fits[name] = {"exponent": f.exponent, "r2": f.r2, "n": f.n, "dropped": f.dropped,
                          "kind": kind}
        except ValueError as exc:
            fits[name] = {"error": str(exc)}
    summary["fits"] = fits
    summary["fit_window"] = [t0, t1]

    if "D_kin" in history and t.size >= 4 and float(t[-1]) > 0:
        wint = weighted_dissipation_integral(history, 1.0, "kinetic")
        half = int(np.searchsorted(t, t[-1] / 2))
        if wint[half] > 0:
            summary["weighted_dissipation_growth"] = float((wint[-1] - wint[half]) / wint[half])
        summary["weighted_dissipation_final"] = float(wint[-1])

    summary["probes"] = {r.name: {**r.record(), "asserted": a} for r, a in reports}
    summary["all_asserted_pass"] = all(r.passed for r, a in reports if a)
    return [r for r, _ in reports], summary


# --- jacobian probes ---------------------------------------------------------------------


def jacobian_probes(cfg: RunConfig, flow: CharacteristicsFlow, t: float) -> dict:
    rng = np.random.default_rng(cfg.particles.seed + 7919)
    n = cfg.monitors.jacobian_probes
    x = rng.uniform(0, cfg.grid.L, size=(n, 3))
    vs = cfg.particles.sigma_v if cfg.particles.sigma_v > 0 else 1.0
    v = rng.normal(0.0, vs, size=(n, 3))
    det = flow_jacobian(flow, t, x, v, cfg.monitors.jacobian_fd_eps)
    ref = math.exp(3 * t)
    return {"t": t, "min_ratio": float(det.min() / ref), "max_ratio": float(det.max() / ref),
            "pass": bool(np.all(det >= ref / 2))}


# --- run loop ------------------------------------------------------------------------


def _momentum_scale(state: SystemState) -> float:
    u = state.fluid.u_real()
    ens = state.particles
    return lp_norm(state.grid, u, 1) + float(ens.w @ np.sqrt((ens.v**2).sum(axis=1)))


def run(cfg: RunConfig, out_dir=None, *, stop_after: Optional[int] = None,
        _resume: Optional[dict] = None) -> RunArtifacts:
    """Execute a run and write CSV, probe records and summary into ``out_dir``.

    ``stop_after`` ends the loop early after that many steps (used to
    produce resumable partial runs).
    """
    cfgmod.validate(cfg)
    out = Path(out_dir if out_dir is not None else Path(cfg.output.directory) / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfgmod.dumps(cfg))

    state0, u0_hat, prescribed = build_initial_state(cfg)
    opts = step_options(cfg, prescribed)
    rec = Recorder(recorder_settings(cfg), u0_hat, prescribed)
    n_steps = cfg.n_steps
    ck_every = cfg.output.checkpoint_every
    jac_times = sorted(cfg.monitors.jacobian_times)
    jac_steps = {int(round(tj / cfg.time.dt)): tj for tj in jac_times}
    jac_results: list = []
    checkpoints: list = []

    if _resume is None:
        state = state0
        step = 0
        p_scale = _momentum_scale(state0)
        rec.observe(state)
        flow = CharacteristicsFlow(state.grid, dt=cfg.time.dt) if jac_times else None
        if flow is not None:
            flow.record(0.0, state.fluid.u_real())
    else:
        state = _resume["state"]
        step = _resume["step"]
        p_scale = _resume["p_scale"]
        rec.restore(_resume["rows"], _resume["states"], _resume["last"])
        jac_results = _resume["jacobian"]
        flow = None
        if any(s > step for s in jac_steps):
            log.warning("jacobian probes after t=%g are skipped on resume", state.t)
            jac_steps = {s: tj for s, tj in jac_steps.items() if s <= step}

    aborted = None
    last_step = n_steps if stop_after is None else min(n_steps, step + stop_after)
    try:
        while step < last_step:
            state = step_system(state, opts)
            step += 1
            if flow is not None and (step % cfg.monitors.jacobian_record_every == 0 or step in jac_steps):
                flow.record(state.t, state.fluid.u_real())
            if step in jac_steps and flow is not None:
                jac_results.append(jacobian_probes(cfg, flow, state.t))
                if step >= max(jac_steps):
                    flow = None
            if cfg.time.is_sample(step, n_steps):
                rec.observe(state)
                if ck_every and step % ck_every == 0 and step < n_steps:
                    checkpoints.append(_checkpoint(out, cfg, rec, state, step, p_scale, jac_results))
    except (SimulationAborted, StepRejected) as exc:
        aborted = str(exc)
        log.error("run aborted: %s", exc)

    rows = rec.finish()
    for r in rows:
        r["p_scale"] = p_scale
    columns = rec.columns + ["p_scale"]
    csv_path = out / "diagnostics.csv"
    write_csv(csv_path, columns, rows)
    history = {c: np.array([r[c] for r in rows], dtype=float) for c in columns}
    reports, summary = evaluate(history, cfg)
    summary["name"] = cfg.name
    summary["steps"] = step
    summary["complete"] = step == n_steps and aborted is None
    summary["aborted"] = aborted
    summary["jacobian"] = jac_results
    if jac_results:
        summary["all_asserted_pass"] = summary["all_asserted_pass"] and all(j["pass"] for j in jac_results)
    probes_path = out / "probes.jsonl"
    with open(probes_path, "w") as fh:
        for r in reports:
            fh.write(json.dumps(r.record()) + "\n")
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, default=float))
    arts = RunArtifacts(out, csv_path, probes_path, summary_path, checkpoints, summary)
    if aborted is not None:
        raise SimulationAborted(f"{aborted} (partial output in {out})")
    return arts


def _checkpoint(out: Path, cfg, rec: Recorder, state, step, p_scale, jac_results) -> Path:
    states, last = rec.export()
    cols = rec.columns
    rows = np.array([[r[c] for c in cols] for r in rec.rows], dtype=float).reshape(len(rec.rows), len(cols))
    arrays = {"rows": rows}
    prev = states[0] if len(states) == 2 else None
    if prev is not None:
        arrays.update(prev_u_hat=prev.fluid.u_hat, prev_x=prev.particles.x, prev_v=prev.particles.v)
    extra = {
        "config": cfgmod.to_dict(cfg),
        "step": step,
        "p_scale": p_scale,
        "columns": cols,
        "last": last,
        "prev_t": prev.t if prev is not None else None,
        "jacobian": jac_results,
    }
    path = out / f"checkpoint_{step:08d}.npz"
    save_checkpoint(path, state, extra, arrays)
    return path


def resume(checkpoint, out_dir=None) -> RunArtifacts:
    """Continue a run from a checkpoint; the output matches an uninterrupted run."""
    state, extra, arrays = load_checkpoint(checkpoint)
    cfg = cfgmod.from_dict(extra["config"])
    cols = extra["columns"]
    rows = [dict(zip(cols, map(float, r))) for r in arrays["rows"]]
    states = [state]
    if extra.get("prev_t") is not None:
        prev_ens = ParticleEnsemble(arrays["prev_x"], arrays["prev_v"], state.particles.w)
        prev = make_state(state.grid, arrays["prev_u_hat"], prev_ens, extra["prev_t"], state.mode)
        states = [prev, state]
    last = extra["last"]
    payload = {"state": state, "step": extra["step"], "p_scale": extra["p_scale"], "rows": rows,
               "states": states, "last": last, "jacobian": extra.get("jacobian", [])}
    out = out_dir if out_dir is not None else Path(checkpoint).parent
    return run(cfg, out, _resume=payload)


def analyze(csv_path, cfg: Optional[RunConfig] = None) -> dict:
    history = read_csv(csv_path)
    _, summary = evaluate(history, cfg)
    return summary
