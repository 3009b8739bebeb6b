import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize

from vnslab.errors import SimulationAborted, StepRejected
from vnslab.kinetic import (BumpMaxwellian, CharacteristicsFlow, ParticleEnsemble, cic_stencil,
                            deposit_moments, flow_jacobian, frozen_step, frozen_step_inverse,
                            interpolate_field, push_particles)
from vnslab.spectral import Grid3


def ensemble(x, v, w=None):
    x = np.atleast_2d(np.asarray(x, float))
    v = np.atleast_2d(np.asarray(v, float))
    w = np.full(len(x), 1.0 / len(x)) if w is None else np.asarray(w, float)
    return ParticleEnsemble(x, v, w)


def smooth_u(pos):
    return 0.5 * np.stack([np.sin(pos[:, 1]), np.sin(pos[:, 2]), np.sin(pos[:, 0])], axis=1)


# --- ensemble ------------------------------------------------------------------


def test_ensemble_validation():
    with pytest.raises(ValueError):
        ensemble([[0, 0, 0], [1, 1, 1]], [[0, 0, 0], [0, 0, 0]], [1.5, -0.5])
    with pytest.raises(ValueError):
        ensemble([[0, 0, 0]], [[0, 0, 0]], [0.5])
    with pytest.raises(SimulationAborted):
        ensemble([[np.nan, 0, 0]], [[0, 0, 0]])
    ens = ensemble([[0, 0, 0]], [[1, 0, 0]])
    with pytest.raises(ValueError):
        ens.x[0, 0] = 1.0


def test_weights_are_carried_unchanged(grid16):
    rng = np.random.default_rng(0)
    n = 50
    w = rng.random(n)
    w /= w.sum()
    ens = ensemble(rng.random((n, 3)) * grid16.L, rng.standard_normal((n, 3)), w)
    out = push_particles(ens, rng.standard_normal((3, 16, 16, 16)) * 0.1, 0.01, grid16)
    assert out.w is ens.w


# --- push ----------------------------------------------------------------------


def test_push_zero_field_closed_form():
    x0, v0, dt = np.array([[0.3, -1.0, 2.0]]), np.array([[1.0, -2.0, 0.5]]), 0.37
    out = push_particles(ensemble(x0, v0), None, dt)
    assert np.allclose(out.v, v0 * math.exp(-dt), rtol=0, atol=1e-15)
    assert np.allclose(out.x, x0 + v0 * (1 - math.exp(-dt)), rtol=0, atol=1e-15)


def test_push_constant_field_is_exact():
    U = np.array([0.2, -0.1, 0.4])
    x0, v0 = np.array([[1.0, 2.0, 3.0]]), np.array([[-1.0, 0.0, 2.0]])
    ens = ensemble(x0, v0)
    T, n = 1.3, 7
    for _ in range(n):
        ens = push_particles(ens, lambda p: np.broadcast_to(U, p.shape).copy(), T / n)
    v_ex = U + (v0 - U) * math.exp(-T)
    x_ex = x0 + U * T + (v0 - U) * (1 - math.exp(-T))
    assert np.abs(ens.v - v_ex).max() < 1e-14
    assert np.abs(ens.x - x_ex).max() < 1e-14


def test_zero_field_speed_contracts():
    rng = np.random.default_rng(1)
    ens = ensemble(rng.random((20, 3)), rng.standard_normal((20, 3)))
    out = push_particles(ens, None, 0.1)
    s0 = np.linalg.norm(ens.v, axis=1)
    s1 = np.linalg.norm(out.v, axis=1)
    assert np.all(s1 <= s0 * math.exp(-0.1) * (1 + 1e-14))


def test_push_second_order_in_time():
    x0 = np.array([[0.4, 1.1, -0.7], [2.0, 0.3, 0.9]])
    v0 = np.array([[0.5, -0.2, 0.1], [-1.0, 0.4, 0.7]])
    T = 1.0

    def rhs(_t, y):
        x, v = y[:6].reshape(2, 3), y[6:].reshape(2, 3)
        return np.concatenate([v.ravel(), (smooth_u(x) - v).ravel()])

    ref = integrate.solve_ivp(rhs, (0, T), np.concatenate([x0.ravel(), v0.ravel()]),
                              method="DOP853", rtol=1e-13, atol=1e-14).y[:, -1]
    errs = []
    for n in (10, 20, 40, 80):
        ens = ensemble(x0, v0)
        for _ in range(n):
            ens = push_particles(ens, smooth_u, T / n)
        errs.append(np.abs(np.concatenate([ens.x.ravel(), ens.v.ravel()]) - ref).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.2), orders


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 2), st.floats(1e-3, 1.0))
def test_frozen_step_inverse_roundtrip(x, v, u, dt):
    x1, v1 = frozen_step(np.array([x]), np.array([v]), u, dt)
    x0, v0 = frozen_step_inverse(x1, v1, u, dt)
    assert abs(x0[0] - x) <= 1e-12 * (1 + abs(x) + abs(v) + abs(u))
    assert abs(v0[0] - v) <= 1e-12 * (1 + abs(v) + abs(u))


def test_push_rejects_large_displacement(grid16):
    ens = ensemble([[1.0, 1.0, 1.0]], [[100.0, 0, 0]])
    with pytest.raises(StepRejected):
        push_particles(ens, np.zeros((3, 16, 16, 16)), 0.1, grid16)


def test_push_aborts_on_nan_field(grid16):
    u = np.zeros((3, 16, 16, 16))
    u[0, 3, 3, 3] = np.nan
    with pytest.raises(SimulationAborted):
        push_particles(ensemble([[1.0, 1.0, 1.0]], [[0, 0, 0]]), u, 0.01, grid16)


def test_grid_push_matches_sampler_push(grid16):
    rng = np.random.default_rng(2)
    u = rng.standard_normal((3, 16, 16, 16)) * 0.3
    ens = ensemble(rng.random((200, 3)) * grid16.L, rng.standard_normal((200, 3)))
    a = push_particles(ens, u, 0.02, grid16)
    b = push_particles(ens, lambda p: interpolate_field(grid16, u, p), 0.02, grid16)
    assert np.abs(a.x - b.x).max() < 1e-13 and np.abs(a.v - b.v).max() < 1e-13
    assert np.all((a.x >= 0) & (a.x < grid16.L))


# --- interpolation and deposition ------------------------------------------------


def test_interpolation_exact_at_nodes(grid16):
    rng = np.random.default_rng(3)
    f = rng.standard_normal((16, 16, 16))
    idx = rng.integers(0, 16, size=(30, 3))
    got = interpolate_field(grid16, f, idx * grid16.dx)
    # node coordinates carry rounding from k * dx, so agreement is to roundoff
    assert np.abs(got - f[idx[:, 0], idx[:, 1], idx[:, 2]]).max() < 1e-13


def test_interpolation_reproduces_affine_inside_cell(grid16):
    a, b = np.array([0.3, -1.2, 2.0]), 0.7
    X, Y, Z = grid16.mesh()
    f = b + a[0] * X + a[1] * Y + a[2] * Z
    rng = np.random.default_rng(4)
    pos = rng.random((100, 3)) * (grid16.L - grid16.dx)
    assert np.abs(interpolate_field(grid16, f, pos) - (b + pos @ a)).max() < 1e-12


def test_interpolation_second_order():
    rng = np.random.default_rng(5)
    pos = rng.random((500, 3)) * 2 * np.pi
    errs = []
    for N in (16, 32, 64):
        g = Grid3(2 * np.pi, N)
        X, Y, Z = g.mesh()
        f = np.sin(X) * np.cos(2 * Y) + np.sin(Z)
        exact = np.sin(pos[:, 0]) * np.cos(2 * pos[:, 1]) + np.sin(pos[:, 2])
        errs.append(np.abs(interpolate_field(g, f, pos) - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2) < 0.2), orders


def test_deposit_single_particle_at_node_and_centre(grid16):
    dx = grid16.dx
    m = deposit_moments(ensemble([[2 * dx, 5 * dx, 15 * dx]], [[1.0, 2.0, -1.0]]), grid16, (0, 1, 2))
    vol = grid16.cell_volume
    assert m.rho[2, 5, 15] == pytest.approx(1 / vol, rel=1e-14)
    off = m.rho.copy()
    off[2, 5, 15] = 0.0
    assert off.sum() * vol < 1e-14
    assert np.allclose(m.j[:, 2, 5, 15] * vol, [1.0, 2.0, -1.0], rtol=1e-14)
    assert m.m[2][2, 5, 15] * vol == pytest.approx(6.0, rel=1e-14)
    # cell centre next to the periodic seam: eight equal shares, wrapped
    m = deposit_moments(ensemble([[15.5 * dx, 0.5 * dx, 3.5 * dx]], [[0, 0, 0]]), grid16, (0,))
    share = m.rho[np.ix_([15, 0], [0, 1], [3, 4])] * vol
    assert np.allclose(share, 0.125, rtol=1e-14)


@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20)),
                min_size=1, max_size=40))
def test_stencil_partition_of_unity(points):
    g = Grid3(2 * np.pi, 8)
    idx, wts = cic_stencil(g, np.array(points))
    assert np.all(wts >= -1e-15)
    assert np.allclose(wts.sum(axis=0), 1.0, atol=1e-13)
    assert np.all((idx >= 0) & (idx < 8**3))


@given(st.integers(0, 2**31 - 1))
def test_deposit_interpolate_adjoint_and_mass(seed):
    g = Grid3(2 * np.pi, 8)
    rng = np.random.default_rng(seed)
    n = 30
    w = rng.random(n) + 0.01
    w /= w.sum()
    ens = ensemble(rng.random((n, 3)) * g.L, rng.standard_normal((n, 3)), w)
    f = rng.standard_normal((8, 8, 8))
    m = deposit_moments(ens, g, (0, 1))
    lhs = (m.rho * f).sum() * g.cell_volume
    rhs = w @ interpolate_field(g, f, ens.x)
    assert abs(lhs - rhs) <= 1e-12 * (1 + np.abs(f).max())
    assert m.rho.sum() * g.cell_volume == pytest.approx(1.0, abs=1e-13)
    assert np.allclose(m.j.sum(axis=(1, 2, 3)) * g.cell_volume, w @ ens.v, atol=1e-13)


def test_deposit_rejects_fractional_low_orders(grid16):
    with pytest.raises(ValueError):
        deposit_moments(ensemble([[0, 0, 0]], [[0, 0, 0]]), grid16, (1.5,))


# --- straightening map ------------------------------------------------------------


@pytest.mark.parametrize("U", [(0.0, 0.0, 0.0), (0.3, -0.2, 0.5)])
def test_flow_jacobian_for_constant_fields(U):
    U = np.array(U)
    flow = CharacteristicsFlow(None, dt=0.05)
    flow.record(0.0, lambda p: np.broadcast_to(U, p.shape).copy())
    rng = np.random.default_rng(6)
    x, v = rng.random((10, 3)), rng.standard_normal((10, 3))
    for t in (0.5, 1.0, 2.0):
        det = flow_jacobian(flow, t, x, v)
        assert np.allclose(det, math.exp(3 * t), rtol=1e-7)
        _, v0 = flow.backward(t, x, v)
        assert np.allclose(v0, U + (v - U) * math.exp(t), rtol=1e-12)


def test_flow_jacobian_guards_tiny_difference_step():
    flow = CharacteristicsFlow(None)
    with pytest.raises(ValueError):
        flow_jacobian(flow, 1.0, [0, 0, 0], [1, 0, 0], fd_eps=1e-9)


def test_flow_snapshots_must_increase():
    flow = CharacteristicsFlow(None)
    flow.record(1.0, lambda p: p * 0)
    with pytest.raises(ValueError):
        flow.record(1.0, lambda p: p * 0)


# --- initial kinetic data -----------------------------------------------------------


def test_bump_normalization_and_sup():
    R = 1.7
    b = BumpMaxwellian(R, 0.3)
    mass = integrate.quad(lambda r: 4 * np.pi * r**2 * (1 - r**2 / R**2) ** 2, 0, R)[0]
    assert b.rho0_max() == pytest.approx(1 / mass, rel=1e-12)
    assert b.linf_l1() == b.rho0_max()
    assert BumpMaxwellian(None, 0.3, box=4.0).rho0_max() == pytest.approx(1 / 64)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 3.0, 4.5])
def test_bump_velocity_moments(alpha):
    s = 0.7
    b = BumpMaxwellian(1.0, s)
    dens = lambda r: 4 * np.pi * r**2 * (2 * np.pi * s**2) ** -1.5 * np.exp(-r**2 / (2 * s**2))
    ref = integrate.quad(lambda r: r**alpha * dens(r), 0, np.inf)[0]
    assert b.moment(alpha) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("drift", [(0.0, 0.0, 0.0), (0.5, 0.0, 0.0)])
def test_bump_pointwise_decay(drift):
    s, q = 0.4, 4.0
    b = BumpMaxwellian(2.0, s, drift=drift)
    d = np.linalg.norm(drift)
    c = b.rho0_max() * (2 * np.pi * s**2) ** -1.5
    # candidate maxima along the drift axis, both signs of the speed
    g = lambda r: -(1 + abs(r) ** q) * np.exp(-((r - d) ** 2) / (2 * s**2))
    best = min(optimize.minimize_scalar(g, bounds=(lo, hi), method="bounded",
                                        options={"xatol": 1e-12}).fun
               for lo, hi in ((-5, 0), (0, 5)))
    assert b.pointwise_decay(q) == pytest.approx(-c * best, rel=1e-8)


def test_bump_sampling():
    b = BumpMaxwellian(1.5, 0.2, center=(3.0, 3.0, 3.0), drift=(0.1, 0.0, 0.0))
    ens = b.sample(4000, seed=7, zero_momentum=True)
    assert ens.w.sum() == pytest.approx(1.0, abs=1e-13)
    assert np.allclose(ens.w @ ens.v, [0.1, 0.0, 0.0], atol=1e-14)
    assert np.linalg.norm(ens.x - 3.0, axis=1).max() <= 1.5
    assert np.std(ens.v, axis=0) == pytest.approx([0.2] * 3, rel=0.05)
    again = b.sample(4000, seed=7, zero_momentum=True)
    assert np.array_equal(ens.x, again.x) and np.array_equal(ens.v, again.v)
    # radial law: E|x - c|^2 = 3 R^2 / 9 for the squared bump profile
    r2 = ((ens.x - 3.0) ** 2).sum(axis=1).mean()
    ref = integrate.quad(lambda r: r**4 * (1 - r**2 / 2.25) ** 2, 0, 1.5)[0] / \
        integrate.quad(lambda r: r**2 * (1 - r**2 / 2.25) ** 2, 0, 1.5)[0]
    assert r2 == pytest.approx(ref, rel=0.02)
