"""Compiled trilinear interpolation and deposition kernels.

Loops run sequentially over particles, so deposition sums are accumulated
in a fixed order and results are reproducible bit for bit.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _corner(s, n):
    i = int(np.floor(s))
    f = s - i
    if i >= n or i < 0:
        i = i % n
    j = i + 1
    if j == n:
        j = 0
    return i, j, f


@njit(cache=True)
def interpolate(fields, pos, dx, out):
    """``fields``: (c, N, N, N); ``pos``: (m, 3); ``out``: (m, c)."""
    c = fields.shape[0]
    n = fields.shape[1]
    for p in range(pos.shape[0]):
        i0, i1, fx = _corner(pos[p, 0] / dx, n)
        j0, j1, fy = _corner(pos[p, 1] / dx, n)
        k0, k1, fz = _corner(pos[p, 2] / dx, n)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for a in range(c):
            out[p, a] = (
                gx * (gy * (gz * fields[a, i0, j0, k0] + fz * fields[a, i0, j0, k1])
                      + fy * (gz * fields[a, i0, j1, k0] + fz * fields[a, i0, j1, k1]))
                + fx * (gy * (gz * fields[a, i1, j0, k0] + fz * fields[a, i1, j0, k1])
                        + fy * (gz * fields[a, i1, j1, k0] + fz * fields[a, i1, j1, k1]))
            )


@njit(cache=True)
def deposit(pos, values, dx, out):
    """Scatter ``values`` (m, c) with trilinear weights into ``out`` (c, N, N, N)."""
    c = values.shape[1]
    n = out.shape[1]
    for p in range(pos.shape[0]):
        i0, i1, fx = _corner(pos[p, 0] / dx, n)
        j0, j1, fy = _corner(pos[p, 1] / dx, n)
        k0, k1, fz = _corner(pos[p, 2] / dx, n)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        for a in range(c):
            q = values[p, a]
            out[a, i0, j0, k0] += gx * gy * gz * q
            out[a, i0, j0, k1] += gx * gy * fz * q
            out[a, i0, j1, k0] += gx * fy * gz * q
            out[a, i0, j1, k1] += gx * fy * fz * q
            out[a, i1, j0, k0] += fx * gy * gz * q
            out[a, i1, j0, k1] += fx * gy * fz * q
            out[a, i1, j1, k0] += fx * fy * gz * q
            out[a, i1, j1, k1] += fx * fy * fz * q


@njit(cache=True)
def _sample(fields, x0, x1, x2, dx, n, out):
    i0, i1, fx = _corner(x0 / dx, n)
    j0, j1, fy = _corner(x1 / dx, n)
    k0, k1, fz = _corner(x2 / dx, n)
    gx = 1.0 - fx
    gy = 1.0 - fy
    gz = 1.0 - fz
    for a in range(3):
        out[a] = (
            gx * (gy * (gz * fields[a, i0, j0, k0] + fz * fields[a, i0, j0, k1])
                  + fy * (gz * fields[a, i0, j1, k0] + fz * fields[a, i0, j1, k1]))
            + fx * (gy * (gz * fields[a, i1, j0, k0] + fz * fields[a, i1, j0, k1])
                    + fy * (gz * fields[a, i1, j1, k0] + fz * fields[a, i1, j1, k1]))
        )


@njit(cache=True)
def _wrap(y, L):
    if y < 0.0 or y >= L:
        y = y % L
        if y >= L:
            y = 0.0
    return y


@njit(cache=True)
def push(fields, x, v, dx, L, dt, x_out, v_out):
    """Midpoint-frozen exponential push in a grid velocity field.

    Returns the largest displacement component.
    """
    n = fields.shape[1]
    eh = np.expm1(-dt / 2)
    e1 = np.exp(-dt)
    em = np.expm1(-dt)
    u0 = np.empty(3)
    us = np.empty(3)
    xm = np.empty(3)
    dmax = 0.0
    for p in range(x.shape[0]):
        _sample(fields, x[p, 0], x[p, 1], x[p, 2], dx, n, u0)
        for a in range(3):
            xm[a] = _wrap(x[p, a] + u0[a] * (dt / 2) - (v[p, a] - u0[a]) * eh, L)
        _sample(fields, xm[0], xm[1], xm[2], dx, n, us)
        for a in range(3):
            rel = v[p, a] - us[a]
            v_out[p, a] = us[a] + rel * e1
            d = us[a] * dt - rel * em
            if abs(d) > dmax:
                dmax = abs(d)
            x_out[p, a] = _wrap(x[p, a] + d, L)
    return dmax
