"""Lax-Friedrichs fast-sweeping kernels for ``sqrt(p^T A(x) p) = 1`` (first and third order).

``A`` is the inverse metric sampled at the nodes.  The artificial viscosity
per axis is ``sqrt(A_ii)``, which bounds ``|dH/dp_i|`` by Cauchy-Schwarz, so
the update is monotone in every neighbour.  Values only ever decrease
(``u = min(u, u_LF)``), starting from a large constant.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _extrapolate(u_b, u1, u2):
    return min(max(2.0 * u1 - u2, u2), u_b)


@njit(cache=True)
def sweep_2d(u, fixed, a11, a12, a22, h, tol, max_sweeps):
    nx, ny = u.shape
    change = np.inf
    for it in range(max_sweeps):
        change = 0.0
        for order in range(4):
            for ii in range(1, nx - 1):
                i = ii if order & 1 == 0 else nx - 1 - ii
                for jj in range(1, ny - 1):
                    j = jj if order & 2 == 0 else ny - 1 - jj
                    if fixed[i, j]:
                        continue
                    ue = u[i + 1, j]
                    uw = u[i - 1, j]
                    un = u[i, j + 1]
                    us = u[i, j - 1]
                    px = (ue - uw) / (2.0 * h)
                    py = (un - us) / (2.0 * h)
                    q = a11[i, j] * px * px + 2.0 * a12[i, j] * px * py + a22[i, j] * py * py
                    ham = np.sqrt(max(q, 0.0))
                    sx = np.sqrt(a11[i, j])
                    sy = np.sqrt(a22[i, j])
                    new = (1.0 - ham + sx * (ue + uw) / (2.0 * h) + sy * (un + us) / (2.0 * h)) / ((sx + sy) / h)
                    if new < u[i, j]:
                        change = max(change, u[i, j] - new)
                        u[i, j] = new
            for j in range(ny):
                if not fixed[0, j]:
                    u[0, j] = _extrapolate(u[0, j], u[1, j], u[2, j])
                if not fixed[nx - 1, j]:
                    u[nx - 1, j] = _extrapolate(u[nx - 1, j], u[nx - 2, j], u[nx - 3, j])
            for i in range(nx):
                if not fixed[i, 0]:
                    u[i, 0] = _extrapolate(u[i, 0], u[i, 1], u[i, 2])
                if not fixed[i, ny - 1]:
                    u[i, ny - 1] = _extrapolate(u[i, ny - 1], u[i, ny - 2], u[i, ny - 3])
        if change < tol:
            return it + 1, change
    return max_sweeps, change


@njit(cache=True)
def sweep_3d(u, fixed, A, h, tol, max_sweeps):
    nx, ny, nz = u.shape
    change = np.inf
    for it in range(max_sweeps):
        change = 0.0
        for order in range(8):
            for ii in range(1, nx - 1):
                i = ii if order & 1 == 0 else nx - 1 - ii
                for jj in range(1, ny - 1):
                    j = jj if order & 2 == 0 else ny - 1 - jj
                    for kk in range(1, nz - 1):
                        k = kk if order & 4 == 0 else nz - 1 - kk
                        if fixed[i, j, k]:
                            continue
                        p0 = (u[i + 1, j, k] - u[i - 1, j, k]) / (2.0 * h)
                        p1 = (u[i, j + 1, k] - u[i, j - 1, k]) / (2.0 * h)
                        p2 = (u[i, j, k + 1] - u[i, j, k - 1]) / (2.0 * h)
                        a = A[i, j, k]
                        q = (
                            a[0, 0] * p0 * p0
                            + a[1, 1] * p1 * p1
                            + a[2, 2] * p2 * p2
                            + 2.0 * (a[0, 1] * p0 * p1 + a[0, 2] * p0 * p2 + a[1, 2] * p1 * p2)
                        )
                        ham = np.sqrt(max(q, 0.0))
                        s0 = np.sqrt(a[0, 0])
                        s1 = np.sqrt(a[1, 1])
                        s2 = np.sqrt(a[2, 2])
                        num = (
                            1.0
                            - ham
                            + s0 * (u[i + 1, j, k] + u[i - 1, j, k]) / (2.0 * h)
                            + s1 * (u[i, j + 1, k] + u[i, j - 1, k]) / (2.0 * h)
                            + s2 * (u[i, j, k + 1] + u[i, j, k - 1]) / (2.0 * h)
                        )
                        new = num / ((s0 + s1 + s2) / h)
                        if new < u[i, j, k]:
                            change = max(change, u[i, j, k] - new)
                            u[i, j, k] = new
            for a_ in range(ny):
                for b_ in range(nz):
                    if not fixed[0, a_, b_]:
                        u[0, a_, b_] = _extrapolate(u[0, a_, b_], u[1, a_, b_], u[2, a_, b_])
                    if not fixed[nx - 1, a_, b_]:
                        u[nx - 1, a_, b_] = _extrapolate(u[nx - 1, a_, b_], u[nx - 2, a_, b_], u[nx - 3, a_, b_])
            for a_ in range(nx):
                for b_ in range(nz):
                    if not fixed[a_, 0, b_]:
                        u[a_, 0, b_] = _extrapolate(u[a_, 0, b_], u[a_, 1, b_], u[a_, 2, b_])
                    if not fixed[a_, ny - 1, b_]:
                        u[a_, ny - 1, b_] = _extrapolate(u[a_, ny - 1, b_], u[a_, ny - 2, b_], u[a_, ny - 3, b_])
            for a_ in range(nx):
                for b_ in range(ny):
                    if not fixed[a_, b_, 0]:
                        u[a_, b_, 0] = _extrapolate(u[a_, b_, 0], u[a_, b_, 1], u[a_, b_, 2])
                    if not fixed[a_, b_, nz - 1]:
                        u[a_, b_, nz - 1] = _extrapolate(u[a_, b_, nz - 1], u[a_, b_, nz - 2], u[a_, b_, nz - 3])
        if change < tol:
            return it + 1, change
    return max_sweeps, change


# Third-order WENO Lax-Friedrichs sweeping.  The iteration is no longer
# monotone, so it is seeded with the converged first-order solution and the
# ``min`` is dropped.  Two face layers are refreshed by linear extrapolation.

_WENO_EPS = 1e-6


@njit(cache=True)
def _d_minus(um2, um1, u0, up1):
    r = (_WENO_EPS + (u0 - 2.0 * um1 + um2) ** 2) / (_WENO_EPS + (up1 - 2.0 * u0 + um1) ** 2)
    w = 1.0 / (1.0 + 2.0 * r * r)
    return (1.0 - w) * 0.5 * (up1 - um1) + w * 0.5 * (3.0 * u0 - 4.0 * um1 + um2)


@njit(cache=True)
def _d_plus(um1, u0, up1, up2):
    r = (_WENO_EPS + (u0 - 2.0 * up1 + up2) ** 2) / (_WENO_EPS + (up1 - 2.0 * u0 + um1) ** 2)
    w = 1.0 / (1.0 + 2.0 * r * r)
    return (1.0 - w) * 0.5 * (up1 - um1) + w * 0.5 * (-3.0 * u0 + 4.0 * up1 - up2)


@njit(cache=True)
def weno_2d(u, fixed, a11, a12, a22, h, tol, max_sweeps):
    nx, ny = u.shape
    change = np.inf
    for it in range(max_sweeps):
        change = 0.0
        for order in range(4):
            for ii in range(2, nx - 2):
                i = ii if order & 1 == 0 else nx - 1 - ii
                for jj in range(2, ny - 2):
                    j = jj if order & 2 == 0 else ny - 1 - jj
                    if fixed[i, j]:
                        continue
                    pxm = _d_minus(u[i - 2, j], u[i - 1, j], u[i, j], u[i + 1, j]) / h
                    pxp = _d_plus(u[i - 1, j], u[i, j], u[i + 1, j], u[i + 2, j]) / h
                    pym = _d_minus(u[i, j - 2], u[i, j - 1], u[i, j], u[i, j + 1]) / h
                    pyp = _d_plus(u[i, j - 1], u[i, j], u[i, j + 1], u[i, j + 2]) / h
                    px = 0.5 * (pxm + pxp)
                    py = 0.5 * (pym + pyp)
                    q = a11[i, j] * px * px + 2.0 * a12[i, j] * px * py + a22[i, j] * py * py
                    ham = np.sqrt(max(q, 0.0))
                    sx = np.sqrt(a11[i, j])
                    sy = np.sqrt(a22[i, j])
                    new = u[i, j] + (1.0 - ham + 0.5 * sx * (pxp - pxm) + 0.5 * sy * (pyp - pym)) * h / (sx + sy)
                    change = max(change, abs(new - u[i, j]))
                    u[i, j] = new
            for j in range(ny):
                if not fixed[1, j]:
                    u[1, j] = 2.0 * u[2, j] - u[3, j]
                if not fixed[0, j]:
                    u[0, j] = 2.0 * u[1, j] - u[2, j]
                if not fixed[nx - 2, j]:
                    u[nx - 2, j] = 2.0 * u[nx - 3, j] - u[nx - 4, j]
                if not fixed[nx - 1, j]:
                    u[nx - 1, j] = 2.0 * u[nx - 2, j] - u[nx - 3, j]
            for i in range(nx):
                if not fixed[i, 1]:
                    u[i, 1] = 2.0 * u[i, 2] - u[i, 3]
                if not fixed[i, 0]:
                    u[i, 0] = 2.0 * u[i, 1] - u[i, 2]
                if not fixed[i, ny - 2]:
                    u[i, ny - 2] = 2.0 * u[i, ny - 3] - u[i, ny - 4]
                if not fixed[i, ny - 1]:
                    u[i, ny - 1] = 2.0 * u[i, ny - 2] - u[i, ny - 3]
        if change < tol:
            return it + 1, change
    return max_sweeps, change


@njit(cache=True)
def _extrap_line(u, fixed, idx0, idx1, idx2, idx3):
    # refresh two face layers along one axis: u[idx1] from idx2, idx3; u[idx0] from idx1, idx2
    if not fixed[idx1]:
        u[idx1] = 2.0 * u[idx2] - u[idx3]
    if not fixed[idx0]:
        u[idx0] = 2.0 * u[idx1] - u[idx2]


@njit(cache=True)
def weno_3d(u, fixed, A, h, tol, max_sweeps):
    nx, ny, nz = u.shape
    change = np.inf
    for it in range(max_sweeps):
        change = 0.0
        for order in range(8):
            for ii in range(2, nx - 2):
                i = ii if order & 1 == 0 else nx - 1 - ii
                for jj in range(2, ny - 2):
                    j = jj if order & 2 == 0 else ny - 1 - jj
                    for kk in range(2, nz - 2):
                        k = kk if order & 4 == 0 else nz - 1 - kk
                        if fixed[i, j, k]:
                            continue
                        c = u[i, j, k]
                        m0 = _d_minus(u[i - 2, j, k], u[i - 1, j, k], c, u[i + 1, j, k]) / h
                        p0 = _d_plus(u[i - 1, j, k], c, u[i + 1, j, k], u[i + 2, j, k]) / h
                        m1 = _d_minus(u[i, j - 2, k], u[i, j - 1, k], c, u[i, j + 1, k]) / h
                        p1 = _d_plus(u[i, j - 1, k], c, u[i, j + 1, k], u[i, j + 2, k]) / h
                        m2 = _d_minus(u[i, j, k - 2], u[i, j, k - 1], c, u[i, j, k + 1]) / h
                        p2 = _d_plus(u[i, j, k - 1], c, u[i, j, k + 1], u[i, j, k + 2]) / h
                        q0 = 0.5 * (m0 + p0)
                        q1 = 0.5 * (m1 + p1)
                        q2 = 0.5 * (m2 + p2)
                        a = A[i, j, k]
                        q = (
                            a[0, 0] * q0 * q0
                            + a[1, 1] * q1 * q1
                            + a[2, 2] * q2 * q2
                            + 2.0 * (a[0, 1] * q0 * q1 + a[0, 2] * q0 * q2 + a[1, 2] * q1 * q2)
                        )
                        ham = np.sqrt(max(q, 0.0))
                        s0 = np.sqrt(a[0, 0])
                        s1 = np.sqrt(a[1, 1])
                        s2 = np.sqrt(a[2, 2])
                        visc = 0.5 * (s0 * (p0 - m0) + s1 * (p1 - m1) + s2 * (p2 - m2))
                        new = c + (1.0 - ham + visc) * h / (s0 + s1 + s2)
                        change = max(change, abs(new - c))
                        u[i, j, k] = new
            for a_ in range(ny):
                for b_ in range(nz):
                    _extrap_line(u, fixed, (0, a_, b_), (1, a_, b_), (2, a_, b_), (3, a_, b_))
                    _extrap_line(u, fixed, (nx - 1, a_, b_), (nx - 2, a_, b_), (nx - 3, a_, b_), (nx - 4, a_, b_))
            for a_ in range(nx):
                for b_ in range(nz):
                    _extrap_line(u, fixed, (a_, 0, b_), (a_, 1, b_), (a_, 2, b_), (a_, 3, b_))
                    _extrap_line(u, fixed, (a_, ny - 1, b_), (a_, ny - 2, b_), (a_, ny - 3, b_), (a_, ny - 4, b_))
            for a_ in range(nx):
                for b_ in range(ny):
                    _extrap_line(u, fixed, (a_, b_, 0), (a_, b_, 1), (a_, b_, 2), (a_, b_, 3))
                    _extrap_line(u, fixed, (a_, b_, nz - 1), (a_, b_, nz - 2), (a_, b_, nz - 3), (a_, b_, nz - 4))
        if change < tol:
            return it + 1, change
    return max_sweeps, change
