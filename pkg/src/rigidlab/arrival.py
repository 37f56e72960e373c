"""First-arrival function ``alpha_omega`` on a grid, by shooting and by sweeping.

``alpha_omega(x)`` is ``-1`` plus the Riemannian distance from the plane
``x . omega = -1`` to ``x``.  Two independent routes:

* shooting: integrate a dense fan of omega-geodesics and keep, per cell, the
  earliest time a ray passes within half a cell (corrected to the node with
  the local gradient ``g x'``);
* sweeping: Lax-Friedrichs fast sweeping for ``sqrt(p^T g^{-1} p) = 1``,
  first order, optionally followed by third-order WENO sweeps.

Both fix ``alpha = x . omega`` on the inflow collar ``x . omega <= -1 + delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import binary_dilation
from sklearn.base import BaseEstimator

from . import io
from ._sweep import sweep_2d, sweep_3d, weno_2d, weno_3d
from ._validation import check_points, check_positive, check_unit_vector
from .geodesics import advance, orthonormal_complement
from .media import compute_bounds
from .stencil import Grid, centered_gradient

KINK_THRESHOLD = 0.1
SMOOTH_MARGIN = 2


class ArrivalError(RuntimeError):
    """Raised on a fan too coarse to reach the ball, or a sweep that will not converge.

    ``field`` carries the partial result for diagnosis.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


def default_grid(dimension, h=None):
    """``[-1.5, 1.5]^n`` with 201 points per axis in 2D and 101 in 3D."""
    if h is None:
        h = 1.5 / 100 if dimension == 2 else 1.5 / 50
    return Grid(dimension, 1.5, h)


@dataclass
class ArrivalField:
    omega: np.ndarray
    grid: Grid
    alpha: np.ndarray
    method: str
    reached: np.ndarray
    medium: object = field(repr=False, default=None)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grad_alpha = centered_gradient(np.where(self.reached, self.alpha, np.nan), self.grid.h)
        self.kinks = kink_mask(self.alpha, self.grid.h, self.reached)
        self.smooth = smooth_mask(self.reached, self.kinks)
        if self.medium is not None:
            self.residual = np.abs(eikonal_residual_field(self, self.medium))
        else:
            self.residual = np.full(self.alpha.shape, np.nan)

    def predict(self, X):
        """Linear interpolation of alpha at arbitrary points."""
        X = check_points(X, self.grid.dimension)
        axes = (self.grid.axis,) * self.grid.dimension
        f = RegularGridInterpolator(axes, np.where(self.reached, self.alpha, np.nan), bounds_error=False)
        return f(X)

    def collar_mask(self, delta=None):
        if delta is None:
            delta = self.medium.delta if self.medium is not None else 0.1
        return self.grid.points() @ self.omega <= -1.0 + delta + 1e-12

    def to_rows(self):
        P = self.grid.points().reshape(-1, self.grid.dimension)
        cols = (
            self.alpha.ravel(),
            self.residual.ravel(),
            self.reached.ravel(),
            self.kinks.ravel(),
            self.smooth.ravel(),
        )
        for p, a, r, re, k, s in zip(P, *cols):
            yield (*p, a if re else math.nan, r, re, k, s)

    def to_csv(self, path):
        names = ["x", "y", "z"][: self.grid.dimension]
        header = [
            f"method={self.method}",
            f"omega={','.join(repr(float(w)) for w in self.omega)}",
            f"h={self.grid.h!r} half_width={self.grid.half_width!r}",
        ]
        cols = names + ["alpha", "residual", "reached", "kink", "smooth"]
        return io.write_csv(path, cols, self.to_rows(), header)

    def to_pgm(self, path):
        return io.write_pgm(path, np.where(self.reached, self.alpha, np.nan))


def kink_mask(alpha, h, reached=None):
    """Cells whose forward and backward one-sided gradients differ by more than the threshold.

    Face cells cannot be tested and are flagged too.
    """
    a = np.asarray(alpha, dtype=float)
    n = a.ndim
    jump2 = np.zeros(a.shape)
    flags = np.zeros(a.shape, dtype=bool)
    for i in range(n):
        fwd = np.full(a.shape, np.nan)
        bwd = np.full(a.shape, np.nan)
        sl_in = [slice(None)] * n
        sl_in[i] = slice(1, -1)
        sl_in = tuple(sl_in)
        with np.errstate(invalid="ignore"):  # unreached cells hold inf
            d = np.diff(a, axis=i) / h
        lo = [slice(None)] * n
        hi = [slice(None)] * n
        lo[i] = slice(None, -1)
        hi[i] = slice(1, None)
        fwd[tuple(lo)] = d
        bwd[tuple(hi)] = d
        with np.errstate(invalid="ignore"):
            jump2 += (fwd - bwd) ** 2
        face = np.ones(a.shape, dtype=bool)
        face[sl_in] = False
        flags |= face
    with np.errstate(invalid="ignore"):
        flags |= ~(np.sqrt(jump2) <= KINK_THRESHOLD)
    if reached is not None:
        flags &= reached
    return flags


def smooth_mask(reached, kinks, margin=SMOOTH_MARGIN):
    """Reached cells at Chebyshev distance > ``margin`` cells from any kink or unreached cell."""
    bad = kinks | ~reached
    structure = np.ones((3,) * reached.ndim, dtype=bool)
    if margin > 0 and bad.any():
        bad = binary_dilation(bad, structure=structure, iterations=margin)
    return reached & ~bad


def eikonal_residual_field(field, medium):
    """Signed ``(grad alpha)^T g^{-1} (grad alpha) - 1`` per cell (NaN where undefined)."""
    Ginv = medium.metric_inverse(field.grid.points())
    p = field.grad_alpha
    return np.einsum("...i,...ij,...j->...", p, Ginv, p) - 1.0


@dataclass(frozen=True)
class ResidualStats:
    linf: float
    l2: float
    rms: float
    cells: int

    def as_dict(self):
        return {"linf": self.linf, "l2": self.l2, "rms": self.rms, "cells": self.cells}


def eikonal_residual(field, medium=None, mask=None):
    """L-infinity and L2 (``sqrt(sum r^2 h^n)``) of the eikonal residual over smooth cells."""
    medium = medium if medium is not None else field.medium
    r = eikonal_residual_field(field, medium)
    sel = field.smooth if mask is None else (field.smooth & mask)
    vals = r[sel]
    if vals.size == 0:
        return ResidualStats(math.nan, math.nan, math.nan, 0)
    hn = field.grid.h**field.grid.dimension
    return ResidualStats(
        float(np.max(np.abs(vals))),
        float(np.sqrt(np.sum(vals**2) * hn)),
        float(np.sqrt(np.mean(vals**2))),
        int(vals.size),
    )


def _check_grid(grid, omega):
    if grid.half_width < 1.0:
        raise ValueError(f"grid half width {grid.half_width} does not cover the closed unit ball")
    if grid.dimension != len(omega):
        raise ValueError("grid and omega dimensions differ")


def _ball_mask(grid):
    return grid.radius() <= 1.0 + 1e-12


def default_horizon(grid, g_max):
    """Late enough that rays sweep past the far corner of the grid."""
    return grid.half_width * math.sqrt(grid.dimension) + 2.0 * (math.sqrt(g_max) - 1.0) + 0.5


def _shoot(medium, omega, coords, basis, grid, T, dt, alpha, keep):
    """Stream a batch of rays, min-depositing into ``alpha`` (flat).

    With ``keep`` the positions are returned as ``(steps + 1, rays, n)``.
    """
    h, hw, n = grid.h, grid.half_width, grid.dimension
    N = grid.points_per_axis
    strides = np.array([N ** (n - 1 - i) for i in range(n)])
    X = -omega + coords @ basis
    V = np.broadcast_to(omega, X.shape).copy()
    steps = int(math.ceil((T + 1.0) / dt - 1e-9))
    track = [X.copy()] if keep else None
    t = -1.0
    for s in range(steps + 1):
        if s > 0:
            step = min(dt, T - t)
            X, V = advance(medium, X, V, step)
            t = t + step
            if keep:
                track.append(X.copy())
        idx = np.rint((X + hw) / h).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < N), axis=1)
        if not inside.any():
            continue
        xi, vi, ii = X[inside], V[inside], idx[inside]
        node = ii * h - hw
        gv = np.einsum("rij,rj->ri", medium.metric(xi), vi)
        value = t + np.einsum("ri,ri->r", gv, node - xi)
        np.minimum.at(alpha, ii @ strides, value)
    return np.stack(track) if keep else None


def _gaps(track_a, track_b, half_width):
    """Largest separation of paired rays over the samples where either is inside the box."""
    inside = np.all(np.abs(track_a) <= half_width, axis=-1) | np.all(np.abs(track_b) <= half_width, axis=-1)
    sep = np.linalg.norm(track_a - track_b, axis=-1)
    return np.where(inside, sep, 0.0).max(axis=0)


def arrival_by_shooting(
    medium, omega, grid=None, fan_spacing=None, horizon=None, dt=None, bounds=None, max_gap=None, max_levels=8, max_rays=100_000
):
    """Per-cell minimum arrival time over a fan of omega-geodesics.

    In 2D the fan is refined adaptively: a ray is inserted between any two
    neighbours that drift more than ``max_gap`` (default ``h/2``) apart inside
    the grid, for at most ``max_levels`` rounds and ``max_rays`` rays.
    """
    omega = check_unit_vector(omega, medium.dimension)
    grid = default_grid(medium.dimension) if grid is None else grid
    _check_grid(grid, omega)
    h = grid.h
    n = grid.dimension
    bounds = compute_bounds(medium) if bounds is None else bounds
    T = default_horizon(grid, bounds.g_max) if horizon is None else float(horizon)
    if fan_spacing is None:
        fan_spacing = h / 4 if n == 2 else h / 2
    dt = h / 2 if dt is None else dt
    max_gap = h / 2 if max_gap is None else max_gap
    check_positive("fan_spacing", fan_spacing)
    check_positive("dt", dt)

    # lateral extent: every grid point projects inside this cube of omega-perp coordinates
    basis = orthonormal_complement(omega)
    lateral = grid.half_width * math.sqrt(n) + 2 * h
    k = int(math.ceil(lateral / fan_spacing))
    ticks = np.arange(-k, k + 1) * fan_spacing
    coords = np.stack(np.meshgrid(*([ticks] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)

    alpha = np.full(grid.points_per_axis**n, np.inf)
    adaptive = n == 2 and not medium.is_euclidean
    track = _shoot(medium, omega, coords, basis, grid, T, dt, alpha, keep=adaptive)
    total, levels, open_gaps = len(coords), 0, 0
    if adaptive:
        c = coords[:, 0]
        gap = _gaps(track[:, :-1], track[:, 1:], grid.half_width)
        while True:
            bad = np.flatnonzero(gap > max_gap)
            open_gaps = len(bad)
            if open_gaps == 0 or levels >= max_levels or total + open_gaps > max_rays:
                break
            mid = 0.5 * (c[bad] + c[bad + 1])
            new = _shoot(medium, omega, mid[:, None], basis, grid, T, dt, alpha, keep=True)
            total += open_gaps
            levels += 1
            # interleave: each new ray sits between rays bad and bad + 1
            c = np.insert(c, bad + 1, mid)
            track = np.insert(track, bad + 1, new, axis=1)
            left = _gaps(track[:, bad + np.arange(open_gaps)], new, grid.half_width)
            right = _gaps(new, track[:, bad + np.arange(open_gaps) + 2], grid.half_width)
            gap = np.insert(gap, bad + 1, 0.0)
            pos = bad + np.arange(open_gaps)
            gap[pos] = left
            gap[pos + 1] = right
        del track
    alpha = alpha.reshape(grid.shape)

    collar = grid.points() @ omega <= -1.0 + medium.delta + 1e-12
    alpha[collar] = (grid.points() @ omega)[collar]
    reached = np.isfinite(alpha)
    info = {
        "horizon": T,
        "fan_spacing": fan_spacing,
        "dt": dt,
        "rays": total,
        "refinement_levels": levels,
        "open_gaps": open_gaps,
        "unreached": int((~reached).sum()),
    }
    out = ArrivalField(omega, grid, alpha, "shooting", reached, medium, info)
    bound = 2.0 * math.sqrt(bounds.g_max) - 1.0
    missing = int((~reached & _ball_mask(grid)).sum())
    if missing and T > bound:
        raise ArrivalError(f"{missing} cells of the closed unit ball unreached with T={T:g} > {bound:.4g}; fan too coarse", out)
    return out


def inflow_faces(grid, omega, layers=2):
    """The outer ``layers`` of every box face with ``omega . n_out < 0``."""
    mask = np.zeros(grid.shape, dtype=bool)
    for i, w in enumerate(omega):
        sl = [slice(None)] * grid.dimension
        if w > 1e-12:
            sl[i] = slice(0, layers)
        elif w < -1e-12:
            sl[i] = slice(-layers, None)
        else:
            continue
        mask[tuple(sl)] = True
    return mask


def arrival_by_sweeping(medium, omega, grid=None, tol=1e-10, max_sweeps=500, order=3, bounds=None):
    """Lax-Friedrichs fast sweeping with Dirichlet data ``x . omega`` on the inflow
    collar and the inflow box faces; outflow faces are extrapolated one-sidedly.

    ``order=1`` is the monotone first-order scheme.  ``order=3`` reuses it as
    the seed for WENO3 sweeps under the same LF numerical Hamiltonian.
    """
    omega = check_unit_vector(omega, medium.dimension)
    grid = default_grid(medium.dimension) if grid is None else grid
    _check_grid(grid, omega)
    n = grid.dimension
    if n not in (2, 3):
        raise ValueError("sweeping is implemented for n = 2 and n = 3")
    if order not in (1, 3):
        raise ValueError("order must be 1 or 3")
    bounds = compute_bounds(medium) if bounds is None else bounds
    P = grid.points()
    plane = P @ omega
    if plane.min() > -1.0:
        raise ValueError("grid has no inflow collar reaching x . omega <= -1")
    fixed = (plane <= -1.0 + medium.delta + 1e-12) | inflow_faces(grid, omega)
    big = 2.0 * math.sqrt(bounds.g_max) * 2.0 * grid.half_width * math.sqrt(n) + 1.0
    u = np.where(fixed, plane, big)
    A = np.ascontiguousarray(medium.metric_inverse(P))
    if n == 2:
        coeffs = (A[..., 0, 0].copy(), A[..., 0, 1].copy(), A[..., 1, 1].copy())
        first, third = (lambda: sweep_2d(u, fixed, *coeffs, grid.h, tol, max_sweeps)), (
            lambda: weno_2d(u, fixed, *coeffs, grid.h, tol, max_sweeps)
        )
    else:
        first, third = (lambda: sweep_3d(u, fixed, A, grid.h, tol, max_sweeps)), (
            lambda: weno_3d(u, fixed, A, grid.h, tol, max_sweeps)
        )
    sweeps, change = first()
    info = {"order": order, "sweeps_first_order": int(sweeps), "tol": tol}
    if change < tol and order == 3:
        sweeps, change = third()
        info["sweeps_weno"] = int(sweeps)
    info["last_update"] = float(change)
    reached = np.ones(grid.shape, dtype=bool)
    out = ArrivalField(omega, grid, u, "sweeping", reached, medium, info)
    if change >= tol:
        raise ArrivalError(f"sweeping did not converge in {max_sweeps} sweeps (last update {change:.3g})", out)
    return out


def gradient_matches_geodesic_velocity(field, medium, fan, smooth_only=True):
    """Compare ``g^{-1} grad alpha`` with the ray velocity at every fan sample inside the grid.

    Returns max angle (radians) and max Euclidean norm of the difference.
    """
    grid = field.grid
    X = fan.X.reshape(-1, grid.dimension)
    V = fan.V.reshape(-1, grid.dimension)
    idx = np.rint((X + grid.half_width) / grid.h).astype(int)
    N = grid.points_per_axis
    keep = np.all((idx >= 1) & (idx < N - 1), axis=1)
    if smooth_only:
        keep[keep] = field.smooth[tuple(idx[keep].T)]
    X, V = X[keep], V[keep]
    if len(X) == 0:
        return {"samples": 0, "max_angle": math.nan, "max_deviation": math.nan}
    axes = (grid.axis,) * grid.dimension
    grads = np.stack(
        [RegularGridInterpolator(axes, field.grad_alpha[..., i])(X) for i in range(grid.dimension)], axis=-1
    )
    U = np.einsum("rij,rj->ri", medium.metric_inverse(X), grads)
    cos = np.einsum("ri,ri->r", U, V) / (np.linalg.norm(U, axis=1) * np.linalg.norm(V, axis=1))
    angle = np.arccos(np.clip(cos, -1.0, 1.0))
    dev = np.linalg.norm(U - V, axis=1)
    return {"samples": int(len(X)), "max_angle": float(angle.max()), "max_deviation": float(dev.max())}


def monotone_along_rays(field, fan):
    """Whether interpolated alpha increases strictly along every ray inside the grid.

    Only samples a full cell apart in ``t`` are compared, so interpolation
    noise below the step cannot register as a decrease.
    """
    grid = field.grid
    stride = max(1, int(math.ceil(2 * grid.h / fan.dt)))
    Xs = fan.X[::stride]
    vals = field.predict(Xs.reshape(-1, grid.dimension)).reshape(Xs.shape[:2])
    d = np.diff(vals, axis=0)
    ok = np.isfinite(d)
    worst = float(d[ok].min()) if ok.any() else math.nan
    return bool(np.all(d[ok] > 0)), worst


def lipschitz_excess(field, g_max, slack=None):
    """Largest ``|alpha(y) - alpha(x)| - sqrt(g_max) |y - x|`` over axis neighbours, minus the slack."""
    h = field.grid.h
    slack = 2 * h if slack is None else slack
    a = np.where(field.reached, field.alpha, np.nan)
    worst = -math.inf
    for i in range(field.grid.dimension):
        d = np.abs(np.diff(a, axis=i))
        d = d[np.isfinite(d)]
        if d.size:
            worst = max(worst, float(d.max()) - math.sqrt(g_max) * h - slack)
    return worst


def arrival_difference(a, b, mask=None):
    """L-infinity difference over the cells smooth in both fields."""
    sel = a.smooth & b.smooth
    if mask is not None:
        sel &= mask
    if not sel.any():
        return math.nan
    return float(np.max(np.abs(a.alpha[sel] - b.alpha[sel])))


class _ArrivalBase(BaseEstimator):
    def predict(self, X):
        return self.field_.predict(X)

    def residual(self):
        return eikonal_residual(self.field_, self.medium_)

    def _grid(self, medium):
        if self.h is None:
            return default_grid(medium.dimension)
        return Grid(medium.dimension, self.half_width, self.h)


class ShootingArrival(_ArrivalBase):
    """Estimator wrapper: ``fit(medium)`` computes ``field_`` by shooting."""

    def __init__(self, omega=(1.0, 0.0), h=None, half_width=1.5, fan_spacing=None, horizon=None, dt=None):
        self.omega = omega
        self.h = h
        self.half_width = half_width
        self.fan_spacing = fan_spacing
        self.horizon = horizon
        self.dt = dt

    def fit(self, medium, y=None):
        self.medium_ = medium
        self.field_ = arrival_by_shooting(
            medium, self.omega, self._grid(medium), self.fan_spacing, self.horizon, self.dt
        )
        return self


class SweepingArrival(_ArrivalBase):
    """Estimator wrapper: ``fit(medium)`` computes ``field_`` by LF fast sweeping."""

    def __init__(self, omega=(1.0, 0.0), h=None, half_width=1.5, tol=1e-10, max_sweeps=500, order=3):
        self.omega = omega
        self.order = order
        self.h = h
        self.half_width = half_width
        self.tol = tol
        self.max_sweeps = max_sweeps

    def fit(self, medium, y=None):
        self.medium_ = medium
        self.field_ = arrival_by_sweeping(
            medium, self.omega, self._grid(medium), self.tol, self.max_sweeps, self.order
        )
        return self
