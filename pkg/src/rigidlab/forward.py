"""Plane-wave initial value problem: leapfrog solver, boundary traces, energy.

Solves ``w U_tt = sum_ij d_i(A_ij d_j U)`` (``w = m sqrt(det g)``) on the box
``[-R, R]^n`` from ``t0 = -1 - eps``, starting from the exact incoming wave
``U = H_eps(t - x . omega)`` and holding the box faces at that same exact
wave.  Scattering is confined to the unit ball and waves outside it move at
unit speed, so with ``R >= (T + 3)/2 + eps + 2h`` nothing reflected by the
faces returns to the unit sphere before ``T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import cumulative_simpson
from sklearn.base import BaseEstimator

from . import io
from ._validation import check_positive, check_unit_vector
from .media import compute_bounds
from .stencil import FluxOperator, Grid

log = logging.getLogger(__name__)

BLOWUP = 10.0


class ConfigError(ValueError):
    """A wave configuration breaks one of its named constraints."""


class InstabilityError(RuntimeError):
    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


# ----------------------------------------------------------------------------
# mollified Heaviside


@lru_cache(maxsize=1)
def _bump_cdf_table(points=40001):
    u = np.linspace(-1.0, 1.0, points)
    with np.errstate(divide="ignore", over="ignore"):
        phi = np.where(np.abs(u) < 1.0, np.exp(-1.0 / np.maximum(1.0 - u * u, 1e-300)), 0.0)
    cdf = cumulative_simpson(phi, x=u, initial=0.0)
    # Simpson's partial sums can dip by rounding-sized amounts in the flat tails
    cdf = np.maximum.accumulate(cdf)
    return u, cdf / cdf[-1]


def mollified_heaviside(s, eps):
    """``H_eps(s)``: integral of the normalised standard bump of half-width ``eps``.

    Smooth, exactly 0 for ``s <= -eps`` and exactly 1 for ``s >= eps``.
    """
    u, cdf = _bump_cdf_table()
    return np.interp(np.asarray(s, dtype=float) / eps, u, cdf, left=0.0, right=1.0)


# ----------------------------------------------------------------------------
# configuration


def horizon_bound(g_max):
    """The rigidity horizon ``4 sqrt(g_max) - 1``."""
    return 4.0 * math.sqrt(g_max) - 1.0


def cfl_limit(kind, h, n, bounds):
    """Largest admissible step: ``0.5 h sqrt(rho_min)/sqrt(n)`` or ``0.5 h / sqrt(n lambda_max(g^-1))``."""
    if kind == "density":
        return 0.5 * h * math.sqrt(bounds.rho_min) / math.sqrt(n)
    return 0.5 * h / math.sqrt(n / bounds.g_min)


def reflection_radius(T, eps, h):
    return (T + 3.0) / 2.0 + eps + 2.0 * h


@dataclass(frozen=True)
class Violation:
    field: str
    message: str
    fatal: bool = True

    def __str__(self):
        return f"{self.field}: {self.message}"


@dataclass(frozen=True)
class WaveConfig:
    """Everything that determines a forward run.

    ``epsilon`` defaults to ``4 h``; ``dt`` to the CFL limit; ``half_width``
    to the reflection-exclusion radius rounded up to a multiple of ``h``.
    """

    medium: object
    omega: tuple
    horizon: float
    h: float
    epsilon: float | None = None
    dt: float | None = None
    half_width: float | None = None
    trace_samples: int | None = None
    snapshot_stride: int = 0
    snapshot_half_width: float = 1.5
    track_arrival: bool = False
    arrival_half_width: float = 1.5
    rigidity: bool = False

    def __post_init__(self):
        omega = check_unit_vector(self.omega, self.medium.dimension)
        object.__setattr__(self, "omega", tuple(float(w) for w in omega))
        check_positive("h", self.h)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 4.0 * self.h)
        check_positive("epsilon", self.epsilon)

    @property
    def dimension(self):
        return self.medium.dimension

    def bounds(self):
        return _cached_bounds(self.medium)

    @property
    def t0(self):
        return -1.0 - self.epsilon

    def resolved(self):
        """Copy with every default filled in."""
        b = self.bounds()
        n = self.dimension
        dt = self.dt if self.dt is not None else cfl_limit(self.medium.kind, self.h, n, b)
        R = self.half_width
        if R is None:
            R = math.ceil(reflection_radius(self.horizon, self.epsilon, self.h) / self.h - 1e-9) * self.h
        M = self.trace_samples
        if M is None:
            M = 256 if n == 2 else 1024
        return replace(self, dt=float(dt), half_width=float(R), trace_samples=int(M))

    def violations(self):
        b = self.bounds()
        n = self.dimension
        out = []
        T = self.horizon
        bound = horizon_bound(b.g_max)
        if not T > bound:
            out.append(
                Violation(
                    "T",
                    f"T={T:g} violates T > 4√g_max − 1 = {bound:.2f}",
                    fatal=self.rigidity,
                )
            )
        limit = cfl_limit(self.medium.kind, self.h, n, b)
        if self.dt is not None and self.dt > limit * (1 + 1e-12):
            out.append(Violation("dt", f"dt={self.dt:g} violates the CFL limit dt ≤ {limit:.6g}"))
        if self.dt is not None and self.dt <= 0:
            out.append(Violation("dt", "dt must be positive"))
        rmin = reflection_radius(T, self.epsilon, self.h)
        if self.half_width is not None:
            if self.half_width < rmin - 1e-12:
                out.append(
                    Violation("R", f"R={self.half_width:g} violates R ≥ (T+3)/2 + ε + 2h = {rmin:.6g}")
                )
            cells = self.half_width / self.h
            if abs(cells - round(cells)) > 1e-9 * max(cells, 1.0):
                out.append(Violation("R", f"R={self.half_width:g} is not a multiple of h={self.h:g}"))
        return out

    def check(self):
        problems = self.violations()
        for v in problems:
            if not v.fatal:
                log.warning("%s (allowed for solver tests)", v.message)
        fatal = [v for v in problems if v.fatal]
        if fatal:
            raise ConfigError("; ".join(v.message for v in fatal))
        return self.resolved()

    def derived(self):
        """Derived quantities for reports."""
        b = self.bounds()
        r = self.resolved()
        return {
            "g_max": b.g_max,
            "g_min": b.g_min,
            "rho_min": b.rho_min,
            "rho_max": b.rho_max,
            "horizon_bound": horizon_bound(b.g_max),
            "cfl_dt": cfl_limit(self.medium.kind, self.h, self.dimension, b),
            "dt": r.dt,
            "epsilon": r.epsilon,
            "reflection_R": reflection_radius(self.horizon, self.epsilon, self.h),
            "R": r.half_width,
            "steps": int(math.ceil((self.horizon - self.t0) / r.dt - 1e-9)),
            "grid_points": (2 * int(round(r.half_width / self.h)) + 1) ** self.dimension,
        }

    def header(self):
        r = self.resolved()
        return [
            f"medium={r.medium.describe()}",
            f"omega={','.join(repr(w) for w in r.omega)}",
            f"T={r.horizon!r} h={r.h!r} epsilon={r.epsilon!r} dt={r.dt!r} R={r.half_width!r}",
            f"t0={r.t0!r} trace_samples={r.trace_samples}",
        ]


_BOUNDS = {}


def _cached_bounds(medium):
    key = id(medium)
    hit = _BOUNDS.get(key)
    if hit is None or hit[0] is not medium:
        hit = (medium, compute_bounds(medium))
        _BOUNDS[key] = hit
    return hit[1]


# ----------------------------------------------------------------------------
# boundary samples and interpolation


def sphere_samples(n, count):
    """Unit-sphere points: uniform angles in 2D, a Fibonacci lattice in 3D."""
    if n == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    if n == 3:
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = np.pi * (3.0 - math.sqrt(5.0)) * k
        r = np.sqrt(1.0 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    raise ValueError("boundary samples are defined for n = 2 and n = 3")


def _interp_weights(points, grid):
    """Flat node indices ``(m, 2^n)`` and multilinear weights for ``points``."""
    n = grid.dimension
    N = grid.points_per_axis
    s = (points + grid.half_width) / grid.h
    base = np.floor(s).astype(np.int64)
    frac = s - base
    idx, wts = [], []
    for corner in range(2**n):
        bits = np.array([(corner >> i) & 1 for i in range(n)])
        ii = base + bits
        w = np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1)
        idx.append(np.ravel_multi_index(tuple(ii.T), (N,) * n))
        wts.append(w)
    return np.stack(idx, axis=1), np.stack(wts, axis=1)


# ----------------------------------------------------------------------------
# results


@dataclass
class BoundaryTrace:
    omega: np.ndarray
    points: np.ndarray
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def exact_plane_wave(self):
        eps = self.meta["epsilon"]
        return mollified_heaviside(self.times[:, None] - (self.points @ self.omega)[None, :], eps)

    def resample(self, times):
        """Linear interpolation in time onto ``times`` (inside the recorded range)."""
        times = np.asarray(times, dtype=float)
        if times.min() < self.times[0] - 1e-12 or times.max() > self.times[-1] + 1e-12:
            raise ValueError("resample times fall outside the recorded range")
        k = np.clip(np.searchsorted(self.times, times, side="right") - 1, 0, len(self.times) - 2)
        a = ((times - self.times[k]) / (self.times[k + 1] - self.times[k]))[:, None]
        vals = (1 - a) * self.values[k] + a * self.values[k + 1]
        return BoundaryTrace(self.omega, self.points, times, vals, dict(self.meta))

    def reflect(self, axis_vector):
        """Sample permutation realising the reflection across the line spanned by ``axis_vector`` (2D)."""
        u = np.asarray(axis_vector, float) / np.linalg.norm(axis_vector)
        P = 2 * np.outer(u, u) - np.eye(2)
        mapped = self.points @ P.T
        d = np.linalg.norm(self.points[None, :, :] - mapped[:, None, :], axis=-1)
        return d.argmin(axis=1), d.min(axis=1).max()

    def to_rows(self, time_stride=1):
        for k in range(0, len(self.times), time_stride):
            t = self.times[k]
            for j, p in enumerate(self.points):
                yield (j, *p, t, self.values[k, j])

    def to_csv(self, path, header=(), time_stride=1):
        names = ["x", "y", "z"][: self.points.shape[1]]
        head = list(header) + [f"omega={','.join(repr(float(w)) for w in self.omega)}"]
        head += [f"{k}={v!r}" for k, v in sorted(self.meta.items())]
        return io.write_csv(path, ["sample", *names, "t", "U"], self.to_rows(time_stride), head)


def trace_distance(a, b):
    """Relative L2 distance ``||a - b|| / ||b||`` over the boundary samples and the common times.

    Traces on different time grids are compared on the coarser of the two,
    the finer one being interpolated linearly in ``t``.
    """
    if a.points.shape != b.points.shape or not np.allclose(a.points, b.points, atol=1e-12):
        raise ValueError("trace sample layouts differ")
    if not np.allclose(a.omega, b.omega, atol=1e-12):
        raise ValueError("traces belong to different directions")
    lo = max(a.times[0], b.times[0])
    hi = min(a.times[-1], b.times[-1])
    if hi <= lo:
        raise ValueError("traces do not overlap in time")
    if len(a.times) == len(b.times) and np.array_equal(a.times, b.times):
        va, vb = a.values, b.values
    else:
        coarse = a if np.median(np.diff(a.times)) >= np.median(np.diff(b.times)) else b
        t = coarse.times[(coarse.times >= lo - 1e-12) & (coarse.times <= hi + 1e-12)]
        t = np.clip(t, lo, hi)
        va, vb = a.resample(t).values, b.resample(t).values
    denom = float(np.sqrt(np.sum(vb * vb)))
    return float(np.sqrt(np.sum((va - vb) ** 2))) / denom


@dataclass
class EnergySeries:
    """Centred discrete energy ``E_n`` and the cumulative work done by the boundary data.

    ``E_n = sum_interior w h^n V_n^2 + Q(U^n)`` with ``V_n`` the centred time
    difference and ``Q`` the discrete Dirichlet form.  The leapfrog scheme
    conserves ``E_{n+1/2} - W`` exactly (``conserved``); ``E_n - W`` is the
    physical energy balance and drifts at second order in ``dt``.
    """

    times: np.ndarray
    energy: np.ndarray
    work: np.ndarray
    conserved: np.ndarray

    def balance(self):
        return self.energy - self.work

    def drift(self, window=None):
        t = self.times
        sel = np.ones(len(t), dtype=bool) if window is None else (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        if not sel.any():
            raise ValueError("empty energy window")
        bal = self.balance()[sel]
        ref = bal[0]
        return float(np.max(np.abs(bal - ref)) / abs(ref))

    def to_rows(self):
        return zip(self.times, self.energy, self.work, self.conserved)


@dataclass
class WaveField:
    """Snapshots of ``U`` on a sub-box, plus streamed level crossings."""

    grid: Grid
    times: list = field(default_factory=list)
    frames: list = field(default_factory=list)

    def stack(self):
        return np.asarray(self.times), np.stack(self.frames) if self.frames else np.empty((0,) + self.grid.shape)


@dataclass
class WaveResult:
    config: WaveConfig
    trace: BoundaryTrace
    energy: EnergySeries
    field: WaveField | None
    arrival: np.ndarray | None
    arrival_grid: Grid | None
    steps: int
    max_abs: float

    def energy_window(self):
        c = self.config
        return (-1.0, min(c.horizon, c.half_width - c.epsilon))


# ----------------------------------------------------------------------------
# level crossings


class CrossingTracker:
    """First time each cell's value rises through ``level`` (linear in ``t``).

    Cells already at or above the level on the first update crossed before
    tracking began; their time is NaN.  Cells that never cross stay at ``inf``.
    """

    def __init__(self, shape, level=0.5):
        self.level = level
        self.time = np.full(shape, np.inf)
        self._started = False

    def update(self, t0, t1, u0, u1):
        if not self._started:
            self.time[u0 >= self.level] = np.nan
            self._started = True
        open_ = np.isinf(self.time)
        hit = open_ & (u0 < self.level) & (u1 >= self.level)
        if hit.any():
            frac = (self.level - u0[hit]) / (u1[hit] - u0[hit])
            self.time[hit] = t0 + frac * (t1 - t0)
        return hit


def extract_arrival_from_field(times, frames, level=0.5):
    """Per cell, the first time the field crosses ``level``.

    ``inf`` marks cells that never cross, NaN cells already above the level in the first frame.
    """
    times = np.asarray(times, dtype=float)
    frames = np.asarray(frames)
    tracker = CrossingTracker(frames.shape[1:], level)
    for k in range(1, len(times)):
        tracker.update(times[k - 1], times[k], frames[k - 1].astype(float), frames[k].astype(float))
    return tracker.time


# ----------------------------------------------------------------------------
# solver


def _sub_box(grid, half_width):
    k = int(round(grid.half_width / grid.h))
    m = int(round(min(half_width, grid.half_width) / grid.h))
    sl = tuple(slice(k - m, k + m + 1) for _ in range(grid.dimension))
    return sl, Grid(grid.dimension, m * grid.h, grid.h)


def solve_wave(config: WaveConfig, progress=None):
    """Leapfrog run of the plane-wave problem; returns a :class:`WaveResult`."""
    cfg = config.check()
    medium = cfg.medium
    n = medium.dimension
    omega = np.asarray(cfg.omega)
    h, dt, eps = cfg.h, cfg.dt, cfg.epsilon
    grid = Grid(n, cfg.half_width, h)
    op = FluxOperator(medium, grid)
    P = grid.points()
    phase = P @ omega
    w = op.weight
    interior = np.zeros(grid.shape, dtype=bool)
    interior[(slice(1, -1),) * n] = True
    face = ~interior
    hn = h**n
    face_phase = phase[face]

    def exact(t, where=None):
        return mollified_heaviside(t - (phase if where is None else where), eps)

    t0 = cfg.t0
    steps = int(math.ceil((cfg.horizon - t0) / dt - 1e-9))
    times = t0 + dt * np.arange(steps + 1)

    pts = sphere_samples(n, cfg.trace_samples)
    tidx, twts = _interp_weights(pts, grid)
    trace = np.empty((steps + 1, len(pts)))

    snap = None
    if cfg.snapshot_stride:
        snap_sl, snap_grid = _sub_box(grid, cfg.snapshot_half_width)
        snap = WaveField(snap_grid)
    tracker = None
    if cfg.track_arrival:
        arr_sl, arr_grid = _sub_box(grid, cfg.arrival_half_width)
        tracker = CrossingTracker(arr_grid.shape)

    inv_w = dt * dt / w
    U_prev = exact(times[0])
    U = exact(times[1])
    trace[0] = (U_prev.ravel()[tidx] * twts).sum(axis=1)
    trace[1] = (U.ravel()[tidx] * twts).sum(axis=1)
    if snap is not None:
        snap.times.append(times[0])
        snap.frames.append(U_prev[snap_sl].astype(np.float32))
    if tracker is not None:
        tracker.update(times[0], times[1], U_prev[arr_sl], U[arr_sl])

    e_times, e_vals, e_work, e_cons = [], [], [], []
    work = 0.0
    LU = op.apply(U)
    max_abs = float(np.max(np.abs(U)))
    for k in range(1, steps):
        U_next = 2.0 * U - U_prev + inv_w * LU
        U_next[face] = exact(times[k + 1], face_phase)
        LU_next = op.apply(U_next)

        # energy at level k (needs k-1, k, k+1) and the exactly conserved half-step form
        V = (U_next - U_prev) / (2.0 * dt)
        kin = hn * float(np.sum((w * V * V)[interior]))
        pot = -hn * float(np.sum(U * LU))
        work += -hn * float(np.sum((U_next[face] - U_prev[face]) * LU[face]))
        v_half = (U_next - U) / dt
        cons = hn * float(np.sum((w * v_half * v_half)[interior])) - hn * float(np.sum(U * LU_next))
        e_times.append(times[k])
        e_vals.append(kin + pot)
        e_work.append(work)
        e_cons.append(cons)

        U_prev, U, LU = U, U_next, LU_next
        trace[k + 1] = (U.ravel()[tidx] * twts).sum(axis=1)
        if tracker is not None:
            tracker.update(times[k], times[k + 1], U_prev[arr_sl], U[arr_sl])
        if snap is not None and (k + 1) % cfg.snapshot_stride == 0:
            snap.times.append(times[k + 1])
            snap.frames.append(U[snap_sl].astype(np.float32))
        peak = float(np.max(np.abs(U)))
        max_abs = max(max_abs, peak)
        if not peak <= BLOWUP:
            raise InstabilityError(
                f"|U| reached {peak:.3g} > {BLOWUP:g} at step {k + 1} (t={times[k + 1]:.4f}); "
                f"dt={dt:g}, h={h:g}",
                k + 1,
                times[k + 1],
            )
        if progress is not None:
            progress(k + 1, steps)

    meta = {
        "epsilon": eps,
        "h": h,
        "dt": dt,
        "R": cfg.half_width,
        "T": cfg.horizon,
        "t0": t0,
    }
    bt = BoundaryTrace(omega, pts, times, trace, meta)
    energy = EnergySeries(np.array(e_times), np.array(e_vals), np.array(e_work), np.array(e_cons))
    return WaveResult(
        cfg,
        bt,
        energy,
        snap,
        tracker.time if tracker is not None else None,
        arr_grid if tracker is not None else None,
        steps,
        max_abs,
    )


def energy_series(result):
    """The energy record of a run (accumulated while stepping, from every node)."""
    return result.energy


def euclidean_trace(config):
    """The exact Euclidean trace ``H_eps(t - x . omega)`` on the same samples and times."""
    cfg = config.resolved()
    n = cfg.dimension
    pts = sphere_samples(n, cfg.trace_samples)
    steps = int(math.ceil((cfg.horizon - cfg.t0) / cfg.dt - 1e-9))
    times = cfg.t0 + cfg.dt * np.arange(steps + 1)
    omega = np.asarray(cfg.omega)
    vals = mollified_heaviside(times[:, None] - (pts @ omega)[None, :], cfg.epsilon)
    meta = {"epsilon": cfg.epsilon, "h": cfg.h, "dt": cfg.dt, "R": cfg.half_width, "T": cfg.horizon, "t0": cfg.t0}
    return BoundaryTrace(omega, pts, times, vals, meta)


def noise_floor(medium_dimension, omega, horizon, h, epsilon=None, trace_samples=None, kind="density"):
    """Trace distance between Euclidean runs at ``h`` and ``h/2`` with the same ``epsilon``."""
    from .media import euclidean

    eps = 4.0 * h if epsilon is None else epsilon
    flat = euclidean(medium_dimension, kind)
    coarse = solve_wave(WaveConfig(flat, omega, horizon, h, eps, trace_samples=trace_samples))
    fine = solve_wave(WaveConfig(flat, omega, horizon, h / 2, eps, trace_samples=trace_samples))
    return trace_distance(fine.trace, coarse.trace), coarse, fine


class WaveSolver(BaseEstimator):
    """Estimator wrapper: ``fit(medium)`` runs the forward problem.

    Learned attributes: ``trace_``, ``energy_``, ``result_``.
    """

    def __init__(self, omega=(1.0, 0.0), horizon=3.5, h=0.015, epsilon=None, dt=None, trace_samples=None):
        self.omega = omega
        self.horizon = horizon
        self.h = h
        self.epsilon = epsilon
        self.dt = dt
        self.trace_samples = trace_samples

    def config(self, medium):
        return WaveConfig(
            medium, self.omega, self.horizon, self.h, self.epsilon, self.dt, trace_samples=self.trace_samples
        )

    def fit(self, medium, y=None):
        self.result_ = solve_wave(self.config(medium))
        self.trace_ = self.result_.trace
        self.energy_ = self.result_.energy
        return self

    def transform(self, medium=None):
        """Boundary values ``(times, samples)``."""
        return self.trace_.values

    def score(self, reference):
        """Negative trace distance to a reference trace."""
        return -trace_distance(self.trace_, reference)


def read_trace_csv(path):
    """Load a trace written by :meth:`BoundaryTrace.to_csv`."""
    header, cols, data = io.read_csv(path)
    meta, omega = {}, None
    for line in header:
        for part in line.split():
            key, _, val = part.partition("=")
            if key == "omega":
                omega = np.array([float(v) for v in val.split(",")])
            elif key in ("epsilon", "h", "dt", "R", "T", "t0"):
                meta[key] = float(val)
    if omega is None:
        raise ValueError(f"{path}: trace header carries no omega")
    n = len(cols) - 3
    m = int(data[:, 0].max()) + 1
    if len(data) % m:
        raise ValueError(f"{path}: ragged trace table")
    block = data.reshape(-1, m, len(cols))
    return BoundaryTrace(omega, block[0, :, 1 : 1 + n], block[:, 0, 1 + n], block[:, :, -1], meta)
