"""omega-geodesics, their bicharacteristic lifts, the exit map and distances.

An omega-geodesic starts at ``t = -1`` on the plane ``x . omega = -1`` with
velocity ``omega`` and solves ``d/dt (g x') = 1/2 x'^T (d_k g) x'``.  In first
order form, with ``v = x'``,

    g v' = 1/2 [v^T (d_k g) v]_k - (sum_k v_k d_k g) v,

integrated here by classic fixed-step RK4.  Steps whose whole segment stays
outside the medium's support are advanced as exact straight lines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from ._validation import check_points, check_positive, check_unit_vector


class IntegrationError(RuntimeError):
    """Raised when the unit-speed drift shows the integrator has gone unstable."""


def acceleration(medium, X, V):
    G = medium.metric(X)
    dG = medium.metric_gradient(X)
    half = 0.5 * np.einsum("...kij,...i,...j->...k", dG, V, V)
    transport = np.einsum("...k,...kij,...j->...i", V, dG, V)
    return np.linalg.solve(G, (half - transport)[..., None])[..., 0]


def _segment_clear(X, V, dt, radius):
    """True where the segment ``x + s v``, ``0 <= s <= dt`` stays outside ``|x| <= radius``."""
    vv = np.sum(V * V, axis=-1)
    s = np.clip(-np.sum(X * V, axis=-1) / np.where(vv > 0, vv, 1.0), 0.0, dt)
    closest = X + s[..., None] * V
    return np.linalg.norm(closest, axis=-1) > radius


def rk4_step(medium, X, V, dt):
    """One RK4 step for the state ``(x, v)``; ``dt`` may be an array of per-ray steps."""
    dt = np.asarray(dt, dtype=float)
    if dt.ndim:
        dt = dt[..., None]
    k1x, k1v = V, acceleration(medium, X, V)
    k2x = V + 0.5 * dt * k1v
    k2v = acceleration(medium, X + 0.5 * dt * k1x, k2x)
    k3x = V + 0.5 * dt * k2v
    k3v = acceleration(medium, X + 0.5 * dt * k2x, k3x)
    k4x = V + dt * k3v
    k4v = acceleration(medium, X + dt * k3x, k4x)
    Xn = X + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    Vn = V + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return Xn, Vn


def advance(medium, X, V, dt):
    """RK4 where the medium is felt, exact straight lines elsewhere."""
    X = np.array(X, dtype=float)
    V = np.array(V, dtype=float)
    if medium.is_euclidean:
        return X + dt * V, V
    # a small pad keeps RK4 stage points of clear segments in the flat region too
    clear = _segment_clear(X, V, dt, medium.support_radius + 1e-9)
    Xn = X + dt * V
    Vn = V.copy()
    busy = ~clear
    if np.any(busy):
        Xb, Vb = rk4_step(medium, X[busy], V[busy], dt)
        Xn[busy] = Xb
        Vn[busy] = Vb
    return Xn, Vn


@dataclass
class FanSolution:
    """Samples of many rays integrated together; ``X[k, r]`` is ray ``r`` at ``t[k]``."""

    medium: object
    omega: np.ndarray
    starts: np.ndarray
    t: np.ndarray
    X: np.ndarray
    V: np.ndarray
    dt: float

    @property
    def n_rays(self):
        return self.X.shape[1]

    def ray(self, r, tau=1.0):
        return OmegaRay(self.omega, self.starts[r], self.t, self.X[:, r], self.V[:, r], tau, self.medium, self.dt)

    def unit_speed_drift(self):
        return np.abs(self.medium.speed_norm(self.X, self.V) - 1.0)


@dataclass
class OmegaRay:
    omega: np.ndarray
    a: np.ndarray
    t: np.ndarray
    x: np.ndarray
    xdot: np.ndarray
    tau: float
    medium: object = field(repr=False)
    dt: float = 0.0

    @property
    def xi(self):
        return lift_to_bicharacteristic(self, self.tau)

    def unit_speed_drift(self):
        return np.abs(self.medium.speed_norm(self.x, self.xdot) - 1.0)

    def to_rows(self, ray_id=0):
        return [(ray_id, t, *x, *v) for t, x, v in zip(self.t, self.x, self.xdot)]


def integrate_flow(medium, X0, V0, t0, t_end, dt, store_every=1):
    """Integrate geodesics from ``(X0, V0)`` at ``t0`` up to ``t_end`` (either direction)."""
    X = np.atleast_2d(np.array(X0, dtype=float))
    V = np.atleast_2d(np.array(V0, dtype=float))
    span = t_end - t0
    sign = 1.0 if span >= 0 else -1.0
    n_steps = max(1, int(math.ceil(abs(span) / dt - 1e-9)))
    ts, xs, vs = [t0], [X.copy()], [V.copy()]
    for k in range(1, n_steps + 1):
        t_prev = t0 + sign * (k - 1) * dt
        t_next = t_end if k == n_steps else t0 + sign * k * dt
        X, V = advance(medium, X, V, t_next - t_prev)
        if k % store_every == 0 or k == n_steps:
            ts.append(t_next)
            xs.append(X.copy())
            vs.append(V.copy())
    return np.array(ts), np.stack(xs), np.stack(vs)


def integrate_fan(medium, omega, starts, t_end, dt=1e-3, tol=1e-6, store_every=1):
    """Integrate the omega-geodesics from each start point on ``Sigma_-``."""
    omega = check_unit_vector(omega, medium.dimension)
    starts = check_points(starts, medium.dimension)
    off = np.abs(starts @ omega + 1.0)
    if np.any(off > 1e-12):
        raise ValueError(f"start points must satisfy a.omega = -1 (worst offset {off.max():.3g})")
    check_positive("dt", dt)
    if t_end <= -1.0:
        raise ValueError("t_end must exceed -1")
    V0 = np.broadcast_to(omega, starts.shape)
    t, X, V = integrate_flow(medium, starts, V0, -1.0, t_end, dt, store_every)
    fan = FanSolution(medium, omega, starts, t, X, V, dt)
    drift = float(fan.unit_speed_drift().max())
    if drift > 100 * tol:
        raise IntegrationError(f"unit-speed drift {drift:.3g} exceeds 100 x tol={tol:g}; reduce dt")
    return fan


def integrate_omega_geodesic(medium, omega, a, t_end, dt=1e-3, tol=1e-6, tau=1.0):
    fan = integrate_fan(medium, omega, np.atleast_2d(a), t_end, dt, tol)
    return fan.ray(0, tau)


def lift_to_bicharacteristic(ray, tau):
    """Covector ``xi(t) = -tau g(x) x'`` along the ray."""
    if tau == 0:
        raise ValueError("tau must be non-zero")
    G = ray.medium.metric(ray.x)
    return -tau * np.einsum("...ij,...j->...i", G, ray.xdot)


def null_residual(ray, tau):
    """``|xi^T g^{-1} xi - tau^2|`` at every sample."""
    xi = lift_to_bicharacteristic(ray, tau)
    Ginv = ray.medium.metric_inverse(ray.x)
    return np.abs(np.einsum("...i,...ij,...j->...", xi, Ginv, xi) - tau**2)


# -- crossings of Sigma_+ ------------------------------------------------------


@dataclass(frozen=True)
class CrossingRecord:
    ray_id: int
    crossed: bool
    t_star: float
    x_star: tuple
    velocity: tuple
    recross: bool
    grazing: bool


def _bisect_crossings(medium, omega, X, V, t, dt, tol):
    """Refine crossing times inside one step: bisection on a partial RK4 step,
    finished by a secant step inside the last bracket (exact for straight rays)."""
    lo = np.zeros(len(X))
    hi = np.broadcast_to(np.asarray(dt, dtype=float), (len(X),)).copy()
    f_lo = X @ omega - 1.0
    f_hi = _partial_step(medium, X, V, hi)[0] @ omega - 1.0
    while np.max(hi - lo, initial=0.0) > tol:
        mid = 0.5 * (lo + hi)
        Xm, _ = _partial_step(medium, X, V, mid)
        f = Xm @ omega - 1.0
        below = f < 0
        lo, f_lo = np.where(below, mid, lo), np.where(below, f, f_lo)
        hi, f_hi = np.where(below, hi, mid), np.where(below, f_hi, f)
    span = f_hi - f_lo
    frac = np.where(span > 0, -f_lo / np.where(span > 0, span, 1.0), 0.5)
    s = lo + np.clip(frac, 0.0, 1.0) * (hi - lo)
    Xs, Vs = _partial_step(medium, X, V, s)
    return t + s, Xs, Vs


def _partial_step(medium, X, V, s):
    if medium.is_euclidean:
        return X + s[:, None] * V, V.copy()
    return rk4_step(medium, X, V, s)


def fan_crossings(fan, tol=1e-10):
    """First crossing of ``x . omega = 1`` for every ray of a fan."""
    omega = fan.omega
    level = np.einsum("kri,i->kr", fan.X, omega) - 1.0
    n_rays = fan.n_rays
    above = level >= 0
    crossed = above.any(axis=0)
    k_first = np.argmax(above, axis=0)
    records = []
    t_star = np.full(n_rays, np.nan)
    x_star = np.full((n_rays, len(omega)), np.nan)
    v_star = np.full((n_rays, len(omega)), np.nan)
    idx = np.nonzero(crossed)[0]
    if len(idx):
        k0 = k_first[idx] - 1
        X0, V0, t0 = fan.X[k0, idx], fan.V[k0, idx], fan.t[k0]
        steps = fan.t[k0 + 1] - t0
        if np.all(steps <= fan.dt * (1 + 1e-9)):
            ts, Xs, Vs = _bisect_crossings(fan.medium, omega, X0, V0, t0, steps, tol)
        else:
            # stored samples are sparser than the integrator step
            out = [_refine_single(fan.medium, omega, *args, fan.dt, tol) for args in zip(X0, V0, t0, steps)]
            ts = np.array([o[0] for o in out])
            Xs = np.array([o[1] for o in out])
            Vs = np.array([o[2] for o in out])
        t_star[idx], x_star[idx], v_star[idx] = ts, Xs, Vs
    # a recross is any later sign change after the first crossing
    signs = np.sign(level)
    for r in range(n_rays):
        recross = False
        if crossed[r]:
            tail = signs[k_first[r] :, r]
            recross = bool(np.any(tail < 0))
        grazing = bool(crossed[r] and abs(v_star[r] @ omega) < 1e-3)
        records.append(
            CrossingRecord(
                r,
                bool(crossed[r]),
                float(t_star[r]),
                tuple(x_star[r]),
                tuple(v_star[r]),
                recross,
                grazing,
            )
        )
    return records


def _refine_single(medium, omega, X, V, t0, span, dt, tol):
    # walk sub-steps of at most dt to find the bracketing integrator step
    n_sub = max(1, int(math.ceil(span / dt - 1e-9)))
    h = span / n_sub
    for _ in range(n_sub):
        Xn, Vn = advance(medium, X[None], V[None], h)
        if Xn[0] @ omega - 1.0 >= 0:
            ts, Xs, Vs = _bisect_crossings(medium, omega, X[None], V[None], np.array([t0]), h, tol)
            return ts[0], Xs[0], Vs[0]
        X, V, t0 = Xn[0], Vn[0], t0 + h
    return t0, X, V


def find_sigma_plus_crossing(ray, tol=1e-10):
    fan = FanSolution(ray.medium, ray.omega, ray.a[None], ray.t, ray.x[:, None], ray.xdot[:, None], ray.dt or 1e-3)
    return fan_crossings(fan, tol)[0]


# -- exit map ----------------------------------------------------------------------


def orthonormal_complement(omega):
    """Rows spanning the orthogonal complement of ``omega`` (deterministic)."""
    omega = np.asarray(omega, dtype=float)
    _, _, vt = np.linalg.svd(omega[None, :])
    basis = vt[1:]
    # fix signs so the basis is reproducible
    for b in basis:
        k = np.argmax(np.abs(b))
        if b[k] < 0:
            b *= -1
    return basis


def sigma_minus_fan(omega, spacing, radius=1.0, ring_radius=1.2):
    """Uniform grid of start points on the disk ``|a + omega| <= radius`` of ``Sigma_-``
    plus one exterior ring at ``ring_radius`` (pass ``None`` to omit it)."""
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    basis = orthonormal_complement(omega)
    k = int(math.floor(radius / spacing + 1e-9))
    ticks = np.arange(-k, k + 1) * spacing
    mesh = np.stack(np.meshgrid(*([ticks] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
    disk = mesh[np.linalg.norm(mesh, axis=1) <= radius + 1e-12]
    coords = [disk]
    if ring_radius is not None:
        if n == 2:
            ring = np.array([[-ring_radius], [ring_radius]])
        else:
            m = max(8, int(math.ceil(2 * math.pi * ring_radius / spacing)))
            ang = 2 * math.pi * np.arange(m) / m
            ring = ring_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
            if n > 3:
                ring = np.hstack([ring, np.zeros((m, n - 3))])
        coords.append(ring)
    coords = np.vstack(coords)
    return -omega + coords @ basis


@dataclass
class ExitMap:
    omega: np.ndarray
    starts: np.ndarray
    crossings: list
    spacing: float
    horizon: float
    collisions: list

    @property
    def images(self):
        return np.array([c.x_star for c in self.crossings])

    @property
    def times(self):
        return np.array([c.t_star for c in self.crossings])

    @property
    def missed(self):
        return [c.ray_id for c in self.crossings if not c.crossed]

    @property
    def recrossed(self):
        return [c.ray_id for c in self.crossings if c.recross]

    @property
    def injective(self):
        return not self.collisions

    def to_rows(self):
        rows = []
        for k, (a, c) in enumerate(zip(self.starts, self.crossings)):
            rows.append((k, *a, int(c.crossed), c.t_star, *c.x_star, int(c.recross)))
        return rows


def exit_map(medium, omega, fan, horizon, dt=1e-3, collision_tol=1e-4, spacing=None, tol=1e-6):
    """Tabulate ``a -> (A(a), t*)`` over a fan of start points on ``Sigma_-``.

    Pathologies are reported, never raised: rays that miss ``Sigma_+`` before
    the horizon, recrossings, and pairs of crossings closer than
    ``collision_tol`` whose sources are more than ten fan spacings apart.
    """
    fan = check_points(fan, medium.dimension)
    if spacing is None:
        tree = cKDTree(fan)
        d, _ = tree.query(fan, k=2)
        spacing = float(np.median(d[:, 1]))
    sol = integrate_fan(medium, omega, fan, horizon, dt, tol)
    crossings = fan_crossings(sol)
    hits = np.array([c.x_star for c in crossings])
    ok = np.array([c.crossed for c in crossings])
    collisions = []
    if ok.sum() > 1:
        ids = np.nonzero(ok)[0]
        pairs = cKDTree(hits[ids]).query_pairs(collision_tol, output_type="ndarray")
        for p, q in pairs:
            i, j = ids[p], ids[q]
            if np.linalg.norm(fan[i] - fan[j]) > 10 * spacing:
                collisions.append((int(i), int(j)))
    return ExitMap(sol.omega, fan, crossings, spacing, horizon, sorted(collisions))


# -- lengths and distances -------------------------------------------------------


def curve_length(medium, samples, subdivisions=2):
    """Riemannian length of a polyline.

    Each straight segment is integrated with composite Simpson's rule on
    ``subdivisions`` (even) sub-intervals, which is exact for Euclidean
    segments and fourth order in the sub-interval otherwise.  Approximating a
    smooth curve by its polyline adds the usual second-order chord error.
    """
    P = np.asarray(samples, dtype=float)
    if P.ndim != 2 or len(P) < 2:
        raise ValueError("need at least two samples")
    if subdivisions % 2:
        raise ValueError("Simpson's rule needs an even number of subdivisions")
    D = np.diff(P, axis=0)
    s = np.linspace(0.0, 1.0, subdivisions + 1)
    pts = P[:-1, None, :] + s[None, :, None] * D[:, None, :]
    speed = medium.speed_norm(pts, np.broadcast_to(D[:, None, :], pts.shape))
    w = np.ones(subdivisions + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w /= 3.0 * subdivisions
    return float(np.sum(speed @ w))


def _edge_offsets(n):
    if n == 2:
        base = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)]
        return np.array(base)
    if n == 3:
        offs = []
        for o in np.ndindex(3, 3, 3):
            o = tuple(np.array(o) - 1)
            if o > (0, 0, 0):
                offs.append(o)
        return np.array(offs)
    raise ValueError("grid distances support n = 2 or 3")


@dataclass(frozen=True)
class DistanceEstimate:
    graph: float
    refined: float
    path: np.ndarray = field(repr=False)


def riemannian_distance(medium, p, q, resolution=120, half_width=1.5, refine_points=41):
    """Grid-graph Dijkstra estimate of ``d(p, q)`` followed by local relaxation.

    The graph connects each node to its 16 (n=2) or 26 (n=3) neighbours with
    edge weight equal to the Simpson length of the straight edge; ``p`` and
    ``q`` are joined to nearby nodes by straight edges.  The Dijkstra path is
    then resampled and relaxed by minimising the discrete energy with fixed
    end points.  Both values are lengths of actual curves.
    """
    from scipy.optimize import minimize

    n = medium.dimension
    p = check_points(p, n)[0]
    q = check_points(q, n)[0]
    if np.max(np.abs(np.concatenate([p, q]))) > half_width:
        raise ValueError("p and q must lie inside the computational cube")
    axis = np.linspace(-half_width, half_width, resolution + 1)
    h = axis[1] - axis[0]
    nodes = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    shape = (resolution + 1,) * n
    idx = np.arange(nodes.shape[0]).reshape(shape)
    rows, cols, weights = [], [], []
    for off in _edge_offsets(n):
        src = [slice(max(0, -o), resolution + 1 - max(0, o)) for o in off]
        dst = [slice(max(0, o), resolution + 1 - max(0, -o)) for o in off]
        a = idx[tuple(src)].ravel()
        b = idx[tuple(dst)].ravel()
        rows.append(a)
        cols.append(b)
        weights.append(_segment_lengths(medium, nodes[a], nodes[b]))
    N = nodes.shape[0]
    ip, iq = N, N + 1
    for k, x in ((ip, p), (iq, q)):
        near = np.nonzero(np.linalg.norm(nodes - x, axis=1) <= 2.5 * h)[0]
        rows.append(np.full(len(near), k))
        cols.append(near)
        weights.append(_segment_lengths(medium, np.broadcast_to(x, (len(near), n)), nodes[near]))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    weights = np.maximum(np.concatenate(weights), 1e-300)
    graph = coo_matrix((weights, (rows, cols)), shape=(N + 2, N + 2)).tocsr()
    dist, pred = dijkstra(graph, directed=False, indices=ip, return_predecessors=True)
    graph_value = float(dist[iq])
    allpts = np.vstack([nodes, p, q])
    chain = [iq]
    while chain[-1] != ip:
        chain.append(pred[chain[-1]])
    path = allpts[chain[::-1]]
    # resample by arc length, then relax the interior points
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    target = np.linspace(0.0, s[-1], refine_points)
    init = np.stack([np.interp(target, s, path[:, i]) for i in range(n)], axis=1)

    def energy(flat):
        P = np.vstack([p, flat.reshape(-1, n), q])
        D = np.diff(P, axis=0)
        mid = 0.5 * (P[1:] + P[:-1])
        G = medium.metric(mid)
        dG = medium.metric_gradient(mid)
        GD = np.einsum("sij,sj->si", G, D)
        E = float(np.sum(GD * D))
        quad = 0.5 * np.einsum("skij,si,sj->sk", dG, D, D)
        grad = np.zeros_like(P)
        grad[1:] += 2 * GD + quad
        grad[:-1] += -2 * GD + quad
        return E * (len(D)), grad[1:-1].ravel() * len(D)

    res = minimize(energy, init[1:-1].ravel(), jac=True, method="L-BFGS-B", options={"maxiter": 500, "gtol": 1e-12})
    refined_path = np.vstack([p, res.x.reshape(-1, n), q])
    refined = curve_length(medium, refined_path, subdivisions=4)
    return DistanceEstimate(graph_value, min(refined, graph_value), refined_path)


def _segment_lengths(medium, A, B):
    D = B - A
    s = np.array([0.0, 0.5, 1.0])
    pts = A[:, None, :] + s[None, :, None] * D[:, None, :]
    speed = medium.speed_norm(pts, np.broadcast_to(D[:, None, :], pts.shape))
    return (speed[:, 0] + 4 * speed[:, 1] + speed[:, 2]) / 6.0
