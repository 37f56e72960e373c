"""Admissible media: isotropic densities and Riemannian metrics.

Every medium here is built from compactly supported C-infinity bumps and is
exactly Euclidean (``g = I``, ``m = 1``, ``rho = 1``) for ``|x| >= 1 - delta``.
Evaluation is vectorised over any leading shape: a point array of shape
``(..., n)`` gives scalars of shape ``(...)`` and matrices of shape
``(..., n, n)``.

Two kinds are supported.

``density``
    ``rho(x) = 1 + sum_k a_k beta_k(x)``, with ``g = rho I`` and
    ``m = rho ** ((2 - n) / 2)``, so that the weighted operator reduces to
    ``rho d_t^2 - Laplacian``.
``metric``
    ``g(x) = psi'(x)^T psi'(x) + sum_k a_k beta_k(x) S_k`` with ``m = 1``,
    where ``psi = id + d`` comes from an optional :class:`DiffeoSpec` and the
    ``S_k`` are symmetric matrices attached to the bumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

DEFAULT_DELTA = 0.1

_E = np.e


def bump_profile(X, center, radius, derivatives=0):
    """Peak-normalised mollifier ``exp(1 - 1/(1 - s^2))``, ``s = |x - c| / r``.

    Returns ``beta`` and, depending on ``derivatives`` (0, 1 or 2), the
    gradient ``(..., n)`` and Hessian ``(..., n, n)``.
    """
    X = np.asarray(X, dtype=float)
    y = X - np.asarray(center, dtype=float)
    u = np.sum(y * y, axis=-1) / radius**2
    inside = u < 1.0
    one_minus = np.where(inside, 1.0 - u, 1.0)
    beta = np.where(inside, np.exp(1.0 - 1.0 / one_minus), 0.0)
    if derivatives == 0:
        return beta
    # d beta / du and d^2 beta / du^2
    d1 = np.where(inside, -beta / one_minus**2, 0.0)
    grad_u = 2.0 * y / radius**2
    grad = d1[..., None] * grad_u
    if derivatives == 1:
        return beta, grad
    d2 = np.where(inside, beta * (1.0 / one_minus**4 - 2.0 / one_minus**3), 0.0)
    n = X.shape[-1]
    hess = d2[..., None, None] * grad_u[..., :, None] * grad_u[..., None, :]
    hess = hess + (d1 * 2.0 / radius**2)[..., None, None] * np.eye(n)
    return beta, grad, hess


@dataclass(frozen=True)
class Bump:
    """One bump term ``amplitude * beta(x)``; ``matrix`` is used only by metric media."""

    amplitude: float
    center: tuple
    radius: float
    matrix: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError(f"bump radius must be positive, got {self.radius}")
        if self.matrix is not None:
            M = np.asarray(self.matrix, dtype=float)
            if M.shape != (len(self.center),) * 2 or not np.allclose(M, M.T):
                raise ValueError("bump matrix must be symmetric n x n")
            object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in M))

    @property
    def reach(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def to_dict(self):
        out = {"amplitude": self.amplitude, "center": list(self.center), "radius": self.radius}
        if self.matrix is not None:
            out["matrix"] = [list(row) for row in self.matrix]
        return out


@dataclass(frozen=True)
class DisplacementTerm:
    """``d(x) = amplitude * beta(x) * (linear @ (x - center) + offset)``."""

    amplitude: float
    center: tuple
    radius: float
    linear: tuple | None = None
    offset: tuple | None = None

    def __post_init__(self):
        n = len(self.center)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        lin = np.zeros((n, n)) if self.linear is None else np.asarray(self.linear, dtype=float)
        off = np.zeros(n) if self.offset is None else np.asarray(self.offset, dtype=float)
        if lin.shape != (n, n) or off.shape != (n,):
            raise ValueError("displacement linear part must be n x n and offset length n")
        object.__setattr__(self, "linear", tuple(tuple(float(v) for v in row) for row in lin))
        object.__setattr__(self, "offset", tuple(float(v) for v in off))

    @property
    def reach(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def evaluate(self, X, derivatives=0):
        """Displacement, Jacobian ``J[..., i, j] = d_j d_i`` and ``dJ[..., k, i, j] = d_k d_j d_i``."""
        M = np.asarray(self.linear)
        v = np.asarray(self.offset)
        c = np.asarray(self.center)
        y = np.asarray(X, dtype=float) - c
        w = y @ M.T + v
        a = self.amplitude
        if derivatives == 0:
            return a * bump_profile(X, c, self.radius)[..., None] * w
        if derivatives == 1:
            beta, grad = bump_profile(X, c, self.radius, 1)
        else:
            beta, grad, hess = bump_profile(X, c, self.radius, 2)
        d = a * beta[..., None] * w
        J = a * (w[..., :, None] * grad[..., None, :] + beta[..., None, None] * M)
        if derivatives == 1:
            return d, J
        # d_k J_ij = a (w_i H_jk + M_ik g_j + M_ij g_k)
        dJ = (
            w[..., None, :, None] * hess[..., :, None, :]
            + M.T[:, :, None] * grad[..., None, None, :]
            + M[None, :, :] * grad[..., :, None, None]
        )
        return d, J, a * dJ

    def to_dict(self):
        return {
            "amplitude": self.amplitude,
            "center": list(self.center),
            "radius": self.radius,
            "linear": [list(row) for row in self.linear],
            "offset": list(self.offset),
        }


@dataclass(frozen=True)
class DiffeoSpec:
    """``psi(x) = x + sum of displacement terms``; identity outside the terms' support."""

    displacements: tuple
    margin: float = 0.05

    def __post_init__(self):
        terms = tuple(
            t if isinstance(t, DisplacementTerm) else DisplacementTerm(**t) for t in self.displacements
        )
        if not terms:
            raise ValueError("a DiffeoSpec needs at least one displacement term")
        if len({len(t.center) for t in terms}) != 1:
            raise ValueError("displacement terms disagree on dimension")
        object.__setattr__(self, "displacements", terms)
        object.__setattr__(self, "margin", float(self.margin))

    @property
    def dimension(self):
        return len(self.displacements[0].center)

    @property
    def reach(self):
        return max(t.reach for t in self.displacements)

    def displacement(self, X):
        return sum(t.evaluate(X) for t in self.displacements)

    def psi(self, X):
        return np.asarray(X, dtype=float) + self.displacement(X)

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        J = np.broadcast_to(np.eye(self.dimension), X.shape[:-1] + (self.dimension,) * 2).copy()
        for t in self.displacements:
            J += t.evaluate(X, 1)[1]
        return J

    def jacobian_derivatives(self, X):
        """Jacobian and its derivatives ``dJ[..., k, i, j] = d_k (psi')_ij``."""
        X = np.asarray(X, dtype=float)
        n = self.dimension
        J = np.broadcast_to(np.eye(n), X.shape[:-1] + (n, n)).copy()
        dJ = np.zeros(X.shape[:-1] + (n, n, n))
        for t in self.displacements:
            _, Jt, dJt = t.evaluate(X, 2)
            J += Jt
            dJ += dJt
        return J, dJ

    def psi_inverse(self, Y, tol=1e-13, max_iter=50):
        """Invert ``psi`` by Newton iteration started at ``Y``."""
        Y = np.asarray(Y, dtype=float)
        X = Y.copy()
        for _ in range(max_iter):
            r = self.psi(X) - Y
            if np.max(np.abs(r), initial=0.0) < tol:
                break
            X = X - np.linalg.solve(self.jacobian(X), r[..., None])[..., 0]
        else:
            raise RuntimeError("Newton inversion of psi did not converge")
        return X

    def verify(self, resolution=200):
        """Minimum of ``det psi'`` on a grid over ``[-1, 1]^n``."""
        pts = _cube_points(self.dimension, resolution)
        dets = np.concatenate([np.linalg.det(self.jacobian(chunk)) for chunk in _chunks(pts)])
        return float(dets.min())

    def to_dict(self):
        return {"margin": self.margin, "displacements": [t.to_dict() for t in self.displacements]}


@dataclass(frozen=True)
class MediumBounds:
    g_min: float
    g_max: float
    rho_min: float
    rho_max: float
    m_min: float
    m_max: float
    resolution: int

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    max_deviation: float
    witness: tuple | None
    samples: int


@dataclass(frozen=True)
class Medium:
    """An admissible coefficient pair ``(m, g)`` on ``R^n``.

    Instances are immutable; all evaluation methods are pure.  Construct them
    through :func:`make_bump_density`, :func:`make_metric_bumps`,
    :func:`make_pullback_metric` or :func:`medium_from_dict`, which check the
    admissibility margin.  The bare constructor does not, so that
    inadmissible media can still be built for diagnostics.
    """

    kind: str
    dimension: int
    delta: float = DEFAULT_DELTA
    bumps: tuple = ()
    diffeo: DiffeoSpec | None = None
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind not in ("density", "metric"):
            raise ValueError(f"unknown medium kind {self.kind!r}")
        if int(self.dimension) < 2:
            raise ValueError("dimension must be at least 2")
        object.__setattr__(self, "dimension", int(self.dimension))
        object.__setattr__(self, "delta", float(self.delta))
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        bumps = tuple(b if isinstance(b, Bump) else Bump(**b) for b in self.bumps)
        for b in bumps:
            if len(b.center) != self.dimension:
                raise ValueError("bump center has the wrong dimension")
            if self.kind == "density" and b.matrix is not None:
                raise ValueError("density bumps take no matrix")
            if self.kind == "metric" and b.matrix is None:
                raise ValueError("metric bumps need a symmetric matrix")
        object.__setattr__(self, "bumps", bumps)
        if self.diffeo is not None:
            if self.kind != "metric":
                raise ValueError("a diffeomorphism only defines a metric medium")
            if self.diffeo.dimension != self.dimension:
                raise ValueError("diffeomorphism dimension mismatch")

    # -- structure -----------------------------------------------------
    @property
    def support_radius(self):
        """Radius of a ball containing every non-Euclidean point."""
        reaches = [b.reach for b in self.bumps]
        if self.diffeo is not None:
            reaches.append(self.diffeo.reach)
        return max(reaches, default=0.0)

    @property
    def is_euclidean(self):
        return not self.bumps and self.diffeo is None

    # -- scalar fields -------------------------------------------------
    def rho(self, X):
        X = np.asarray(X, dtype=float)
        out = np.ones(X.shape[:-1])
        if self.kind == "density":
            for b in self.bumps:
                out = out + b.amplitude * bump_profile(X, b.center, b.radius)
        return out

    def rho_gradient(self, X):
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape)
        if self.kind == "density":
            for b in self.bumps:
                out = out + b.amplitude * bump_profile(X, b.center, b.radius, 1)[1]
        return out

    def m(self, X):
        if self.kind == "density":
            return self.rho(X) ** ((2.0 - self.dimension) / 2.0)
        return np.ones(np.asarray(X).shape[:-1])

    # -- metric --------------------------------------------------------
    def metric(self, X):
        X = np.asarray(X, dtype=float)
        n = self.dimension
        eye = np.eye(n)
        if self.kind == "density":
            return self.rho(X)[..., None, None] * eye
        if self.diffeo is not None:
            J = self.diffeo.jacobian(X)
            G = np.swapaxes(J, -1, -2) @ J
        else:
            G = np.broadcast_to(eye, X.shape[:-1] + (n, n)).copy()
        for b in self.bumps:
            G = G + b.amplitude * bump_profile(X, b.center, b.radius)[..., None, None] * np.asarray(b.matrix)
        return G

    def metric_gradient(self, X):
        """``dG[..., k, i, j] = d_k g_ij`` in closed form."""
        X = np.asarray(X, dtype=float)
        n = self.dimension
        if self.kind == "density":
            return self.rho_gradient(X)[..., :, None, None] * np.eye(n)
        dG = np.zeros(X.shape[:-1] + (n, n, n))
        if self.diffeo is not None:
            J, dJ = self.diffeo.jacobian_derivatives(X)
            t = np.swapaxes(dJ, -1, -2) @ J[..., None, :, :]
            dG = t + np.swapaxes(t, -1, -2)
        for b in self.bumps:
            grad = bump_profile(X, b.center, b.radius, 1)[1]
            dG = dG + b.amplitude * grad[..., :, None, None] * np.asarray(b.matrix)
        return dG

    def metric_hessian(self, X, step=1e-5):
        """Second derivatives ``[..., k, l, i, j]`` by centred differences of :meth:`metric_gradient`."""
        X = np.asarray(X, dtype=float)
        n = self.dimension
        out = np.empty(X.shape[:-1] + (n, n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = step
            out[..., :, l, :, :] = (self.metric_gradient(X + e) - self.metric_gradient(X - e)) / (2 * step)
        return out

    def metric_inverse(self, X):
        return np.linalg.inv(self.metric(X))

    def weight(self, X):
        """``m sqrt(det g)``, the weight making the operator self-adjoint."""
        if self.kind == "density":
            return self.rho(X)
        return self.m(X) * np.sqrt(np.linalg.det(self.metric(X)))

    def flux_tensor(self, X):
        """``m sqrt(det g) g^{-1}``; the identity for density media."""
        X = np.asarray(X, dtype=float)
        n = self.dimension
        if self.kind == "density":
            return np.broadcast_to(np.eye(n), X.shape[:-1] + (n, n)).copy()
        G = self.metric(X)
        return (np.sqrt(np.linalg.det(G)))[..., None, None] * np.linalg.inv(G)

    def speed_norm(self, X, V):
        """``sqrt(v^T g(x) v)``."""
        G = self.metric(X)
        V = np.asarray(V, dtype=float)
        return np.sqrt(np.einsum("...i,...ij,...j->...", V, G, V))

    # -- serialisation -------------------------------------------------
    def to_dict(self):
        out = {
            "kind": self.kind,
            "dimension": self.dimension,
            "delta": self.delta,
            "bumps": [b.to_dict() for b in self.bumps],
        }
        if self.diffeo is not None:
            out["diffeo"] = self.diffeo.to_dict()
        if self.label:
            out["label"] = self.label
        return out

    def describe(self):
        if self.is_euclidean:
            return f"euclidean {self.kind} medium, n={self.dimension}"
        parts = [f"{len(self.bumps)} bump(s)"]
        if self.diffeo is not None:
            parts.append(f"pullback by {len(self.diffeo.displacements)} displacement term(s)")
        return f"{self.kind} medium n={self.dimension}, delta={self.delta}: " + ", ".join(parts)


def euclidean(dimension=2, kind="density", delta=DEFAULT_DELTA):
    return Medium(kind=kind, dimension=dimension, delta=delta, label="euclidean")


def _check_reach(reach, delta, what):
    if reach > 1.0 - delta + 1e-15:
        raise ValueError(f"{what} reaches |x|={reach:.6g}, beyond the admissible radius 1-delta={1 - delta:.6g}")


def make_bump_density(amplitude, center, radius, delta=DEFAULT_DELTA):
    """Density ``rho = 1 + amplitude * beta`` for one peak-normalised bump."""
    if amplitude <= -1.0:
        raise ValueError(f"amplitude {amplitude} makes the density non-positive")
    bump = Bump(amplitude, center, radius)
    _check_reach(bump.reach, delta, "bump support")
    return Medium("density", len(bump.center), delta, (bump,), label="bump-density")


def make_metric_bumps(bumps, dimension, delta=DEFAULT_DELTA, margin=1e-3, resolution=200):
    """Metric ``I + sum a_k beta_k S_k``; rejected if it fails to be positive definite."""
    medium = Medium("metric", dimension, delta, tuple(bumps), label="metric-bumps")
    for b in medium.bumps:
        _check_reach(b.reach, delta, "metric bump support")
    g_min = compute_bounds(medium, resolution).g_min
    if g_min <= margin:
        raise ValueError(f"metric is not uniformly positive definite (g_min={g_min:.3g})")
    return medium


def make_pullback_metric(spec, delta=DEFAULT_DELTA, resolution=200):
    """Metric ``g = psi'^T psi'`` pulled back from the Euclidean one by ``psi = id + d``."""
    if not isinstance(spec, DiffeoSpec):
        spec = DiffeoSpec(**spec)
    _check_reach(spec.reach, delta, "displacement support")
    det_min = spec.verify(resolution)
    if det_min <= spec.margin:
        raise ValueError(
            f"psi is not a diffeomorphism on the verification grid: min det psi' = {det_min:.4g} "
            f"<= margin {spec.margin}"
        )
    return Medium("metric", spec.dimension, delta, (), spec, label="pullback")


def _cube_points(n, resolution, half_width=1.0):
    axis = np.linspace(-half_width, half_width, int(resolution) + 1)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, n)


def _chunks(points, size=65536):
    for start in range(0, len(points), size):
        yield points[start : start + size]


def compute_bounds(medium, resolution=400):
    """Sampled extrema of ``rho``, ``m`` and the eigenvalues of ``g`` over ``[-1, 1]^n``.

    ``resolution`` counts grid intervals per axis, so the grid at ``2k``
    contains the grid at ``k`` and the bounds can only widen under
    refinement.  The Euclidean value 1 is always included because the medium
    is Euclidean outside the cube.
    """
    resolution = int(resolution)
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    pts = _cube_points(medium.dimension, resolution)
    lo = {"g": 1.0, "rho": 1.0, "m": 1.0}
    hi = dict(lo)
    for chunk in _chunks(pts):
        eig = np.linalg.eigvalsh(medium.metric(chunk))
        vals = {"g": eig, "rho": medium.rho(chunk), "m": medium.m(chunk)}
        for key, v in vals.items():
            lo[key] = min(lo[key], float(v.min()))
            hi[key] = max(hi[key], float(v.max()))
    return MediumBounds(lo["g"], hi["g"], lo["rho"], hi["rho"], lo["m"], hi["m"], resolution)


def shell_samples(n, samples, inner, outer):
    """Deterministic quasi-uniform points in the shell ``inner <= |x| <= outer``."""
    from scipy.stats import norm, qmc

    seq = qmc.Halton(d=n + 1, scramble=False).random(int(samples) + 1)[1:]
    dirs = norm.ppf(np.clip(seq[:, :n], 1e-12, 1 - 1e-12))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # uniform in volume between the two radii
    r = (inner**n + seq[:, n] * (outer**n - inner**n)) ** (1.0 / n)
    return dirs * r[:, None]


def check_admissible(medium, samples=4096):
    """Largest deviation of the medium from Euclidean on ``1-delta <= |x| <= 1+delta``."""
    if int(samples) < 1:
        raise ValueError("samples must be at least 1")
    n = medium.dimension
    pts = shell_samples(n, samples, 1.0 - medium.delta, 1.0 + medium.delta)
    if medium.kind == "density":
        dev = np.abs(medium.rho(pts) - 1.0)
    else:
        dev_g = np.max(np.abs(medium.metric(pts) - np.eye(n)), axis=(-1, -2))
        dev = np.maximum(dev_g, np.abs(medium.m(pts) - 1.0))
    k = int(np.argmax(dev))
    worst = float(dev[k])
    passed = worst == 0.0
    return AdmissibilityReport(passed, worst, None if passed else tuple(pts[k]), int(samples))


# -- config round trip ------------------------------------------------------


def medium_from_dict(data, check=True):
    data = dict(data)
    kind = data.get("kind")
    dim = data.get("dimension")
    if kind is None or dim is None:
        raise ValueError("medium spec needs 'kind' and 'dimension'")
    delta = float(data.get("delta", DEFAULT_DELTA))
    bumps = tuple(Bump(**b) for b in data.get("bumps") or ())
    diffeo = None
    if data.get("diffeo"):
        d = data["diffeo"]
        diffeo = DiffeoSpec(tuple(DisplacementTerm(**t) for t in d["displacements"]), d.get("margin", 0.05))
    medium = Medium(kind, dim, delta, bumps, diffeo, label=data.get("label", ""))
    if check:
        for b in bumps:
            _check_reach(b.reach, delta, "bump support")
        if kind == "density" and sum(min(b.amplitude, 0.0) for b in bumps) <= -1.0:
            raise ValueError("negative bump amplitudes may make the density non-positive")
        if diffeo is not None:
            _check_reach(diffeo.reach, delta, "displacement support")
            if diffeo.verify(100) <= diffeo.margin:
                raise ValueError("diffeo displacement does not define a diffeomorphism")
    return medium


def dump_medium(medium, path=None):
    text = yaml.safe_dump(medium.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_medium(source, check=True):
    """Parse a medium from a YAML string or file path."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        source = Path(source).read_text()
    return medium_from_dict(yaml.safe_load(source), check=check)
