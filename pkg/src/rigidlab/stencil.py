"""Uniform grids and the self-adjoint flux-form operator.

The operator ``L u = sum_ij d_i (A_ij d_j u)`` with ``A = m sqrt(det g) g^{-1}``
is discretised as minus the gradient of the discrete quadratic form

    Q(u) = h^n [ sum_i sum_edges A_ii (D_i u)^2 + sum_{i != j} sum_corners A_ij G_i u G_j u ]

where ``D_i`` is the forward difference on the edge midpoints and ``G_i``
the same difference averaged onto the ``(i, j)`` corner points.  Diagonal
coefficients live on edge midpoints, off-diagonal ones on corners.  The
resulting matrix is symmetric, reduces to the standard ``2n+1``-point
Laplacian when ``A = I`` and is exact on affine functions whenever ``A`` is
constant.  The wave solver, the harmonic-coordinate solver and the Laplacian
residual of the arrival function all use this one stencil.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Node-centred uniform grid on ``[-half_width, half_width]^n``.

    Nodes sit at integer multiples of ``h``, so grids with the same spacing
    nest inside each other.
    """

    dimension: int
    half_width: float
    h: float

    def __post_init__(self):
        cells = self.half_width / self.h
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValueError(f"half_width {self.half_width} is not a multiple of h={self.h}")

    @classmethod
    def from_points(cls, dimension, half_width, points_per_axis):
        return cls(dimension, half_width, 2.0 * half_width / (points_per_axis - 1))

    @property
    def points_per_axis(self):
        return 2 * int(round(self.half_width / self.h)) + 1

    @property
    def shape(self):
        return (self.points_per_axis,) * self.dimension

    @cached_property
    def axis(self):
        k = int(round(self.half_width / self.h))
        return np.arange(-k, k + 1) * self.h

    def points(self, staggered=()):
        """Node coordinates ``(*shape, n)``; axes listed in ``staggered`` use midpoints."""
        axes = []
        for i in range(self.dimension):
            a = self.axis
            axes.append(0.5 * (a[1:] + a[:-1]) if i in staggered else a)
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def index_of(self, x):
        """Integer index of the node nearest to ``x``."""
        k = np.rint((np.asarray(x, dtype=float) + self.half_width) / self.h).astype(int)
        return tuple(np.clip(k, 0, self.points_per_axis - 1))

    def radius(self):
        return np.linalg.norm(self.points(), axis=-1)


def _slice(ndim, axis, sl):
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


def _diff(u, axis, h):
    return np.diff(u, axis=axis) / h


def _diff_adjoint(f, axis, h):
    """``-D^T f``: one-sided at the two ends, the flux divergence inside."""
    pad_hi = [(0, 0)] * f.ndim
    pad_lo = [(0, 0)] * f.ndim
    pad_hi[axis] = (0, 1)
    pad_lo[axis] = (1, 0)
    return (np.pad(f, pad_hi) - np.pad(f, pad_lo)) / h


def _avg(u, axis):
    return 0.5 * (u[_slice(u.ndim, axis, slice(1, None))] + u[_slice(u.ndim, axis, slice(None, -1))])


def _avg_adjoint(f, axis):
    pad_hi = [(0, 0)] * f.ndim
    pad_lo = [(0, 0)] * f.ndim
    pad_hi[axis] = (0, 1)
    pad_lo[axis] = (1, 0)
    return 0.5 * (np.pad(f, pad_hi) + np.pad(f, pad_lo))


class FluxOperator:
    """Discrete ``sum_ij d_i(A_ij d_j .)`` for a medium sampled on a grid.

    ``apply`` returns values at every node; boundary rows hold the
    one-sided (partial) stencil, which is what the energy bookkeeping needs.
    """

    def __init__(self, medium, grid):
        if medium.dimension != grid.dimension:
            raise ValueError("medium and grid dimensions differ")
        self.grid = grid
        self.medium = medium
        n = grid.dimension
        self.weight = medium.weight(grid.points())
        self.diag = []
        for i in range(n):
            A = medium.flux_tensor(grid.points(staggered=(i,)))
            self.diag.append(np.ascontiguousarray(A[..., i, i]))
        self.cross = {}
        if medium.kind == "metric":
            for i in range(n):
                for j in range(i + 1, n):
                    A = medium.flux_tensor(grid.points(staggered=(i, j)))[..., i, j]
                    if np.any(A != 0.0):
                        self.cross[(i, j)] = np.ascontiguousarray(A)
        self._identity_diag = all(np.all(a == 1.0) for a in self.diag)

    def apply(self, u):
        h = self.grid.h
        out = np.zeros_like(u)
        for i, a in enumerate(self.diag):
            flux = _diff(u, i, h)
            if not self._identity_diag:
                flux *= a
            out += _diff_adjoint(flux, i, h)
        for (i, j), a in self.cross.items():
            gi = _avg(_diff(u, i, h), j)
            gj = _avg(_diff(u, j, h), i)
            out += _diff_adjoint(_avg_adjoint(a * gj, j), i, h)
            out += _diff_adjoint(_avg_adjoint(a * gi, i), j, h)
        return out

    def quadratic_form(self, u):
        """``Q(u) = -h^n u . L u`` summed over all nodes (the discrete Dirichlet energy)."""
        return -self.grid.h**self.grid.dimension * float(np.sum(u * self.apply(u)))

    def matrix(self):
        """Sparse matrix of :meth:`apply` in C (row-major) node ordering."""
        N = self.grid.points_per_axis
        n = self.grid.dimension
        h = self.grid.h
        D1 = sp.diags([-np.ones(N - 1), np.ones(N - 1)], [0, 1], shape=(N - 1, N)) / h
        M1 = sp.diags([0.5 * np.ones(N - 1), 0.5 * np.ones(N - 1)], [0, 1], shape=(N - 1, N))
        I1 = sp.identity(N)

        def along(op_per_axis):
            mats = [op_per_axis.get(k, I1) for k in range(n)]
            out = mats[0]
            for m in mats[1:]:
                out = sp.kron(out, m)
            return out.tocsr()

        L = sp.csr_matrix((N**n, N**n))
        for i, a in enumerate(self.diag):
            D = along({i: D1})
            L = L - D.T @ sp.diags(a.ravel()) @ D
        for (i, j), a in self.cross.items():
            Gi = along({i: D1, j: M1})
            Gj = along({i: M1, j: D1})
            A = sp.diags(a.ravel())
            L = L - Gi.T @ A @ Gj - Gj.T @ A @ Gi
        return L.tocsr()


def centered_gradient(u, h):
    """Centred differences inside, one-sided on the faces; shape ``(*u.shape, n)``."""
    grads = np.gradient(u, h)
    if u.ndim == 1:
        grads = [grads]
    return np.stack(grads, axis=-1)
