"""P1 Lagrange space and assembly of the pulled-back mass, stiffness and load.

Quadrature: the symmetric 6-point rule on triangles, exact for polynomials
of degree 4.  Metric data are sampled pointwise at the quadrature points.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import scipy.sparse as sp

from .mesh import ReferenceMesh

_A = 0.445948490915964886
_B = 0.091576213509770743
_WA = 0.223381589678011466
_WB = 0.109951743655321868

# barycentric coordinates (Q, 3) and weights summing to 1
QUAD_BARY = np.array([
    [_A, _A, 1 - 2 * _A], [_A, 1 - 2 * _A, _A], [1 - 2 * _A, _A, _A],
    [_B, _B, 1 - 2 * _B], [_B, 1 - 2 * _B, _B], [1 - 2 * _B, _B, _B],
])
QUAD_WEIGHTS = np.array([_WA] * 3 + [_WB] * 3)


class AssemblyError(ValueError):
    pass


class P1Space:
    """Continuous piecewise-linear functions on a :class:`ReferenceMesh`.

    One degree of freedom per vertex.  Per-element geometry (areas, basis
    gradients, quadrature points) is precomputed, and metric samples are
    cached for the few most recent ``(map, t)`` pairs because one time step
    asks for the same times several times.
    """

    def __init__(self, mesh: ReferenceMesh):
        self.mesh = mesh
        self.version = mesh.version
        tri = mesh.triangles
        p = mesh.vertices[tri]
        self.area = mesh.signed_areas.copy()
        # gradient of barycentric coordinate k: rot(p_{k+2} - p_{k+1}) / (2 area)
        grads = np.empty((len(tri), 3, 2))
        for k in range(3):
            e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
            grads[:, k, 0] = -e[:, 1]
            grads[:, k, 1] = e[:, 0]
        self.grads = grads / (2.0 * self.area)[:, None, None]
        self.basis = QUAD_BARY  # phi_k at quadrature point q: basis[q, k]
        self.qweights = QUAD_WEIGHTS
        self.qpoints = np.matmul(QUAD_BARY[None], p)
        self.dx = self.area[:, None] * QUAD_WEIGHTS[None, :]  # (E, Q)
        self._outer = np.einsum("qa,qb->qab", QUAD_BARY, QUAD_BARY).reshape(len(QUAD_WEIGHTS), 9)

        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        n = self.ndofs
        key = rows * n + cols
        uniq, self._scatter = np.unique(key, return_inverse=True)
        self._scatter = self._scatter.reshape(-1)
        urow, ucol = np.divmod(uniq, n)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(urow, minlength=n))])
        self._indices = ucol
        self._cache: OrderedDict = OrderedDict()

    @property
    def ndofs(self) -> int:
        return self.mesh.n_vertices

    @property
    def n_elements(self) -> int:
        return self.mesh.n_triangles

    # -- helpers ------------------------------------------------------------
    def cached(self, tag, obj, t, compute):
        """Memoise ``compute()`` under ``(tag, obj, t)`` for the last few keys."""
        key = (tag, id(obj), float(t))
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit[1]
        out = compute()
        self._cache[key] = (obj, out)  # holding obj keeps its id unique
        if len(self._cache) > 12:
            self._cache.popitem(last=False)
        return out

    def metric(self, domain_map, t):
        """Cached ``(J, W, dJdt)`` at the quadrature points: (E, Q), (E, Q, 2, 2), (E, Q)."""
        def compute():
            ms = domain_map.metric_terms(self.qpoints.reshape(-1, 2), t)
            E, Q = self.dx.shape
            return ms.J.reshape(E, Q), ms.tensor.reshape(E, Q, 2, 2), ms.dJdt.reshape(E, Q)
        return self.cached("metric", domain_map, t, compute)

    def quadrature_values(self, fun, t):
        """Cached ``fun(points, t)`` at the quadrature points, reshaped to (..., E, Q)."""
        def compute():
            v = np.asarray(fun(self.qpoints.reshape(-1, 2), t), dtype=float)
            return v.reshape(v.shape[:-1] + self.dx.shape)
        return self.cached("values", fun, t, compute)

    def _to_csr(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._scatter, weights=local.reshape(-1), minlength=len(self._indices))
        n = self.ndofs
        return sp.csr_matrix((data, self._indices.copy(), self._indptr.copy()), shape=(n, n))

    def at_quadrature(self, coeffs) -> np.ndarray:
        """Values of P1 functions at the quadrature points: (..., E, Q)."""
        c = np.asarray(coeffs, dtype=float)[..., self.mesh.triangles]  # (..., E, 3)
        return c @ self.basis.T

    def gradient(self, coeffs) -> np.ndarray:
        """Elementwise constant gradients: (..., E, 2)."""
        c = np.asarray(coeffs, dtype=float)[..., self.mesh.triangles]
        g = self.grads
        return c[..., 0:1] * g[:, 0] + c[..., 1:2] * g[:, 1] + c[..., 2:3] * g[:, 2]

    def evaluate(self, coeffs, points) -> np.ndarray:
        """Point evaluation by barycentric search (for tests and diagnostics)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        p = self.mesh.vertices[self.mesh.triangles]
        c = np.asarray(coeffs, dtype=float)
        out = np.empty(len(pts))
        for i, x in enumerate(pts):
            lam = np.einsum("ekd,ed->ek", self.grads, x[None, :] - p[:, 0, :])
            lam[:, 0] += 1.0
            inside = np.flatnonzero(np.all(lam >= -1e-12, axis=1))
            if inside.size == 0:
                raise AssemblyError(f"point {x} outside the mesh")
            e = inside[0]
            out[i] = lam[e] @ c[self.mesh.triangles[e]]
        return out


def interpolant(space: P1Space, g) -> np.ndarray:
    """Lagrange interpolant: coefficient ``a`` is ``g`` at vertex ``a``.

    ``g`` maps an (N, 2) array of points to (N,) or (m, N) values.
    """
    vals = np.asarray(g(space.mesh.vertices), dtype=float)
    bad = np.argwhere(~np.isfinite(vals))
    if bad.size:
        a = bad[0][-1]
        raise AssemblyError(f"non-finite interpolation value at vertex {a}: {space.mesh.vertices[a]}")
    return vals


def assemble_weighted_mass(space: P1Space, domain_map, t, weight=None) -> sp.csr_matrix:
    """``M[a, b] = int J w phi_a phi_b`` with ``w`` given at quadrature points (E, Q)."""
    J = space.metric(domain_map, t)[0]
    wq = space.dx * J if weight is None else space.dx * J * weight
    return space._to_csr(wq @ space._outer)


def assemble_mass(space: P1Space, domain_map, t) -> sp.csr_matrix:
    """``M[a, b] = int J phi_a phi_b`` (cached per space and time)."""
    return space.cached("mass", domain_map, t, lambda: assemble_weighted_mass(space, domain_map, t))


def assemble_stiffness(space: P1Space, domain_map, t, D: float = 1.0) -> sp.csr_matrix:
    """``S[a, b] = int D grad phi_b . (J K K^T) grad phi_a``."""
    W = space.metric(domain_map, t)[1]
    Wbar = np.matmul(space.dx[:, None, :], W.reshape(W.shape[0], W.shape[1], 4)).reshape(-1, 2, 2) * D
    G = space.grads
    local = np.matmul(np.matmul(G, Wbar), G.transpose(0, 2, 1))
    return space._to_csr(local)


def assemble_load(space: P1Space, domain_map, t, values) -> np.ndarray:
    """``b[a] = int J v phi_a``.

    ``values`` is a callable of (N, 2) points or an array of quadrature values
    with shape (E, Q) or (m, E, Q); the result is (ndofs,) or (m, ndofs).
    """
    if callable(values):
        v = np.asarray(values(space.qpoints.reshape(-1, 2)), dtype=float)
        v = v.reshape(v.shape[:-1] + space.dx.shape)
    else:
        v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        idx = np.argwhere(~np.isfinite(v))[0]
        e, q = idx[-2], idx[-1]
        raise AssemblyError(f"non-finite load integrand in element {e} at {space.qpoints[e, q]}")
    J = space.metric(domain_map, t)[0]
    wq = v * (space.dx * J)
    local = wq @ space.basis
    tri = space.mesh.triangles.ravel()
    lead = local.shape[:-2]
    flat = local.reshape((-1, local.shape[-2] * 3))
    out = np.stack([np.bincount(tri, weights=row, minlength=space.ndofs) for row in flat])
    return out.reshape(lead + (space.ndofs,))


def domain_measure(space: P1Space, domain_map, t) -> float:
    """``|Omega_t| = int J``."""
    J = space.metric(domain_map, t)[0]
    return float(np.sum(space.dx * J))
