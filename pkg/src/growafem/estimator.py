"""Residual error indicators for the pulled-back reaction-diffusion system.

For species ``i`` and triangle ``s``::

    eta_{i|s}^2 = h_s^2 || d_t(J u) - D_i div(W grad u) - J (f_i(u) + src_i) ||^2_{L2(s)}
                + 1/2 sum_{e in s} |e| || D_i [[W grad u . nu]] ||^2_{L2(e)}

with ``W = J K K^T``, ``h_s`` the triangle diameter, and the jump on a
boundary edge replaced by twice the one-sided flux.  The time derivative uses
the stepper's backward difference ``(J^n u^n - J^{n-1} u^{n-1}) / tau``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .fem import P1Space


@dataclass
class IndicatorField:
    """Local indicators ``eta[i, s]`` for species ``i`` on triangle ``s``."""

    eta: np.ndarray
    t: float
    mesh_version: int

    @property
    def element_values(self) -> np.ndarray:
        """Species-combined indicator ``(sum_i eta_{i|s}^2)^(1/2)`` per triangle."""
        return np.sqrt(np.sum(self.eta ** 2, axis=0))

    @cached_property
    def global_value(self) -> float:
        return float(np.sqrt(np.sum(self.eta ** 2)))

    @property
    def n_elements(self) -> int:
        return self.eta.shape[1]


class _EdgeGeometry:
    """Per-mesh edge data: lengths, midpoints and outward normals."""

    def __init__(self, space: P1Space, edge_points: int = 1):
        mesh = space.mesh
        tri = mesh.triangles
        p = mesh.vertices[tri]
        # local edge k runs p[k+1] -> p[k+2]; outward normal for a CCW triangle
        tangent = np.stack([p[:, (k + 2) % 3] - p[:, (k + 1) % 3] for k in range(3)], axis=1)
        self.length = np.linalg.norm(tangent, axis=2)  # (E, 3)
        self.normal = np.stack([tangent[..., 1], -tangent[..., 0]], axis=2) / self.length[..., None]
        if edge_points == 1:
            s, w = np.array([0.5]), np.array([1.0])
        else:
            g, gw = np.polynomial.legendre.leggauss(edge_points)
            s, w = 0.5 * (g + 1.0), 0.5 * gw
        start = np.stack([p[:, (k + 1) % 3] for k in range(3)], axis=1)
        self.points = start[:, :, None, :] + s[None, None, :, None] * tangent[:, :, None, :]  # (E,3,P,2)
        self.weights = w
        ee = mesh.element_edges
        ends = mesh.edge_elements
        me = np.arange(len(tri))[:, None]
        other = np.where(ends[ee, 0] == me, ends[ee, 1], ends[ee, 0])
        self.neighbor = other  # (E, 3), -1 on the boundary


def _edge_geometry(space: P1Space, edge_points: int) -> _EdgeGeometry:
    cache = space.__dict__.setdefault("_edge_geometry", {})
    if edge_points not in cache:
        cache[edge_points] = _EdgeGeometry(space, edge_points)
    return cache[edge_points]


def element_residual(space: P1Space, u_new, u_prev, tau, t, domain_map, kinetics, D,
                     source=None, species=None) -> np.ndarray:
    """``h_s^2 ||r_i||^2_{L2(s)}`` for every triangle: shape (m, E).

    ``u_new`` and ``u_prev`` are (m, ndofs) coefficient arrays on the same
    mesh at times ``t`` and ``t - tau``.
    """
    u_new = np.atleast_2d(np.asarray(u_new, dtype=float))
    u_prev = np.atleast_2d(np.asarray(u_prev, dtype=float))
    D = np.atleast_1d(np.asarray(D, dtype=float))
    Jn, _, _ = space.metric(domain_map, t)
    Jp, _, _ = space.metric(domain_map, t - tau)
    uq = space.at_quadrature(u_new)            # (m, E, Q)
    upq = space.at_quadrature(u_prev)
    grad = space.gradient(u_new)               # (m, E, 2)
    divW = space.cached("divW", domain_map, t, lambda: domain_map.tensor_divergence(
        space.qpoints.reshape(-1, 2), t).reshape(space.dx.shape + (2,)))
    react = np.asarray(kinetics.evaluate(uq), dtype=float)
    if source is not None:
        react = react + space.quadrature_values(source, t)
    r = (Jn * uq - Jp * upq) / tau \
        - D[:, None, None] * (divW[None, :, :, 0] * grad[:, :, None, 0]
                              + divW[None, :, :, 1] * grad[:, :, None, 1]) \
        - Jn * react
    sq = r * r
    # fixed-order accumulation keeps each element's value independent of the others
    acc = np.zeros(sq.shape[:2])
    for q in range(sq.shape[2]):
        acc += space.dx[:, q] * sq[:, :, q]
    out = space.mesh.diameters ** 2 * acc
    return out if species is None else out[species]


def edge_jump_term(space: P1Space, u_new, t, domain_map, D, edge_points: int = 1,
                   species=None) -> np.ndarray:
    """``1/2 sum_e |e| ||D [[W grad u . nu]]||^2_{L2(e)}`` per triangle: (m, E)."""
    u_new = np.atleast_2d(np.asarray(u_new, dtype=float))
    D = np.atleast_1d(np.asarray(D, dtype=float))
    geo = _edge_geometry(space, edge_points)
    E = space.n_elements
    P = len(geo.weights)
    W = domain_map.diffusion_tensor(geo.points.reshape(-1, 2), t).reshape(E, 3, P, 2, 2)
    nu = geo.normal[:, :, None, :]
    Wn = W[..., 0] * nu[..., 0:1] + W[..., 1] * nu[..., 1:2]  # W nu (W symmetric), (E,3,P,2)
    grad = space.gradient(u_new)  # (m, E, 2)
    own = (Wn[None, ..., 0] * grad[:, :, None, None, 0]
           + Wn[None, ..., 1] * grad[:, :, None, None, 1])
    nb = geo.neighbor
    interior = nb >= 0
    nb_grad = grad[:, np.where(interior, nb, 0), :]  # (m, E, 3, 2)
    other = Wn[None, ..., 0] * nb_grad[..., None, 0] + Wn[None, ..., 1] * nb_grad[..., None, 1]
    jump = np.where(interior[None, :, :, None], own - other, 2.0 * own)
    jump = D[:, None, None, None] * jump
    sq = np.zeros(jump.shape[:3])
    for k in range(P):
        sq += geo.weights[k] * jump[..., k] ** 2
    sq = sq * geo.length[None]  # ||.||^2_{L2(e)}
    terms = geo.length[None] * sq
    out = 0.5 * (terms[:, :, 0] + terms[:, :, 1] + terms[:, :, 2])
    return out if species is None else out[species]


def compute_indicators(space: P1Space, u_new, u_prev, tau, t, domain_map, kinetics, D,
                       source=None, edge_points: int = 1) -> IndicatorField:
    res = element_residual(space, u_new, u_prev, tau, t, domain_map, kinetics, D, source)
    jmp = edge_jump_term(space, u_new, t, domain_map, D, edge_points)
    return IndicatorField(np.sqrt(res + jmp), float(t), space.version)
