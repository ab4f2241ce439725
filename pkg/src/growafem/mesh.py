"""Conforming triangulations of the unit square with newest-vertex bisection.

Every triangle is stored as ``(v0, v1, v2)`` in counter-clockwise order with
``v0`` the newest vertex; the refinement edge is always ``(v1, v2)``.

All meshes derived from one :func:`initial_mesh` call share a bisection
forest.  Vertices and triangles created by bisection get stable global ids in
that forest, so refining a coarsened region reproduces exactly the same
triangles and solution transfer between any two meshes of the same lineage is
a lookup plus midpoint averaging.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class MarkSet:
    """Triangle indices marked for refinement and for coarsening."""

    refine: frozenset = field(default_factory=frozenset)
    coarsen: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "refine", frozenset(int(i) for i in self.refine))
        object.__setattr__(self, "coarsen", frozenset(int(i) for i in self.coarsen))
        both = self.refine & self.coarsen
        if both:
            raise MeshError(f"triangles marked for refine and coarsen: {sorted(both)[:5]}")


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class _Forest:
    """Append-only store of every vertex and triangle ever created."""

    def __init__(self, coords: np.ndarray, triangles: np.ndarray):
        self.coords: list[tuple[float, float]] = [tuple(map(float, c)) for c in coords]
        self.vparents: list[tuple[int, int]] = [(-1, -1)] * len(self.coords)
        self.vdepth: list[int] = [0] * len(self.coords)
        self.midpoints: dict[tuple[int, int], int] = {}
        self.verts: list[tuple[int, int, int]] = [tuple(map(int, t)) for t in triangles]
        self.parent: list[int] = [-1] * len(self.verts)
        self.children: list[tuple[int, int] | None] = [None] * len(self.verts)
        self.generation: list[int] = [0] * len(self.verts)
        self.n_base_vertices = len(self.coords)

    def midpoint(self, a: int, b: int) -> int:
        key = _edge(a, b)
        gid = self.midpoints.get(key)
        if gid is None:
            (xa, ya), (xb, yb) = self.coords[a], self.coords[b]
            gid = len(self.coords)
            self.coords.append((0.5 * (xa + xb), 0.5 * (ya + yb)))
            self.vparents.append(key)
            self.vdepth.append(1 + max(self.vdepth[a], self.vdepth[b]))
            self.midpoints[key] = gid
        return gid

    def bisect(self, node: int) -> tuple[int, int]:
        kids = self.children[node]
        if kids is not None:
            return kids
        v0, v1, v2 = self.verts[node]
        m = self.midpoint(v1, v2)
        first = len(self.verts)
        self.verts.extend([(m, v0, v1), (m, v2, v0)])
        self.parent.extend([node, node])
        self.children.extend([None, None])
        g = self.generation[node] + 1
        self.generation.extend([g, g])
        kids = (first, first + 1)
        self.children[node] = kids
        return kids


class ReferenceMesh:
    """An active set of leaves of a bisection forest.

    Attributes
    ----------
    vertices : (V, 2) float array of reference coordinates
    triangles : (E, 3) int array, local vertex indices, newest vertex first
    generation : (E,) int array, bisection depth below the initial mesh
    version : int, incremented by every refine/coarsen call
    """

    def __init__(self, forest: _Forest, leaves: Iterable[int], version: int = 0):
        self._forest = forest
        self.leaves = np.asarray(list(leaves), dtype=np.int64)
        self.version = int(version)
        gverts = np.array([forest.verts[n] for n in self.leaves], dtype=np.int64).reshape(-1, 3)
        self.vertex_ids, inverse = np.unique(gverts, return_inverse=True)
        self.triangles = inverse.reshape(-1, 3)
        coords = forest.coords
        self.vertices = np.array([coords[g] for g in self.vertex_ids], dtype=float).reshape(-1, 2)
        self.generation = np.array([forest.generation[n] for n in self.leaves], dtype=np.int64)

    def __repr__(self):
        return (f"ReferenceMesh(vertices={self.n_vertices}, triangles={self.n_triangles}, "
                f"version={self.version})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def refinement_edges(self) -> np.ndarray:
        """(E, 2) local vertex indices of each triangle's refinement edge."""
        return self.triangles[:, 1:]

    def same_lineage(self, other: "ReferenceMesh") -> bool:
        return self._forest is other._forest

    def permuted(self, order) -> "ReferenceMesh":
        """Same mesh with the triangle list reordered (testing aid)."""
        return ReferenceMesh(self._forest, self.leaves[np.asarray(order)], self.version)

    # -- derived geometry ---------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def diameters(self) -> np.ndarray:
        """Longest edge of each triangle."""
        p = self.vertices[self.triangles]
        lengths = np.stack([np.linalg.norm(p[:, (k + 2) % 3] - p[:, (k + 1) % 3], axis=1)
                            for k in range(3)], axis=1)
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def min_angle(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.min(angles))

    # -- topology -----------------------------------------------------------
    @cached_property
    def _edge_tables(self):
        tri = self.triangles
        # local edge k is opposite local vertex k
        local = np.stack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]], axis=1).reshape(-1, 2)
        keys = np.sort(local, axis=1)
        edges, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        element_edges = inverse.reshape(-1, 3)
        owners = np.repeat(np.arange(len(tri)), 3)
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise MeshError("edge shared by more than two triangles")
        edge_elements = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        edge_elements[:, 0] = owners[order[starts]]
        two = counts == 2
        edge_elements[two, 1] = owners[order[starts[two] + 1]]
        return edges, edge_elements, element_edges

    @property
    def edges(self) -> np.ndarray:
        """(Ne, 2) sorted local vertex pairs."""
        return self._edge_tables[0]

    @property
    def edge_elements(self) -> np.ndarray:
        """(Ne, 2) adjacent triangles; second column is -1 on the boundary."""
        return self._edge_tables[1]

    @property
    def element_edges(self) -> np.ndarray:
        """(E, 3) edge index opposite each local vertex."""
        return self._edge_tables[2]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_elements[:, 1] < 0)

    def siblings(self) -> np.ndarray:
        """Index of each triangle's sibling in this mesh, or -1 if the sibling
        is not a leaf (or the triangle belongs to the initial mesh)."""
        f = self._forest
        pos = {int(n): i for i, n in enumerate(self.leaves)}
        out = np.full(self.n_triangles, -1, dtype=np.int64)
        for i, n in enumerate(self.leaves):
            p = f.parent[n]
            if p < 0:
                continue
            a, b = f.children[p]
            out[i] = pos.get(b if a == n else a, -1)
        return out

    def check(self, min_angle: float | None = None) -> None:
        """Raise :class:`MeshError` unless the mesh is a conforming, positively
        oriented cover of the unit square."""
        if np.any(self.signed_areas <= 0):
            raise MeshError("non-positive triangle orientation")
        total = float(np.sum(self.signed_areas))
        if abs(total - 1.0) > 1e-12:
            raise MeshError(f"triangle areas sum to {total!r}, expected 1")
        bnd = self.edges[self.boundary_edges]
        p, q = self.vertices[bnd[:, 0]], self.vertices[bnd[:, 1]]
        on_side = ((np.isclose(p[:, 0], q[:, 0]) & np.isin(p[:, 0], (0.0, 1.0)))
                   | (np.isclose(p[:, 1], q[:, 1]) & np.isin(p[:, 1], (0.0, 1.0))))
        if not np.all(on_side):
            raise MeshError("hanging node: unmatched edge inside the domain")
        if min_angle is not None and self.min_angle() < min_angle:
            raise MeshError(f"minimum angle {self.min_angle()} below {min_angle}")


def initial_mesh(n: int) -> ReferenceMesh:
    """Uniform triangulation of [0,1]^2 with 2n^2 triangles.

    Cell diagonals alternate in a criss-cross pattern.  The refinement edge of
    each triangle is its longest edge, ties broken by the lexicographically
    smallest vertex-index pair.
    """
    n = int(n)
    if n < 1:
        raise MeshError(f"subdivision count must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    coords = np.array([(x, y) for y in xs for x in xs])
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    oriented = []
    for t in tris:
        p = coords[list(t)]
        lengths = [np.linalg.norm(p[(k + 2) % 3] - p[(k + 1) % 3]) for k in range(3)]
        longest = max(lengths)
        cand = [k for k in range(3) if abs(lengths[k] - longest) <= 1e-14 * longest]
        k = min(cand, key=lambda k: sorted((t[(k + 1) % 3], t[(k + 2) % 3])))
        oriented.append((t[k], t[(k + 1) % 3], t[(k + 2) % 3]))
    forest = _Forest(coords, np.array(oriented))
    return ReferenceMesh(forest, range(len(oriented)), version=0)


def _validate_indices(mesh: ReferenceMesh, idx: Iterable[int]) -> list[int]:
    out = []
    for i in idx:
        i = int(i)
        if not 0 <= i < mesh.n_triangles:
            raise MeshError(f"triangle index {i} out of range [0, {mesh.n_triangles})")
        out.append(i)
    return out


def _as_indices(marks) -> Iterable[int]:
    if isinstance(marks, MarkSet):
        return marks.refine
    return marks


def refine(mesh: ReferenceMesh, marks) -> ReferenceMesh:
    """Bisect every marked triangle at least once, with conforming closure.

    ``marks`` is a :class:`MarkSet` (its ``refine`` set is used) or an
    iterable of triangle indices.
    """
    f = mesh._forest
    targets = [int(mesh.leaves[i]) for i in _validate_indices(mesh, _as_indices(marks))]
    leaves = set(int(n) for n in mesh.leaves)
    by_edge: dict[tuple[int, int], list[int]] = {}

    def add(node):
        v0, v1, v2 = f.verts[node]
        for e in (_edge(v1, v2), _edge(v2, v0), _edge(v0, v1)):
            by_edge.setdefault(e, []).append(node)

    def remove(node):
        v0, v1, v2 = f.verts[node]
        for e in (_edge(v1, v2), _edge(v2, v0), _edge(v0, v1)):
            by_edge[e].remove(node)

    for node in leaves:
        add(node)

    def split(node):
        remove(node)
        leaves.discard(node)
        for kid in f.bisect(node):
            leaves.add(kid)
            add(kid)

    def bisect(node):
        _, v1, v2 = f.verts[node]
        key = _edge(v1, v2)
        while True:
            others = [x for x in by_edge[key] if x != node]
            if not others:
                split(node)
                return
            nb = others[0]
            _, w1, w2 = f.verts[nb]
            if _edge(w1, w2) == key:
                split(node)
                split(nb)
                return
            bisect(nb)

    for node in targets:
        if node in leaves:
            bisect(node)
    return ReferenceMesh(f, sorted(leaves), mesh.version + 1)


def coarsen(mesh: ReferenceMesh, marks) -> ReferenceMesh:
    """Undo one level of bisection wherever every triangle around a bisection
    vertex is marked.  Triangles of the initial mesh are never merged;
    marks that cannot be honoured are skipped.
    """
    if isinstance(marks, MarkSet):
        marks = marks.coarsen
    f = mesh._forest
    marked = {int(mesh.leaves[i]) for i in _validate_indices(mesh, marks)}
    leaves = set(int(n) for n in mesh.leaves)
    by_vertex: dict[int, list[int]] = {}
    for node in leaves:
        for v in f.verts[node]:
            by_vertex.setdefault(v, []).append(node)

    done: set[int] = set()
    for node in sorted(marked):
        p = f.parent[node]
        if p < 0:
            continue
        m = f.verts[node][0]
        if m in done:
            continue
        patch = by_vertex[m]
        parents = {f.parent[x] for x in patch}
        ok = (all(x in marked and f.verts[x][0] == m for x in patch)
              and len(parents) in (1, 2)
              and all(p_ >= 0 and set(f.children[p_]) <= set(patch) for p_ in parents)
              and len(patch) == 2 * len(parents))
        if not ok:
            continue
        done.add(m)
        for x in patch:
            leaves.discard(x)
        leaves.update(parents)
    if not done:
        return ReferenceMesh(f, mesh.leaves, mesh.version + 1)
    return ReferenceMesh(f, sorted(leaves), mesh.version + 1)


def adapt(mesh: ReferenceMesh, marks: MarkSet) -> ReferenceMesh:
    """Refine then coarsen according to ``marks`` (indices of ``mesh``).

    Returns a mesh whose version is one above ``mesh.version``.
    """
    keep = {int(mesh.leaves[i]) for i in _validate_indices(mesh, marks.coarsen)}
    refined = refine(mesh, marks.refine)
    if keep:
        pos = [i for i, n in enumerate(refined.leaves) if int(n) in keep]
        refined = coarsen(refined, pos)
    refined.version = mesh.version + 1
    return refined


def interpolate_between(old: ReferenceMesh, new: ReferenceMesh, coeffs) -> np.ndarray:
    """Transfer P1 coefficients from ``old`` to ``new``.

    Vertices present in both meshes keep their values; bisection vertices
    absent from ``old`` receive the mean of their parent-edge endpoints, which
    evaluates the old piecewise-linear function exactly.  ``coeffs`` may have
    leading axes (e.g. one row per species); the last axis indexes vertices.
    """
    if not old.same_lineage(new):
        raise MeshError("meshes do not share a bisection lineage")
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != old.n_vertices:
        raise MeshError(f"expected {old.n_vertices} coefficients, got {coeffs.shape[-1]}")
    f = old._forest
    n_all = len(f.coords)
    lead = coeffs.shape[:-1]
    vals = np.zeros(lead + (n_all,))
    known = np.zeros(n_all, dtype=bool)
    vals[..., old.vertex_ids] = coeffs
    known[old.vertex_ids] = True

    missing = new.vertex_ids[~known[new.vertex_ids]]
    if missing.size:
        vparents = np.asarray(f.vparents, dtype=np.int64)
        depth = np.asarray(f.vdepth, dtype=np.int64)
        needed = set()
        frontier = missing
        while frontier.size:
            needed.update(frontier.tolist())
            par = vparents[frontier].ravel()
            if np.any(par < 0):
                raise MeshError("initial-mesh vertex missing from source mesh")
            par = np.unique(par)
            frontier = par[~known[par]]
            frontier = np.array([g for g in frontier if g not in needed], dtype=np.int64)
        needed = np.array(sorted(needed), dtype=np.int64)
        for d in np.unique(depth[needed]):
            ids = needed[depth[needed] == d]
            a, b = vparents[ids, 0], vparents[ids, 1]
            vals[..., ids] = 0.5 * (vals[..., a] + vals[..., b])
    return vals[..., new.vertex_ids].copy()
