import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from growafem.mesh import (MarkSet, MeshError, adapt, coarsen, initial_mesh, interpolate_between,
                           refine)


def conforming(mesh):
    mesh.check()
    counts = np.bincount(mesh.element_edges.reshape(-1), minlength=len(mesh.edges))
    assert counts.max() <= 2


@pytest.mark.parametrize("n, tris, verts", [(1, 2, 4), (2, 8, 9), (5, 50, 36)])
def test_initial_counts(n, tris, verts):
    m = initial_mesh(n)
    assert (m.n_triangles, m.n_vertices) == (tris, verts)
    conforming(m)


def test_initial_area_and_refinement_edge():
    m = initial_mesh(4)
    assert abs(m.signed_areas.sum() - 1.0) <= 1e-12
    p = m.vertices[m.triangles]
    ref = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    assert np.allclose(ref, m.diameters)


def test_initial_rejects_zero():
    with pytest.raises(MeshError):
        initial_mesh(0)


def test_initial_deterministic():
    a, b = initial_mesh(3), initial_mesh(3)
    assert np.array_equal(a.triangles, b.triangles)
    assert np.array_equal(a.vertices, b.vertices)


def test_markset_disjoint():
    with pytest.raises(MeshError):
        MarkSet({1, 2}, {2})


def test_refine_both_triangles():
    m = refine(initial_mesh(1), [0, 1])
    assert m.n_triangles == 4 and m.n_vertices == 5
    conforming(m)
    assert [0.5, 0.5] in m.vertices.tolist()


@pytest.mark.parametrize("k", [0, 1])
def test_refine_one_triangle_closure(k):
    # both halves share the diagonal as refinement edge, so the neighbour is forced
    m = refine(initial_mesh(1), [k])
    assert m.n_triangles == 4
    conforming(m)


def test_refine_empty_only_bumps_version():
    m0 = initial_mesh(2)
    m1 = refine(m0, [])
    assert m1.version == m0.version + 1
    assert np.array_equal(m0.triangles, m1.triangles)


def test_refine_invalid_index():
    with pytest.raises(MeshError):
        refine(initial_mesh(1), [7])


def test_coarsen_restores_parent():
    m0 = initial_mesh(1)
    m1 = refine(m0, [0, 1])
    m2 = coarsen(m1, range(4))
    assert m2.n_triangles == 2
    assert sorted(m2.leaves.tolist()) == sorted(m0.leaves.tolist())
    assert np.array_equal(m2.vertices, m0.vertices)


def test_coarsen_single_child_is_skipped():
    m1 = refine(initial_mesh(1), [0, 1])
    m2 = coarsen(m1, [0])
    assert m2.n_triangles == 4


def test_coarsen_generation_zero_is_floor():
    m0 = initial_mesh(2)
    m1 = coarsen(m0, range(m0.n_triangles))
    assert m1.n_triangles == m0.n_triangles


def test_refine_then_coarsen_is_identity_on_connectivity():
    m0 = initial_mesh(3)
    m1 = refine(m0, [0, 5, 11])
    created = [i for i, g in enumerate(m1.generation) if g > 0]
    m2 = m1
    for _ in range(int(m1.generation.max())):
        m2 = coarsen(m2, [i for i, g in enumerate(m2.generation) if g > 0])
    assert created
    assert sorted(m2.leaves.tolist()) == sorted(m0.leaves.tolist())


def test_interpolate_constant_and_linear():
    m0 = initial_mesh(2)
    m1 = refine(refine(m0, [0, 3]), [1, 2])
    ones = interpolate_between(m0, m1, np.ones(m0.n_vertices))
    assert np.array_equal(ones, np.ones(m1.n_vertices))
    lin = m0.vertices.sum(axis=1)
    out = interpolate_between(m0, m1, lin)
    assert np.max(np.abs(out - m1.vertices.sum(axis=1))) == 0.0


def test_interpolate_hat_midpoints():
    m0 = initial_mesh(1)
    hat = np.zeros(m0.n_vertices)
    a = int(m0.triangles[0, 1])
    hat[a] = 1.0
    m1 = refine(m0, [0, 1])
    out = interpolate_between(m0, m1, hat)
    for g, x in zip(m1.vertex_ids, m1.vertices):
        if g not in m0.vertex_ids:
            # the new vertex is the midpoint of the diagonal (v1, v2) of triangle 0
            ends = m0.triangles[0, 1:]
            assert out[list(m1.vertex_ids).index(g)] == pytest.approx(0.5 * hat[ends].sum())


def test_interpolate_leading_axes_and_coarsening():
    m0 = initial_mesh(2)
    m1 = refine(m0, range(8))
    coeffs = np.stack([m1.vertices[:, 0], m1.vertices[:, 1] ** 2])
    m2 = coarsen(m1, range(m1.n_triangles))
    out = interpolate_between(m1, m2, coeffs)
    assert out.shape == (2, m2.n_vertices)
    assert np.allclose(out[1], m2.vertices[:, 1] ** 2)


def test_interpolate_rejects_other_lineage():
    with pytest.raises(MeshError):
        interpolate_between(initial_mesh(2), initial_mesh(2), np.zeros(9))


def test_adapt_version_and_disjoint_marks():
    m0 = refine(initial_mesh(2), [0])
    m1 = adapt(m0, MarkSet({2}, {0, 1}))
    assert m1.version == m0.version + 1
    conforming(m1)


def test_permuted_mesh_same_geometry():
    m = refine(initial_mesh(3), [2, 7])
    order = np.random.default_rng(0).permutation(m.n_triangles)
    p = m.permuted(order)
    assert np.allclose(np.sort(p.signed_areas), np.sort(m.signed_areas))


@settings(max_examples=5, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_random_refine_coarsen_rounds(seed):
    rng = np.random.default_rng(seed)
    m = initial_mesh(2)
    floor = 0.5 * m.min_angle()
    for _ in range(100):
        E = m.n_triangles
        # keep the mesh bounded: refine a few, coarsen many
        k = rng.integers(0, 3) if E < 400 else 0
        ref = set(rng.choice(E, size=k, replace=False).tolist())
        rest = [i for i in range(E) if i not in ref]
        crs = set(rng.choice(rest, size=min(len(rest), rng.integers(0, E)), replace=False).tolist()) if rest else set()
        m = adapt(m, MarkSet(ref, crs))
        conforming(m)
        m.check(min_angle=floor)
