import math

import numpy as np
import pytest

from growafem.fem import (QUAD_BARY, QUAD_WEIGHTS, AssemblyError, P1Space, assemble_load, assemble_mass,
                          assemble_stiffness, assemble_weighted_mass, domain_measure, interpolant)
from growafem.geometry import IdentityMap, growing_square, ridge_surface
from growafem.mesh import initial_mesh, refine

MASS_LOCAL = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
# ordering: right-angle vertex first, then the two acute vertices
STIFF_LOCAL = 0.5 * np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]])


def _right_angle_first(p, tri):
    for k in range(3):
        a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
        if abs(np.dot(p[b] - p[a], p[c] - p[a])) < 1e-14:
            return [a, b, c]
    raise AssertionError("no right angle")


def _hand_assembled(mesh):
    n = mesh.n_vertices
    M, S = np.zeros((n, n)), np.zeros((n, n))
    for tri in mesh.triangles:
        idx = _right_angle_first(mesh.vertices, tri)
        M[np.ix_(idx, idx)] += MASS_LOCAL
        S[np.ix_(idx, idx)] += STIFF_LOCAL
    return M, S


@pytest.mark.parametrize("i, j", [(i, j) for i in range(5) for j in range(5 - i)])
def test_quadrature_exact_to_degree_four(i, j):
    # reference triangle (0,0), (1,0), (0,1): int x^i y^j = i! j! / (i + j + 2)!
    p = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    q = QUAD_BARY @ p
    val = 0.5 * np.sum(QUAD_WEIGHTS * q[:, 0] ** i * q[:, 1] ** j)
    assert val == pytest.approx(math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2), abs=1e-15)


def test_quadrature_weights():
    assert QUAD_WEIGHTS.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(QUAD_BARY.sum(axis=1), 1.0)


def test_local_matrices_unit_right_triangles():
    mesh = initial_mesh(1)
    space = P1Space(mesh)
    M, S = _hand_assembled(mesh)
    mp = IdentityMap(1.0)
    assert np.max(np.abs(assemble_mass(space, mp, 0.0).toarray() - M)) <= 1e-12
    assert np.max(np.abs(assemble_stiffness(space, mp, 0.0).toarray() - S)) <= 1e-12


def test_dilation_scaling():
    # rho(1/2) = 2: J = 4 and J K K^T = I
    space = P1Space(initial_mesh(1))
    M, S = _hand_assembled(space.mesh)
    mp = growing_square()
    assert np.allclose(assemble_mass(space, mp, 0.5).toarray(), 4 * M, atol=1e-12)
    assert np.allclose(assemble_stiffness(space, mp, 0.5).toarray(), S, atol=1e-12)


def test_stiffness_scales_with_D():
    space = P1Space(initial_mesh(3))
    mp = ridge_surface()
    S1 = assemble_stiffness(space, mp, 100.0)
    S3 = assemble_stiffness(space, mp, 100.0, D=3.0)
    assert np.allclose(S3.toarray(), 3 * S1.toarray(), atol=1e-14)


@pytest.mark.parametrize("mp, t", [(growing_square(), 0.5), (ridge_surface(), 250.0)])
def test_structural_properties(mp, t):
    mesh = refine(initial_mesh(4), [0, 3, 7, 12])
    space = P1Space(mesh)
    M = assemble_mass(space, mp, t)
    S = assemble_stiffness(space, mp, t)
    ones = np.ones(space.ndofs)
    assert M.sum() == pytest.approx(domain_measure(space, mp, t), rel=1e-13)
    assert np.max(np.abs(S @ ones)) <= 1e-12
    assert abs(M - M.T).max() <= 1e-14
    assert abs(S - S.T).max() <= 1e-12
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.standard_normal(space.ndofs)
        assert v @ (M @ v) > 0
        w = v - v.mean()
        assert w @ (S @ w) > 0


def test_dilation_mass_total():
    space = P1Space(initial_mesh(5))
    assert assemble_mass(space, growing_square(), 0.5).sum() == pytest.approx(4.0, rel=1e-14)


def test_element_permutation_invariance():
    mesh = refine(initial_mesh(3), [1, 4])
    order = np.random.default_rng(5).permutation(mesh.n_triangles)
    a, b = P1Space(mesh), P1Space(mesh.permuted(order))
    mp = ridge_surface()
    for asm in (assemble_mass, assemble_stiffness):
        assert np.max(np.abs(asm(a, mp, 123.0).toarray() - asm(b, mp, 123.0).toarray())) <= 1e-12


def test_weighted_mass_constant_weight():
    space = P1Space(initial_mesh(2))
    mp = growing_square()
    w = np.full(space.dx.shape, 2.5)
    assert np.allclose(assemble_weighted_mass(space, mp, 0.3, w).toarray(),
                       2.5 * assemble_mass(space, mp, 0.3).toarray(), atol=1e-14)


def test_load_of_constant_and_linear():
    space = P1Space(initial_mesh(4))
    mp = growing_square()
    b = assemble_load(space, mp, 0.5, lambda p: np.ones(len(p)))
    assert b.sum() == pytest.approx(4.0, rel=1e-14)
    # int x J = 4 * 1/2 on the reference square
    b = assemble_load(space, mp, 0.5, lambda p: p[:, 0])
    assert b.sum() == pytest.approx(2.0, rel=1e-14)
    # the load of a P1 function equals the mass matrix applied to its coefficients
    c = space.mesh.vertices @ np.array([0.3, -1.2]) + 0.4
    b = assemble_load(space, mp, 0.5, space.at_quadrature(c))
    assert np.allclose(b, assemble_mass(space, mp, 0.5) @ c, atol=1e-14)


def test_load_multiple_species_shape():
    space = P1Space(initial_mesh(2))
    vals = np.stack([np.ones(space.dx.shape), 2 * np.ones(space.dx.shape)])
    b = assemble_load(space, IdentityMap(1.0), 0.0, vals)
    assert b.shape == (2, space.ndofs)
    assert np.allclose(b[1], 2 * b[0])


def test_load_rejects_non_finite():
    space = P1Space(initial_mesh(2))
    vals = np.ones(space.dx.shape)
    vals[3, 2] = np.nan
    with pytest.raises(AssemblyError, match="element 3"):
        assemble_load(space, IdentityMap(1.0), 0.0, vals)


def test_interpolant_is_exact_at_vertices_and_second_order():
    g = lambda p: np.sin(2 * p[:, 0]) * np.exp(p[:, 1])
    errs = []
    for n in (8, 16, 32):
        space = P1Space(initial_mesh(n))
        c = interpolant(space, g)
        assert np.array_equal(c, g(space.mesh.vertices))
        diff = space.at_quadrature(c) - g(space.qpoints.reshape(-1, 2)).reshape(space.dx.shape)
        errs.append(math.sqrt(np.sum(space.dx * diff ** 2)))
    rates = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert min(rates) > 1.9


def test_interpolant_rejects_non_finite():
    space = P1Space(initial_mesh(1))
    with pytest.raises(AssemblyError, match="vertex"):
        interpolant(space, lambda p: np.where(p[:, 0] > 0.5, np.nan, 1.0))


def test_gradient_and_evaluate():
    space = P1Space(initial_mesh(3))
    c = space.mesh.vertices @ np.array([2.0, -3.0]) + 1.0
    assert np.allclose(space.gradient(c), [2.0, -3.0])
    assert np.allclose(space.evaluate(c, [[0.25, 0.6], [1.0, 1.0]]), [1.0 + 0.5 - 1.8, 0.0])
    with pytest.raises(AssemblyError):
        space.evaluate(c, [[1.5, 0.5]])
