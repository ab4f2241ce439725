import math

import numpy as np
import pytest

from growafem.geometry import IdentityMap, growing_square
from growafem.kinetics import (CosineManufactured, KineticsError, Schnakenberg, ZeroKinetics,
                               manufactured_source, schnakenberg)


def test_steady_state():
    k = schnakenberg(1.0, 0.1, 0.9)
    assert np.allclose(k.steady_state, [1.0, 0.9])
    assert np.allclose(k.evaluate(k.steady_state), 0.0, atol=1e-15)


def test_origin_value():
    k = Schnakenberg(2.0, 0.3, 0.5)
    assert np.allclose(k.evaluate(np.zeros(2)), [0.6, 1.0])


def test_split_at_steady_state():
    k = Schnakenberg(1.0, 0.1, 0.9)
    c, g = k.split(np.array([1.0, 0.9]))
    assert g[0] - c[0] * 1.0 == pytest.approx(0.0, abs=1e-15)
    assert g[1] - c[1] * 0.9 == pytest.approx(0.0, abs=1e-15)


def test_split_consistency_random():
    rng = np.random.default_rng(0)
    k = Schnakenberg(0.7, 0.2, 1.3)
    u = rng.uniform(-2, 3, size=(2, 1000))
    c, g = k.split(u)
    assert np.max(np.abs(g - c * u - k.evaluate(u))) <= 1e-12


def test_jacobian_finite_differences():
    rng = np.random.default_rng(1)
    k = Schnakenberg(1.5, 0.1, 0.9)
    for u in rng.uniform(0.1, 2.0, size=(20, 2)):
        jac = k.jacobian(u)
        h = 1e-6
        fd = np.stack([(k.evaluate(u + h * e) - k.evaluate(u - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
        assert np.allclose(jac, fd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("bad", [(0, 1, 1), (1, -1, 1), (1, 1, math.inf)])
def test_rejects_bad_parameters(bad):
    with pytest.raises(KineticsError):
        Schnakenberg(*bad)


def test_zero_kinetics():
    z = ZeroKinetics(3)
    u = np.ones((3, 4))
    assert np.all(z.evaluate(u) == 0)
    c, g = z.split(u)
    assert np.all(c == 0) and np.all(g == 0)


def test_manufactured_neumann_and_derivatives():
    case = CosineManufactured(Schnakenberg(), (1.0, 10.0))
    s = np.linspace(0, 1, 7)
    edge = np.concatenate([np.column_stack([np.zeros(7), s]), np.column_stack([np.ones(7), s])])
    g = case.grad(edge, 0.3)
    assert np.allclose(g[..., 0], 0.0, atol=1e-15)
    rng = np.random.default_rng(2)
    p = rng.uniform(size=(5, 2))
    h = 1e-5
    fd = (case.value(p, 0.3 + h) - case.value(p, 0.3 - h)) / (2 * h)
    assert np.allclose(case.dt(p, 0.3), fd, atol=1e-9)
    fd_g = np.stack([(case.value(p + h * e, 0.3) - case.value(p - h * e, 0.3)) / (2 * h) for e in np.eye(2)], -1)
    assert np.allclose(case.grad(p, 0.3), fd_g, atol=1e-8)
    fd_h = np.stack([(case.grad(p + h * e, 0.3) - case.grad(p - h * e, 0.3)) / (2 * h) for e in np.eye(2)], -1)
    assert np.allclose(case.hessian(p, 0.3), fd_h, atol=1e-6)


def test_source_vanishes_for_constant_steady_state():
    k = Schnakenberg()

    class Constant:
        D = np.array([1.0, 10.0])
        kinetics = k

        def value(self, p, t):
            return np.repeat(k.steady_state[:, None], len(p), axis=1)

        def dt(self, p, t):
            return np.zeros((2, len(p)))

        def grad(self, p, t):
            return np.zeros((2, len(p), 2))

        def hessian(self, p, t):
            return np.zeros((2, len(p), 2, 2))

    p = np.random.default_rng(0).uniform(size=(10, 2))
    assert np.allclose(manufactured_source(Constant(), IdentityMap(1.0), p, 0.5), 0.0, atol=1e-15)


def test_source_identity_map_closed_form():
    k = Schnakenberg()
    D = np.array([1.0, 10.0])
    case = CosineManufactured(k, D)
    p = np.random.default_rng(3).uniform(size=(20, 2))
    t = 0.4
    mode = math.exp(-t) * np.cos(math.pi * p[:, 0]) * np.cos(math.pi * p[:, 1])
    u = case.value(p, t)
    expect = (-1 + 2 * D[:, None] * math.pi ** 2) * mode[None] + k.evaluate(k.steady_state)[:, None] \
        - k.evaluate(u)
    assert np.allclose(case.source(IdentityMap(1.0), p, t), expect, atol=1e-12)


def test_source_dilation_includes_growth_term():
    k = Schnakenberg()
    D = np.array([1.0, 10.0])
    case = CosineManufactured(k, D)
    p = np.random.default_rng(4).uniform(size=(10, 2))
    s_id = case.source(IdentityMap(1.0), p, 0.0)
    s_dil = case.source(growing_square(), p, 0.0)
    # at t=0 the dilation is the identity except for dJ/dt = 2 pi
    assert np.allclose(s_dil - s_id, 2 * math.pi * case.value(p, 0.0), atol=1e-12)


def test_source_matches_finite_difference_operator():
    """Independent check of the divergence term on the ridge surface."""
    from growafem.geometry import ridge_surface
    k = Schnakenberg()
    D = np.array([0.5, 2.0])
    case = CosineManufactured(k, D)
    mp = ridge_surface()
    x = np.array([[0.8, 0.15]])
    t = 170.0
    h = 1e-4

    def flux(y):
        W = mp.diffusion_tensor(y, t)
        return np.einsum("ab,ib->ia", W[0], case.grad(y, t)[:, 0, :])

    div = sum((flux(x + h * e) - flux(x - h * e))[:, i] / (2 * h) for i, e in enumerate(np.eye(2)))
    ms = mp.metric_terms(x, t)
    u = case.value(x, t)[:, 0]
    expect = (ms.dJdt * u + ms.J * case.dt(x, t)[:, 0]) / ms.J - D * div / ms.J - k.evaluate(u)
    assert np.allclose(case.source(mp, x, t)[:, 0], expect, rtol=1e-6)
