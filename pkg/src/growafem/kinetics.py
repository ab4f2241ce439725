"""Reaction kinetics and manufactured solutions.

State arrays carry the species on the first axis: ``u`` has shape ``(m, ...)``.
"""
from __future__ import annotations

import math

import numpy as np


class KineticsError(ValueError):
    pass


class Kinetics:
    """Reaction terms ``f``, their Jacobian and the semi-implicit split.

    The split returns ``(c, g)`` evaluated at the lagged state such that the
    reaction term used by the time stepper for species ``i`` is
    ``g_i(u_prev) - c_i(u_prev) * u_i_new``.
    """

    m = 1
    name = "kinetics"

    def evaluate(self, u):
        raise NotImplementedError

    def jacobian(self, u):
        raise NotImplementedError

    def split(self, u_prev):
        raise NotImplementedError

    def __call__(self, u):
        return self.evaluate(u)


class ZeroKinetics(Kinetics):
    """``f = 0`` for ``m`` species (pure diffusion)."""

    name = "none"

    def __init__(self, m: int = 2):
        self.m = int(m)

    def evaluate(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def jacobian(self, u):
        u = np.asarray(u, dtype=float)
        return np.zeros((self.m,) + u.shape)

    def split(self, u_prev):
        z = np.zeros_like(np.asarray(u_prev, dtype=float))
        return z, z.copy()


class Schnakenberg(Kinetics):
    """``f1 = gamma (k1 - u1 + u1^2 u2)``, ``f2 = gamma (k2 - u1^2 u2)``."""

    m = 2
    name = "schnakenberg"

    def __init__(self, gamma: float = 1.0, k1: float = 0.1, k2: float = 0.9):
        for key, val in (("gamma", gamma), ("k1", k1), ("k2", k2)):
            if not (0 < val < math.inf):
                raise KineticsError(f"{key} must be positive and finite, got {val}")
        self.gamma, self.k1, self.k2 = float(gamma), float(k1), float(k2)

    def __repr__(self):
        return f"Schnakenberg(gamma={self.gamma}, k1={self.k1}, k2={self.k2})"

    @property
    def steady_state(self) -> np.ndarray:
        s = self.k1 + self.k2
        return np.array([s, self.k2 / s ** 2])

    def evaluate(self, u):
        u1, u2 = np.asarray(u, dtype=float)
        q = u1 * u1 * u2
        return self.gamma * np.stack([self.k1 - u1 + q, self.k2 - q])

    def jacobian(self, u):
        u1, u2 = np.asarray(u, dtype=float)
        g = self.gamma
        return np.array([[g * (-1 + 2 * u1 * u2), g * u1 * u1],
                         [g * (-2 * u1 * u2), g * (-u1 * u1)]])

    def split(self, u_prev):
        # species 1: gamma (k1 + u1 u2 u1_new - u1_new); species 2: gamma (k2 - u1^2 u2_new)
        u1, u2 = np.asarray(u_prev, dtype=float)
        g = self.gamma
        c = np.stack([g * (1.0 - u1 * u2), g * u1 * u1])
        rhs = np.stack([np.full_like(u1, g * self.k1), np.full_like(u1, g * self.k2)])
        return c, rhs


def schnakenberg(gamma: float, k1: float, k2: float) -> Schnakenberg:
    return Schnakenberg(gamma, k1, k2)


class CosineManufactured:
    """Exact solution ``u_i = exp(-t) cos(pi xi1) cos(pi xi2) + offset_i``.

    The offset defaults to the kinetics' steady state.  Its normal derivative
    vanishes on the boundary of the unit square, so it is compatible with the
    natural boundary condition for any map whose diffusion tensor is diagonal.
    """

    def __init__(self, kinetics: Kinetics, D, offset=None):
        self.kinetics = kinetics
        self.D = np.asarray(D, dtype=float)
        if self.D.shape != (kinetics.m,):
            raise KineticsError(f"need {kinetics.m} diffusion coefficients, got {self.D.shape}")
        if offset is None:
            offset = getattr(kinetics, "steady_state", np.zeros(kinetics.m))
        self.offset = np.asarray(offset, dtype=float)

    @property
    def m(self) -> int:
        return self.kinetics.m

    def jet(self, p, t):
        """Value (m, N), time derivative (m, N), gradient (m, N, 2) and
        Hessian (m, N, 2, 2) in one pass."""
        p = np.asarray(p, dtype=float).reshape(-1, 2)
        e = math.exp(-t)
        a1, a2 = math.pi * p[:, 0], math.pi * p[:, 1]
        c1, c2, s1, s2 = np.cos(a1), np.cos(a2), np.sin(a1), np.sin(a2)
        mode = e * c1 * c2
        g = np.stack([-math.pi * e * s1 * c2, -math.pi * e * c1 * s2], axis=1)
        H = np.empty((len(p), 2, 2))
        H[:, 0, 0] = H[:, 1, 1] = -math.pi ** 2 * mode
        H[:, 0, 1] = H[:, 1, 0] = math.pi ** 2 * e * s1 * s2
        m = self.m
        return (mode[None, :] + self.offset[:, None],
                np.broadcast_to(-mode, (m, len(p))),
                np.broadcast_to(g, (m,) + g.shape),
                np.broadcast_to(H, (m,) + H.shape))

    def value(self, p, t):
        return self.jet(p, t)[0]

    def dt(self, p, t):
        return self.jet(p, t)[1].copy()

    def grad(self, p, t):
        """(m, N, 2)"""
        return self.jet(p, t)[2].copy()

    def hessian(self, p, t):
        """(m, N, 2, 2)"""
        return self.jet(p, t)[3].copy()

    def source(self, domain_map, p, t):
        return manufactured_source(self, domain_map, p, t)

    def source_function(self, domain_map):
        """Callable ``(pts, t) -> (m, N)`` for the time stepper."""
        return lambda p, t: manufactured_source(self, domain_map, p, t)


def manufactured_source(case, domain_map, p, t) -> np.ndarray:
    """Source ``s`` such that ``case`` solves the pulled-back system with
    reaction ``f + s``:

    ``s_i = (1/J) d_t(J u_i) - (D_i/J) div(J K K^T grad u_i) - f_i(u)``.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    ms = domain_map.metric_terms(p, t)
    W = ms.tensor
    divW = domain_map.tensor_divergence(p, t)
    if hasattr(case, "jet"):
        u, ut, gu, Hu = case.jet(p, t)
    else:
        u, ut, gu, Hu = case.value(p, t), case.dt(p, t), case.grad(p, t), case.hessian(p, t)
    time_part = (ms.dJdt[None, :] * u + ms.J[None, :] * ut) / ms.J[None, :]
    div_flux = (divW[None, :, 0] * gu[..., 0] + divW[None, :, 1] * gu[..., 1]
                + W[None, :, 0, 0] * Hu[..., 0, 0] + W[None, :, 1, 1] * Hu[..., 1, 1]
                + W[None, :, 0, 1] * (Hu[..., 0, 1] + Hu[..., 1, 0]))
    diff_part = case.D[:, None] * div_flux / ms.J[None, :]
    return time_part - diff_part - case.kinetics.evaluate(u)
