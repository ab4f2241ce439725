"""Time-dependent maps from the reference square to the physical domain.

All evaluation routines are vectorised: ``xi`` is an ``(N, 2)`` array (a single
``(2,)`` point is also accepted and squeezed back on output) and ``t`` a
scalar time.  The metric quantities are

* ``K``: inverse Jacobian for planar maps, ``diag(1/|d1 A|, 1/|d2 A|)`` for
  surfaces,
* ``J``: Jacobian determinant, ``|d1 A| |d2 A|`` for surfaces,
* ``dJdt``: its time derivative,

and the diffusion tensor ``W = J K K^T`` that appears in the pulled-back
Laplacian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

FD_TIME_REL_STEP = 1e-4
FD_SPACE_STEP = 1e-6
# outer step when differentiating a metric that is itself a finite difference
FD_NESTED_STEP = 1e-4
SINGULAR_J = 1e-14


class GeometryError(ValueError):
    pass


@dataclass
class MetricSample:
    K: np.ndarray
    J: np.ndarray
    dJdt: np.ndarray

    @property
    def tensor(self) -> np.ndarray:
        """``J K K^T``."""
        return _jkkt(self.K, self.J)


def _jkkt(K, J):
    k00, k01, k10, k11 = K[..., 0, 0], K[..., 0, 1], K[..., 1, 0], K[..., 1, 1]
    W = np.empty(K.shape)
    W[..., 0, 0] = J * (k00 * k00 + k01 * k01)
    W[..., 1, 1] = J * (k10 * k10 + k11 * k11)
    W[..., 0, 1] = W[..., 1, 0] = J * (k00 * k10 + k01 * k11)
    return W


def _points(xi) -> tuple[np.ndarray, bool]:
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    return xi.reshape(-1, 2), single


def _fd_time(fun, t, T):
    """Fourth-order centred difference of ``fun`` at ``t``."""
    d = FD_TIME_REL_STEP * max(1.0, T)
    return (-fun(t + 2 * d) + 8 * fun(t + d) - 8 * fun(t - d) + fun(t - 2 * d)) / (12 * d)


class DomainMap:
    """Base class; subclasses implement ``_evaluate`` and ``_jacobian``.

    ``_jacobian`` returns the ``(N, dim, 2)`` array of tangent vectors
    ``d A / d xi_j`` as columns.
    """

    kind = "custom"
    dim = 2

    def __init__(self, T: float = 1.0):
        if not T > 0:
            raise GeometryError(f"time horizon must be positive, got {T}")
        self.T = float(T)

    def _check_time(self, t):
        slack = 1e-9 * max(1.0, self.T)
        if t < -slack or t > self.T + slack:
            raise GeometryError(f"time {t} outside [0, {self.T}]")

    # -- interface ----------------------------------------------------------
    def __call__(self, xi, t):
        return self.evaluate(xi, t)

    def evaluate(self, xi, t) -> np.ndarray:
        self._check_time(t)
        pts, single = _points(xi)
        out = self._evaluate(pts, float(t))
        return out[0] if single else out

    def jacobian(self, xi, t) -> np.ndarray:
        self._check_time(t)
        pts, single = _points(xi)
        out = self._jacobian(pts, float(t))
        return out[0] if single else out

    def metric_terms(self, xi, t) -> MetricSample:
        self._check_time(t)
        pts, single = _points(xi)
        K, J = self._metric(pts, float(t))
        self._check_positive(J, pts, t)
        dJdt = self._dJdt(pts, float(t))
        if single:
            return MetricSample(K[0], J[0], dJdt[0])
        return MetricSample(K, J, dJdt)

    def diffusion_tensor(self, xi, t) -> np.ndarray:
        """``W = J K K^T`` at each point, shape ``(N, 2, 2)``."""
        pts, single = _points(xi)
        W = self._tensor(pts, float(t))
        return W[0] if single else W

    def tensor_divergence(self, xi, t) -> np.ndarray:
        """Row divergence of ``W``: ``(div W)_j = sum_i d_i W_ij``."""
        self._check_time(t)
        pts, single = _points(xi)
        out = self._tensor_divergence(pts, float(t))
        return out[0] if single else out

    def orthogonality_defect(self, xi, t) -> np.ndarray:
        """``|d1A . d2A| / (|d1A| |d2A|)``; zero for an orthogonal parameterisation."""
        self._check_time(t)
        pts, single = _points(xi)
        Jm = self._jacobian(pts, float(t))
        a, b = Jm[:, :, 0], Jm[:, :, 1]
        out = np.abs(np.einsum("ij,ij->i", a, b)) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        return out[0] if single else out

    # -- defaults -----------------------------------------------------------
    def _jacobian(self, pts, t):
        h = FD_SPACE_STEP
        cols = []
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            cols.append((self._evaluate(pts + e, t) - self._evaluate(pts - e, t)) / (2 * h))
        return np.stack(cols, axis=-1)

    def _metric(self, pts, t):
        Jm = self._jacobian(pts, t)
        if Jm.shape[1] == 2:
            J = Jm[:, 0, 0] * Jm[:, 1, 1] - Jm[:, 0, 1] * Jm[:, 1, 0]
            safe = np.where(np.abs(J) > 0, J, 1.0)
            K = np.empty_like(Jm)
            K[:, 0, 0] = Jm[:, 1, 1] / safe
            K[:, 1, 1] = Jm[:, 0, 0] / safe
            K[:, 0, 1] = -Jm[:, 0, 1] / safe
            K[:, 1, 0] = -Jm[:, 1, 0] / safe
            return K, J
        n1 = np.linalg.norm(Jm[:, :, 0], axis=1)
        n2 = np.linalg.norm(Jm[:, :, 1], axis=1)
        K = np.zeros((len(pts), 2, 2))
        K[:, 0, 0] = 1.0 / n1
        K[:, 1, 1] = 1.0 / n2
        return K, n1 * n2

    def _dJdt(self, pts, t):
        return _fd_time(lambda s: self._metric(pts, s)[1], t, self.T)

    def _tensor(self, pts, t):
        K, J = self._metric(pts, t)
        return _jkkt(K, J)

    def _analytic_jacobian(self) -> bool:
        return type(self)._jacobian is not DomainMap._jacobian

    def _tensor_divergence(self, pts, t):
        h = FD_SPACE_STEP if self._analytic_jacobian() else FD_NESTED_STEP
        div = np.zeros((len(pts), 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            dW = (self._tensor(pts + e, t) - self._tensor(pts - e, t)) / (2 * h)
            div += dW[:, i, :]
        return div

    def _check_positive(self, J, pts, t):
        bad = np.flatnonzero(~(J > SINGULAR_J))
        if bad.size:
            k = bad[0]
            raise GeometryError(
                f"singular map: J={J[k]!r} at xi=({pts[k, 0]}, {pts[k, 1]}), t={t}")


class IdentityMap(DomainMap):
    kind = "identity"

    def _evaluate(self, pts, t):
        return pts.copy()

    def _jacobian(self, pts, t):
        return np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()

    def _metric(self, pts, t):
        return np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy(), np.ones(len(pts))

    def _dJdt(self, pts, t):
        return np.zeros(len(pts))

    def _tensor_divergence(self, pts, t):
        return np.zeros((len(pts), 2))


class AnisotropicMap(DomainMap):
    """``A(xi, t) = (rho1(t) xi1, rho2(t) xi2)``."""

    kind = "anisotropic_planar"

    def __init__(self, rho1, drho1, rho2, drho2, T=1.0):
        super().__init__(T)
        self.rho1, self.drho1 = rho1, drho1
        self.rho2, self.drho2 = rho2, drho2

    def _factors(self, t):
        return np.float64(self.rho1(t)), np.float64(self.rho2(t))

    def _evaluate(self, pts, t):
        r1, r2 = self._factors(t)
        return pts * np.array([r1, r2])

    def _jacobian(self, pts, t):
        r1, r2 = self._factors(t)
        return np.broadcast_to(np.diag([r1, r2]), (len(pts), 2, 2)).copy()

    def _metric(self, pts, t):
        r1, r2 = self._factors(t)
        with np.errstate(divide="ignore"):
            K = np.broadcast_to(np.diag([1.0 / r1, 1.0 / r2]), (len(pts), 2, 2)).copy()
        return K, np.full(len(pts), r1 * r2)

    def _dJdt(self, pts, t):
        r1, r2 = self._factors(t)
        return np.full(len(pts), self.drho1(t) * r2 + r1 * self.drho2(t))

    def _tensor_divergence(self, pts, t):
        # W = diag(r2/r1, r1/r2) is constant in space
        return np.zeros((len(pts), 2))


class DilationMap(AnisotropicMap):
    """Isotropic growth ``A(xi, t) = rho(t) xi``: ``J = rho^2``, ``K = I/rho``."""

    kind = "isotropic_dilation"

    def __init__(self, rho, drho, T=1.0):
        super().__init__(rho, drho, rho, drho, T)
        self.rho, self.drho = rho, drho

    def _factors(self, t):
        r = np.float64(self.rho(t))
        return r, r

    def _dJdt(self, pts, t):
        return np.full(len(pts), 2.0 * self.rho(t) * self.drho(t))


@dataclass(frozen=True)
class Height:
    """Graph height ``h(xi, t)`` with the derivatives the surface metric needs.

    ``grad`` -> (N, 2), ``grad_t`` -> (N, 2) (time derivative of the gradient),
    ``hessian`` -> (N, 2, 2).
    """

    value: Callable
    grad: Callable
    grad_t: Callable
    hessian: Callable


def quartic_ridge_height(amplitude: float = 4.0, period: float = 500.0) -> Height:
    """``h = amplitude * sin(pi t / period) * (xi1 - xi2)^4``."""
    w = math.pi / period

    def s(t):
        return amplitude * math.sin(w * t)

    def ds(t):
        return amplitude * w * math.cos(w * t)

    def value(p, t):
        d2 = (p[:, 0] - p[:, 1]) ** 2
        return s(t) * d2 * d2

    def _pair(c, p):
        d = p[:, 0] - p[:, 1]
        g = np.empty((len(p), 2))
        g[:, 0] = c * d * d * d
        g[:, 1] = -g[:, 0]
        return g

    def grad(p, t):
        return _pair(4.0 * s(t), p)

    def grad_t(p, t):
        return _pair(4.0 * ds(t), p)

    def hessian(p, t):
        d = p[:, 0] - p[:, 1]
        c = 12.0 * s(t) * d * d
        H = np.empty((len(p), 2, 2))
        H[:, 0, 0] = c
        H[:, 1, 1] = c
        H[:, 0, 1] = -c
        H[:, 1, 0] = -c
        return H

    return Height(value, grad, grad_t, hessian)


class SurfaceMap(DomainMap):
    """Graph surface ``A(xi, t) = (xi1, xi2, h(xi, t))`` in R^3.

    The metric uses the orthogonal-parameterisation formulas
    ``K = diag(1/|d1A|, 1/|d2A|)``, ``J = |d1A| |d2A|`` whether or not the
    tangents are actually orthogonal; see :meth:`orthogonality_defect`.
    """

    kind = "orthogonal_surface"
    dim = 3

    def __init__(self, height: Height, T=1.0):
        super().__init__(T)
        self.height = height

    def _evaluate(self, pts, t):
        return np.column_stack([pts, self.height.value(pts, t)])

    def _jacobian(self, pts, t):
        g = self.height.grad(pts, t)
        out = np.zeros((len(pts), 3, 2))
        out[:, 0, 0] = 1.0
        out[:, 1, 1] = 1.0
        out[:, 2, :] = g
        return out

    def _norms(self, pts, t):
        g = self.height.grad(pts, t)
        return np.sqrt(1.0 + g[:, 0] ** 2), np.sqrt(1.0 + g[:, 1] ** 2), g

    def _metric(self, pts, t):
        a, b, _ = self._norms(pts, t)
        K = np.zeros((len(pts), 2, 2))
        K[:, 0, 0] = 1.0 / a
        K[:, 1, 1] = 1.0 / b
        return K, a * b

    def _dJdt(self, pts, t):
        a, b, g = self._norms(pts, t)
        gt = self.height.grad_t(pts, t)
        return g[:, 0] * gt[:, 0] / a * b + a * g[:, 1] * gt[:, 1] / b

    def _tensor(self, pts, t):
        a, b, _ = self._norms(pts, t)
        W = np.zeros((len(pts), 2, 2))
        W[:, 0, 0] = b / a
        W[:, 1, 1] = a / b
        return W

    def _tensor_divergence(self, pts, t):
        a, b, g = self._norms(pts, t)
        H = self.height.hessian(pts, t)
        # d_j a = g1 H_1j / a,  d_j b = g2 H_2j / b
        da1 = g[:, 0] * H[:, 0, 0] / a
        db1 = g[:, 1] * H[:, 1, 0] / b
        da2 = g[:, 0] * H[:, 0, 1] / a
        db2 = g[:, 1] * H[:, 1, 1] / b
        div1 = (db1 * a - b * da1) / a ** 2
        div2 = (da2 * b - a * db2) / b ** 2
        return np.column_stack([div1, div2])


class CustomMap(DomainMap):
    """User-supplied map ``fun(pts (N,2), t) -> (N, dim)``.

    ``jac`` (returning ``(N, dim, 2)``) and ``dJdt`` are optional; missing
    derivatives fall back to finite differences.  A 3-component map is
    treated as a surface and uses the orthogonal-parameterisation metric.
    """

    def __init__(self, fun, T=1.0, dim=2, jac=None, dJdt=None):
        super().__init__(T)
        if dim not in (2, 3):
            raise GeometryError(f"ambient dimension must be 2 or 3, got {dim}")
        self.dim = dim
        self._fun, self._jac, self._djdt = fun, jac, dJdt

    def _analytic_jacobian(self) -> bool:
        return self._jac is not None

    def _evaluate(self, pts, t):
        return np.asarray(self._fun(pts, t), dtype=float).reshape(len(pts), self.dim)

    def _jacobian(self, pts, t):
        if self._jac is not None:
            return np.asarray(self._jac(pts, t), dtype=float)
        return super()._jacobian(pts, t)

    def _dJdt(self, pts, t):
        if self._djdt is not None:
            return np.asarray(self._djdt(pts, t), dtype=float)
        return super()._dJdt(pts, t)


def sine_growth(amplitude: float, period: float):
    """``rho(t) = 1 + amplitude sin(pi t / period)`` and its derivative."""
    w = math.pi / period

    def rho(t):
        return 1.0 + amplitude * math.sin(w * t)

    def drho(t):
        return amplitude * w * math.cos(w * t)

    return rho, drho


def make_map(kind: str, T: float, amplitude: float = 1.0, period: float = 1.0,
             amplitude2: Optional[float] = None) -> DomainMap:
    """Build one of the named map kinds used by run configurations."""
    if kind == "identity":
        return IdentityMap(T)
    if kind == "dilation":
        return DilationMap(*sine_growth(amplitude, period), T=T)
    if kind == "anisotropic":
        r1, d1 = sine_growth(amplitude, period)
        r2, d2 = sine_growth(amplitude if amplitude2 is None else amplitude2, period)
        return AnisotropicMap(r1, d1, r2, d2, T=T)
    if kind == "surface":
        return SurfaceMap(quartic_ridge_height(amplitude, period), T=T)
    raise GeometryError(f"unknown map kind {kind!r}")


def growing_square(T: float = 1.0) -> DilationMap:
    """``A = xi (1 + sin(pi t))`` on ``[0, 1]``: the manufactured benchmark."""
    return DilationMap(*sine_growth(1.0, 1.0), T=T)


def slow_growing_square(T: float = 1000.0) -> DilationMap:
    """``A = xi (1 + 9 sin(pi t / 1000))``."""
    return DilationMap(*sine_growth(9.0, 1000.0), T=T)


def ridge_surface(T: float = 500.0) -> SurfaceMap:
    """``A = (xi1, xi2, 4 sin(pi t / 500) (xi1 - xi2)^4)``."""
    return SurfaceMap(quartic_ridge_height(4.0, 500.0), T=T)
