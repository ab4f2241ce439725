"""Modified implicit Euler time stepping.

For each species ``i`` one step solves::

    (M^n + tau D_i S^n + tau C_i^n) U_i^n = M^{n-1} U_i^{n-1} + tau b_i^n

where ``M^k`` is the J-weighted mass matrix at ``t^k`` (so that the left and
right mass terms realise the backward difference of ``J U``), ``S^n`` the
stiffness matrix, ``C_i^n`` the mass matrix weighted by ``J c_i(U^{n-1})`` and
``b_i^n`` the load of ``J (g_i(U^{n-1}) + source_i(t^n))``.  Diffusion is
implicit, reactions are linearised about the previous level, and the species
decouple.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import P1Space, assemble_mass, assemble_stiffness, assemble_weighted_mass, \
    assemble_load, domain_measure, interpolant
from .mesh import ReferenceMesh

log = logging.getLogger(__name__)

SOLVERS = ("direct", "bicgstab")


class SolverError(RuntimeError):
    pass


@dataclass
class StepConfig:
    tau: float
    T: float
    D: tuple
    solver: str = "direct"
    rtol: float = 1e-10
    maxiter: int = 1000

    def __post_init__(self):
        self.D = tuple(float(d) for d in np.atleast_1d(self.D))
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if any(not d > 0 for d in self.D):
            raise ValueError(f"diffusion coefficients must be positive, got {self.D}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}, got {self.solver!r}")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.tau)))


@dataclass
class SystemState:
    t: float
    coeffs: np.ndarray  # (m, ndofs)
    mesh_version: int

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]


def solve_linear(A, b, cfg: Optional[StepConfig] = None, x0=None, method=None, rtol=None, maxiter=None,
                 fallback: bool = True):
    """Solve ``A x = b`` by sparse LU (``direct``) or Jacobi-preconditioned
    BiCGSTAB.  If the chosen method fails and ``fallback`` is set, the other
    one is tried before giving up."""
    method = method or (cfg.solver if cfg else "direct")
    rtol = rtol if rtol is not None else (cfg.rtol if cfg else 1e-10)
    maxiter = maxiter if maxiter is not None else (cfg.maxiter if cfg else 1000)
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise SolverError(f"incompatible system: A {A.shape}, b {b.shape}")
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side is not finite")
    bnorm = np.linalg.norm(b)
    if method == "direct":
        try:
            x = spla.splu(A.tocsc()).solve(b)
        except RuntimeError as exc:
            if not fallback:
                raise SolverError(f"direct factorisation failed: {exc}") from None
            log.info("direct factorisation failed (%s); falling back to bicgstab", exc)
            return solve_linear(A, b, x0=x0, method="bicgstab", rtol=rtol, maxiter=maxiter, fallback=False)
        res = np.linalg.norm(A @ x - b)
        if not np.isfinite(res) or res > max(rtol * bnorm, 1e-300) * 1e3:
            raise SolverError(f"direct solve inaccurate: residual {res:.3e}, |b| {bnorm:.3e}")
        return x
    if bnorm == 0.0:
        return np.zeros_like(b)
    d = A.diagonal()
    d = np.where(np.abs(d) > 0, d, 1.0)
    M = sp.diags(1.0 / d)
    iters = [0]

    def count(_):
        iters[0] += 1

    x, info = spla.bicgstab(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=count)
    res = np.linalg.norm(A @ x - b)
    if info != 0 or res > rtol * bnorm * 10:
        if fallback:
            log.info("bicgstab failed (info=%d, residual %.3e); falling back to direct", info, res)
            return solve_linear(A, b, x0=x0, method="direct", rtol=rtol, maxiter=maxiter, fallback=False)
        raise SolverError(f"bicgstab did not converge: info={info}, iterations={iters[0]}, "
                          f"residual {res:.3e} (target {rtol * bnorm:.3e})")
    return x


def step(state: SystemState, space: P1Space, domain_map, kinetics, cfg: StepConfig,
         source: Optional[Callable] = None) -> SystemState:
    """Advance ``state`` (defined on ``space``) by one time step."""
    if state.mesh_version != space.version:
        raise ValueError(f"state bound to mesh version {state.mesh_version}, space is {space.version}")
    m = kinetics.m
    if state.coeffs.shape != (m, space.ndofs):
        raise ValueError(f"state shape {state.coeffs.shape} != {(m, space.ndofs)}")
    if len(cfg.D) != m:
        raise ValueError(f"{len(cfg.D)} diffusion coefficients for {m} species")
    tau = cfg.tau
    t_new = state.t + tau
    M_new = assemble_mass(space, domain_map, t_new)
    M_old = assemble_mass(space, domain_map, state.t)
    S = assemble_stiffness(space, domain_map, t_new)
    uq = space.at_quadrature(state.coeffs)
    c, g = kinetics.split(uq)
    if source is not None:
        g = g + space.quadrature_values(source, t_new)
    b = assemble_load(space, domain_map, t_new, g)
    out = np.empty_like(state.coeffs)
    for i in range(m):
        A = M_new + (tau * cfg.D[i]) * S
        if np.any(c[i]):
            A = A + tau * assemble_weighted_mass(space, domain_map, t_new, c[i])
        rhs = M_old @ state.coeffs[i] + tau * b[i]
        out[i] = solve_linear(A, rhs, cfg, x0=state.coeffs[i])
    return SystemState(t_new, out, space.version)


@dataclass
class StepRecord:
    t: float
    dofs: int
    eta_global: float
    delta_u: float
    domain_measure: float
    adapt_iterations: int = 0


@dataclass
class RunResult:
    mesh: ReferenceMesh
    state: SystemState
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (mesh, state, field) tuples


def initial_state(space: P1Space, initial, m: int, t0: float = 0.0) -> SystemState:
    """Lagrange interpolant of the initial data.

    ``initial`` is a callable ``pts -> (m, N)``, a sequence of ``m`` callables
    ``pts -> (N,)``, or an ``(m, ndofs)`` array of nodal values.
    """
    if callable(initial):
        coeffs = interpolant(space, initial)
    elif isinstance(initial, np.ndarray):
        coeffs = np.asarray(initial, dtype=float)
    else:
        coeffs = np.stack([interpolant(space, g) for g in initial])
    coeffs = np.atleast_2d(coeffs).reshape(m, space.ndofs).copy()
    return SystemState(t0, coeffs, space.version)


def l2_change(space: P1Space, domain_map, t, du) -> float:
    """J-weighted L2 norm ``(sum_i int J du_i^2)^(1/2)`` of the change between levels."""
    M = assemble_mass(space, domain_map, t)
    return float(math.sqrt(max(0.0, sum(float(d @ (M @ d)) for d in np.atleast_2d(du)))))


def run(initial, mesh: ReferenceMesh, domain_map, kinetics, cfg: StepConfig, adapt=None,
        source: Optional[Callable] = None, estimate: bool = True, snapshot_stride: int = 0,
        observer: Optional[Callable] = None) -> RunResult:
    """Integrate from ``t = 0`` to ``cfg.T``.

    With ``adapt`` (an :class:`~growafem.adapt.AdaptConfig`) every step runs
    the solve-estimate-mark-adapt loop.  ``observer(space, state, field,
    prev_coeffs)`` is called after every accepted step (and once with the
    initial state, ``field`` and ``prev_coeffs`` None) so callers can
    accumulate error norms without storing the whole history.
    """
    from .adapt import adapt_step
    from .estimator import compute_indicators

    space = P1Space(mesh)
    state = initial_state(space, initial, kinetics.m)
    if observer is not None:
        observer(space, state, None, None)
    result = RunResult(mesh, state)
    if snapshot_stride:
        result.snapshots.append((mesh, state, None))
    for n in range(1, cfg.n_steps + 1):
        if adapt is not None:
            out = adapt_step(state, mesh, domain_map, kinetics, cfg, adapt, source=source)
            mesh, new, field_, prev, iters = out.mesh, out.state, out.field, out.prev_coeffs, out.iterations
            space = out.space
        else:
            new = step(state, space, domain_map, kinetics, cfg, source)
            prev, iters = state.coeffs, 0
            field_ = compute_indicators(space, new.coeffs, prev, cfg.tau, new.t, domain_map,
                                        kinetics, cfg.D, source) if estimate else None
        rec = StepRecord(
            t=new.t, dofs=space.ndofs,
            eta_global=field_.global_value if field_ is not None else float("nan"),
            delta_u=l2_change(space, domain_map, new.t, new.coeffs - prev),
            domain_measure=domain_measure(space, domain_map, new.t),
            adapt_iterations=iters)
        result.records.append(rec)
        if observer is not None:
            observer(space, new, field_, prev)
        if snapshot_stride and n % snapshot_stride == 0:
            result.snapshots.append((mesh, new, field_))
        state = new
    result.mesh, result.state = mesh, state
    return result
