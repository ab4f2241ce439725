"""Equidistribution marking and the per-timestep adaptation loop.

With ``N`` triangles, a triangle is marked for refinement when its indicator
exceeds ``theta * tol / N`` and for coarsening when its indicator plus its
sibling's is at most ``theta_c * tol / N``.  Each time step is solved,
estimated, and re-solved on adapted meshes until the global estimator drops
to ``tol`` or a cap is reached.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .estimator import IndicatorField, compute_indicators
from .fem import P1Space
from .mesh import MarkSet, ReferenceMesh, adapt as adapt_mesh, interpolate_between
from .stepper import StepConfig, SystemState, step

log = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    tol: float
    theta: float = 0.8
    theta_c: float = 0.1
    max_iterations: int = 20
    max_dofs: int = 200_000
    coarsen: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if not 0 < self.theta_c < self.theta:
            raise ValueError(f"theta_c must lie in (0, theta), got {self.theta_c}")
        if self.max_iterations < 0 or self.max_dofs < 1:
            raise ValueError("iteration and dof caps must be positive")


def mark(field: IndicatorField, cfg: AdaptConfig, mesh: Optional[ReferenceMesh] = None) -> MarkSet:
    """Equidistribution marking.  Coarsening marks need ``mesh`` (for siblings)."""
    eta = field.element_values
    N = len(eta)
    refine = np.flatnonzero(eta > cfg.theta * cfg.tol / N)
    coarsen = ()
    if cfg.coarsen and mesh is not None:
        sib = mesh.siblings()
        sib_eta = np.where(sib >= 0, eta[np.maximum(sib, 0)], np.inf)
        coarsen = np.flatnonzero(eta + sib_eta <= cfg.theta_c * cfg.tol / N)
    return MarkSet(refine.tolist(), list(coarsen))


@dataclass
class AdaptResult:
    mesh: ReferenceMesh
    space: P1Space
    state: SystemState
    field: IndicatorField
    prev_coeffs: np.ndarray  # the previous level transferred to ``mesh``
    iterations: int
    capped: bool
    history: list  # global estimator after each solve


def _refined_ancestry(old: ReferenceMesh, new: ReferenceMesh) -> set:
    """Forest nodes bisected while going from ``old`` to ``new``."""
    f = new._forest
    before = set(int(n) for n in old.leaves)
    out = set()
    for n in set(int(n) for n in new.leaves) - before:
        p = f.parent[n]
        while p >= 0 and p not in out:
            out.add(p)
            if p in before:
                break
            p = f.parent[p]
    return out


def adapt_step(state_prev: SystemState, mesh: ReferenceMesh, domain_map, kinetics,
               step_cfg: StepConfig, cfg: AdaptConfig, source=None, edge_points: int = 1) -> AdaptResult:
    """One time step with the solve-estimate-mark-adapt loop.

    ``state_prev`` lives on ``mesh``.  Every re-solve starts from
    ``state_prev`` transferred to the current mesh.
    """
    def solve_on(m: ReferenceMesh):
        space = P1Space(m)
        prev = interpolate_between(mesh, m, state_prev.coeffs) if m is not mesh else state_prev.coeffs
        s = step(SystemState(state_prev.t, prev, space.version), space, domain_map, kinetics, step_cfg, source)
        fld = compute_indicators(space, s.coeffs, prev, step_cfg.tau, s.t, domain_map, kinetics,
                                 step_cfg.D, source, edge_points)
        return space, prev, s, fld

    current = mesh
    space, prev, new, field = solve_on(current)
    history = [field.global_value]
    refined: set = set()
    k = 0
    capped = False
    while field.global_value > cfg.tol:
        if k >= cfg.max_iterations or space.ndofs >= cfg.max_dofs:
            capped = True
            log.warning("adaptation capped at t=%.6g: eta=%.3e > tol=%.3e after %d iterations, %d dofs",
                        new.t, field.global_value, cfg.tol, k, space.ndofs)
            break
        marks = mark(field, cfg, current)
        if refined and marks.coarsen:
            f = current._forest
            keep = [i for i in marks.coarsen if f.parent[int(current.leaves[i])] not in refined]
            marks = MarkSet(marks.refine, keep)
        if not marks.refine and not marks.coarsen:
            capped = True
            log.warning("adaptation stalled at t=%.6g: nothing marked, eta=%.3e", new.t, field.global_value)
            break
        adapted = adapt_mesh(current, marks)
        refined |= _refined_ancestry(current, adapted)
        current = adapted
        k += 1
        space, prev, new, field = solve_on(current)
        history.append(field.global_value)
    return AdaptResult(current, space, new, field, prev, k, capped, history)
