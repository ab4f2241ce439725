"""Manufactured-solution convergence study on an evolving domain.

Errors are measured in the physical norms pulled back to the reference square,
``||e||^2 = int J e^2`` and ``||grad e||^2 = int J |K^T grad e|^2``, and
integrated in time with the trapezoidal rule.  The estimator is integrated as
``sum_n tau eta_n^2``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fem import P1Space
from .kinetics import CosineManufactured
from .mesh import initial_mesh
from .stepper import StepConfig, run


@dataclass
class ErrorRecord:
    h: float
    tau: float
    err_l2: float       # (int_0^T sum_i ||e_i||^2)^(1/2)
    err_h1: float       # (int_0^T sum_i ||grad e_i||^2)^(1/2)
    energy: float       # int_0^T sum_i D_i ||grad e_i||^2
    eta: float          # (sum_n tau eta_n^2)^(1/2)
    dofs: int = 0

    def __post_init__(self):
        for name in ("err_l2", "err_h1", "energy", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def error_norms(space: P1Space, coeffs, case, domain_map, t):
    """Per-species squared errors ``(||e_i||^2, ||grad e_i||^2)`` at time ``t``."""
    J, W, _ = space.metric(domain_map, t)
    pts = space.qpoints.reshape(-1, 2)
    E, Q = space.dx.shape
    if hasattr(case, "jet"):
        val, _, grd, _ = case.jet(pts, t)
    else:
        val, grd = case.value(pts, t), case.grad(pts, t)
    exact = val.reshape(-1, E, Q)
    exact_grad = grd.reshape(-1, E, Q, 2)
    e = space.at_quadrature(coeffs) - exact
    ge = space.gradient(coeffs)[:, :, None, :] - exact_grad
    w = space.dx * J
    l2 = np.sum(w * e * e, axis=(1, 2))
    # |K^T g|^2 J = g . (J K K^T) g
    g0, g1 = ge[..., 0], ge[..., 1]
    quad = W[..., 0, 0] * g0 * g0 + 2.0 * W[..., 0, 1] * g0 * g1 + W[..., 1, 1] * g1 * g1
    h1 = np.sum(space.dx * quad, axis=(1, 2))
    return l2, h1


class ErrorMonitor:
    """Run observer accumulating time-integrated errors and estimator."""

    def __init__(self, case, domain_map):
        self.case = case
        self.map = domain_map
        self.D = np.asarray(case.D, dtype=float)
        self._last = None
        self.l2 = 0.0
        self.h1 = 0.0
        self.energy = 0.0
        self.eta2 = 0.0
        self.dofs = 0

    def __call__(self, space, state, field, prev):
        l2, h1 = error_norms(space, state.coeffs, self.case, self.map, state.t)
        cur = (state.t, float(l2.sum()), float(h1.sum()), float(self.D @ h1))
        if self._last is not None:
            dt = cur[0] - self._last[0]
            self.l2 += 0.5 * dt * (cur[1] + self._last[1])
            self.h1 += 0.5 * dt * (cur[2] + self._last[2])
            self.energy += 0.5 * dt * (cur[3] + self._last[3])
            if field is not None:
                self.eta2 += dt * field.global_value ** 2
        self._last = cur
        self.dofs = space.ndofs

    def record(self, h: float, tau: float) -> ErrorRecord:
        return ErrorRecord(h, tau, math.sqrt(self.l2), math.sqrt(self.h1), self.energy,
                           math.sqrt(self.eta2), self.dofs)


def measure_errors(result, case, domain_map, h: float, tau: float) -> ErrorRecord:
    """Errors of a run whose states were all kept as snapshots."""
    mon = ErrorMonitor(case, domain_map)
    for mesh, state, field in result.snapshots:
        mon(P1Space(mesh), state, field, None)
    return mon.record(h, tau)


def eoc(values: Sequence[float], hs: Sequence[float]) -> list:
    """``log(v_k / v_{k+1}) / log(h_k / h_{k+1})`` for consecutive pairs."""
    v = np.asarray(values, dtype=float)
    h = np.asarray(hs, dtype=float)
    if v.shape != h.shape or v.size < 2:
        raise ValueError("need equal-length sequences with at least two entries")
    if np.any(v <= 0) or np.any(h <= 0):
        raise ValueError("values and mesh sizes must be positive")
    return list(np.log(v[:-1] / v[1:]) / np.log(h[:-1] / h[1:]))


def effectivity(record: ErrorRecord) -> float:
    """``int sum eta^2 / int sum_i D_i ||grad e_i||^2``."""
    if not record.energy > 0:
        raise ValueError("effectivity undefined for zero error")
    return record.eta ** 2 / record.energy


def convergence_study(levels, kinetics, D, domain_map, T: float, tau_factor: float = 0.25,
                      solver: str = "bicgstab", progress=None) -> list:
    """Uniform-mesh runs with ``tau = tau_factor * h^2`` for each grid level."""
    case = CosineManufactured(kinetics, D)
    source = case.source_function(domain_map)
    records = []
    for n in levels:
        mesh = initial_mesh(n)
        h = mesh.h
        tau = T / math.ceil(T / (tau_factor * h * h))
        cfg = StepConfig(tau=tau, T=T, D=D, solver=solver)
        mon = ErrorMonitor(case, domain_map)
        run(lambda p: case.value(p, 0.0), mesh, domain_map, kinetics, cfg, source=source, observer=mon)
        rec = mon.record(h, tau)
        records.append(rec)
        if progress is not None:
            progress(n, rec)
    return records


EOC_COLUMNS = ("h", "eta", "eoc_eta", "errL2", "eocL2", "errH1", "eocH1", "effectivity")


def eoc_table(records) -> list:
    hs = [r.h for r in records]
    cols = {
        "eta": [r.eta for r in records],
        "errL2": [r.err_l2 for r in records],
        "errH1": [r.err_h1 for r in records],
    }
    rates = {k: [float("nan")] + eoc(v, hs) for k, v in cols.items()}
    rows = []
    for k, r in enumerate(records):
        rows.append({
            "h": r.h, "eta": r.eta, "eoc_eta": rates["eta"][k],
            "errL2": r.err_l2, "eocL2": rates["errL2"][k],
            "errH1": r.err_h1, "eocH1": rates["errH1"][k],
            "effectivity": effectivity(r),
        })
    return rows


def format_eoc_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=EOC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(float(v)) for k, v in row.items()})
    return buf.getvalue()
