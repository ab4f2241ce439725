"""Diagnostics CSV and legacy-VTK snapshot writers.

Both writers go through :func:`atomic_write`, so a file either appears
complete or not at all.  Floats are printed with 17 significant digits so that
identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .mesh import ReferenceMesh

DIAGNOSTIC_COLUMNS = ("t", "dofs", "eta_global", "delta_u", "domain_measure")


def atomic_write(path, text: str) -> Path:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def _fmt(x) -> str:
    return "%.17g" % float(x)


def _rows(a: np.ndarray) -> str:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    fmt = " ".join(["%.17g"] * a.shape[1])
    return "".join(fmt % tuple(r) + "\n" for r in a.tolist())


def diagnostics_csv(records: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DIAGNOSTIC_COLUMNS)
    for r in records:
        w.writerow([_fmt(r.t), int(r.dofs), _fmt(r.eta_global), _fmt(r.delta_u), _fmt(r.domain_measure)])
    return buf.getvalue()


def write_diagnostics(records: Iterable, path) -> Path:
    """CSV with columns ``t, dofs, eta_global, delta_u, domain_measure``."""
    return atomic_write(path, diagnostics_csv(records))


def snapshot_vtk(coeffs, mesh: ReferenceMesh, domain_map, t: float, eta: Optional[np.ndarray] = None,
                 title: str = "growafem snapshot") -> str:
    """Legacy-VTK ASCII unstructured grid on the reference mesh.

    Points are reference coordinates (z = 0).  Point data holds the mapped
    physical position as a vector field ``physical`` and one scalar per
    species ``u1, u2, ...``; cell data holds the indicator ``eta``.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    V, E = len(mesh.vertices), len(mesh.triangles)
    if coeffs.shape[1] != V:
        raise ValueError(f"coefficients have {coeffs.shape[1]} entries for {V} vertices")
    pts = np.zeros((V, 3))
    pts[:, :2] = mesh.vertices
    phys = np.asarray(domain_map.evaluate(mesh.vertices, t), dtype=float).reshape(V, -1)
    if phys.shape[1] == 2:
        phys = np.hstack([phys, np.zeros((V, 1))])
    out = [
        "# vtk DataFile Version 3.0\n",
        f"{title.splitlines()[0][:200] if title else 'snapshot'} t={_fmt(t)}\n",
        "ASCII\n",
        "DATASET UNSTRUCTURED_GRID\n",
        f"POINTS {V} double\n", _rows(pts),
        f"CELLS {E} {4 * E}\n",
        "".join("3 %d %d %d\n" % tuple(c) for c in mesh.triangles.tolist()),
        f"CELL_TYPES {E}\n", "5\n" * E,
        f"POINT_DATA {V}\n",
        "VECTORS physical double\n", _rows(phys),
    ]
    for i, u in enumerate(coeffs, 1):
        out += [f"SCALARS u{i} double 1\n", "LOOKUP_TABLE default\n", _rows(u)]
    if eta is not None:
        eta = np.asarray(eta, dtype=float).reshape(-1)
        if eta.shape[0] != E:
            raise ValueError(f"eta has {eta.shape[0]} entries for {E} cells")
        out += [f"CELL_DATA {E}\n", "SCALARS eta double 1\n", "LOOKUP_TABLE default\n", _rows(eta)]
    return "".join(out)


def write_snapshot(state, mesh: ReferenceMesh, domain_map, field, path) -> Path:
    """Write ``state`` (a :class:`~growafem.stepper.SystemState`) as a VTK file.

    ``field`` is an :class:`~growafem.estimator.IndicatorField` on ``mesh`` or
    None (the indicator column is then written as zeros).
    """
    if state.mesh_version != mesh.version:
        raise ValueError(f"state bound to mesh version {state.mesh_version}, mesh is {mesh.version}")
    eta = field.element_values if field is not None else np.zeros(len(mesh.triangles))
    return atomic_write(path, snapshot_vtk(state.coeffs, mesh, domain_map, state.t, eta))
