"""Command-line interface.

::

    growafem run CONFIG [--T T] [--output DIR]
    growafem bench-eoc CONFIG [--levels 8,16,32] [--output DIR]
    growafem validate CONFIG
    growafem demo {fig1,fig2,fig4} [--T T] [--output DIR] [--seed S]

Exit status is 0 on success, 2 for an invalid configuration and 1 for any
other failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .bench import convergence_study, eoc_table, format_eoc_csv
from .config import ConfigError, RunConfig, load_config, parse_config, validate
from .fem import P1Space
from .kinetics import CosineManufactured
from .mesh import initial_mesh
from .output import atomic_write, write_diagnostics, write_snapshot
from .stepper import run

log = logging.getLogger("growafem")

DEMOS = ("fig1", "fig2", "fig4")


def demo_config(name: str) -> RunConfig:
    """Shipped configuration for a named demo (output relative to the cwd)."""
    if name not in DEMOS:
        raise ConfigError(f"unknown demo {name!r}; choose from {', '.join(DEMOS)}")
    text = resources.files("growafem").joinpath("configs", f"{name}.cfg").read_text(encoding="utf-8")
    return parse_config(text)


def with_overrides(cfg: RunConfig, T: Optional[float] = None, output: Optional[str] = None,
                   seed: Optional[int] = None) -> RunConfig:
    cfg = dataclasses.replace(cfg)
    if T is not None:
        cfg.time = dataclasses.replace(cfg.time, T=float(T))
    if output is not None:
        cfg.output = dataclasses.replace(cfg.output, directory=str(output))
        cfg.source = None
    if seed is not None:
        cfg.initial = dataclasses.replace(cfg.initial, seed=int(seed))
    return validate(cfg)


def initial_values(cfg: RunConfig, mesh, kinetics) -> np.ndarray:
    """Nodal initial data, shape (m, ndofs)."""
    V = len(mesh.vertices)
    if cfg.initial.kind == "manufactured":
        case = CosineManufactured(kinetics, cfg.kinetics.D)
        return case.value(mesh.vertices, 0.0)
    base = getattr(kinetics, "steady_state", np.ones(kinetics.m))
    rng = np.random.default_rng(cfg.initial.seed)
    p = cfg.initial.perturbation
    return base[:, None] + rng.uniform(-p, p, size=(kinetics.m, V))


def dry_run(cfg: RunConfig) -> dict:
    """Build every object a run needs and probe the map over the horizon."""
    domain_map = cfg.build_map()
    kinetics = cfg.build_kinetics()
    step_cfg = cfg.step_config()
    cfg.adapt_config()
    mesh = initial_mesh(cfg.mesh.n)
    mesh.check()
    u0 = initial_values(cfg, mesh, kinetics)
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial data is not finite")
    probe = P1Space(mesh).qpoints.reshape(-1, 2)
    # every step time for ordinary runs, at most 1000 probes for long ones
    for t in np.linspace(0.0, cfg.time.T, min(step_cfg.n_steps, 1000) + 1):
        domain_map.metric_terms(probe, float(t))
    return {"map": domain_map, "kinetics": kinetics, "step": step_cfg, "mesh": mesh,
            "steps": step_cfg.n_steps, "dofs": mesh.vertices.shape[0]}


class _SnapshotWriter:
    def __init__(self, directory: Path, domain_map, stride: int):
        self.directory, self.map, self.stride = directory, domain_map, stride
        self.count = 0
        self.paths = []

    def __call__(self, space, state, field, prev):
        if self.stride and self.count % self.stride == 0:
            k = self.count // self.stride
            path = self.directory / f"snapshot_{k:05d}.vtk"
            write_snapshot(state, space.mesh, self.map, field, path)
            self.paths.append(path)
        self.count += 1


def simulate(cfg: RunConfig, progress=None):
    """Run ``cfg`` and write its outputs.  Returns the :class:`RunResult`."""
    parts = dry_run(cfg)
    domain_map, kinetics, step_cfg, mesh = parts["map"], parts["kinetics"], parts["step"], parts["mesh"]
    source = None
    if cfg.initial.kind == "manufactured":
        source = CosineManufactured(kinetics, cfg.kinetics.D).source_function(domain_map)
    out = cfg.output_dir
    writer = None
    if "vtk" in cfg.output.formats and cfg.output.snapshot_stride:
        writer = _SnapshotWriter(out, domain_map, cfg.output.snapshot_stride)

    def observer(space, state, field, prev):
        if writer is not None:
            writer(space, state, field, prev)
        if progress is not None and field is not None:
            progress(state.t, space.ndofs, field.global_value)

    result = run(initial_values(cfg, mesh, kinetics), mesh, domain_map, kinetics, step_cfg,
                 adapt=cfg.adapt_config(), source=source, observer=observer)
    if "csv" in cfg.output.formats:
        write_diagnostics(result.records, out / "diagnostics.csv")
    result.snapshot_paths = writer.paths if writer is not None else []
    return result


def bench(cfg: RunConfig, levels=None, progress=None) -> list:
    """Manufactured convergence study on the configured map; returns EOC rows."""
    b = cfg.bench
    T = b.T
    d = cfg.domain
    from .geometry import make_map
    domain_map = make_map(d.map, T, d.amplitude, d.period, d.amplitude2)
    records = convergence_study(levels or b.levels, cfg.build_kinetics(), cfg.kinetics.D, domain_map, T,
                                tau_factor=b.tau_factor, solver="bicgstab", progress=progress)
    rows = eoc_table(records)
    if "csv" in cfg.output.formats:
        atomic_write(cfg.output_dir / "eoc.csv", format_eoc_csv(rows))
    return rows


# -- argument handling ------------------------------------------------------
def _levels(text: str):
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="growafem", description="Adaptive finite elements for "
                                "reaction-diffusion systems on evolving domains.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", type=Path, help="run configuration (INI)")
        sp.add_argument("--T", type=float, default=None, help="override the time horizon")
        sp.add_argument("--output", default=None, help="override the output directory")
        sp.add_argument("--seed", type=int, default=None, help="override the initial-data seed")

    common(sub.add_parser("run", help="time-dependent simulation with diagnostics CSV"))
    sp = sub.add_parser("bench-eoc", help="manufactured-solution convergence study")
    sp.add_argument("config", type=Path)
    sp.add_argument("--levels", type=_levels, default=None, help="grid levels, e.g. 8,16,32")
    sp.add_argument("--output", default=None)
    sp = sub.add_parser("validate", help="load a configuration and dry-run its checks")
    sp.add_argument("config", type=Path)
    sp = sub.add_parser("demo", help="run a shipped demo configuration")
    sp.add_argument("name", choices=DEMOS)
    sp.add_argument("--levels", type=_levels, default=None, help="grid levels for fig1")
    common(sp, config=False)
    return p


def _print_rows(rows):
    cols = list(rows[0].keys())
    print("  ".join(f"{c:>12}" for c in cols))
    for r in rows:
        print("  ".join(f"{r[c]:12.5g}" for c in cols))


def _progress(t, dofs, eta):
    log.info("t=%.6g dofs=%d eta=%.4g", t, dofs, eta)


def _execute(args) -> int:
    if args.command == "validate":
        cfg = load_config(args.config)
        try:
            info = dry_run(cfg)
        except (ValueError, ArithmeticError) as exc:
            raise ConfigError(f"dry run failed: {exc}") from None
        print(f"{args.config}: ok ({info['steps']} steps, {info['dofs']} initial dofs, "
              f"map {cfg.domain.map}, adapt {'on' if cfg.adapt.enabled else 'off'})")
        return 0
    if args.command == "bench-eoc":
        cfg = load_config(args.config)
        if args.output is not None:
            cfg = with_overrides(cfg, output=args.output)
        rows = bench(cfg, args.levels, progress=lambda n, r: log.info("n=%d eta=%.4g", n, r.eta))
        _print_rows(rows)
        return 0
    if args.command == "demo":
        cfg = demo_config(args.name)
        if args.name == "fig1":
            cfg = with_overrides(cfg, output=args.output or "demo_fig1")
            if args.T is not None:
                cfg.bench = dataclasses.replace(cfg.bench, T=args.T)
            _print_rows(bench(cfg, args.levels))
            return 0
        cfg = with_overrides(cfg, args.T, args.output or f"demo_{args.name}", args.seed)
    else:
        cfg = with_overrides(load_config(args.config), args.T, args.output, args.seed)
    result = simulate(cfg, progress=_progress)
    last = result.records[-1]
    print(f"t={last.t:.6g} dofs={last.dofs} eta={last.eta_global:.4g}; outputs in {cfg.output_dir}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _execute(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any failure as a nonzero exit
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
