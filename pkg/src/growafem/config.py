"""Run configuration files.

A configuration is an INI file with the sections below.  Every key is
optional; missing keys take the listed default, and an empty file gives a
short identity-map smoke run.  Unknown sections and keys are rejected.

``[domain]``
    ``map`` (identity | dilation | anisotropic | surface, default identity),
    ``amplitude`` (1.0), ``period`` (1.0), ``amplitude2`` (anisotropic only,
    defaults to ``amplitude``).  Growth maps use ``1 + amplitude sin(pi t / period)``;
    the surface map uses the height ``amplitude sin(pi t / period) (xi1 - xi2)^4``.
``[kinetics]``
    ``model`` (schnakenberg | none), ``gamma`` (1.0), ``k1`` (0.1), ``k2`` (0.9),
    ``D`` (comma-separated, one per species, default ``1, 10``).
``[mesh]``
    ``n`` (8): the initial grid has ``2 n^2`` triangles.
``[time]``
    ``tau`` (0.01), ``T`` (0.1), ``solver`` (direct | bicgstab), ``rtol`` (1e-10).
``[adapt]``
    ``enabled`` (false), ``tol`` (1e-3), ``theta`` (0.8), ``theta_c`` (0.1),
    ``max_iterations`` (20), ``max_dofs`` (200000), ``coarsen`` (true).
``[output]``
    ``directory`` (``output``, relative to the config file), ``snapshot_stride``
    (0 = no snapshots), ``formats`` (comma-separated subset of csv, vtk).
``[initial]``
    ``kind`` (steady | manufactured), ``perturbation`` (0.01), ``seed`` (0).
    ``steady`` is the kinetics' steady state plus a seeded uniform
    perturbation in ``[-perturbation, perturbation]`` at every vertex.
``[bench]``
    ``levels`` (``8, 16, 32, 64``), ``tau_factor`` (0.25), ``T`` (1.0).
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

MAP_KINDS = ("identity", "dilation", "anisotropic", "surface")
MODELS = ("schnakenberg", "none")
SOLVERS = ("direct", "bicgstab")
INITIAL_KINDS = ("steady", "manufactured")
FORMATS = ("csv", "vtk")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is ``section.option`` when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = ", ".join(w for w in (key, f"line {line}" if line else None) if w)
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class DomainConfig:
    map: str = "identity"
    amplitude: float = 1.0
    period: float = 1.0
    amplitude2: Optional[float] = None


@dataclass
class KineticsConfig:
    model: str = "schnakenberg"
    gamma: float = 1.0
    k1: float = 0.1
    k2: float = 0.9
    D: tuple = (1.0, 10.0)


@dataclass
class MeshConfig:
    n: int = 8


@dataclass
class TimeConfig:
    tau: float = 0.01
    T: float = 0.1
    solver: str = "direct"
    rtol: float = 1e-10


@dataclass
class AdaptSection:
    enabled: bool = False
    tol: float = 1e-3
    theta: float = 0.8
    theta_c: float = 0.1
    max_iterations: int = 20
    max_dofs: int = 200_000
    coarsen: bool = True


@dataclass
class OutputConfig:
    directory: str = "output"
    snapshot_stride: int = 0
    formats: tuple = ("csv",)


@dataclass
class InitialConfig:
    kind: str = "steady"
    perturbation: float = 0.01
    seed: int = 0


@dataclass
class BenchConfig:
    levels: tuple = (8, 16, 32, 64)
    tau_factor: float = 0.25
    T: float = 1.0


@dataclass
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    kinetics: KineticsConfig = field(default_factory=KineticsConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    output: OutputConfig = field(default_factory=OutputConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    source: Optional[Path] = None

    @property
    def output_dir(self) -> Path:
        d = Path(self.output.directory)
        if not d.is_absolute() and self.source is not None:
            d = self.source.parent / d
        return d

    @property
    def m(self) -> int:
        return 2 if self.kinetics.model == "schnakenberg" else len(self.kinetics.D)

    # -- builders -----------------------------------------------------------
    def build_map(self):
        from .geometry import make_map
        d = self.domain
        return make_map(d.map, self.time.T, d.amplitude, d.period, d.amplitude2)

    def build_kinetics(self):
        from .kinetics import Schnakenberg, ZeroKinetics
        k = self.kinetics
        if k.model == "schnakenberg":
            return Schnakenberg(k.gamma, k.k1, k.k2)
        return ZeroKinetics(len(k.D))

    def step_config(self):
        from .stepper import StepConfig
        t = self.time
        return StepConfig(tau=t.tau, T=t.T, D=self.kinetics.D, solver=t.solver, rtol=t.rtol)

    def adapt_config(self):
        from .adapt import AdaptConfig
        a = self.adapt
        if not a.enabled:
            return None
        return AdaptConfig(tol=a.tol, theta=a.theta, theta_c=a.theta_c,
                           max_iterations=a.max_iterations, max_dofs=a.max_dofs, coarsen=a.coarsen)


_SECTIONS = {
    "domain": DomainConfig, "kinetics": KineticsConfig, "mesh": MeshConfig, "time": TimeConfig,
    "adapt": AdaptSection, "output": OutputConfig, "initial": InitialConfig, "bench": BenchConfig,
}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {text!r}")
    return v


def _split(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _convert(default, name, text):
    if name == "amplitude2":
        return None if text.strip().lower() in ("", "none") else _parse_float(text)
    if name == "D":
        return tuple(_parse_float(s) for s in _split(text))
    if name == "levels":
        return tuple(int(s) for s in _split(text))
    if name == "formats":
        return tuple(s.lower() for s in _split(text))
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return _parse_float(text)
    return text.strip()


def _key_lines(text: str) -> dict:
    """``section.key -> line number`` for error messages."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            out.setdefault(f"{section}.{key}", no)
    return out


def parse_config(text: str, source: Optional[Path] = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(source) if source else "<string>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any section", line=exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.splitlines()[0], line=exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"cannot parse {line.strip()!r}", line=lineno) from None
    lines = _key_lines(text)
    cfg = RunConfig(source=source)
    for section in parser.sections():
        cls = _SECTIONS.get(section.lower())
        if cls is None:
            raise ConfigError(f"unknown section [{section}]")
        obj = getattr(cfg, section.lower())
        fields = {f.lower(): f for f in vars(cls()).keys()}
        for key, text_value in parser.items(section):
            path = f"{section.lower()}.{key.lower()}"
            name = fields.get(key.lower())
            if name is None:
                raise ConfigError("unknown key", key=path, line=lines.get(path))
            try:
                value = _convert(getattr(obj, name), name, text_value)
            except ValueError as exc:
                raise ConfigError(str(exc), key=path, line=lines.get(path)) from None
            setattr(obj, name, value)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, source=path)


def _require(ok: bool, key: str, constraint: str, value):
    if not ok:
        raise ConfigError(f"{constraint} (got {value!r})", key=key)


def validate(cfg: RunConfig) -> RunConfig:
    d, k, t, a, o, i, b = cfg.domain, cfg.kinetics, cfg.time, cfg.adapt, cfg.output, cfg.initial, cfg.bench
    _require(d.map in MAP_KINDS, "domain.map", f"must be one of {', '.join(MAP_KINDS)}", d.map)
    _require(d.period > 0, "domain.period", "must be > 0", d.period)
    if d.map in ("dilation", "anisotropic"):
        # 1 + a sin(.) must stay positive over [0, T]
        _require(d.amplitude > -1, "domain.amplitude", "must be > -1 for a growth map", d.amplitude)
        if d.amplitude2 is not None:
            _require(d.amplitude2 > -1, "domain.amplitude2", "must be > -1", d.amplitude2)
    if d.amplitude2 is not None:
        _require(d.map == "anisotropic", "domain.amplitude2", "only used by the anisotropic map", d.amplitude2)
    _require(k.model in MODELS, "kinetics.model", f"must be one of {', '.join(MODELS)}", k.model)
    for key in ("gamma", "k1", "k2"):
        _require(getattr(k, key) > 0, f"kinetics.{key}", "must be > 0", getattr(k, key))
    _require(len(k.D) >= 1 and all(x > 0 for x in k.D), "kinetics.D", "entries must be > 0", k.D)
    if k.model == "schnakenberg":
        _require(len(k.D) == 2, "kinetics.D", "schnakenberg needs two coefficients", k.D)
    _require(cfg.mesh.n >= 1, "mesh.n", "must be >= 1", cfg.mesh.n)
    _require(t.tau > 0, "time.tau", "must be > 0", t.tau)
    _require(t.T > 0, "time.T", "must be > 0", t.T)
    _require(t.tau <= t.T, "time.tau", "must not exceed time.T", t.tau)
    _require(t.solver in SOLVERS, "time.solver", f"must be one of {', '.join(SOLVERS)}", t.solver)
    _require(0 < t.rtol < 1, "time.rtol", "must lie in (0, 1)", t.rtol)
    _require(a.tol > 0, "adapt.tol", "must be > 0", a.tol)
    _require(0 < a.theta < 1, "adapt.theta", "θ ∈ (0,1)", a.theta)
    _require(0 < a.theta_c < a.theta, "adapt.theta_c", "must lie in (0, adapt.theta)", a.theta_c)
    _require(a.max_iterations >= 0, "adapt.max_iterations", "must be >= 0", a.max_iterations)
    _require(a.max_dofs >= 1, "adapt.max_dofs", "must be >= 1", a.max_dofs)
    _require(o.snapshot_stride >= 0, "output.snapshot_stride", "must be >= 0", o.snapshot_stride)
    _require(all(f in FORMATS for f in o.formats), "output.formats",
             f"entries must be among {', '.join(FORMATS)}", o.formats)
    _require(bool(o.directory.strip()), "output.directory", "must not be empty", o.directory)
    _require(i.kind in INITIAL_KINDS, "initial.kind", f"must be one of {', '.join(INITIAL_KINDS)}", i.kind)
    _require(i.perturbation >= 0, "initial.perturbation", "must be >= 0", i.perturbation)
    _require(i.seed >= 0, "initial.seed", "must be >= 0", i.seed)
    _require(len(b.levels) >= 2 and all(n >= 1 for n in b.levels), "bench.levels",
             "need at least two positive levels", b.levels)
    _require(list(b.levels) == sorted(set(b.levels)), "bench.levels", "must be strictly increasing", b.levels)
    _require(b.tau_factor > 0, "bench.tau_factor", "must be > 0", b.tau_factor)
    _require(b.T > 0, "bench.T", "must be > 0", b.T)
    return cfg
