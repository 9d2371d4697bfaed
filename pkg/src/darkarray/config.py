"""Run configuration: INI-style text with one experiment per file.

Every field has a default. ``serialize`` writes all fields in canonical
order, so ``serialize(parse(serialize(cfg)))`` is byte-identical.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError

EXPERIMENTS = ("prepare_dark", "selective_prepare", "iswap", "dark_decay_scan", "kspace_table",
               "lamb_dicke_compare", "drive_geometry")


@dataclass(frozen=True)
class LatticeSection:
    n_atoms_per_array: int = 20
    n_arrays: int = 1
    spacing_a: float = 0.25
    separation_l_over_a: float = 1.0
    polarization: str = "z"
    detuning_b: float = 0.0


@dataclass(frozen=True)
class ScanSection:
    """Scan axes; an empty list means 'use the lattice value'."""

    N: Tuple[int, ...] = ()
    a_over_lambda: Tuple[float, ...] = ()
    l_over_a: Tuple[float, ...] = ()
    sigma: Tuple[float, ...] = ()
    omega0: Tuple[float, ...] = ()


@dataclass(frozen=True)
class MotionSection:
    enabled: bool = False
    sigma: float = 0.0
    r0: float = 0.0
    omega_T: float = 100.0
    n_th: float = 0.0
    n_realizations: int = 100
    regime: str = "fast_motion_averaged"
    noise_factor: float = 2.0


@dataclass(frozen=True)
class NumericsSection:
    n_max: int = 2
    dense_cap: int = 6000
    krylov_m: int = 30
    seed: int = 0
    omega_lo: float = 1e-3
    omega_hi: float = 10.0
    omega_points: int = 40
    omega_refine: bool = True
    time_grid_points: int = 2001
    time_refine_levels: int = 3


@dataclass(frozen=True)
class KspaceSection:
    polarization: str = "z"
    k: str = "q_a"
    n_lattice_sum: int = 200


@dataclass(frozen=True)
class GeometrySection:
    p_ratio: float = 2.0
    omega_g: float = 0.1
    alpha_grid: str = "0:90:1"
    a_grid: str = "0.05:0.5:0.01"


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"
    format: str = "csv"


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "prepare_dark"
    lattice: LatticeSection = LatticeSection()
    scan: ScanSection = ScanSection()
    motion: MotionSection = MotionSection()
    numerics: NumericsSection = NumericsSection()
    kspace: KspaceSection = KspaceSection()
    geometry: GeometrySection = GeometrySection()
    output: OutputSection = OutputSection()

    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()[:16]


SECTIONS = ("lattice", "scan", "motion", "numerics", "kspace", "geometry", "output")


# ---------------------------------------------------------------------------
# value parsing
# ---------------------------------------------------------------------------

def parse_range(text: str, integer: bool = False) -> List[float]:
    """'1..5' (integers), 'lo:hi:step' (inclusive) or a comma list."""
    text = text.strip()
    if not text:
        return []
    m = re.fullmatch(r"(-?\d+)\.\.(-?\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise ConfigError(f"empty range {text!r}")
        return list(range(lo, hi + 1))
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"range {text!r} must be lo:hi:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ConfigError(f"invalid range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        vals = [round(lo + i * step, 12) for i in range(n)]
        return [int(v) for v in vals] if integer else vals
    out = []
    for p in text.split(","):
        p = p.strip()
        if p:
            out.append(int(p) if integer else float(p))
    return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(kind, raw: str, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if kind is float:
            return float(raw)
        if kind == "int_list":
            return tuple(int(x) for x in parse_range(raw, integer=True))
        if kind == "float_list":
            return tuple(float(x) for x in parse_range(raw))
        return raw.strip()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _kind(cls, name):
    ann = {f.name: f.type for f in fields(cls)}[name]
    ann = str(ann)
    if "Tuple[int" in ann:
        return "int_list"
    if "Tuple[float" in ann:
        return "float_list"
    return {"int": int, "float": float, "bool": bool, "str": str}.get(ann, str)


def _line_map(text: str) -> Dict[Tuple[str, str], int]:
    out, sec = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip().lower()
            continue
        m = re.match(r"([^=:#;]+)[=:]", s)
        if m and sec:
            out[(sec, m.group(1).strip().lower())] = i
    return out


def parse_config_text(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    lines = _line_map(text)
    known = set(SECTIONS) | {"run"}
    for sec in cp.sections():
        if sec.lower() not in known:
            raise ConfigError(f"unknown section [{sec}] (line {lines.get((sec.lower(), ''), '?')})")
    experiment = RunConfig.experiment
    if cp.has_section("run"):
        for key in cp["run"]:
            if key != "experiment":
                raise ConfigError(f"run.{key} (line {lines.get(('run', key), '?')}): unknown field")
        experiment = cp["run"].get("experiment", experiment).strip()
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"run.experiment (line {lines.get(('run', 'experiment'), '?')}): "
                          f"unknown experiment {experiment!r}")
    parts = {}
    for sec in SECTIONS:
        cls = type(getattr(RunConfig(), sec))
        values = {}
        if cp.has_section(sec):
            names = {f.name.lower(): f.name for f in fields(cls)}
            for key, raw in cp[sec].items():
                where = f"{sec}.{key} (line {lines.get((sec, key), '?')})"
                if key not in names:
                    raise ConfigError(f"{where}: unknown field")
                name = names[key]
                values[name] = _convert(_kind(cls, name), raw, where)
        parts[sec] = cls(**values)
    cfg = RunConfig(experiment, **parts)
    check_config(cfg, lines)
    return cfg


def parse_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def check_config(cfg: RunConfig, lines: Optional[dict] = None):
    lines = lines or {}

    def bad(sec, key, msg):
        raise ConfigError(f"{sec}.{key} (line {lines.get((sec, key.lower()), '?')}): {msg}")

    lat = cfg.lattice
    if lat.n_atoms_per_array < 1:
        bad("lattice", "n_atoms_per_array", "must be >= 1")
    if lat.n_arrays not in (1, 2):
        bad("lattice", "n_arrays", "must be 1 or 2")
    if lat.spacing_a <= 0:
        bad("lattice", "spacing_a", "must be positive")
    if lat.separation_l_over_a <= 0:
        bad("lattice", "separation_l_over_a", "must be positive")
    if lat.polarization not in ("x", "y", "z"):
        bad("lattice", "polarization", "must be x, y or z")
    if any(n < 1 for n in cfg.scan.N):
        bad("scan", "N", "values must be >= 1")
    if any(a <= 0 for a in cfg.scan.a_over_lambda):
        bad("scan", "a_over_lambda", "values must be positive")
    if any(v <= 0 for v in cfg.scan.l_over_a):
        bad("scan", "l_over_a", "values must be positive")
    if any(v < 0 for v in cfg.scan.sigma):
        bad("scan", "sigma", "values must be non-negative")
    if any(v <= 0 for v in cfg.scan.omega0):
        bad("scan", "omega0", "values must be positive")
    num = cfg.numerics
    if num.n_max < 1 or num.n_max > 3:
        bad("numerics", "n_max", "must be 1, 2 or 3")
    if num.krylov_m < 2:
        bad("numerics", "krylov_m", "must be >= 2")
    if num.dense_cap < 1:
        bad("numerics", "dense_cap", "must be positive")
    if num.omega_points < 1 or not 0 < num.omega_lo < num.omega_hi:
        bad("numerics", "omega_points", "Ω₀ grid must be non-empty with 0 < omega_lo < omega_hi")
    mo = cfg.motion
    if mo.regime not in ("fast_motion_averaged", "lamb_dicke_perturbative"):
        bad("motion", "regime", "unknown regime")
    if mo.n_realizations < 1:
        bad("motion", "n_realizations", "must be >= 1")
    if mo.omega_T <= 0:
        bad("motion", "omega_T", "must be positive")
    if mo.sigma < 0 or mo.r0 < 0 or mo.n_th < 0:
        bad("motion", "sigma", "sigma, r0 and n_th must be non-negative")
    if cfg.output.format not in ("csv", "json"):
        bad("output", "format", "must be csv or json")
    if cfg.kspace.polarization not in ("x", "y", "z"):
        bad("kspace", "polarization", "must be x, y or z")
    if cfg.experiment in ("selective_prepare", "iswap", "lamb_dicke_compare") and lat.n_arrays != 2:
        bad("lattice", "n_arrays", f"{cfg.experiment} needs two arrays")
    parse_range(cfg.geometry.alpha_grid)
    parse_range(cfg.geometry.a_grid)


def serialize(cfg: RunConfig) -> str:
    out = ["[run]", f"experiment = {cfg.experiment}", ""]
    for sec in SECTIONS:
        part = getattr(cfg, sec)
        out.append(f"[{sec}]")
        for f in fields(part):
            out.append(f"{f.name} = {_fmt(getattr(part, f.name))}".rstrip())
        out.append("")
    return "\n".join(out)


def to_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
