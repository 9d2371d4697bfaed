"""Command-line experiment runner.

    python -m darkarray run CONFIG
    python -m darkarray validate CONFIG
    python -m darkarray kspace-table --pol z --l-over-a 1..5 --k q_a
    python -m darkarray drive-geometry --p 2 --alpha-grid 0:90:1 --a-grid 0.05:0.5:0.01

Exit codes: 0 ok, 1 configuration error, 2 numerical failure. The number
of worker processes comes from DARKARRAY_WORKERS (default 1).
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import io
import itertools
import json
import math
import os
import sys
import time
import warnings
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import __version__
from .config import RunConfig, parse_config, parse_range, serialize, to_dict
from .couplings import LatticeSpec
from .errors import ConfigError, DarkArrayError, LightConeError, NumericalError, RegimeError
from .hilbert import basis_dimension

SCHEMA_VERSION = 1
WORKERS_ENV = "DARKARRAY_WORKERS"

HEADERS = {
    "prepare_dark": ["N", "a_over_lambda", "sigma", "omega0_opt", "epsilon", "t_star", "P0", "P2", "warnings"],
    "selective_prepare": ["N", "a_over_lambda", "l_over_a", "detuning_b", "sigma", "omega0_opt", "epsilon",
                          "t_star", "P0", "P2", "leak_01", "warnings"],
    "iswap": ["N", "a_over_lambda", "l_over_a", "sigma", "g_qa", "gamma_qa", "gamma_q", "T_g", "fidelity",
              "error_total", "prediction_3GT5", "warnings"],
    "dark_decay_scan": ["N", "a_over_lambda", "sigma", "gamma_qa", "warnings"],
    "kspace_table": ["polarization", "a_over_lambda", "l_over_a", "k", "g_k", "gamma_k", "warnings"],
    "lamb_dicke_compare": ["N", "a_over_lambda", "l_over_a", "detuning_b", "r0", "omega_T", "epsilon_full",
                           "epsilon_effective", "omega0_full", "omega0_effective", "max_phonon", "warnings"],
    "drive_geometry": ["p", "alpha_deg", "a_over_lambda", "feasible", "beta_deg", "K_z", "K_x", "warnings"],
}

WARNING_CODES = {
    "W_FAST_MOTION_TRAP": "omega_T/Gamma0 < 10 in the fast-motion regime",
    "W_LAMB_DICKE_ETA": "eta = sigma*k_e >= 0.3",
    "W_LAMB_DICKE_THERMAL": "Lamb-Dicke protocol needs n_th = 0",
    "W_LAMB_DICKE_RATIO": "expansion ratio >= 0.5",
    "W_UNPHYSICAL_GAIN": "eigenvalue with positive imaginary part",
    "W_NORM_INCREASE": "trajectory norm increased",
    "W_NOT_SUBWAVELENGTH": "spacing a >= lambda_e/2",
    "W_LIGHT_CONE": "quasi-momentum within tolerance of the light cone",
    "W_NO_DRIVE_GEOMETRY": "no Raman geometry for this spacing; K_x set to 0",
    "W_ZERO_DETUNING": "selective preparation with zero detuning",
    "W_REGIME": "parameters outside an approximation's validity regime",
    "W_NUMERICAL": "numerical failure at this point",
    "W_KRYLOV_ROUTE": "dimension above dense cap; Krylov used",
}


# ---------------------------------------------------------------------------
# scan expansion
# ---------------------------------------------------------------------------

def scan_points(cfg: RunConfig) -> List[dict]:
    lat, sc = cfg.lattice, cfg.scan
    ns = sc.N or (lat.n_atoms_per_array,)
    aa = sc.a_over_lambda or (lat.spacing_a,)
    ll = sc.l_over_a or (lat.separation_l_over_a,)
    ss = sc.sigma or ((cfg.motion.sigma,) if cfg.motion.enabled else (0.0,))
    pts = []
    if cfg.experiment == "kspace_table":
        for a, l in itertools.product(aa, ll):
            for k in _k_values(cfg.kspace.k, a):
                pts.append({"a": a, "l_over_a": l, "k": k})
        return pts
    if cfg.experiment == "drive_geometry":
        for al in parse_range(cfg.geometry.alpha_grid):
            for a in parse_range(cfg.geometry.a_grid):
                pts.append({"alpha_deg": al, "a": a})
        return pts
    if cfg.experiment == "dark_decay_scan":
        for a, s in itertools.product(aa, ss):
            pts.append({"N_list": tuple(ns), "a": a, "sigma": s})
        return pts
    two = cfg.experiment in ("selective_prepare", "iswap", "lamb_dicke_compare")
    for n, a, l, s in itertools.product(ns, aa, ll if two else (None,), ss):
        pts.append({"N": int(n), "a": a, "l_over_a": l, "sigma": s})
    return pts


def _k_values(spec: str, a: float) -> List[float]:
    out = []
    for tok in spec.split(","):
        tok = tok.strip()
        if tok == "q_a":
            out.append(math.pi / a)
        elif tok:
            out.extend(parse_range(tok))
    return out


def _lattice(cfg: RunConfig, pt: dict) -> LatticeSpec:
    lat = cfg.lattice
    two = cfg.experiment in ("selective_prepare", "iswap", "lamb_dicke_compare")
    a = pt.get("a", lat.spacing_a)
    n = pt.get("N", lat.n_atoms_per_array)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if two:
            l = (pt.get("l_over_a") or lat.separation_l_over_a) * a
            det = lat.detuning_b if cfg.experiment != "iswap" else 0.0
            return LatticeSpec(n, 2, a, l, lat.polarization, det)
        return LatticeSpec(n, 1, a, None, lat.polarization)


def _base_warnings(cfg: RunConfig, pt: dict) -> List[str]:
    w = []
    if pt.get("a", cfg.lattice.spacing_a) >= 0.5:
        w.append("W_NOT_SUBWAVELENGTH")
    sigma = pt.get("sigma", 0.0)
    if cfg.motion.regime == "fast_motion_averaged" and cfg.motion.omega_T < 10:
        w.append("W_FAST_MOTION_TRAP")
    if cfg.motion.enabled or sigma:
        eta = max(sigma, cfg.motion.r0) * 2 * math.pi
        if eta >= 0.3:
            w.append("W_LAMB_DICKE_ETA")
    return w


# ---------------------------------------------------------------------------
# point evaluation (runs in workers)
# ---------------------------------------------------------------------------

def _omega_scan(cfg: RunConfig):
    from .protocols import OmegaScan
    num = cfg.numerics
    vals = tuple(cfg.scan.omega0) if cfg.scan.omega0 else None
    return OmegaScan(num.omega_lo, num.omega_hi, num.omega_points, -2.5, num.omega_refine, vals)


def _motion_params(cfg: RunConfig, sigma: float):
    from .motion import MotionParams
    mo = cfg.motion
    if mo.regime == "lamb_dicke_perturbative":
        return MotionParams(r0=mo.r0, omega_T=mo.omega_T, n_th=mo.n_th, n_realizations=mo.n_realizations,
                            seed=cfg.numerics.seed, regime=mo.regime, noise_factor=mo.noise_factor)
    return MotionParams(sigma=sigma, omega_T=mo.omega_T, n_realizations=mo.n_realizations,
                        seed=cfg.numerics.seed, regime=mo.regime, noise_factor=mo.noise_factor)


def evaluate_point(cfg: RunConfig, pt: dict) -> dict:
    """One CSV row. Guard violations become warning codes, not exceptions."""
    warns = _base_warnings(cfg, pt)
    exp = cfg.experiment
    row = {h: "" for h in HEADERS[exp]}
    try:
        if exp == "kspace_table":
            from .kspace import analytic_gk
            a, l = pt["a"], pt["l_over_a"] * pt["a"]
            row.update(polarization=cfg.kspace.polarization, a_over_lambda=a, l_over_a=pt["l_over_a"], k=pt["k"])
            g, gam = analytic_gk(pt["k"], l, cfg.kspace.polarization, a)
            row.update(g_k=g, gamma_k=gam)
        elif exp == "drive_geometry":
            from .kspace import solve_drive_geometry
            geo = solve_drive_geometry(pt["a"], math.radians(pt["alpha_deg"]), cfg.geometry.p_ratio,
                                       omega_g=cfg.geometry.omega_g)
            row.update(p=cfg.geometry.p_ratio, alpha_deg=pt["alpha_deg"], a_over_lambda=pt["a"],
                       feasible=int(geo is not None))
            if geo is not None:
                row.update(beta_deg=math.degrees(geo.beta), K_z=geo.K_z, K_x=geo.K_x)
        elif exp == "dark_decay_scan":
            from .motion import averaged_dark_decay_study
            params = _motion_params(cfg, pt["sigma"])
            lat = _lattice(cfg, {"a": pt["a"], "N": pt["N_list"][0]})
            res = averaged_dark_decay_study(lat, pt["N_list"], params)
            return {"rows": [dict(row, N=r["N"], a_over_lambda=pt["a"], sigma=pt["sigma"], gamma_qa=r["gamma_qa"],
                                  warnings=";".join(warns)) for r in res.decay_vs_N],
                    "extra": {"plateau": res.saturation_level, "n3_coefficient": res.small_N_coefficient,
                              "sigma": pt["sigma"], "a": pt["a"],
                              "substreams": f"SeedSequence({cfg.numerics.seed}, spawn_key=(i,)), "
                                            f"i < {params.n_realizations}"}}
        else:
            lat = _lattice(cfg, pt)
            base = dict(N=lat.n_atoms_per_array, a_over_lambda=lat.spacing_a)
            if lat.n_arrays == 2:
                base["l_over_a"] = lat.separation_l / lat.spacing_a
            row.update({k: v for k, v in base.items() if k in row})
            if "sigma" in row:
                row["sigma"] = pt.get("sigma", 0.0)
            _run_protocol(cfg, pt, lat, row, warns)
    except (RegimeError, LightConeError) as exc:
        warns.append("W_LIGHT_CONE" if isinstance(exc, LightConeError) else "W_REGIME")
        row["warnings"] = ";".join(warns)
        return {"rows": [row], "extra": {"error": str(exc)}}
    except NumericalError as exc:
        warns.append("W_NUMERICAL")
        row["warnings"] = ";".join(warns)
        return {"rows": [row], "extra": {"error": str(exc)}}
    row["warnings"] = ";".join(dict.fromkeys(warns))
    return {"rows": [row], "extra": {}}


def _run_protocol(cfg: RunConfig, pt: dict, lat: LatticeSpec, row: dict, warns: List[str]):
    from .protocols import iswap_gate, prepare_dark_state, selective_prepare
    exp, num = cfg.experiment, cfg.numerics
    sigma = pt.get("sigma", 0.0)
    dim = basis_dimension(lat.n_sites, num.n_max)
    if dim > num.dense_cap:
        warns.append("W_KRYLOV_ROUTE")
    kw = dict(dense_cap=num.dense_cap, krylov_m=num.krylov_m)
    if exp == "lamb_dicke_compare":
        from .motion import lamb_dicke_protocol
        params = _motion_params(cfg, sigma)
        rep = lamb_dicke_protocol("selective_prepare", lat, params, _omega_scan(cfg))
        warns.extend(rep.warnings)
        row.update(detuning_b=lat.detuning_b, r0=params.zero_point, omega_T=params.omega_T,
                   epsilon_full=rep.meta["epsilon_full"], epsilon_effective=rep.meta["epsilon_effective"],
                   omega0_full=rep.meta["omega0_full"], omega0_effective=rep.meta["omega0_effective"],
                   max_phonon=float(np.max(rep.result.phonon_population)))
        return
    cm = None
    if sigma > 0:
        from .couplings import motion_averaged_couplings
        params = _motion_params(cfg, sigma)
        if params.omega_T < 10:
            raise RegimeError("fast-motion averaging needs omega_T/Gamma0 >= 10")
        cm = motion_averaged_couplings(lat, sigma, params.n_realizations, cfg.numerics.seed)
    if exp == "prepare_dark":
        sel = "ansatz_overlap" if cm is not None else "most_subradiant"
        res = prepare_dark_state(lat, _omega_scan(cfg), num.n_max, couplings=cm, selection=sel, **kw)
        row.update(omega0_opt=res.optimal_omega0, epsilon=res.error_epsilon, t_star=res.t_star,
                   P0=res.populations["P0"], P2=res.populations.get("P2", 0.0))
    elif exp == "selective_prepare":
        if lat.detuning_b == 0:
            warns.append("W_ZERO_DETUNING")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = selective_prepare(lat, _omega_scan(cfg), num.n_max, couplings=cm, **kw)
        row.update(detuning_b=lat.detuning_b, omega0_opt=res.optimal_omega0, epsilon=res.error_epsilon,
                   t_star=res.t_star, P0=res.populations["P0"], P2=res.populations.get("P2", 0.0),
                   leak_01=res.populations["leak_01"])
    elif exp == "iswap":
        res = iswap_gate(lat, max(2, num.n_max), couplings=cm)
        row.update(g_qa=res.g_qa, gamma_qa=res.gamma_qa, gamma_q=res.meta["gamma_q"], T_g=res.gate_time_Tg,
                   fidelity=res.fidelity_F, error_total=res.error_total,
                   prediction_3GT5=res.meta["prediction_3GT5"])


def _worker(args):
    cfg_text, pt = args
    from .config import parse_config_text
    return evaluate_point(parse_config_text(cfg_text), pt)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return n


def run(cfg: RunConfig, out_dir: Optional[str] = None, workers: Optional[int] = None) -> dict:
    """Execute the scan, streaming rows to results.csv; returns the run record."""
    out_dir = out_dir or cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    workers = worker_count() if workers is None else workers
    pts = scan_points(cfg)
    header = HEADERS[cfg.experiment]
    csv_path = os.path.join(out_dir, "results.csv")
    record = {"schema_version": SCHEMA_VERSION, "software_version": __version__, "config_hash": cfg.digest(),
              "experiment": cfg.experiment, "config": to_dict(cfg), "seed": cfg.numerics.seed,
              "n_points": len(pts), "points": [], "warnings": [], "warning_codes": WARNING_CODES,
              "truncated": False, "columns": header}
    t0 = time.time()
    text = serialize(cfg)
    all_rows = []
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        wr.writeheader()
        fh.flush()
        try:
            if workers == 1 or len(pts) <= 1:
                results = (evaluate_point(cfg, p) for p in pts)
                pool = None
            else:
                pool = cf.ProcessPoolExecutor(max_workers=workers)
                results = pool.map(_worker, [(text, p) for p in pts])
            for pt, res in zip(pts, results):
                for row in res["rows"]:
                    wr.writerow({k: _fmt_cell(row.get(k, "")) for k in header})
                    all_rows.append(row)
                    for code in filter(None, str(row.get("warnings", "")).split(";")):
                        record["warnings"].append({"code": code, "point": _jsonable(pt)})
                fh.flush()
                record["points"].append({"point": _jsonable(pt), **_jsonable(res["extra"])})
            if pool is not None:
                pool.shutdown()
        except KeyboardInterrupt:
            record["truncated"] = True
            if pool is not None:
                pool.shutdown(cancel_futures=True)
    record["wall_time_s"] = time.time() - t0
    record["rows"] = [_jsonable(r) for r in all_rows]
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
    return record


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def validate(cfg: RunConfig) -> dict:
    """Dry run: dimensions, routing, memory estimate and guard preview."""
    num = cfg.numerics
    report = {"experiment": cfg.experiment, "config_hash": cfg.digest(), "points": []}
    for pt in scan_points(cfg):
        entry = {"point": _jsonable(pt), "warnings": _base_warnings(cfg, pt)}
        if cfg.experiment in ("prepare_dark", "selective_prepare", "iswap", "lamb_dicke_compare"):
            n_arr = 2 if cfg.experiment != "prepare_dark" else 1
            n_sites = n_arr * pt["N"]
            dim = basis_dimension(n_sites, num.n_max if cfg.experiment != "iswap" else 2)
            if cfg.experiment == "lamb_dicke_compare":
                dim = basis_dimension(n_sites, 2) * 2 ** (2 * n_sites)
                route = "krylov"
            else:
                route = "dense" if dim <= num.dense_cap else "krylov"
            entry.update(dimension=dim, route=route)
            if route == "dense":
                entry["memory_bytes"] = int(3 * 16 * dim * dim)
            else:
                entry["krylov_m"] = num.krylov_m
                entry["memory_bytes"] = int(16 * dim * (2 * num.krylov_m + 12) + 16 * 4 * n_sites ** 3)
                if cfg.experiment != "lamb_dicke_compare":
                    entry["warnings"].append("W_KRYLOV_ROUTE")
            if cfg.experiment == "selective_prepare" and cfg.lattice.detuning_b == 0:
                entry["warnings"].append("W_ZERO_DETUNING")
        elif cfg.experiment == "kspace_table":
            k = pt["k"]
            if abs(abs(k) - 2 * math.pi) < 1e-6 * 2 * math.pi:
                entry["warnings"].append("W_LIGHT_CONE")
        elif cfg.experiment == "dark_decay_scan":
            entry["dimension"] = max(pt["N_list"])
            entry["route"] = "dense"
        report["points"].append(entry)
    report["warnings"] = sorted({w for p in report["points"] for w in p["warnings"]})
    return report


def _write_table(rows: Iterable[dict], header: List[str], out: Optional[str]):
    fh = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        wr = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt_cell(r.get(k, "")) for k in header})
    finally:
        if out:
            fh.close()


def kspace_table(pol: str, l_over_a: str, k: str, a: float, out: Optional[str]) -> int:
    from .kspace import analytic_gk
    rows = []
    for l in parse_range(l_over_a):
        for kv in _k_values(k, a):
            row = {"polarization": pol, "a_over_lambda": a, "l_over_a": l, "k": kv, "warnings": ""}
            try:
                g, gam = analytic_gk(kv, l * a, pol, a)
                row.update(g_k=g, gamma_k=gam)
            except LightConeError:
                row["warnings"] = "W_LIGHT_CONE"
            rows.append(row)
    _write_table(rows, HEADERS["kspace_table"], out)
    return 0


def drive_geometry_table(p: float, alpha_grid: str, a_grid: str, omega_g: float, out: Optional[str]) -> int:
    from .kspace import solve_drive_geometry
    rows = []
    for al in parse_range(alpha_grid):
        for a in parse_range(a_grid):
            geo = solve_drive_geometry(a, math.radians(al), p, omega_g=omega_g)
            row = {"p": p, "alpha_deg": al, "a_over_lambda": a, "feasible": int(geo is not None), "warnings": ""}
            if geo is not None:
                row.update(beta_deg=math.degrees(geo.beta), K_z=geo.K_z, K_x=geo.K_x)
            rows.append(row)
    _write_table(rows, HEADERS["drive_geometry"], out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="darkarray", description="Subwavelength atomic array experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute a run configuration")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p = sub.add_parser("validate", help="dry-run a configuration")
    p.add_argument("config")
    p = sub.add_parser("kspace-table", help="analytic inter-array couplings")
    p.add_argument("--pol", default="z", choices=["x", "y", "z"])
    p.add_argument("--l-over-a", default="1..5")
    p.add_argument("--k", default="q_a", help="'q_a' or values / lo:hi:step in 1/lambda_e")
    p.add_argument("--a", type=float, default=0.25, help="spacing in lambda_e")
    p.add_argument("--out", default=None)
    p = sub.add_parser("drive-geometry", help="Raman drive feasibility table")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--alpha-grid", default="0:90:1", help="degrees, lo:hi:step")
    p.add_argument("--a-grid", default="0.05:0.5:0.01", help="lambda_e, lo:hi:step")
    p.add_argument("--omega-g", type=float, default=0.1)
    p.add_argument("--out", default=None)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            cfg = parse_config(args.config)
            rec = run(cfg, args.out)
            print(json.dumps({"results": os.path.join(args.out or cfg.output.directory, "results.csv"),
                              "points": rec["n_points"], "warnings": sorted({w["code"] for w in rec["warnings"]}),
                              "wall_time_s": round(rec["wall_time_s"], 3)}))
        elif args.command == "validate":
            print(json.dumps(validate(parse_config(args.config)), indent=2))
        elif args.command == "kspace-table":
            return kspace_table(args.pol, args.l_over_a, args.k, args.a, args.out)
        elif args.command == "drive-geometry":
            return drive_geometry_table(args.p, args.alpha_grid, args.a_grid, args.omega_g, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
