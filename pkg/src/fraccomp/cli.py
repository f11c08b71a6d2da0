"""Command-line front end: ``fraccomp {eig,sweep,compete,symmetrize}``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge, 4 a checked
inequality failed.  Failures also print a JSON error document on stderr and, when
the run directory exists, write it to ``error.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .competition import (
    PropertyViolation,
    blow_up,
    doubling_check,
    frequency_trace,
    growth_rate_estimate,
    pohozaev_residual,
    positivity_margin,
    select_r_beta,
    solve_beta_system,
)
from .geometry import (
    ArcSet,
    FractionalParams,
    GridError,
    ScalarField,
    build_half_ball_grid,
    build_hemisphere_grid,
    canonical_omega_k,
    weighted_dirichlet_energy,
    weighted_l2_inner,
)
from .rearrange import foliated_schwarz, polarization_sequence
from .spectral import (
    SolverError,
    first_eigenvalue,
    first_eigenvalue_folded,
    first_eigenvalue_symmetric,
    lambda_empty,
    sweep_k,
)

OUTPUT_ENV = "FRACCOMP_OUTPUT_ROOT"
EXIT_OK, EXIT_INVALID, EXIT_NONCONV, EXIT_PROPERTY = 0, 2, 3, 4

DEFAULTS = {
    "s": 0.5, "n_theta": 64, "n_phi": 128, "n_r": 32, "k": [1], "omega": None,
    "method": None, "kmax": 8, "beta": [1000.0], "seed": 0, "input": None,
    "radii": None, "out": None, "max_iter": 300,
}

log = logging.getLogger("fraccomp")


class ValidationError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fraccomp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with option values (flags override it)")
        sp.add_argument("--s", type=float)
        sp.add_argument("--n-theta", dest="n_theta", type=int)
        sp.add_argument("--n-phi", dest="n_phi", type=int)
        sp.add_argument("--out", help=f"run directory (default: ${OUTPUT_ENV}/<command>-<hash>)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")

    e = sub.add_parser("eig", help="first eigenvalues for omega_k or a named arc set")
    common(e)
    e.add_argument("--k", type=int, nargs="+")
    e.add_argument("--omega", choices=["empty", "full", "half"])
    e.add_argument("--method", choices=["symmetric", "folded"])

    s = sub.add_parser("sweep", help="eigenvalue chain for k = 1..kmax")
    common(s)
    s.add_argument("--kmax", type=int)
    s.add_argument("--method", choices=["symmetric", "folded"])

    c = sub.add_parser("compete", help="half-ball competition solve and diagnostics")
    common(c)
    c.add_argument("--k", type=int, nargs="+")
    c.add_argument("--beta", type=float, nargs="+")
    c.add_argument("--n-r", dest="n_r", type=int)
    c.add_argument("--max-iter", dest="max_iter", type=int)

    y = sub.add_parser("symmetrize", help="foliated Schwarz symmetrization of a field")
    common(y)
    y.add_argument("--input", help="field CSV (theta_index,phi_index,value); random if omitted")
    return p


def _merge(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config file: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(doc) - set(DEFAULTS) - {"command"}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key, val in vars(args).items():
        if key in DEFAULTS and val is not None:
            cfg[key] = val
    for key in ("k", "beta"):
        if not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    cfg["command"] = args.command
    return cfg


def _validate(cfg: dict) -> None:
    s = cfg["s"]
    if not (isinstance(s, (int, float)) and 0 < s < 1):
        raise ValidationError(f"s must lie in (0, 1), got {s}")
    for key in ("n_theta", "n_phi", "n_r"):
        if int(cfg[key]) != cfg[key]:
            raise ValidationError(f"{key} must be an integer")
    if cfg["n_phi"] % 2:
        raise ValidationError(f"n_phi must be even, got {cfg['n_phi']}")
    cmd = cfg["command"]
    half = cfg["n_phi"] // 2
    if cmd in ("eig", "compete"):
        for k in cfg["k"]:
            if k < 1 or half % k:
                raise ValidationError(f"k={k} must be >= 1 and divide n_phi/2={half}")
    if cmd == "sweep":
        if cfg["kmax"] < 1:
            raise ValidationError(f"kmax must be >= 1, got {cfg['kmax']}")
        bad = [k for k in range(1, cfg["kmax"] + 1) if half % k]
        if bad and cfg["method"] == "symmetric":
            raise ValidationError(f"k={bad} do not divide n_phi/2={half}")
    if cmd == "compete":
        for b in cfg["beta"]:
            if not (math.isfinite(b) and b > 0):
                raise ValidationError(f"beta must be positive, got {b}")


def _run_dir(cfg: dict, chash: str) -> Path:
    if cfg["out"]:
        path = Path(cfg["out"])
    else:
        root = Path(os.environ.get(OUTPUT_ENV, "fraccomp-runs"))
        path = root / f"{cfg['command']}-{chash}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _meta(cfg, chash, grid) -> dict:
    return {"config_hash": chash, "s": cfg["s"], "grid_theta": grid.n_theta,
            "grid_phi": grid.n_phi, "grading_gamma": grid.grading_gamma}


def cmd_eig(cfg, out: Path, chash: str) -> int:
    params = FractionalParams(cfg["s"])
    grid = build_hemisphere_grid(cfg["n_theta"], cfg["n_phi"], params)
    results = []
    if cfg["omega"]:
        omega = {"empty": ArcSet.empty(), "full": ArcSet.full(), "half": canonical_omega_k(1)}[cfg["omega"]]
        results.append((cfg["omega"], first_eigenvalue(grid, omega)))
    else:
        solver = first_eigenvalue_folded if cfg["method"] == "folded" else first_eigenvalue_symmetric
        for k in cfg["k"]:
            results.append((str(k), solver(grid, k)))
    rows = [(label, r.lam, r.exponent_d, r.residual, grid.n_theta, grid.n_phi, cfg["s"])
            for label, r in results]
    header = ["k", "lambda", "d", "residual", "grid_theta", "grid_phi", "s"]
    io.write_table(out / "eig.csv", header, rows, _meta(cfg, chash, grid))
    io.write_json(out / "eig.json", [dict(zip(header, row)) for row in rows])
    for label, r in results:
        (out / f"eigenfunction_{label}.bin").write_bytes(io.field_to_bytes(r.eigenfunction))
    io.write_json(out / "manifest.json", {"config": cfg, "config_hash": chash,
                                           "grid": io.grid_to_json(grid)})
    for row in rows:
        print(f"k={row[0]} lambda={row[1]:.8f} d={row[2]:.8f}")
    return EXIT_OK


def cmd_sweep(cfg, out: Path, chash: str) -> int:
    params = FractionalParams(cfg["s"])
    grid = build_hemisphere_grid(cfg["n_theta"], cfg["n_phi"], params)
    method = cfg["method"] or "folded"
    rows = sweep_k(grid, cfg["kmax"], method=method)
    table = [(r.k, r.lam, r.d, r.residual, grid.n_theta, grid.n_phi, cfg["s"]) for r in rows]
    header = ["k", "lambda", "d", "residual", "grid_theta", "grid_phi", "s"]
    io.write_table(out / "sweep.csv", header, table, _meta(cfg, chash, grid))
    io.write_json(out / "sweep.json", [dict(zip(header, row)) for row in table])
    lam = np.array([r.lam for r in rows])
    d = np.array([r.d for r in rows])
    summary = {
        "lambda_nondecreasing": bool(np.all(np.diff(lam) >= -1e-12)),
        "d_below_2s": bool(np.all(d < 2 * cfg["s"])),
        "lambda_below_empty": bool(np.all(lam < lambda_empty(params))),
        "d_strictly_increasing": bool(np.all(np.diff(d) > 0)),
    }
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "manifest.json", {"config": cfg, "config_hash": chash,
                                           "grid": io.grid_to_json(grid)})
    for row in table:
        print(f"k={row[0]} lambda={row[1]:.8f} d={row[2]:.8f}")
    ok = summary["lambda_nondecreasing"] and summary["d_below_2s"]
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_compete(cfg, out: Path, chash: str) -> int:
    params = FractionalParams(cfg["s"])
    sph = build_hemisphere_grid(cfg["n_theta"], cfg["n_phi"], params)
    grid = build_half_ball_grid(cfg["n_r"], sph)
    meta = _meta(cfg, chash, sph) | {"grid_r": grid.n_r}
    bundles = []
    status = EXIT_OK
    for k in cfg["k"]:
        eig = first_eigenvalue_symmetric(sph, k)
        for beta in cfg["beta"]:
            tag = f"k{k}_beta{beta:g}"
            state = solve_beta_system(grid, k, beta, eig, max_iter=cfg["max_iter"])
            io.write_table(out / f"convergence_{tag}.csv", ["iter", "I", "interaction", "delta"],
                           state.history, meta)
            trace = frequency_trace(state)
            io.write_table(out / f"frequency_{tag}.csv", ["r", "E", "H", "N"],
                           zip(trace.radii, trace.E_vals, trace.H_vals, trace.N_vals), meta)
            ladder = np.geomspace(grid.r_max / 100, grid.r_max, 5)
            doubling = [doubling_check(state, ladder[0], r2, eig.exponent_d) for r2 in ladder[1:]]
            bundle = {
                "k": k, "beta": beta, "d_k": eig.exponent_d, "lambda_k": eig.lam,
                "energy_I": state.energy, "two_I": 2 * state.energy,
                "energy_ceiling_ok": 2 * state.energy <= eig.exponent_d * 1.02,
                "converged": state.converged, "iterations": state.iterations,
                "frequency_monotone": trace.monotone,
                "doubling_ok": all(r.holds for r in doubling),
                "pohozaev_residual_r0.5": pohozaev_residual(state, 0.5),
                "positivity_margin": positivity_margin(state),
            }
            try:
                r_b = select_r_beta(state)
            except ValueError as exc:
                log.warning("no blow-up radius for k=%d beta=%g: %s", k, beta, exc)
                r_b = None
            if r_b is not None:
                est = growth_rate_estimate(blow_up(state, r_b))
                bundle |= {"r_beta": r_b, "growth_rate": est.frequency_tail,
                           "growth_rate_log_slope": est.log_slope}
            bundles.append(bundle)
            (out / f"state_{tag}_u.bin").write_bytes(io.field_to_bytes(state.u))
            (out / f"state_{tag}_v.bin").write_bytes(io.field_to_bytes(state.v))
            io.write_json(out / f"state_{tag}.json", {
                "s": cfg["s"], "k": k, "beta": beta, "energy": state.energy,
                "converged": state.converged,
                "grid": io.grid_to_json(sph) | {"n_r": grid.n_r,
                                                "r_nodes": [float(r) for r in grid.r_nodes]}})
            print(json.dumps({key: bundle[key] for key in ("k", "beta", "two_I", "d_k", "converged")}))
            if not state.converged:
                status = max(status, EXIT_NONCONV)
            if not (bundle["energy_ceiling_ok"] and bundle["frequency_monotone"] and bundle["doubling_ok"]):
                status = EXIT_PROPERTY
    io.write_json(out / "bundle.json", bundles)
    io.write_json(out / "manifest.json", {"config": cfg, "config_hash": chash,
                                           "grid": io.grid_to_json(sph) | {"n_r": grid.n_r}})
    return status


def cmd_symmetrize(cfg, out: Path, chash: str) -> int:
    params = FractionalParams(cfg["s"])
    grid = build_hemisphere_grid(cfg["n_theta"], cfg["n_phi"], params)
    if cfg["input"]:
        try:
            text = Path(cfg["input"]).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read input field: {exc}") from None
        f = io.field_from_csv(text, grid)
    else:
        rng = np.random.default_rng(cfg["seed"])
        vals = rng.random(grid.shape)
        vals[-1] = vals[-1, 0]
        f = ScalarField(grid, vals)
    if np.any(f.values < 0):
        raise ValidationError("input field must be nonnegative")
    sym = foliated_schwarz(f)
    final, trace = polarization_sequence(f, max_iter=10 * grid.n_phi)
    e0 = weighted_dirichlet_energy(f, grid)
    e1 = weighted_dirichlet_energy(sym, grid)
    report = {"energy_before": e0, "energy_after": e1, "energy_nonincreasing": e1 <= e0 * (1 + 1e-12),
              "norm_before": weighted_l2_inner(f, f, grid), "norm_after": weighted_l2_inner(sym, sym, grid),
              "polarization_steps": len(trace) - 1, "final_distance": trace[-1].distance}
    meta = _meta(cfg, chash, grid)
    io.write_table(out / "trace.csv", ["iter", "distance", "chosen_plane_angle"],
                   [(t.iter, t.distance, t.chosen_plane_angle) for t in trace], meta)
    (out / "symmetrized.csv").write_text(io.field_to_csv(sym, "\n".join(f"{k}={v}" for k, v in sorted(meta.items()))))
    (out / "symmetrized.bin").write_bytes(io.field_to_bytes(sym))
    io.write_json(out / "report.json", report)
    io.write_json(out / "manifest.json", {"config": cfg, "config_hash": chash,
                                           "grid": io.grid_to_json(grid)})
    print(json.dumps(report))
    return EXIT_OK if report["energy_nonincreasing"] else EXIT_PROPERTY


COMMANDS = {"eig": cmd_eig, "sweep": cmd_sweep, "compete": cmd_compete, "symmetrize": cmd_symmetrize}


def _fail(code: int, exc: BaseException, out: Path | None) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(doc), file=sys.stderr)
    if out is not None:
        io.write_json(out / "error.json", doc)
    return code


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        cfg = _merge(args)
        _validate(cfg)
        chash = io.config_hash({k: v for k, v in cfg.items() if k != "out"})
        out = _run_dir(cfg, chash)
        return COMMANDS[args.command](cfg, out, chash)
    except (ValidationError, GridError, io.ParseError, ValueError) as exc:
        return _fail(EXIT_INVALID, exc, out)
    except (SolverError, NonConvergence) as exc:
        return _fail(EXIT_NONCONV, exc, out)
    except PropertyViolation as exc:
        return _fail(EXIT_PROPERTY, exc, out)


if __name__ == "__main__":
    sys.exit(main())
