"""Command-line entry point: ``smaglab {run,verify,bounds,compare,mesh}``.

Exit codes: 0 success, 1 failed verification, 2 configuration or argument
error, 3 solver failure (partial artifacts are still written).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bounds
from .config import ConfigError, ExperimentConfig, load_config
from .mesh import MeshError, check_mesh, import_msh, write_mesh_vtk, write_msh
from .svg import line_chart

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("smaglab")


def _dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=float)


def _load(path, seed) -> ExperimentConfig:
    return load_config(path).with_seed(seed)


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.outputs.directory if cfg else "out")


# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    from .experiments import run_experiment

    cfg = _load(args.config, args.seed)
    result = run_experiment(cfg, _out_dir(args, cfg), sequential=args.sequential)
    s = result.summary
    print(_dump({"c_eps": s["c_eps"], "bound_check": {k: s["bound_check"][k] for k in ("branch", "bound", "satisfied")},
                 "picard": s["picard"], "error": s["error"], "out": str(result.out)}))
    return EXIT_SOLVER if result.failed else EXIT_OK


def cmd_verify(args) -> int:
    from .experiments import verify_suite

    seed = args.seed
    if args.config:
        seed = _load(args.config, args.seed).seed
    results = verify_suite(seed=seed or 0, sequential=args.sequential)
    passed = all(r["passed"] for r in results)
    report = {"passed": passed, "seed": seed or 0, "checks": results}
    text = _dump(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK if passed else EXIT_VERIFY


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_bounds(args) -> int:
    if not args.sweep:
        missing = [n for n in ("re", "h") if getattr(args, n) is None]
        if missing:
            raise ConfigError(f"missing --{', --'.join(missing)} (or use --sweep)")
        inputs = bounds.BoundInputs(re=args.re, h=args.h, cs=args.cs, delta=args.delta if args.delta is not None else args.h,
                                    L=args.L, U=args.U, C=args.C)
        if inputs.cs_delta > 0:
            report = bounds.coarse_mesh_bound(inputs).as_dict()
        else:
            report = {"resolved": bounds.resolved_bound(inputs), "reference_band": list(bounds.reference_band(inputs.re))}
        print(_dump(report))
        return EXIT_OK

    out = Path(args.out or "bounds_out")
    out.mkdir(parents=True, exist_ok=True)
    re_grid = args.re_grid or [1e2, 1e3, 1e4, 1e5, 1e6]
    h_grid = args.h_grid or list(np.geomspace(1e-4, 0.5, 60) * args.L)
    written = []
    for rule, tag in (("equal-h", "delta_h"), ("h-pow", "delta_h16")):
        rows = bounds.summary_surface(re_grid, h_grid, bounds.delta_rule(rule, L=args.L), cs=args.cs, L=args.L, C=args.C)
        bounds.write_surface_csv(rows, out / f"surface_{tag}.csv")
        bounds.write_gnuplot_blocks(rows, out / f"surface_{tag}.dat")
        written += [f"surface_{tag}.csv", f"surface_{tag}.dat"]
    ratios = np.geomspace(1e-4, 1.0, 200)
    for re in re_grid:
        bounds.write_zeta_csv(re, args.L, ratios, out / f"zeta_re{re:g}.csv")
        written.append(f"zeta_re{re:g}.csv")
    mins = [x for x in np.geomspace(1e-3, 0.5, 40)]
    bounds.write_minimizer_csv(re_grid[-1], mins, out / "minimizers.csv", L=args.L)
    written.append("minimizers.csv")
    if args.svg:
        z1, z2, z3 = bounds.zeta_curves(re_grid[-1], args.L, ratios)
        line_chart(out / "zeta.svg", {"zeta1": (ratios, z1), "zeta2": (ratios, z2), "zeta3": (ratios, z3)},
                   xlabel="h/L", ylabel="Cs delta", logx=True, logy=True)
        written.append("zeta.svg")
    print(_dump({"out": str(out), "files": written}))
    return EXIT_OK


def cmd_compare(args) -> int:
    from .experiments import compare_series, run_experiment, series_from_csv, write_side_by_side

    cfg_nse = _load(args.nse, args.seed)
    cfg_sm = _load(args.sm, args.seed)
    if cfg_nse.model.kind != "nse" or cfg_sm.model.kind != "smagorinsky":
        raise ConfigError("compare expects an nse config followed by a smagorinsky config")
    if abs(cfg_nse.stepping.t_final - cfg_sm.stepping.t_final) > 1e-12:
        raise ConfigError("mismatched horizons")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    series = {}
    for tag, cfg in (("nse", cfg_nse), ("sm", cfg_sm)):
        existing = out / tag / "series.csv"
        if args.reuse and existing.exists():
            series[tag] = series_from_csv(existing, cfg.model.U, cfg.model.L)
            continue
        result = run_experiment(cfg, out / tag, sequential=args.sequential)
        if result.failed:
            log.error("%s run failed: %s", tag, result.series.error)
            return EXIT_SOLVER
        series[tag] = result.series
    try:
        report = compare_series(series["nse"], series["sm"], threshold=args.threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    write_side_by_side(series["nse"], series["sm"], out / "compare.csv")
    (out / "compare.json").write_text(_dump(report) + "\n", encoding="utf-8")
    if args.svg:
        line_chart(out / "compare.svg", {"NSE": (series["nse"].times, series["nse"].ke),
                                         "Smagorinsky": (series["sm"].times, series["sm"].ke)},
                   xlabel="t", ylabel="kinetic energy")
    print(_dump(report))
    return EXIT_OK


def cmd_mesh(args) -> int:
    from .experiments import build_mesh

    if args.inspect:
        mesh = import_msh(args.inspect)
    else:
        if not args.config:
            raise ConfigError("mesh needs --config or --inspect")
        mesh = build_mesh(_load(args.config, args.seed))
    try:
        check_mesh(mesh)
        valid, problem = True, None
    except MeshError as exc:
        valid, problem = False, str(exc)
    info = {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles, "h_max": mesh.h_max, "h_min": mesh.h_min,
            "area": mesh.area, "hash": mesh.digest(), "valid": valid, "problem": problem}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_mesh_vtk(mesh, out / "mesh.vtk")
        write_msh(mesh, out / "mesh.msh")
    print(_dump(info))
    return EXIT_OK if valid else EXIT_VERIFY


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--sequential", action="store_true", help="single-threaded assembly (bitwise reproducible)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smaglab", description="NSE / Smagorinsky dissipation laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one simulation")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", parents=[common], help="run the verification checks")
    v.add_argument("--config")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bounds", parents=[common], help="evaluate bounds or write sweep tables")
    b.add_argument("--re", type=float)
    b.add_argument("--h", type=float)
    b.add_argument("--cs", type=float, default=0.17)
    b.add_argument("--delta", type=float)
    b.add_argument("--L", type=float, default=1.0)
    b.add_argument("--U", type=float, default=1.0)
    b.add_argument("--C", type=float, default=1.0)
    b.add_argument("--sweep", action="store_true", help="write surface, level-set and minimiser tables")
    b.add_argument("--re-grid", type=_floats)
    b.add_argument("--h-grid", type=_floats)
    b.add_argument("--svg", action="store_true")
    b.set_defaults(func=cmd_bounds)

    c = sub.add_parser("compare", parents=[common], help="NSE vs Smagorinsky laminarization comparison")
    c.add_argument("--config", nargs=2, metavar=("NSE", "SM"), required=True, dest="configs")
    c.add_argument("--threshold", type=float, default=0.1)
    c.add_argument("--reuse", action="store_true", help="reuse series.csv files already in the output directory")
    c.add_argument("--svg", action="store_true")
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("mesh", parents=[common], help="generate or inspect a mesh")
    m.add_argument("--config")
    m.add_argument("--inspect", metavar="MSH")
    m.set_defaults(func=cmd_mesh)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        args.nse, args.sm = args.configs
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:  # ConfigError and MeshError included
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
