"""Experiment recipes: domains, boundary data, runs, comparisons and the verification suite."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds, stats
from .config import ExperimentConfig
from .fem import (
    FlowState,
    MixedSpace,
    assemble_advection,
    assemble_constant_forms,
    assemble_eddy_viscosity,
    interpolate,
    l2_error,
)
from .mesh import AnnulusSpec, ChannelSpec, Marker, Mesh, build_annulus_mesh, build_channel_mesh, import_msh
from .solver import (
    ModelParams,
    SolverError,
    TimeStepper,
    TimeSteppingConfig,
    divergence_residual,
    run_transient,
    save_checkpoint,
    solve_stokes,
    write_field_vtk,
)
from .svg import line_chart

log = logging.getLogger(__name__)

LAMINARIZATION_THRESHOLD = 0.1


# ---------------------------------------------------------------------------
# domains and boundary data

def rotating_wall(U: float):
    """Tangential velocity U (-z, x)/r on a circle about the origin."""

    def g(x, z, t):
        r = np.hypot(x, z)
        return -U * z / r, U * x / r

    return g


def boundary_data(mesh: Mesh, U: float) -> tuple[list[Marker], dict]:
    """Dirichlet markers present on ``mesh`` with their data.

    Moving walls: the outer circle rotates, the top wall slides at (U, 0).
    Everything else is no-slip; periodic sides carry no data.
    """
    present = {Marker(m) for m in np.unique(mesh.boundary_markers)}
    data = {
        Marker.OuterCircle: rotating_wall(U),
        Marker.InnerCircle: (0.0, 0.0),
        Marker.BottomWall: (0.0, 0.0),
        Marker.TopWall: (U, 0.0),
    }
    markers = [m for m in data if m in present]
    return markers, {m: data[m] for m in markers}


def build_mesh(cfg: ExperimentConfig) -> Mesh:
    d = cfg.domain
    if d.kind == "channel":
        return build_channel_mesh(d.channel_spec())
    if d.kind == "annulus":
        return build_annulus_mesh(d.annulus_spec(), d.refinement)
    return import_msh(d.path)


def workers(sequential: bool) -> int:
    return 1 if sequential else max(1, min(4, os.cpu_count() or 1))


def build_space(cfg: ExperimentConfig, sequential: bool = True):
    mesh = build_mesh(cfg)
    markers, bc = boundary_data(mesh, cfg.model.U)
    return MixedSpace(mesh, markers, workers=workers(sequential)), bc


def model_params(cfg: ExperimentConfig, mesh: Mesh) -> ModelParams:
    m = cfg.model
    cs = 0.0 if m.kind == "nse" else m.cs
    return ModelParams(nu=cfg.nu, cs=cs, delta=cfg.delta(mesh.h_max), U=m.U, L=m.L)


def stepping(cfg: ExperimentConfig) -> TimeSteppingConfig:
    s = cfg.stepping
    return TimeSteppingConfig(s.dt, s.t_final, s.picard_tol, s.picard_max, s.output_every)


# ---------------------------------------------------------------------------
# bound bookkeeping

def bound_check(c_eps: float | None, params: ModelParams, h: float, C: float = 1.0) -> dict:
    """Compare a measured dissipation coefficient with the applicable bound.

    The coarse-mesh bound needs C_s delta > 0; pure NSE runs fall back to the
    fine-mesh bound, whose hypothesis is flagged when it fails.
    """
    inputs = bounds.BoundInputs(re=params.re, h=h, cs=params.cs, delta=params.delta, L=params.L, U=params.U, C=C)
    if inputs.cs_delta > 0:
        report = bounds.coarse_mesh_bound(inputs)
        limit, branch = report.normalized["coarse"], "coarse"
        payload = report.as_dict()
    else:
        limit, branch = bounds.resolved_bound(inputs) / inputs.scale, "resolved"
        payload = {"resolved": limit * inputs.scale, "normalized": {"resolved": limit},
                   "flags": [] if inputs.resolved else ["resolved_hypothesis_violated"],
                   "reference_band": list(bounds.reference_band(inputs.re))}
    ok = c_eps is not None and c_eps <= limit
    return {"branch": branch, "C": C, "c_eps": c_eps, "bound": limit, "satisfied": ok, "report": payload}


# ---------------------------------------------------------------------------
# single run

@dataclass
class RunResult:
    series: stats.DissipationSeries
    summary: dict
    out: Path

    @property
    def failed(self) -> bool:
        return self.series.error is not None


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float) + "\n", encoding="utf-8")


def run_experiment(cfg: ExperimentConfig, out, sequential: bool = True) -> RunResult:
    """Run one configured simulation and write its artifacts into ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(cfg.to_toml(), encoding="utf-8")
    space, bc = build_space(cfg, sequential)
    mesh = space.mesh
    params = model_params(cfg, mesh)
    tcfg = stepping(cfg)

    snapshot = None
    if cfg.outputs.vtk_every:
        def snapshot(state, k):
            write_field_vtk(out / "vtk" / f"field_{k:06d}.vtk", space, state)

    start = time.perf_counter()
    try:
        series = run_transient(
            space, params, tcfg, bc,
            burn_in=cfg.burn_in,
            checkpoint_dir=out / "checkpoints" if cfg.outputs.checkpoint_every else None,
            checkpoint_every=cfg.outputs.checkpoint_every,
            snapshot=snapshot,
            snapshot_every=cfg.outputs.vtk_every,
        )
    except SolverError as exc:  # Stokes initialisation failed
        series = stats.DissipationSeries(U=params.U, L=params.L)
        series.error = f"initialisation: {exc}"
    elapsed = time.perf_counter() - start

    series.to_csv(out / "series.csv")
    if series.final_state is not None:
        save_checkpoint(out / "final_state.npz", space, series.final_state)
    if snapshot is not None and series.final_state is not None:
        write_field_vtk(out / "vtk" / "final.vtk", space, series.final_state)

    its = series.picard_iterations
    summary = {
        "config": cfg.to_dict(),
        "mesh": {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles, "h_max": mesh.h_max,
                 "h_min": mesh.h_min, "area": mesh.area, "hash": mesh.digest()},
        "params": {"nu": params.nu, "re": params.re, "cs": params.cs, "delta": params.delta,
                   "cs_delta": params.cs * params.delta, "U": params.U, "L": params.L},
        "burn_in": series.burn_in,
        "avg_eps": series.avg_eps,
        "c_eps": series.c_eps,
        "final_time": series.times[-1] if series.times else None,
        "picard": {
            "steps": len(its),
            "mean_iterations": float(np.mean(its)) if its else None,
            "max_iterations": int(max(its)) if its else None,
            "failures": series.picard_failures,
        },
        "error": series.error,
        "wall_time_s": elapsed,
    }
    check = bound_check(series.c_eps, params, mesh.h_max, cfg.model.C)
    summary["bound_check"] = check
    if series.c_eps is not None and not check["satisfied"]:
        log.warning("measured c_eps %.4g exceeds the %s bound %.4g (C=%g)",
                    series.c_eps, check["branch"], check["bound"], check["C"])
        _write_json(out / "bound_warning.json", check)
    _write_json(out / "summary.json", summary)
    if cfg.outputs.svg and series.times:
        line_chart(out / "series.svg", {"kinetic energy": (series.times, series.ke)}, xlabel="t", ylabel="ke")
    return RunResult(series, summary, out)


# ---------------------------------------------------------------------------
# NSE vs Smagorinsky comparison

def _window_std(times, values, start: float, stop: float) -> float:
    t = np.asarray(times)
    sel = (t >= start - 1e-9) & (t <= stop + 1e-9)
    return float(np.std(np.asarray(values)[sel]))


def compare_series(
    nse: stats.DissipationSeries,
    sm: stats.DissipationSeries,
    threshold: float = LAMINARIZATION_THRESHOLD,
) -> dict:
    """Fluctuation ratio of kinetic energy over [T/2, T] and the laminarization verdict."""
    T = nse.times[-1]
    if abs(sm.times[-1] - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"horizons differ: {T!r} vs {sm.times[-1]!r}")
    lo = 0.5 * T
    std_nse = _window_std(nse.times, nse.ke, lo, T)
    std_sm = _window_std(sm.times, sm.ke, lo, T)
    ratio = std_sm / std_nse if std_nse > 0 else math.inf
    return {
        "window": [lo, T],
        "std_ke_nse": std_nse,
        "std_ke_sm": std_sm,
        "std_ratio": ratio,
        "threshold": threshold,
        "laminarized": ratio <= threshold,
        "c_eps_nse": stats.time_average_series(nse, lo)[1],
        "c_eps_sm": stats.time_average_series(sm, lo)[1],
    }


def write_side_by_side(nse: stats.DissipationSeries, sm: stats.DissipationSeries, path) -> None:
    """Both series on the NSE sample times (the SM series is interpolated when grids differ)."""
    t = np.asarray(nse.times)
    cols = {
        "eps_nse": np.asarray(nse.eps), "ke_nse": np.asarray(nse.ke),
        "eps_sm": np.interp(t, sm.times, sm.eps), "ke_sm": np.interp(t, sm.times, sm.ke),
    }
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *cols])
        for k, tk in enumerate(t):
            w.writerow([repr(float(tk)), *(repr(float(c[k])) for c in cols.values())])


def series_from_csv(path, U: float = 1.0, L: float = 1.0) -> stats.DissipationSeries:
    data = stats.read_series_csv(path)
    s = stats.DissipationSeries(U=U, L=L)
    for t, e, k in zip(data["t"], data["eps"], data["ke"]):
        s.append(t, e, k)
    return s


# ---------------------------------------------------------------------------
# verification suite

def _check(name: str, measured: float, tolerance: float, passed: bool | None = None, **extra) -> dict:
    ok = measured <= tolerance if passed is None else passed
    return {"name": name, "measured": float(measured), "tolerance": float(tolerance), "passed": bool(ok), **extra}


def verify_suite(seed: int = 0, sequential: bool = True) -> list[dict]:
    """Fast numerical checks of the discretisation; each entry carries its measured value."""
    rng = np.random.default_rng(seed)
    w = workers(sequential)
    results = []

    for h in (0.05, 0.1, 0.25):
        mesh = build_channel_mesh(ChannelSpec(L=1.0, nz=20, nx=4, align_strip=h))
        space = MixedSpace(mesh, [Marker.BottomWall, Marker.TopWall], workers=w)
        rep = stats.background_norm_check(space, h, 1.0, 1.0)
        results.append(_check(f"background_norms_h{h}", rep.max_rel_error, 1e-10))
        if h == 0.1:
            ratio = stats.poincare_strip_check(space, h, n_fields=100, seed=seed)
            results.append(_check("strip_poincare_ratio", ratio, 1.0))

    mesh = build_channel_mesh(ChannelSpec(L=1.0, nz=10, nx=10))
    walls = [Marker.BottomWall, Marker.TopWall]
    space = MixedSpace(mesh, walls, workers=w)
    forms = assemble_constant_forms(space)

    def a_norm(v):
        return math.sqrt(float(v @ (forms.A @ v)))

    worst = 0.0
    for _ in range(20):
        u, v = rng.standard_normal(space.n_vel), rng.standard_normal(space.n_vel)
        N = assemble_advection(space, u)
        worst = max(worst, abs(float(v @ (N @ v))) / (a_norm(u) * a_norm(v) ** 2))
    results.append(_check("skew_symmetry", worst, 1e-12))

    bc = {Marker.BottomWall: (0.0, 0.0), Marker.TopWall: (1.0, 0.0)}
    params = ModelParams(nu=0.01, cs=0.17, delta=mesh.h_max)
    exact = interpolate(space, lambda x, z: (z, np.zeros_like(z)))
    stokes = solve_stokes(space, params, bc, forms)
    results.append(_check("couette_stokes", float(np.max(np.abs(stokes.u - exact))), 1e-10))
    stepper = TimeStepper(space, params, TimeSteppingConfig(dt=0.01, t_final=0.1), bc, forms=forms)
    state = FlowState(exact.copy(), np.zeros(space.n_pres))
    for _ in range(10):
        state = stepper.step(state)
    drift = math.sqrt(float((state.u - exact) @ (forms.M @ (state.u - exact))))
    results.append(_check("couette_fixed_point", drift, 1e-8))
    c_eps = stats.dissipation_rate(space, state, params, forms)
    expected = 1.0 / params.re + (params.cs * params.delta) ** 2
    results.append(_check("couette_dissipation", abs(c_eps - expected) / expected, 1e-8))

    amesh = build_annulus_mesh(AnnulusSpec(m=24, n=12))
    markers, abc = boundary_data(amesh, 1.0)
    aspace = MixedSpace(amesh, markers, workers=w)
    aforms = assemble_constant_forms(aspace)
    st = solve_stokes(aspace, ModelParams(nu=1e-3), abc, aforms)
    norm = float(np.linalg.norm(st.u))
    results.append(_check("annulus_divergence", divergence_residual(aspace, aforms, st.u) / norm, 1e-10))

    results.append(energy_check(space, forms, rng, steps=10))

    conv = mms_convergence()
    order = min(conv.orders)
    results.append(_check("manufactured_order", order, 2.5, passed=order >= 2.5, errors=conv.errors))
    return results


def energy_residuals(space: MixedSpace, forms, params: ModelParams, u0: np.ndarray, dt: float, steps: int):
    """Per-step residual of the discrete energy identity with homogeneous walls.

    For backward Euler with a skew advection term,
    1/2|u1|^2 - 1/2|u0|^2 + 1/2|u1-u0|^2 + dt nu |grad u1|^2 + dt u1.S u1 = 0
    in the mass norm, with S frozen at the final Picard linearisation.
    """
    walls = [m for m in (Marker.BottomWall, Marker.TopWall, Marker.OuterCircle, Marker.InnerCircle)
             if m in space.dirichlet_markers]
    bc = {m: (0.0, 0.0) for m in walls}
    stepper = TimeStepper(space, params, TimeSteppingConfig(dt=dt, t_final=dt * steps), bc, forms=forms)
    state = FlowState(space.apply_constraints(u0, np.zeros(space.n_vel)), np.zeros(space.n_pres))
    M, A = forms.M, forms.A
    out = []
    for _ in range(steps):
        new = stepper.step(state)
        u0_, u1 = state.u, new.u
        d = u1 - u0_
        terms = [0.5 * u1 @ (M @ u1), -0.5 * u0_ @ (M @ u0_), 0.5 * d @ (M @ d), dt * params.nu * u1 @ (A @ u1)]
        if params.cs_delta_sq > 0:
            S = assemble_eddy_viscosity(space, stepper.last_info.linearization, params.cs_delta_sq)
            terms.append(dt * float(u1 @ (S @ u1)))
        scale = sum(abs(t) for t in terms)
        out.append(abs(sum(terms)) / scale if scale > 0 else 0.0)
        state = new
    return out


def energy_check(space, forms, rng, steps: int = 10) -> dict:
    params = ModelParams(nu=0.01, cs=0.17, delta=space.mesh.h_max)
    u0 = rng.standard_normal(space.n_vel)
    res = energy_residuals(space, forms, params, u0, 0.01, steps)
    return _check("energy_identity", max(res), 1e-10)


# ---------------------------------------------------------------------------
# manufactured solution on the periodic channel

PI = math.pi


def manufactured_solution(nu: float):
    """Exact (u, p) and the body force that makes them solve forced NSE on the unit channel.

    The velocity derives from the stream function (1 + t) sin(2 pi x) sin^2(pi z):
    periodic in x, zero on both walls, divergence free. Its amplitude is linear
    in t, so backward Euler integrates the time derivative without error.
    """

    def velocity(x, z, t=0.0):
        a = 1.0 + t
        return (PI * a * np.sin(2 * PI * x) * np.sin(2 * PI * z),
                -2 * PI * a * np.cos(2 * PI * x) * np.sin(PI * z) ** 2)

    def pressure(x, z, t=0.0):
        return np.sin(2 * PI * x) * np.cos(PI * z)

    def forcing(x, z, t):
        a = 1.0 + t
        S, Cx = np.sin(2 * PI * x), np.cos(2 * PI * x)
        s2, c2 = np.sin(2 * PI * z), np.cos(2 * PI * z)
        q = np.sin(PI * z) ** 2
        u, w = PI * a * S * s2, -2 * PI * a * Cx * q
        ux, uz = 2 * PI**2 * a * Cx * s2, 2 * PI**2 * a * S * c2
        wx, wz = 4 * PI**2 * a * S * q, -2 * PI**2 * a * Cx * s2
        lap_u = -8 * PI**3 * a * S * s2
        lap_w = 4 * PI**3 * a * Cx * (1 - 2 * c2)
        px, pz = 2 * PI * Cx * np.cos(PI * z), -PI * S * np.sin(PI * z)
        fx = PI * S * s2 + u * ux + w * uz - nu * lap_u + px
        fz = -2 * PI * Cx * q + u * wx + w * wz - nu * lap_w + pz
        return fx, fz

    return velocity, pressure, forcing


@dataclass
class ConvergenceReport:
    h: list[float]
    errors: list[float]

    @property
    def orders(self) -> list[float]:
        return [math.log(e0 / e1) / math.log(h0 / h1)
                for (h0, h1), (e0, e1) in zip(zip(self.h, self.h[1:]), zip(self.errors, self.errors[1:]))]


def mms_convergence(levels=(4, 8, 16), nu: float = 0.1, dt: float = 1e-3, steps: int = 20) -> ConvergenceReport:
    """Velocity L2 errors of forced NSE on successively halved channel meshes."""
    velocity, _, forcing = manufactured_solution(nu)
    walls = [Marker.BottomWall, Marker.TopWall]
    bc = {m: (0.0, 0.0) for m in walls}
    params = ModelParams(nu=nu)
    cfg = TimeSteppingConfig(dt=dt, t_final=dt * steps, picard_tol=1e-10)
    hs, errors = [], []
    for n in levels:
        space = MixedSpace(build_channel_mesh(ChannelSpec(L=1.0, nz=n, nx=n)), walls)
        stepper = TimeStepper(space, params, cfg, bc, forcing=forcing)
        state = FlowState(interpolate(space, velocity), np.zeros(space.n_pres))
        for k in range(1, steps + 1):
            state = stepper.step(state, k * dt)
        hs.append(space.mesh.h_max)
        errors.append(l2_error(space, state.u, lambda x, z: velocity(x, z, state.t)))
    return ConvergenceReport(hs, errors)
