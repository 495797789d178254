"""Stokes initialisation and backward-Euler / Picard time stepping.

Both nonlinear terms (skew advection and the Smagorinsky eddy viscosity) are
frozen at the previous Picard iterate, so every linear solve is a symmetric
positive-definite velocity block coupled to the divergence constraint and a
scalar multiplier enforcing zero-mean pressure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (
    AssembledForms,
    FlowState,
    MixedSpace,
    advection_local,
    assemble_body_force,
    assemble_constant_forms,
    cell_gradient_modulus,
    eddy_viscosity_local,
)
from . import stats

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelParams:
    nu: float
    cs: float = 0.0
    delta: float = 0.0
    U: float = 1.0
    L: float = 1.0

    def __post_init__(self):
        if self.nu <= 0 or self.U <= 0 or self.L <= 0:
            raise ValueError("nu, U and L must be positive")
        if self.cs < 0 or self.delta < 0:
            raise ValueError("cs and delta must be non-negative")

    @property
    def re(self) -> float:
        return self.U * self.L / self.nu

    @property
    def cs_delta_sq(self) -> float:
        return (self.cs * self.delta) ** 2

    @classmethod
    def from_reynolds(cls, re: float, U: float = 1.0, L: float = 1.0, cs: float = 0.0, delta: float = 0.0):
        return cls(nu=U * L / re, cs=cs, delta=delta, U=U, L=L)


@dataclass(frozen=True)
class TimeSteppingConfig:
    dt: float = 0.01
    t_final: float = 10.0
    picard_tol: float = 1e-8
    picard_max: int = 50
    output_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_final < self.dt:
            raise ValueError("t_final must be at least dt")
        if not 0 < self.picard_tol < 1:
            raise ValueError("picard_tol must lie in (0, 1)")
        if self.picard_max < 1 or self.output_every < 1:
            raise ValueError("picard_max and output_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


# ---------------------------------------------------------------------------
# linear algebra

def saddle_matrix(K: sp.spmatrix, B: sp.spmatrix, weights: np.ndarray) -> sp.csc_matrix:
    """[[K, -B^T, 0], [-B, 0, -w], [0, -w^T, 0]] in CSC form."""
    wcol = sp.csr_matrix(np.asarray(weights, dtype=float).reshape(-1, 1))
    return sp.bmat([[K, -B.T, None], [-B, None, -wcol], [None, -wcol.T, None]], format="csc")


def _factorize(S: sp.csc_matrix, strict: bool = False):
    # Threshold pivoting that prefers the diagonal keeps the symmetric
    # minimum-degree ordering intact; strict mode is the fallback.
    opts = {} if strict else {"diag_pivot_thresh": 0.01, "options": {"SymmetricMode": True}}
    try:
        return spla.splu(S, permc_spec="MMD_AT_PLUS_A", **opts)
    except RuntimeError as exc:
        raise SolverError(f"saddle factorisation failed: {exc}") from exc


def _residual_ratio(S, x, rhs) -> float:
    scale = abs(S).max() * np.linalg.norm(x) + np.linalg.norm(rhs)
    return 0.0 if scale == 0.0 else float(np.linalg.norm(S @ x - rhs) / scale)


def _direct_solve(S, rhs, rtol):
    res = math.inf
    for strict in (False, True):
        lu = _factorize(S, strict)
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            continue
        if _residual_ratio(S, x, rhs) > rtol:
            x += lu.solve(rhs - S @ x)  # one step of iterative refinement
        res = _residual_ratio(S, x, rhs)
        if res <= rtol:
            return x, lu
    raise SolverError(f"saddle residual {res:.3e} exceeds tolerance")


def solve_saddle(
    K: sp.spmatrix,
    B: sp.spmatrix,
    f: np.ndarray,
    g: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    rtol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve K u - B^T p = f, B u = g, weights . p = 0 by sparse LU.

    A scalar multiplier on the mean-pressure row removes the constant
    pressure mode; it is returned implicitly as zero when the data are
    compatible.
    """
    n, m = K.shape[0], B.shape[0]
    g = np.zeros(m) if g is None else g
    w = np.ones(m) if weights is None else weights
    x, _ = _direct_solve(saddle_matrix(K, B, w), np.concatenate([f, -g, [0.0]]), rtol)
    return x[:n], x[n : n + m]


def _reduce(space: MixedSpace, Ks: sp.csr_matrix):
    """Reduced vector operator and the raw block matrix for lifting."""
    Tn = space.Tn
    Kr = (Tn.T @ Ks @ Tn).tocsr()
    return sp.block_diag([Kr, Kr], format="csr"), sp.block_diag([Ks, Ks], format="csr")


class SaddleSolver:
    """Constrained saddle solves on one space.

    The reduced saddle matrix has a fixed sparsity pattern, so velocity
    blocks given on the space's scalar pattern are scattered straight into
    it. With ``reuse`` the most recent LU factorisation preconditions GMRES
    for later systems, which differ only through the frozen nonlinear
    terms; a fresh factorisation is computed whenever GMRES misses
    ``krylov_rtol`` within ``max_krylov`` iterations.
    """

    def __init__(
        self,
        space: MixedSpace,
        forms: AssembledForms,
        reuse: bool = False,
        rtol: float = 1e-10,
        krylov_rtol: float = 1e-13,
        max_krylov: int = 40,
    ):
        self.space, self.forms = space, forms
        self.reuse, self.rtol = reuse, rtol
        self.krylov_rtol, self.max_krylov = krylov_rtol, max_krylov
        self.Br = (space.Tp.T @ forms.B @ space.T).tocoo()
        self.weights = space.Tp.T @ forms.pressure_weights
        self._lu = None
        self.factorizations = 0
        self.krylov_iterations = 0
        self._build_pattern()

    def _build_pattern(self):
        space = self.space
        pat = space._scalar_pattern
        Tn = space.Tn.tocsr()
        nf = Tn.shape[1]
        reduced = -np.ones(space.n_nodes, dtype=np.int64)
        has = np.diff(Tn.indptr) > 0
        reduced[has] = Tn.indices
        R, C = reduced[pat.rows], reduced[pat.indices]
        self._keep = np.flatnonzero((R >= 0) & (C >= 0))
        R, C = R[self._keep], C[self._keep]

        n, m = 2 * nf, self.Br.shape[0]
        self.n, self.m = n, m
        br, bc, bd = self.Br.row, self.Br.col, self.Br.data
        pw = np.arange(m)
        rows = np.concatenate([R, nf + R, bc, n + br, n + pw, np.full(m, n + m)])
        cols = np.concatenate([C, nf + C, n + br, bc, np.full(m, n + m), n + pw])
        const = np.concatenate([-bd, -bd, -self.weights, -self.weights])
        size = n + m + 1
        uniq, inverse = np.unique(cols * size + rows, return_inverse=True)
        nk = 2 * len(R)
        self._k_pos = inverse[:nk]
        self._nnz = len(uniq)
        self._const = np.bincount(inverse[nk:], weights=const, minlength=self._nnz)
        self._indices = (uniq % size).astype(np.int32)
        self._indptr = np.zeros(size + 1, dtype=np.int32)
        np.cumsum(np.bincount(uniq // size, minlength=size), out=self._indptr[1:])
        self._shape = (size, size)

    def matrix(self, Ks: sp.spmatrix) -> sp.csc_matrix:
        """Reduced saddle matrix for the scalar velocity block ``Ks``."""
        if self.space._scalar_pattern.aligned(Ks):
            kd = Ks.data[self._keep]
            data = self._const + np.bincount(self._k_pos, weights=np.concatenate([kd, kd]), minlength=self._nnz)
            return sp.csc_matrix((data, self._indices, self._indptr), shape=self._shape)
        Kr, _ = _reduce(self.space, Ks)
        return saddle_matrix(Kr, self.Br, self.weights)

    def _krylov(self, S, rhs):
        lu = self._lu
        count = [0]

        def tick(_):
            count[0] += 1

        prec = spla.LinearOperator(S.shape, matvec=lu.solve, dtype=float)
        x, _ = spla.gmres(
            S, rhs, x0=lu.solve(rhs), rtol=self.krylov_rtol, atol=0.0,
            restart=self.max_krylov, maxiter=1, M=prec, callback=tick, callback_type="pr_norm",
        )
        self.krylov_iterations += count[0]
        rn = np.linalg.norm(rhs)
        if rn == 0.0 or np.linalg.norm(S @ x - rhs) <= 10 * self.krylov_rtol * rn:
            return x
        return None

    def solve(self, Ks: sp.spmatrix, rhs: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Velocity and pressure for scalar block ``Ks``, load ``rhs`` and lifting ``g``."""
        space, forms = self.space, self.forms
        nn = space.n_nodes
        lifted = rhs - np.concatenate([Ks @ g[:nn], Ks @ g[nn:]])
        f = space.T.T @ lifted
        div_g = space.Tp.T @ (forms.B @ g)
        S = self.matrix(Ks)
        b = np.concatenate([f, div_g, [0.0]])
        x = self._krylov(S, b) if self.reuse and self._lu is not None else None
        if x is None:
            x, self._lu = _direct_solve(S, b, self.rtol)
            self.factorizations += 1
        return space.expand(x[: self.n], g), space.Tp @ x[self.n : self.n + self.m]


def divergence_residual(space: MixedSpace, forms: AssembledForms, u: np.ndarray) -> float:
    """|B u| over the identified pressure space."""
    return float(np.linalg.norm(space.Tp.T @ (forms.B @ u)))


def solve_stokes(
    space: MixedSpace,
    params: ModelParams,
    bc: dict,
    forms: AssembledForms | None = None,
    t: float = 0.0,
) -> FlowState:
    """Steady Stokes flow with the given Dirichlet data."""
    forms = forms or assemble_constant_forms(space)
    g = space.dirichlet_values(bc, t)
    u, p = SaddleSolver(space, forms).solve(params.nu * forms.As, np.zeros(space.n_vel), g)
    return FlowState(u, p, t)


# ---------------------------------------------------------------------------
# time stepping

@dataclass
class StepInfo:
    iterations: int
    increment: float
    converged: bool
    linearization: np.ndarray = field(repr=False)


class TimeStepper:
    """Backward Euler with Picard iteration for NSE (cs = 0) or the Smagorinsky model."""

    def __init__(
        self,
        space: MixedSpace,
        params: ModelParams,
        cfg: TimeSteppingConfig,
        bc: dict,
        forcing: Callable | None = None,
        forms: AssembledForms | None = None,
        extrapolate: bool = True,
        reuse_factorization: bool = True,
    ):
        self.space, self.params, self.cfg, self.bc = space, params, cfg, bc
        self.forcing = forcing
        self.forms = forms or assemble_constant_forms(space)
        self.extrapolate = extrapolate
        self._previous: np.ndarray | None = None
        self.last_info: StepInfo | None = None
        self._pattern = space._scalar_pattern
        self._base = self.forms.Ms.data / cfg.dt + params.nu * self.forms.As.data
        self.saddle = SaddleSolver(space, self.forms, reuse=reuse_factorization)

    def _l2(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ (self.forms.M @ v)), 0.0))

    def step(self, state: FlowState, t_new: float | None = None) -> FlowState:
        """Advance ``state`` by one step; ``t_new`` overrides ``state.t + dt`` to avoid drift."""
        space, cfg, forms = self.space, self.cfg, self.forms
        t_new = state.t + cfg.dt if t_new is None else t_new
        g = space.dirichlet_values(self.bc, t_new)
        rhs = forms.M @ state.u / cfg.dt
        if self.forcing is not None:
            rhs = rhs + assemble_body_force(space, self.forcing, t_new)

        guess = state.u
        if self.extrapolate and self._previous is not None:
            guess = 2.0 * state.u - self._previous
        guess = space.apply_constraints(guess, g)

        cs2 = self.params.cs_delta_sq
        it, inc, converged = 0, float("inf"), False
        u_k = guess
        p = state.p
        for it in range(1, cfg.picard_max + 1):
            local = advection_local(space, u_k)
            if cs2 > 0:
                local = local + eddy_viscosity_local(space, u_k, cs2)
            Ks = self._pattern.from_data(self._base + self._pattern.data(local))
            u_new, p = self.saddle.solve(Ks, rhs, g)
            norm = self._l2(u_new)
            inc = self._l2(u_new - u_k) / norm if norm > 0 else self._l2(u_new - u_k)
            lin, u_k = u_k, u_new
            if inc <= cfg.picard_tol:
                converged = True
                break
        if not converged:
            log.warning("Picard did not converge at t=%.4g (increment %.3e)", t_new, inc)
        self.last_info = StepInfo(it, inc, converged, lin)
        self._previous = state.u
        return FlowState(u_k, p, t_new)


def step_backward_euler(
    state: FlowState,
    space: MixedSpace,
    params: ModelParams,
    cfg: TimeSteppingConfig,
    bc: dict,
    forcing: Callable | None = None,
    forms: AssembledForms | None = None,
) -> FlowState:
    """One backward-Euler step from ``state`` (no extrapolated Picard guess)."""
    return TimeStepper(space, params, cfg, bc, forcing, forms, extrapolate=False).step(state)


def run_transient(
    space: MixedSpace,
    params: ModelParams,
    cfg: TimeSteppingConfig,
    bc: dict,
    hooks: Sequence[Callable] = (),
    initial: FlowState | None = None,
    forcing: Callable | None = None,
    burn_in: float | None = None,
    checkpoint_dir=None,
    checkpoint_every: int = 0,
    snapshot: Callable | None = None,
    snapshot_every: int = 0,
) -> stats.DissipationSeries:
    """Integrate to ``cfg.t_final`` sampling the dissipation statistics.

    Hooks are called as ``hook(state, step)`` at every sample. On a solver
    failure the partial series is returned with ``error`` set.
    """
    forms = assemble_constant_forms(space)
    state = initial or solve_stokes(space, params, bc, forms)
    stepper = TimeStepper(space, params, cfg, bc, forcing, forms)
    series = stats.DissipationSeries(U=params.U, L=params.L)
    burn = 0.5 * cfg.t_final if burn_in is None else burn_in

    def sample(st, k):
        series.append(st.t, stats.dissipation_rate(space, st, params, forms), stats.kinetic_energy(space, st, forms))
        for hook in hooks:
            hook(st, k)

    t0 = state.t
    sample(state, 0)
    for k in range(1, cfg.n_steps + 1):
        try:
            state = stepper.step(state, t0 + k * cfg.dt)
        except (SolverError, FloatingPointError, ValueError) as exc:
            series.error = f"step {k} (t={state.t + cfg.dt:.4g}): {exc}"
            log.error(series.error)
            break
        info = stepper.last_info
        series.picard_iterations.append(info.iterations)
        if not info.converged:
            series.picard_failures += 1
        if k % cfg.output_every == 0 or k == cfg.n_steps:
            sample(state, k)
        if checkpoint_dir is not None and checkpoint_every and k % checkpoint_every == 0:
            save_checkpoint(Path(checkpoint_dir) / f"checkpoint_{k:06d}.npz", space, state)
        if snapshot is not None and snapshot_every and k % snapshot_every == 0:
            snapshot(state, k)
    series.final_state = state
    if series.times[-1] > burn:
        series.set_burn_in(burn)
    return series


# ---------------------------------------------------------------------------
# checkpoints and field output

def save_checkpoint(path, space: MixedSpace, state: FlowState) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, t=state.t, u=state.u, p=state.p, mesh_hash=space.mesh.digest())


def load_checkpoint(path, space: MixedSpace) -> FlowState:
    with np.load(path) as data:
        if str(data["mesh_hash"]) != space.mesh.digest():
            raise ValueError("checkpoint was written for a different mesh")
        if data["u"].shape != (space.n_vel,):
            raise ValueError("checkpoint does not match the velocity space")
        return FlowState(data["u"].copy(), data["p"].copy(), float(data["t"]))


def write_field_vtk(path, space: MixedSpace, state: FlowState) -> None:
    """Legacy VTK snapshot: vertex velocity and pressure, |grad u| per cell."""
    mesh = space.mesh
    nv, nn, nt = mesh.n_vertices, space.n_nodes, mesh.n_triangles
    ux, uz = state.u[:nv], state.u[nn : nn + nv]
    out = ["# vtk DataFile Version 3.0", f"smaglab field t={state.t:.6g}", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {nv} double")
    out += [f"{x!r} {z!r} 0.0" for x, z in mesh.vertices.tolist()]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    out += [f"POINT_DATA {nv}", "VECTORS velocity double"]
    out += [f"{a!r} {b!r} 0.0" for a, b in zip(ux.tolist(), uz.tolist())]
    out += ["SCALARS pressure double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in state.p.tolist()]
    out += [f"CELL_DATA {nt}", "SCALARS grad_u_modulus double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in cell_gradient_modulus(space, state.u).tolist()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
