"""Energy dissipation, kinetic energy and finite-horizon time averages.

The dissipation rate is area-averaged (the 2D stand-in for the volume
average) and normalised by U^3/L to give the dissipation coefficient.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .fem import AssembledForms, FlowState, MixedSpace, assemble_constant_forms, gradient_modulus_at_qp, interpolate


def viscous_integral(space: MixedSpace, u: np.ndarray, forms: AssembledForms | None = None) -> float:
    """int |grad u|^2."""
    forms = forms or assemble_constant_forms(space)
    return float(u @ (forms.A @ u))


def model_integral(space: MixedSpace, u: np.ndarray) -> float:
    """int |grad u|^3 by the degree-5 rule."""
    mod = gradient_modulus_at_qp(space, u)
    return float(np.sum(space.wA * mod**3))


def dissipation_rate(space: MixedSpace, state: FlowState, params, forms: AssembledForms | None = None) -> float:
    """(nu int |grad u|^2 + (C_s delta)^2 int |grad u|^3) / area."""
    eps = params.nu * viscous_integral(space, state.u, forms)
    if params.cs_delta_sq > 0:
        eps += params.cs_delta_sq * model_integral(space, state.u)
    return eps / space.mesh.area


def kinetic_energy(space: MixedSpace, state: FlowState, forms: AssembledForms | None = None) -> float:
    forms = forms or assemble_constant_forms(space)
    return 0.5 * float(state.u @ (forms.M @ state.u)) / space.mesh.area


def time_average(times, values, burn_in: float) -> float:
    """Trapezoidal mean of ``values`` over [burn_in, times[-1]].

    The integrand is linearly interpolated at ``burn_in`` when it falls
    between samples.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) == 0 or burn_in >= t[-1]:
        raise ValueError("empty averaging window")
    if burn_in < t[0]:
        raise ValueError("averaging window starts before the first sample")
    keep = t > burn_in
    tt = np.concatenate([[burn_in], t[keep]])
    vv = np.concatenate([[np.interp(burn_in, t, v)], v[keep]])
    return float(trapezoid(vv, tt) / (tt[-1] - tt[0]))


@dataclass
class DissipationSeries:
    U: float = 1.0
    L: float = 1.0
    times: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    ke: list = field(default_factory=list)
    burn_in: float | None = None
    avg_eps: float | None = None
    c_eps: float | None = None
    picard_iterations: list = field(default_factory=list)
    picard_failures: int = 0
    error: str | None = None
    final_state: FlowState | None = field(default=None, repr=False)

    def append(self, t: float, eps: float, ke: float) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("sample times must increase strictly")
        if eps < 0:
            raise ValueError("dissipation rate must be non-negative")
        self.times.append(float(t))
        self.eps.append(float(eps))
        self.ke.append(float(ke))

    @property
    def scale(self) -> float:
        return self.U**3 / self.L

    def set_burn_in(self, burn_in: float) -> tuple[float, float]:
        self.burn_in = burn_in
        self.avg_eps = time_average(self.times, self.eps, burn_in)
        self.c_eps = self.avg_eps / self.scale
        return self.avg_eps, self.c_eps

    def running_average(self) -> np.ndarray:
        """Average over [burn_in, t] at each sample (nan before the window opens)."""
        out = np.full(len(self.times), np.nan)
        if self.burn_in is None:
            return out
        for k, t in enumerate(self.times):
            if t > self.burn_in and self.times[0] <= self.burn_in:
                out[k] = time_average(self.times[: k + 1], self.eps[: k + 1], self.burn_in)
        return out

    def window(self, start: float, stop: float | None = None) -> np.ndarray:
        t = np.asarray(self.times)
        stop = t[-1] if stop is None else stop
        return (t >= start - 1e-12) & (t <= stop + 1e-12)

    def to_csv(self, path) -> None:
        avg = self.running_average()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "eps", "ke", "avg_eps", "c_eps"])
            for t, e, k, a in zip(self.times, self.eps, self.ke, avg):
                w.writerow([repr(t), repr(e), repr(k), repr(float(a)), repr(float(a / self.scale))])


def time_average_series(series: DissipationSeries, burn_in: float) -> tuple[float, float]:
    """(avg_eps, c_eps) of a series over [burn_in, T]."""
    avg = time_average(series.times, series.eps, burn_in)
    return avg, avg / series.scale


def read_series_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("t", "eps", "ke", "avg_eps", "c_eps")}


# ---------------------------------------------------------------------------
# background-flow norms and the thin-strip Poincare inequality

def _channel_height(space: MixedSpace) -> float:
    return float(space.mesh.vertices[:, 1].max())


def _strip_elements(space: MixedSpace, h_strip: float) -> np.ndarray:
    """Elements inside z >= top - h_strip; raises unless the mesh is aligned there."""
    top = _channel_height(space)
    zs = top - h_strip
    z = space.mesh.vertices[space.mesh.triangles, 1]
    tol = 1e-12 * max(top, 1.0)
    above = (z >= zs - tol).all(axis=1)
    below = (z <= zs + tol).all(axis=1)
    if not np.all(above | below):
        raise ValueError(f"mesh is not aligned with z = {zs!r}")
    return np.flatnonzero(above)


def background_flow(h_strip: float, U: float, L: float):
    """Shear profile (phi(z), 0): zero below L - h_strip, linear up to U at z = L."""

    def phi(x, z):
        return U / h_strip * np.maximum(z - (L - h_strip), 0.0), np.zeros_like(z)

    return phi


@dataclass
class BackgroundNormReport:
    h_strip: float
    measured: dict
    closed_form: dict
    rel_error: dict

    @property
    def max_rel_error(self) -> float:
        return max(self.rel_error.values())


def background_norms_2d(h_strip: float, U: float, L: float) -> dict[str, float]:
    """Closed-form norms of the 2D background flow on [0, L] x [0, L]."""
    h = h_strip
    return {
        "phi_l2_sq": U**2 * L * h / 3.0,
        "grad_l2_sq": U**2 * L / h,
        "grad_l3_cubed": U**3 * L / h**2,
        "grad_l3half_cubed": U**3 * L**2 / h,
    }


def background_norm_check(space: MixedSpace, h_strip: float, U: float = 1.0, L: float | None = None) -> BackgroundNormReport:
    """Quadrature norms of the interpolated background flow against closed forms."""
    L = _channel_height(space) if L is None else L
    _strip_elements(space, h_strip)
    forms = assemble_constant_forms(space)
    phi = interpolate(space, background_flow(h_strip, U, L))
    mod = gradient_modulus_at_qp(space, phi)
    measured = {
        "phi_l2_sq": float(phi @ (forms.M @ phi)),
        "grad_l2_sq": float(phi @ (forms.A @ phi)),
        "grad_l3_cubed": float(np.sum(space.wA * mod**3)),
        "grad_l3half_cubed": float(np.sum(space.wA * mod**1.5)) ** 2,
    }
    exact = background_norms_2d(h_strip, U, L)
    rel = {k: abs(measured[k] - exact[k]) / abs(exact[k]) for k in exact}
    return BackgroundNormReport(h_strip, measured, exact, rel)


def strip_ratio(space: MixedSpace, v: np.ndarray, h_strip: float, elems: np.ndarray | None = None) -> float:
    """||v||_{L2(strip)} / (h ||grad v||_{L2(strip)}); 0 for the zero field."""
    elems = _strip_elements(space, h_strip) if elems is None else elems
    wA = space.wA[elems]
    vals = space.values_at_qp(v)[elems]
    grads = space.gradients_at_qp(v)[elems]
    num = float(np.sum(wA * np.einsum("eqc,eqc->eq", vals, vals)))
    den = float(np.sum(wA * np.einsum("eqcd,eqcd->eq", grads, grads)))
    if den == 0.0:
        return 0.0
    return math.sqrt(num) / (h_strip * math.sqrt(den))


def poincare_strip_check(
    space: MixedSpace,
    h_strip: float,
    n_fields: int = 100,
    seed: int = 0,
    fields: list | None = None,
) -> float:
    """Largest strip ratio over random discrete fields vanishing on the top wall."""
    elems = _strip_elements(space, h_strip)
    top = _channel_height(space)
    on_top = np.flatnonzero(np.abs(space.nodes[:, 1] - top) < 1e-12 * max(top, 1.0))
    if fields is None:
        rng = np.random.default_rng(seed)
        fields = [rng.standard_normal(space.n_vel) for _ in range(n_fields)]
    worst = 0.0
    for v in fields:
        v = np.array(v, dtype=float)
        v[on_top] = 0.0
        v[space.n_nodes + on_top] = 0.0
        worst = max(worst, strip_ratio(space, v, h_strip, elems))
    return worst


# interface name kept for callers that use the numbered form
lemma1_quadrature_check = background_norm_check
