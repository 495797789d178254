"""Closed-form dissipation bounds for NSE and the Smagorinsky model.

All bounds are reported both dimensionally (times U^3/L) and normalised.
The generic prefactor ``C`` is unknown and always carried explicitly.

Notation: ``cs_delta`` is the product C_s * delta, ``re`` the Reynolds
number (``math.inf`` is accepted and drops the viscous term).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
REFERENCE_UPPER = 0.1
ROUGH_F_MIN_ESTIMATE = 2000.0


def reference_band(re: float) -> tuple[float, float]:
    """Empirical range of the dissipation coefficient: [1/Re, 0.1]."""
    return 1.0 / re, REFERENCE_UPPER


@dataclass(frozen=True)
class BoundInputs:
    re: float
    h: float
    cs: float
    delta: float
    L: float = 1.0
    U: float = 1.0
    C: float = 1.0

    def __post_init__(self):
        for name in ("re", "h", "L", "U", "C"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cs < 0 or self.delta < 0:
            raise ValueError("cs and delta must be non-negative")

    @property
    def cs_delta(self) -> float:
        return self.cs * self.delta

    @property
    def scale(self) -> float:
        return self.U**3 / self.L

    @property
    def resolved(self) -> bool:
        """The fine-mesh hypothesis h < L / (5 Re)."""
        return self.h < self.L / (5.0 * self.re)

    @property
    def h_below_L(self) -> bool:
        return self.h < self.L


def _inv(re: float) -> float:
    return 0.0 if math.isinf(re) else 1.0 / re


def lambda_terms(re: float, h: float, cs_delta: float, L: float = 1.0) -> tuple[float, float, float]:
    """(viscous, model viscosity, nonlinear) terms of the coarse-mesh bound."""
    lam1 = _inv(re) * L / h
    lam2 = (cs_delta / h) ** 2
    lam3 = (L**5 / h + L**2.5 * h**1.5) / cs_delta**4 if cs_delta > 0 else math.inf
    return lam1, lam2, lam3


def resolved_bound(inputs: BoundInputs) -> float:
    """C [1 + (C_s delta / L)^2 Re^2] U^3/L (valid for h < L/(5 Re))."""
    i = inputs
    x = i.cs_delta / i.L * i.re
    return i.C * (1.0 + x * x) * i.scale


@dataclass
class BoundReport:
    inputs: BoundInputs
    resolved: float
    coarse: float
    lambda1: float
    lambda2: float
    lambda3: float
    region: str
    dominant: str
    normalized: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        i = self.inputs
        return {
            "inputs": {"re": i.re, "h": i.h, "cs": i.cs, "delta": i.delta, "cs_delta": i.cs_delta,
                       "L": i.L, "U": i.U, "C": i.C},
            "resolved": self.resolved,
            "coarse": self.coarse,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "lambda3": self.lambda3,
            "region": self.region,
            "dominant": self.dominant,
            "normalized": dict(self.normalized),
            "flags": list(self.flags),
            "reference_band": list(reference_band(i.re)),
        }


def coarse_mesh_bound(inputs: BoundInputs) -> BoundReport:
    """Coarse-mesh bound with its three-term decomposition."""
    i = inputs
    if i.cs_delta <= 0:
        raise ValueError("the coarse-mesh bound needs C_s * delta > 0; use resolved_bound")
    lam1, lam2, lam3 = lambda_terms(i.re, i.h, i.cs_delta, i.L)
    norm2 = i.C * (lam1 + lam2 + lam3)
    t1 = resolved_bound(i)
    flags = []
    if not i.resolved:
        flags.append("resolved_hypothesis_violated")
    if not i.h_below_L:
        flags.append("h_not_below_L")
    return BoundReport(
        inputs=i,
        resolved=t1,
        coarse=norm2 * i.scale,
        lambda1=lam1,
        lambda2=lam2,
        lambda3=lam3,
        region=classify_region(i.h, i.cs_delta, i.re, i.L),
        dominant=dominant_term(lam1, lam2, lam3),
        normalized={"resolved": t1 / i.scale, "coarse": norm2},
        flags=flags,
    )


def dominant_term(lam1: float, lam2: float, lam3: float) -> str:
    vals = (lam1, lam2, lam3)
    return f"lambda{int(np.argmax(vals)) + 1}"


# ---------------------------------------------------------------------------
# level sets and regions

def zeta_curves(re: float, L: float, h_over_L) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C_s delta on the curves lambda1=lambda2, lambda2=lambda3 and lambda1=lambda3."""
    x = np.asarray(h_over_L, dtype=float)
    if np.any((x <= 0) | (x > 1)):
        raise ValueError("h/L values must lie in (0, 1]")
    z1 = re**-0.5 * L * np.sqrt(x)
    z2 = L * (x**3.5 + x) ** (1.0 / 6.0)
    z3 = re**0.25 * L * (1.0 + x**2.5) ** 0.25
    return z1, z2, z3


def classify_region(h: float, cs_delta: float, re: float, L: float = 1.0) -> str:
    """Region of the (h/L, C_s delta) plane.

    I and II lie below the lambda2 = lambda3 curve (nonlinear term dominant),
    split by lambda1 = lambda2; III and IV lie above it (model viscosity
    dominant), split by lambda1 = lambda3.
    """
    lam1, lam2, lam3 = lambda_terms(re, h, cs_delta, L)
    if lam3 > lam2:
        return "I" if lam1 > lam2 else "II"
    return "III" if lam3 >= lam1 else "IV"


# ---------------------------------------------------------------------------
# optimal model coefficients

def _a_coefficient(h_over_L: float) -> float:
    r = 1.0 / h_over_L
    return r**5 + r**2.5


def golden_section(
    less: Callable[[float, float], bool],
    lo: float,
    hi: float,
    xtol: float = 1e-13,
    max_iter: int = 500,
) -> float:
    """Minimiser of a unimodal function on [lo, hi] given only ``less(a, b)`` = f(a) < f(b)."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    for _ in range(max_iter):
        if abs(b - a) <= xtol * max(1.0, abs(a), abs(b)):
            break
        if less(c, d):
            b, d = d, c
            c = b - GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + GOLDEN * (b - a)
    return 0.5 * (a + b)


def _log_minimize(sign: Callable[[float, float], float], lo: float, hi: float) -> float:
    """Golden section in log space; ``sign(a, b)`` has the sign of f(a) - f(b)."""
    s = golden_section(lambda p, q: sign(math.exp(p), math.exp(q)) < 0, math.log(lo), math.log(hi))
    x = math.exp(s)
    span = math.log(hi) - math.log(lo)
    if min(s - math.log(lo), math.log(hi) - s) < 1e-9 * span:
        raise ValueError(f"minimiser {x!r} sits on the bracket [{lo!r}, {hi!r}]")
    return x


def _diff_sign(a: float, b: float, quad: float, quartic: float) -> float:
    """Sign of [quad a^2 + quartic/a^4] - [quad b^2 + quartic/b^4] without cancellation.

    The difference factors as (a - b)(a + b)[quad - quartic (a^2 + b^2)/(a^4 b^4)].
    """
    if a == b:
        return 0.0
    bracket = 1.0 - quartic * (a * a + b * b) / (quad * (a * b) ** 4)
    return math.copysign(1.0, a - b) * bracket


def cs_objective(cs, re: float, h_over_L: float):
    """F(C_s) = (1/Re)(L/h) + C_s^2 + A / C_s^4."""
    cs = np.asarray(cs, dtype=float)
    return _inv(re) / h_over_L + cs**2 + _a_coefficient(h_over_L) / cs**4


def filter_objective(cs_delta, re: float, h: float, L: float = 1.0):
    """G(C_s delta), the coarse-mesh bound as a function of C_s delta."""
    x = np.asarray(cs_delta, dtype=float)
    return _inv(re) * L / h + (x / h) ** 2 + (L**5 / h + L**2.5 * h**1.5) / x**4


@dataclass(frozen=True)
class MinimizerResult:
    argmin: float
    minimum: float
    closed_form_argmin: float
    closed_form_minimum: float

    @property
    def rel_error(self) -> float:
        return abs(self.argmin - self.closed_form_argmin) / self.closed_form_argmin


def minimize_cs(re: float, h_over_L: float, lo: float = 1e-6, hi: float = 1e6) -> MinimizerResult:
    if not 0 < h_over_L < 1:
        raise ValueError("h/L must lie in (0, 1)")
    A = _a_coefficient(h_over_L)
    x = _log_minimize(lambda a, b: _diff_sign(a, b, 1.0, A), lo, hi)
    xc = (2.0 * A) ** (1.0 / 6.0)
    return MinimizerResult(x, float(cs_objective(x, re, h_over_L)), xc, float(cs_objective(xc, re, h_over_L)))


def minimize_filter_width(re: float, h: float, L: float = 1.0, lo: float = 1e-6, hi: float = 1e6) -> MinimizerResult:
    if not 0 < h < L:
        raise ValueError("h must lie in (0, L)")
    A = _a_coefficient(h / L)
    Q = L**5 / h + L**2.5 * h**1.5
    x = _log_minimize(lambda a, b: _diff_sign(a, b, 1.0 / h**2, Q), lo, hi)
    xc = h * (2.0 * A) ** (1.0 / 6.0)
    return MinimizerResult(x, float(filter_objective(x, re, h, L)), xc, float(filter_objective(xc, re, h, L)))


def grid_minimum(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int = 1_000_000):
    """Brute-force minimiser on a log grid: (argmin, min, lower cell edge, upper cell edge)."""
    grid = np.geomspace(lo, hi, n)
    vals = f(grid)
    k = int(np.argmin(vals))
    return grid[k], float(vals[k]), grid[max(k - 1, 0)], grid[min(k + 1, n - 1)]


def cs_minimum_forms(re: float, h_over_L: float) -> dict[str, float]:
    """Certified minimum next to the alternative coefficient and the rough estimate."""
    A = _a_coefficient(h_over_L)
    res = minimize_cs(re, h_over_L)
    return {
        "numeric": res.minimum,
        "stationary_point": _inv(re) / h_over_L + 3.0 * 2.0 ** (-2.0 / 3.0) * A ** (1.0 / 3.0),
        "coefficient_two": _inv(re) / h_over_L + 2.0 * A ** (1.0 / 3.0),
        "rough_estimate": ROUGH_F_MIN_ESTIMATE,
    }


# ---------------------------------------------------------------------------
# summary surface and exports

DeltaRule = Callable[[float], float]


def delta_rule(name: str, value: float | None = None, L: float = 1.0) -> DeltaRule:
    """Filter width as a function of h: 'equal-h', 'h-pow' (exponent ``value``, 1/6 default) or 'fixed'."""
    if name in ("equal-h", "h"):
        return lambda h: h
    if name in ("h-pow", "h^1/6"):
        p = 1.0 / 6.0 if value is None else value
        return lambda h: L * (h / L) ** p
    if name == "fixed":
        if value is None or value < 0:
            raise ValueError("fixed delta needs a non-negative value")
        return lambda h: value
    raise ValueError(f"unknown delta rule {name!r}")


@dataclass(frozen=True)
class SurfaceRow:
    re: float
    h: float
    cs_delta: float
    lambda1: float
    lambda2: float
    lambda3: float
    bound: float
    region: str
    branch: str  # "resolved" or "coarse"


def summary_surface(
    re_grid: Iterable[float],
    h_grid: Iterable[float],
    delta: DeltaRule | str = "equal-h",
    cs: float = 0.17,
    L: float = 1.0,
    C: float = 1.0,
) -> list[SurfaceRow]:
    """Normalised bound over (Re, h), switching branch at h = L/(5 Re)."""
    rule = delta_rule(delta, L=L) if isinstance(delta, str) else delta
    rows = []
    for re in re_grid:
        for h in h_grid:
            csd = cs * rule(h)
            lam = lambda_terms(re, h, csd, L)
            if h < L / (5.0 * re):
                branch, bound = "resolved", C * (1.0 + (csd / L * re) ** 2)
            else:
                branch, bound = "coarse", C * sum(lam)
            region = classify_region(h, csd, re, L) if csd > 0 else "-"
            rows.append(SurfaceRow(float(re), float(h), csd, *lam, bound, region, branch))
    return rows


def seams(rows: Sequence[SurfaceRow]) -> list[tuple[float, float, float]]:
    """(re, h_before, h_after) wherever consecutive rows at fixed Re switch branch."""
    out = []
    for a, b in zip(rows[:-1], rows[1:]):
        if a.re == b.re and a.branch != b.branch:
            out.append((a.re, a.h, b.h))
    return out


SURFACE_HEADER = ["re", "h", "cs_delta", "lambda1", "lambda2", "lambda3", "bound", "region"]


def write_surface_csv(rows: Sequence[SurfaceRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SURFACE_HEADER)
        for r in rows:
            w.writerow([repr(r.re), repr(r.h), repr(r.cs_delta), repr(r.lambda1), repr(r.lambda2),
                        repr(r.lambda3), repr(r.bound), r.region])


def write_gnuplot_blocks(rows: Sequence[SurfaceRow], path) -> None:
    """One data block per Re (blank-line separated) with branch changes flagged."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# re h cs_delta bound branch\n")
        prev = None
        for r in rows:
            if prev is not None and r.re != prev.re:
                fh.write("\n")
            elif prev is not None and r.branch != prev.branch:
                fh.write(f"# seam: branch switches at re={r.re!r} between h={prev.h!r} and h={r.h!r}\n")
            fh.write(f"{r.re!r} {r.h!r} {r.cs_delta!r} {r.bound!r} {r.branch}\n")
            prev = r


def write_zeta_csv(re: float, L: float, h_over_L, path) -> None:
    z1, z2, z3 = zeta_curves(re, L, h_over_L)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["h_over_L", "zeta1", "zeta2", "zeta3"])
        for row in zip(np.asarray(h_over_L, dtype=float), z1, z2, z3):
            w.writerow([repr(float(v)) for v in row])


def write_minimizer_csv(re: float, h_over_L: Iterable[float], path, L: float = 1.0) -> None:
    """Optimal coefficients with the reference band for overlay."""
    lo, hi = reference_band(re)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["re", "h_over_L", "cs_min", "f_min", "cs_delta_min", "g_min", "band_low", "band_high"])
        for x in h_over_L:
            r1 = minimize_cs(re, x)
            r2 = minimize_filter_width(re, x * L, L)
            w.writerow([repr(float(re)), repr(float(x)), repr(r1.argmin), repr(r1.minimum),
                        repr(r2.argmin), repr(r2.minimum), repr(lo), repr(hi)])


# interface names kept for callers that use the numbered forms
bound_thm1 = resolved_bound
bound_thm2 = coarse_mesh_bound
minimize_cor1 = minimize_cs
minimize_cor2 = minimize_filter_width
