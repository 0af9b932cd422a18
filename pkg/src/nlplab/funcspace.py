"""Weighted norms, nonlocal seminorms, traces, and inequality checkers.

Fields live on a quadrature grid. When a field carries an analytic
callback, inner ball integrals use a polar rule around each source point
(vectorized over all sources); otherwise they fall back to grid nodes with
corner-subsampled partial cells at the ball boundary. Singular weight
factors always go through the puncture-aware cell measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import (
    Kernel,
    KernelSpec,
    LambdaSpec,
    MollifierSpec,
    WeightSpec,
    gamma_measures,
    gamma_weight,
    lambda_value,
    make_kernel,
    seminorm_kernel_spec,
    seminorm_prefactor,
)
from .errors import AdmissibilityError, DomainError, ParameterError
from .geometry import (
    QuadratureGrid,
    angular_rule,
    effective_boundary_distance,
    max_admissible_delta,
)

__all__ = [
    "Field",
    "EnergySpec",
    "node_eta",
    "lp_norm_weighted",
    "grad_seminorm_weighted",
    "nonlocal_seminorm",
    "nonlocal_seminorm_general",
    "kernel_equivalence_constants",
    "weighted_ball_average",
    "trace_estimate",
    "hardy_check_1d",
    "hardy_check_nd",
    "embedding_predicate",
    "horizon_invariance_check",
    "pair_quadrature",
]


# ---------------------------------------------------------------------------
# Fields and energy specifications
# ---------------------------------------------------------------------------


@dataclass
class Field:
    """Scalar function sampled on a grid, optionally with analytic callbacks.

    fn and grad_fn, when given, take an (m, d) array of points and return
    (m,) values respectively (m, d) gradients.
    """

    grid: QuadratureGrid
    values: np.ndarray
    fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None
    _grad_cache: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes,):
            raise ParameterError("field length must match the node count")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("field values must be finite")

    @staticmethod
    def from_function(grid: QuadratureGrid, fn, grad_fn=None) -> "Field":
        return Field(grid=grid, values=np.asarray(fn(grid.nodes), dtype=float),
                     fn=fn, grad_fn=grad_fn)

    @staticmethod
    def constant(grid: QuadratureGrid, c: float) -> "Field":
        cc = float(c)
        return Field(grid=grid, values=np.full(grid.n_nodes, cc),
                     fn=lambda x: np.full(len(x), cc),
                     grad_fn=lambda x: np.zeros_like(x))

    def gradient(self) -> np.ndarray:
        """Nodewise gradient: analytic callback if available, else
        second-order central differences (one-sided at the hull edges)."""
        if self._grad_cache is not None:
            return self._grad_cache
        if self.grad_fn is not None:
            g = np.asarray(self.grad_fn(self.grid.nodes), dtype=float)
        else:
            shaped = self.values.reshape(self.grid.shape)
            comps = np.gradient(shaped, *self.grid.axes, edge_order=2)
            if self.grid.d == 1:
                comps = [comps]
            g = np.stack([c.ravel() for c in comps], axis=1)
        self._grad_cache = g
        return g

    def eval(self, pts: np.ndarray) -> np.ndarray:
        if self.fn is not None:
            return np.asarray(self.fn(pts), dtype=float)
        return self.grid.interpolate(self.values, pts)

    def __sub__(self, other: "Field") -> "Field":
        if other.grid is not self.grid:
            raise ParameterError("fields live on different grids")
        return Field(grid=self.grid, values=self.values - other.values)


@dataclass(frozen=True)
class EnergySpec:
    """Parameters fixing one energy functional."""

    d: int
    p: float
    beta: float
    delta: float
    weight: WeightSpec
    tau: float = 0.0
    kernel: KernelSpec = None
    lam: LambdaSpec = None

    def __post_init__(self):
        if self.p <= 1.0:
            raise ParameterError("p must exceed 1")
        if not (0.0 < self.delta < 1.0):
            raise ParameterError("delta must lie in (0, 1)")
        if self.tau < 0.0:
            raise ParameterError("tau must be nonnegative")
        if self.kernel is None:
            object.__setattr__(self, "kernel", KernelSpec(d=self.d, p=self.p))
        if self.lam is None:
            object.__setattr__(self, "lam", LambdaSpec())

    @property
    def kernel_fn(self) -> Kernel:
        return make_kernel(self.kernel)

    def delta_bound(self, domain, gamma_set) -> float:
        k0, k1 = self.lam.constants(domain, gamma_set)
        return max_admissible_delta(k0, k1)

    def with_(self, **kw) -> "EnergySpec":
        from dataclasses import replace

        return replace(self, **kw)


def node_eta(grid: QuadratureGrid) -> np.ndarray:
    """Distance to the effective boundary at every node, cached."""
    key = ("node_eta",)
    hit = grid.weighted_measure_cache.get(key)
    if hit is None:
        hit = effective_boundary_distance(grid.domain, grid.gamma_set, grid.nodes)
        grid.weighted_measure_cache[key] = hit
    return hit


# ---------------------------------------------------------------------------
# Ball quadrature rules
# ---------------------------------------------------------------------------


def _ball_rule(d: int, n_r: int = 10, n_ang: int = 24):
    """Nodes/weights for integrals over the unit ball B(0,1)."""
    t, wt = np.polynomial.legendre.leggauss(n_r)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt * t ** (d - 1)
    dirs, wa = angular_rule(d, n_ang)
    z = t[:, None, None] * dirs[None, :, :]
    w = wt[:, None] * wa[None, :]
    return z.reshape(-1, d), w.reshape(-1)


def _pair_integrand_polar(field: Field, sources, radii, kernel: Kernel, p,
                          n_r=10, n_ang=24, batch=2_000_000):
    """inner(x_i) = int_{B(0,1)} rho(|z|) |u(x_i + r_i z) - u(x_i)|^p dz
    for the selected source indices, via the field evaluator."""
    grid = field.grid
    z, w = _ball_rule(grid.d, n_r, n_ang)
    kv = kernel(np.linalg.norm(z, axis=1))
    live = kv > 0
    z, w, kv = z[live], w[live], kv[live]
    wkv = w * kv
    out = np.empty(len(sources))
    step = max(1, batch // max(len(z), 1))
    for s in range(0, len(sources), step):
        sl = sources[s : s + step]
        pts = grid.nodes[sl][:, None, :] + radii[s : s + step, None, None] * z[None]
        vals = field.eval(pts.reshape(-1, grid.d)).reshape(len(sl), len(z))
        diff = np.abs(vals - field.values[sl, None])
        out[s : s + step] = (wkv * diff**p).sum(axis=1)
    return out


def pair_quadrature(
    field: Field,
    radii: np.ndarray,
    kernel: Kernel,
    p: float,
    x_weights: np.ndarray,
    method: str = "auto",
    n_r: int = 10,
    n_ang: int = 24,
) -> float:
    """Double quadrature sum_i x_weights[i] * r_i^{-p} *
    int_{B(0,1)} rho(|z|) |u(x_i + r_i z) - u(x_i)|^p dz.

    Equals int int rho(|y-x|/r(x)) |u(y)-u(x)|^p / r(x)^{d+p} w(x) dy dx
    after the change of variables z = (y - x) / r(x). The balls stay inside
    the domain because r <= eta by construction.

    method: "polar" (analytic callback or multilinear interpolation at
    polar nodes) or "nodes" (grid-node sums with corner-subsampled partial
    cells); "auto" picks polar when a callback exists, nodes otherwise.
    """
    radii = np.asarray(radii, dtype=float)
    live = (radii > 0) & (x_weights != 0) & np.isfinite(x_weights)
    if method == "auto":
        method = "polar" if field.fn is not None else "nodes"
    if np.any(np.isinf(x_weights) & (radii > 0)):
        # divergent puncture-cell weight: infinite unless the field is constant
        if np.ptp(field.values) > 0:
            return math.inf
        return 0.0
    if method == "polar":
        src = np.flatnonzero(live)
        vals = _pair_integrand_polar(field, src, radii[live], kernel, p, n_r, n_ang)
        return float(np.sum(x_weights[live] * vals / radii[live] ** p))
    if method == "nodes":
        return _pair_sum_nodes(field, radii, kernel, p, x_weights, live)
    raise ParameterError(f"unknown quadrature method '{method}'")


def _pair_sum_nodes(field: Field, radii, kernel, p, x_weights, live) -> float:
    """Grid-node double sum with partial-cell correction at ball rims."""
    grid = field.grid
    nodes = grid.nodes
    u = field.values
    meas = grid.measures
    halfdiag = grid.half_diagonal
    d = grid.d
    offs = np.stack(
        np.meshgrid(*([np.array([-0.25, 0.25])] * d), indexing="ij"), -1
    ).reshape(-1, d) * grid.cell_sizes[None, :]
    total = 0.0
    for i in np.flatnonzero(live):
        r = radii[i]
        idx = grid.window_indices(nodes[i], r)
        idx = idx[idx != i]
        if idx.size == 0:
            continue
        dist = np.linalg.norm(nodes[idx] - nodes[i], axis=1)
        keep = dist < r + halfdiag
        idx, dist = idx[keep], dist[keep]
        if idx.size == 0:
            continue
        kv = kernel(dist / r)
        rim = np.abs(dist - r) < halfdiag
        if np.any(rim):
            sub = nodes[idx[rim]][:, None, :] + offs[None, :, :]
            sd = np.linalg.norm(sub - nodes[i][None, None, :], axis=2)
            kv[rim] = kernel(sd / r).mean(axis=1)
        diff = np.abs(u[idx] - u[i])
        inner = float(np.sum(meas[idx] * kv * diff**p))
        total += x_weights[i] * inner / r ** (d + p)
    return total


# ---------------------------------------------------------------------------
# Norms and seminorms
# ---------------------------------------------------------------------------


def lp_norm_weighted(field: Field, spec: EnergySpec, shift: float = 0.0) -> float:
    """Weighted norm ( int |u|^p gamma^{-(beta+shift)} dx )^{1/p}.

    Reports math.inf when the puncture-cell integral diverges
    (beta + shift >= d - ell) and the field is nonzero there.
    """
    w = gamma_measures(field.grid, spec.weight, spec.beta + shift)
    contrib = w * np.abs(field.values) ** spec.p
    if np.any(np.isinf(w) & (np.abs(field.values) > 0)):
        return math.inf
    return float(np.nansum(np.where(np.isfinite(contrib), contrib, 0.0))) ** (
        1.0 / spec.p
    )


def grad_seminorm_weighted(field: Field, spec: EnergySpec) -> float:
    """Weighted gradient seminorm ( int |grad u|^p gamma^{-beta} dx )^{1/p}."""
    w = gamma_measures(field.grid, spec.weight, spec.beta)
    gmag = np.linalg.norm(field.gradient(), axis=1)
    if np.any(np.isinf(w) & (gmag > 0)):
        return math.inf
    contrib = w * gmag**spec.p
    return float(np.sum(np.where(np.isfinite(contrib), contrib, 0.0))) ** (1.0 / spec.p)


def nonlocal_seminorm(field: Field, spec: EnergySpec, method: str = "auto") -> float:
    """Heterogeneous-horizon nonlocal seminorm [u] (not its p-th power).

    [u]^p = prefactor * int int_{B(x, delta eta(x))} gamma(x)^{-beta}
            |u(y)-u(x)|^p / (delta eta(x))^{d+p} dy dx,
    normalized so [u]^p = |a|^p int gamma^{-beta} for linear u = a.x + b.
    """
    grid = field.grid
    radii = spec.delta * node_eta(grid)
    w = gamma_measures(grid, spec.weight, spec.beta)
    val = pair_quadrature(
        field, radii, seminorm_kernel_spec(grid.d, spec.p), spec.p, w, method
    )
    return val ** (1.0 / spec.p) if np.isfinite(val) else math.inf


def nonlocal_seminorm_general(
    field: Field,
    spec: EnergySpec,
    rho: Kernel,
    lam: Optional[LambdaSpec] = None,
    method: str = "auto",
) -> float:
    """Seminorm variant with kernel rho(|x-y|/lambda_delta(x)) and scale
    lambda_delta(x)^{d+p}; no normalizing prefactor."""
    grid = field.grid
    lam = lam if lam is not None else spec.lam
    radii = spec.delta * lambda_value(lam, grid.domain, grid.gamma_set, grid.nodes)
    k0, _ = lam.constants(grid.domain, grid.gamma_set)
    if spec.delta * k0 >= 1.0:
        raise ParameterError("delta * kappa0 must stay below 1 so balls stay inside")
    w = gamma_measures(grid, spec.weight, spec.beta)
    val = pair_quadrature(field, radii, rho, spec.p, w, method)
    return val ** (1.0 / spec.p) if np.isfinite(val) else math.inf


def _invariance_lower_constant(d, p, beta, k0, k1, delta2) -> float:
    a = (1.0 - delta2) / (2.0 * (1.0 + delta2))
    b = (1.0 - k0 * k1 * delta2) / (1.0 + k0 * k1 * delta2)
    if a <= 0 or b <= 0:
        raise ParameterError("delta2 too large: invariance constants nonpositive")
    return a ** ((d + p) / p) * b ** (abs(beta) / p)


def kernel_equivalence_constants(
    spec: EnergySpec, rho: Kernel, lam: LambdaSpec, domain, gamma_set
):
    """Constants (c, C) with c [u] <= [u]_general <= C [u].

    Assembled from the indicator envelope of rho (bounded below on its core
    [0, c_rho], above by its sup), the two-sided comparison of lambda with
    eta, and the horizon-invariance constants that absorb the changed ball
    radii. Requires kappa0 * delta below the admissible bound.
    """
    d, p, beta = spec.d, spec.p, spec.beta
    k0, k1 = lam.constants(domain, gamma_set)
    cb = seminorm_prefactor(d, p)
    c_rho = rho.c_rho
    upper_env = rho.sup
    lower_env = rho.lower_on_core()
    if lower_env <= 0:
        raise ParameterError("kernel vanishes on its stated core [0, c_rho]")
    dmax = max_admissible_delta(k0, k1)
    if spec.delta * k0 >= dmax:
        raise AdmissibilityError(
            f"kappa0*delta = {k0 * spec.delta:.4g} >= delta_max = {dmax:.4g}"
        )
    low = (
        _invariance_lower_constant(d, p, beta, k0, k1, spec.delta)
        * (lower_env * (c_rho / k0**2) ** (d + p) / cb) ** (1.0 / p)
    )
    high = (upper_env * k0 ** (2 * (d + p)) / cb) ** (1.0 / p) / (
        _invariance_lower_constant(d, p, beta, k0, k1, k0 * spec.delta)
    )
    return low, high


def horizon_invariance_check(
    field: Field, spec: EnergySpec, delta1: float, delta2: float, method: str = "auto"
) -> dict:
    """Two-sided comparison of [u] at horizons delta1 <= delta2.

    lower * [u]_{delta2} <= [u]_{delta1} <= (delta2/delta1)^{(d+p)/p} [u]_{delta2}
    with lower = ((1-d2)/(2(1+d2)))^{(d+p)/p} ((1-k0 k1 d2)/(1+k0 k1 d2))^{|beta|/p}.
    """
    if not (0.0 < delta1 <= delta2):
        raise ParameterError("require 0 < delta1 <= delta2")
    grid = field.grid
    k0, k1 = spec.lam.constants(grid.domain, grid.gamma_set)
    if delta2 >= max_admissible_delta(k0, k1):
        raise ParameterError("delta2 must stay below the admissible bound")
    lower = _invariance_lower_constant(spec.d, spec.p, spec.beta, k0, k1, delta2)
    upper = (delta2 / delta1) ** ((spec.d + spec.p) / spec.p)
    s1 = nonlocal_seminorm(field, spec.with_(delta=delta1), method)
    s2 = nonlocal_seminorm(field, spec.with_(delta=delta2), method)
    ok = (lower * s2 <= s1 * (1 + 1e-9)) and (s1 <= upper * s2 * (1 + 1e-9))
    return {
        "seminorm_delta1": s1,
        "seminorm_delta2": s2,
        "lower_constant": lower,
        "upper_constant": upper,
        "ok": bool(ok),
    }


# ---------------------------------------------------------------------------
# Ball averages and traces
# ---------------------------------------------------------------------------


def weighted_ball_average(
    field: Field, x0, eps: float, beta: float, n_r: int = 16, n_ang: int = 48
) -> float:
    """Average of u over B(x0, eps) n Omega for a labeled point x0.

    Uses the plain average for beta >= 0 and the gamma^{-beta}-weighted
    average for beta < 0; inside radius R of the component gamma equals the
    distance, so the weight is exactly r^{-beta} in polar form.
    """
    grid = field.grid
    x0 = np.asarray(x0, dtype=float)
    gs = grid.gamma_set
    if gs is None or float(gs.distance(x0[None, :])[0]) > 1e-12:
        raise DomainError("ball averages are defined at labeled points only")
    if not (0.0 < eps < gs.R):
        raise ParameterError("require 0 < eps < R")
    d = grid.d
    dirs, wa = angular_rule(d, n_ang)
    exits = np.minimum(grid.domain.ray_exit(x0, dirs), eps)
    if np.all(exits <= 0):
        raise DomainError("empty intersection of the ball with the domain")
    b = beta if beta < 0 else 0.0
    r, wr = np.polynomial.legendre.leggauss(n_r)
    num = 0.0
    den = 0.0
    for j in range(len(dirs)):
        t = exits[j]
        if t <= 0:
            continue
        rr = 0.5 * t * (r + 1.0)
        ww = 0.5 * t * wr
        pts = x0[None, :] + rr[:, None] * dirs[j][None, :]
        uu = field.eval(pts)
        jac = rr ** (d - 1) * rr ** (-b)
        num += wa[j] * np.sum(ww * jac * uu)
        den += wa[j] * np.sum(ww * jac)
    return float(num / den)


def trace_estimate(
    field: Field, x0, beta: float, eps_schedule: Sequence[float]
) -> tuple:
    """Richardson-style extrapolation of ball averages over shrinking radii.

    Returns (value, error_indicator, measured_exponent); the error
    indicator is the last difference of successive averages and the
    measured exponent is the fitted geometric decay rate of differences,
    comparable to (beta - (d - p)) / p for admissible beta.
    """
    grid = field.grid
    d = grid.d
    eps = sorted(eps_schedule, reverse=True)
    if len(eps) < 2:
        raise ParameterError("need at least two radii in the schedule")
    avgs = [weighted_ball_average(field, x0, e, beta) for e in eps]
    diffs = np.diff(avgs)
    err = float(abs(diffs[-1]))
    # geometric extrapolation from the last ratio of differences
    value = avgs[-1]
    rate = math.nan
    if len(diffs) >= 2 and abs(diffs[-2]) > 0:
        theta = diffs[-1] / diffs[-2]
        if 1e-12 < abs(theta) < 0.95:
            value = avgs[-1] + diffs[-1] * theta / (1.0 - theta)
        ratios = np.abs(diffs[1:] / np.where(diffs[:-1] == 0, np.nan, diffs[:-1]))
        steps = np.array([eps[i + 1] / eps[i] for i in range(len(diffs) - 1)])
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.log(ratios) / np.log(steps)
        rates = rates[np.isfinite(rates)]
        if rates.size:
            rate = float(np.median(rates))
    return float(value), err, rate


# ---------------------------------------------------------------------------
# Hardy inequalities
# ---------------------------------------------------------------------------


def hardy_check_1d(
    knots: np.ndarray,
    vals: np.ndarray,
    d: int,
    p: float,
    beta: float,
    branch: str,
) -> tuple:
    """One-dimensional Hardy inequality for a piecewise-linear v on [0, inf).

    branch "at-zero" (beta > d - p):
        int |v - v(0)|^p r^{-(beta-d+1+p)} <= (p/(beta+p-d))^p
        int |v'|^p r^{-(beta-d+1)};
    branch "at-infinity" (beta < d - p): same with |v| and (p/(d-p-beta))^p.
    Returns (lhs, rhs_bound).
    """
    from scipy.integrate import quad

    knots = np.asarray(knots, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if knots[0] != 0.0 or np.any(np.diff(knots) <= 0):
        raise ParameterError("knots must start at 0 and increase")
    if branch == "at-zero":
        if beta <= d - p:
            raise ParameterError("at-zero branch requires beta > d - p")
        const = (p / (beta + p - d)) ** p
        shiftv = vals[0]
    elif branch == "at-infinity":
        if beta >= d - p:
            raise ParameterError("at-infinity branch requires beta < d - p")
        if abs(vals[-1]) > 0:
            raise ParameterError("at-infinity branch needs compact support (v end 0)")
        const = (p / (d - p - beta)) ** p
        shiftv = 0.0
    else:
        raise ParameterError("branch must be 'at-zero' or 'at-infinity'")

    def v_of(r):
        return np.interp(r, knots, vals)

    a_l = beta - d + 1.0 + p
    a_r = beta - d + 1.0

    lhs = 0.0
    rhs = 0.0
    for r0, r1 in zip(knots[:-1], knots[1:]):
        slope = (v_of(r1) - v_of(r0)) / (r1 - r0)
        lhs += quad(
            lambda r: abs(v_of(r) - shiftv) ** p * r ** (-a_l),
            r0,
            r1,
            limit=200,
        )[0]
        rhs += quad(lambda r: abs(slope) ** p * r ** (-a_r), r0, r1, limit=200)[0]
    if not np.isfinite(lhs):
        lhs = math.inf
    return float(lhs), float(const * rhs)


def hardy_check_nd(
    field: Field, spec: EnergySpec, nonlocal_rhs: bool = False
) -> tuple:
    """d-dimensional Hardy inequality data: LHS = int |u|^p gamma^{-(beta+p)},
    RHS = int |grad u|^p gamma^{-beta} (or the nonlocal seminorm^p when
    nonlocal_rhs). Returns (lhs, rhs, ratio); the theorem asserts a finite
    ratio for beta > d - ell - p and fields vanishing near the labeled set.
    """
    ell = field.grid.gamma_set.ell_max if field.grid.gamma_set else 0
    if spec.beta <= spec.d - ell - spec.p:
        raise AdmissibilityError("hardy_check_nd requires beta > d - ell - p")
    lhs = lp_norm_weighted(field, spec, shift=spec.p) ** spec.p
    if nonlocal_rhs:
        rhs = nonlocal_seminorm(field, spec) ** spec.p
    else:
        rhs = grad_seminorm_weighted(field, spec) ** spec.p
    ratio = 0.0 if (lhs == 0.0 and rhs == 0.0) else lhs / rhs
    return lhs, rhs, ratio


# ---------------------------------------------------------------------------
# Embedding predicate
# ---------------------------------------------------------------------------


def embedding_predicate(d: int, p: float, q: float, alpha: float, beta: float):
    """Continuity/compactness of the embedding into L^q with weight alpha.

    continuous iff d(1/q - 1/p) - alpha/q + beta/p + 1 >= 0; compact iff
    strict and q below the critical exponent dp/(d-p) (infinite if p >= d).
    """
    qcrit = math.inf if p >= d else d * p / (d - p)
    if not (1.0 <= q <= qcrit):
        raise ParameterError(f"q={q} outside [1, {qcrit}]")
    quantity = d * (1.0 / q - 1.0 / p) - alpha / q + beta / p + 1.0
    continuous = quantity >= 0.0
    compact = (quantity > 0.0) and (q < qcrit)
    return bool(continuous), bool(compact)
