"""Transportation maps between the uniform quadrature measure and
empirical sample measures, truncation schedules, pushforward energies, and
the discrete-vs-truncated energy sandwich.

The map assigns every grid cell to one sample, each sample receiving the
same number of cells, by a min-cost balanced assignment with squared
distance cost. The achieved sup displacement drives the truncation
schedule; nothing relies on a theoretical rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coefficients import gamma_weight
from .errors import AdmissibilityError, ConfigurationError, ParameterError
from .funcspace import EnergySpec, Field, node_eta
from .geometry import QuadratureGrid, effective_boundary_distance

__all__ = [
    "TransportPlan",
    "transport_map",
    "tau_schedule",
    "theoretical_displacement",
    "pushforward_energy",
    "sandwich_check",
]


@dataclass
class TransportPlan:
    """Assignment of quadrature cells to samples (m cells per sample)."""

    grid: QuadratureGrid
    samples: np.ndarray  # (N, d)
    assignment: np.ndarray  # (M,) cell -> sample index
    zeta: float  # sup over nodes of |node - assigned sample|
    n: int

    @property
    def m(self) -> int:
        return self.grid.n_nodes // self.n

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n)

    def mapped_nodes(self) -> np.ndarray:
        """T(node_i): the sample position assigned to each cell."""
        return self.samples[self.assignment]


def transport_map(grid: QuadratureGrid, samples: np.ndarray) -> TransportPlan:
    """Min-cost balanced assignment of grid cells to samples.

    Each sample receives exactly m = M / N cells (m >= 4 required), the
    cost is squared distance, and the assignment is solved exactly on the
    replicated square problem. zeta records the achieved sup displacement.
    """
    from scipy.optimize import linear_sum_assignment

    samples = np.asarray(samples, dtype=float)
    N = len(samples)
    M = grid.n_nodes
    if N < 1:
        raise ConfigurationError("need at least one sample")
    m, rem = divmod(M, N)
    if rem != 0 or m < 4:
        raise ConfigurationError(
            f"grid cell count {M} must be m*N with integer m >= 4 (N={N})"
        )
    nodes = grid.nodes
    if N == 1:
        assignment = np.zeros(M, dtype=np.int64)
    else:
        D = ((nodes[:, None, :] - samples[None, :, :]) ** 2).sum(-1)
        C = np.repeat(D.astype(np.float32), m, axis=1)
        rows, cols = linear_sum_assignment(C)
        assignment = np.empty(M, dtype=np.int64)
        assignment[rows] = cols // m
    zeta = float(np.linalg.norm(nodes - samples[assignment], axis=1).max())
    return TransportPlan(grid=grid, samples=samples, assignment=assignment,
                         zeta=zeta, n=N)


def tau_schedule(zeta: float, rule="sqrt") -> float:
    """Truncation from the achieved displacement; default tau = sqrt(zeta),
    which sends c = zeta / tau = sqrt(zeta) to zero. Custom rules are
    callables zeta -> tau."""
    if zeta <= 0:
        raise ParameterError("zeta must be positive")
    if rule == "sqrt":
        return math.sqrt(zeta)
    if callable(rule):
        return float(rule(zeta))
    raise ParameterError(f"unknown schedule rule {rule!r}")


def theoretical_displacement(n: int, d: int) -> float:
    """Reference sup-displacement scale: ln(n)^(3/4)/sqrt(n) in d = 2,
    (ln(n)/n)^(1/d) in d >= 3 (the same formula serves d = 1)."""
    if n < 2:
        raise ParameterError("need n >= 2")
    if d == 2:
        return math.log(n) ** 0.75 / math.sqrt(n)
    return (math.log(n) / n) ** (1.0 / d)


# ---------------------------------------------------------------------------
# Pushforward energies
# ---------------------------------------------------------------------------


def _truncated_sample_factors(plan: TransportPlan, spec: EnergySpec):
    """Per-sample horizon and weight factors evaluated at sample positions."""
    grid = plan.grid
    eta_s = effective_boundary_distance(grid.domain, grid.gamma_set, plan.samples)
    r_s = spec.delta * np.maximum(eta_s, spec.tau)
    g_s = np.asarray(gamma_weight(spec.weight, plan.samples))
    gtau_s = np.maximum(g_s, spec.tau)
    bpos = max(spec.beta, 0.0)
    bneg = min(spec.beta, 0.0)
    with np.errstate(divide="ignore"):
        wfac = gtau_s ** (-bpos) * np.where(g_s > 0, g_s, np.inf) ** (-bneg)
    wfac = np.where(np.isfinite(wfac), wfac, 0.0)
    return r_s, wfac


def pushforward_energy(field: Field, plan: TransportPlan, spec: EnergySpec) -> float:
    """Coordinate-changed discrete energy: the truncated double integral
    with kernel and weights evaluated at assigned sample positions and
    field values kept at the grid nodes,

    (1/|Omega|^2) int int rho(|T(x)-T(y)| / eta_delta^tau(T(x)))
        |u(x)-u(y)|^p / ( (gamma^tau(T(x)))^{max(b,0)} gamma(T(x))^{min(b,0)}
                          eta_delta^tau(T(x))^{d+p} ) dy dx.
    """
    if spec.tau <= 0:
        raise ParameterError("pushforward energy requires tau > 0")
    from scipy.spatial import cKDTree

    grid = plan.grid
    if field.grid is not grid:
        raise ParameterError("field must live on the plan's grid")
    r_s, w_s = _truncated_sample_factors(plan, spec)
    kern = spec.kernel_fn
    a = plan.assignment
    u = field.values
    meas = grid.measures
    members = [np.flatnonzero(a == s) for s in range(plan.n)]
    tree = cKDTree(plan.samples)
    vol2 = grid.domain.volume ** 2
    total = 0.0
    p = spec.p
    dppow = grid.d + p
    for s in range(plan.n):
        if r_s[s] <= 0 or w_s[s] == 0:
            continue
        near = tree.query_ball_point(plan.samples[s], r_s[s])
        rows = members[s]
        if len(near) == 0 or len(rows) == 0:
            continue
        pref = w_s[s] / r_s[s] ** dppow
        for t in near:
            kv = float(kern(np.linalg.norm(plan.samples[s] - plan.samples[t]) / r_s[s]))
            if kv <= 0:
                continue
            cols = members[t]
            if len(cols) == 0:
                continue
            d_uv = np.abs(u[rows][:, None] - u[cols][None, :]) ** p
            wmat = meas[rows][:, None] * meas[cols][None, :]
            total += pref * kv * float(np.sum(wmat * d_uv))
    return total / vol2


def _plain_truncated_energy_at(field: Field, spec: EnergySpec, delta_eff: float) -> float:
    """Truncated energy at horizon parameter delta_eff with plain node-pair
    evaluation (no rim smoothing), matching the pushforward quadrature."""
    from .energies import truncated_nonlocal_energy

    return truncated_nonlocal_energy(
        field, spec.with_(delta=delta_eff), method="nodes", rim_correction=False
    )


def sandwich_check(
    plan: TransportPlan,
    spec: EnergySpec,
    fields: Sequence[Field],
    kappa1: Optional[float] = None,
) -> dict:
    """Two-sided comparison of the pushforward energy with truncated
    energies at contracted/dilated horizons.

    With c = zeta / tau, q = 1/(1 + kappa1 c/2) - c/delta and
    Q = (1 + kappa1 c/2)(1 + c/delta):

      q^{d+p} / ((1+kappa1 c/2)^{d+p+beta} |Omega|^2) * E_{q delta, tau}(u)
      <= E_push(u) <=
      Q^{d+p} (1+kappa1 c/2)^{d+p+beta} / |Omega|^2 * E_{Q delta, tau}(u).

    Raises AdmissibilityError when q <= 0 (n too small for this delta).
    """
    if spec.tau <= 0:
        raise ParameterError("sandwich requires tau > 0")
    grid = plan.grid
    if kappa1 is None:
        kappa1, _ = (spec.lam.constants(grid.domain, grid.gamma_set)[1], None)
    c = plan.zeta / spec.tau
    bump = 1.0 + kappa1 * c / 2.0
    q = 1.0 / bump - c / spec.delta
    Q = bump * (1.0 + c / spec.delta)
    if q <= 0:
        raise AdmissibilityError(
            f"q = {q:.4g} <= 0: displacement ratio c = {c:.4g} too large "
            f"for delta = {spec.delta} (n too small)"
        )
    dp = grid.d + spec.p
    lo_fac = q**dp / (bump ** (dp + spec.beta) * grid.domain.volume**2)
    hi_fac = Q**dp * bump ** (dp + spec.beta) / grid.domain.volume**2
    rows = []
    ok = True
    for f in fields:
        push = pushforward_energy(f, plan, spec)
        e_lo = _plain_truncated_energy_at(f, spec, q * spec.delta)
        e_hi = _plain_truncated_energy_at(f, spec, Q * spec.delta)
        lo = lo_fac * e_lo
        hi = hi_fac * e_hi
        good = lo <= push * (1 + 1e-9) + 1e-300 and push <= hi * (1 + 1e-9) + 1e-300
        ok &= bool(good)
        rows.append({"lower": lo, "pushforward": push, "upper": hi, "ok": bool(good)})
    return {"q": q, "Q": Q, "c": c, "fields": rows, "ok": bool(ok)}
