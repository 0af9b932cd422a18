"""Constrained minimization of the energy tiers with Dirichlet data.

All tiers reduce to an edge system: a list of directed edges with positive
coefficients and an objective c0 * sum_e coef_e |u_src - u_dst|^p plus
pinned (labeled) nodes. p = 2 solves the symmetrized sparse normal system
by preconditioned conjugate gradients; general p > 1 runs accelerated
gradient descent with backtracking and adaptive restart on the convex
objective. The local tier keeps its own cellwise-gradient structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, spsolve

from .coefficients import gamma_measures, gamma_weight
from .energies import Graph, grid_edge_arrays, truncated_node_weights
from .errors import ParameterError
from .funcspace import EnergySpec, Field, node_eta, _ball_rule
from .geometry import QuadratureGrid

__all__ = [
    "SolverOptions",
    "SolveReport",
    "EdgeSystem",
    "LocalSystem",
    "system_from_graph",
    "system_from_grid",
    "local_system",
    "energy_gradient",
    "solve_system",
    "solve_dirichlet",
    "el_residual",
    "nonlocal_flux",
]


@dataclass
class SolverOptions:
    gtol_rel: float = 1e-8
    gtol_abs: float = 0.0
    ftol_rel: float = 1e-12
    max_iter: int = 5000
    cg_rtol: float = 1e-10
    x0: Optional[np.ndarray] = None
    resolution_floor: float = 2.0  # min resolved horizon, in cells


@dataclass
class SolveReport:
    values: np.ndarray
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    stats: dict = field(default_factory=dict)
    grid: Optional[QuadratureGrid] = None

    @property
    def field(self) -> Field:
        if self.grid is None:
            raise ParameterError("this solve has no grid attached")
        return Field(grid=self.grid, values=self.values)


# ---------------------------------------------------------------------------
# Edge systems
# ---------------------------------------------------------------------------


@dataclass
class EdgeSystem:
    """Objective c0 * sum_e coef_e |u_src_e - u_dst_e|^p with pinned nodes."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    coef: np.ndarray
    p: float
    c0: float
    pinned_idx: np.ndarray
    pinned_val: np.ndarray

    @property
    def free_idx(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.pinned_idx] = False
        return np.flatnonzero(mask)

    def full(self, free_vals: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n)
        u[self.free_idx] = free_vals
        u[self.pinned_idx] = self.pinned_val
        return u

    def energy(self, u: np.ndarray) -> float:
        diff = u[self.src] - u[self.dst]
        return self.c0 * float(np.sum(self.coef * np.abs(diff) ** self.p))

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Exact gradient of the objective with respect to all node values,
        including both source-row and target-column contributions."""
        diff = u[self.src] - u[self.dst]
        if self.p == 2.0:
            flux = self.coef * diff
        else:
            mag = np.abs(diff)
            with np.errstate(divide="ignore", invalid="ignore"):
                flux = np.where(mag > 0, self.coef * mag ** (self.p - 2.0) * diff, 0.0)
        g = np.bincount(self.src, weights=flux, minlength=self.n)
        g -= np.bincount(self.dst, weights=flux, minlength=self.n)
        return self.c0 * self.p * g

    def quadratic_matrix(self) -> sparse.csr_matrix:
        """Symmetrized coefficient matrix Q with u^T Q u = energy (p = 2)."""
        if self.p != 2.0:
            raise ParameterError("quadratic matrix requires p = 2")
        i = np.concatenate([self.src, self.dst, self.src, self.dst])
        j = np.concatenate([self.src, self.dst, self.dst, self.src])
        v = np.concatenate([self.coef, self.coef, -self.coef, -self.coef])
        return sparse.coo_matrix((self.c0 * v, (i, j)), shape=(self.n, self.n)).tocsr()


def energy_gradient(values: np.ndarray, system) -> np.ndarray:
    """Gradient of the implemented objective at the given node values."""
    return system.gradient(np.asarray(values, dtype=float))


def system_from_graph(graph: Graph) -> EdgeSystem:
    """Discrete graph tier: (1/N^2) sum rho_ij w_i |u_i - u_j|^p."""
    w = graph.source_weights()
    src = np.repeat(np.arange(graph.n_nodes), np.diff(graph.indptr))
    coef = w[src] * graph.kernel_values / graph.n_nodes**2
    live = coef > 0
    return EdgeSystem(
        n=graph.n_nodes,
        src=src[live],
        dst=graph.indices[live],
        coef=coef[live],
        p=graph.p,
        c0=1.0,
        pinned_idx=np.flatnonzero(graph.label_mask),
        pinned_val=graph.label_values[graph.label_mask],
    )


def _grid_pins(grid: QuadratureGrid, gtilde=None):
    idx = np.flatnonzero(grid.flags)
    comps = grid.flagged_components[idx]
    if gtilde is None:
        vals = np.array([grid.gamma_set.components[c].value for c in comps])
    else:
        vals = np.array([gtilde[c] for c in comps])
    return idx, vals


def system_from_grid(
    grid: QuadratureGrid,
    spec: EnergySpec,
    gtilde=None,
    options: Optional[SolverOptions] = None,
) -> EdgeSystem:
    """Quadrature-node parametrization of the nonlocal (or truncated) tier.

    The horizon is floored at resolution_floor cells so every node's ball
    is resolved by the grid; the floor acts like a truncation that vanishes
    under refinement and is recorded in the report stats.
    """
    options = options or SolverOptions()
    eta = node_eta(grid)
    tau_grid = options.resolution_floor * grid.h / spec.delta
    tau_eff = max(spec.tau, tau_grid)
    radii = spec.delta * np.maximum(eta, tau_eff)
    if spec.tau > 0:
        xw, _ = truncated_node_weights(grid, spec.with_(tau=tau_eff))
        c0 = 1.0
    else:
        xw = gamma_measures(grid, spec.weight, spec.beta)
        xw = np.where(np.isfinite(xw), xw, 0.0)
        c0 = 1.0 / spec.p
    src, dst, kvw = grid_edge_arrays(grid, radii, spec.kernel_fn)
    coef = xw[src] * kvw / radii[src] ** (grid.d + spec.p)
    pin_idx, pin_val = _grid_pins(grid, gtilde)
    return EdgeSystem(
        n=grid.n_nodes,
        src=src,
        dst=dst,
        coef=coef,
        p=spec.p,
        c0=c0,
        pinned_idx=pin_idx,
        pinned_val=pin_val,
    )


@dataclass
class LocalSystem:
    """Local tier (1/p) sum_i w_i |D u (x_i)|^p with one-sided differences."""

    n: int
    diffs: list  # per-axis sparse difference operators
    weights: np.ndarray
    p: float
    pinned_idx: np.ndarray
    pinned_val: np.ndarray

    @property
    def free_idx(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.pinned_idx] = False
        return np.flatnonzero(mask)

    def full(self, free_vals: np.ndarray) -> np.ndarray:
        u = np.zeros(self.n)
        u[self.free_idx] = free_vals
        u[self.pinned_idx] = self.pinned_val
        return u

    def _grad_field(self, u):
        return np.stack([D @ u for D in self.diffs], axis=1)

    def energy(self, u: np.ndarray) -> float:
        g = self._grad_field(u)
        mag = np.linalg.norm(g, axis=1)
        return float(np.sum(self.weights * mag**self.p)) / self.p

    def gradient(self, u: np.ndarray) -> np.ndarray:
        g = self._grad_field(u)
        mag = np.linalg.norm(g, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(mag > 0, mag ** (self.p - 2.0), 0.0)
        out = np.zeros(self.n)
        for k, D in enumerate(self.diffs):
            out += D.T @ (self.weights * scale * g[:, k])
        return out

    def quadratic_matrix(self) -> sparse.csr_matrix:
        if self.p != 2.0:
            raise ParameterError("quadratic matrix requires p = 2")
        W = sparse.diags(self.weights)
        A = None
        for D in self.diffs:
            term = D.T @ W @ D
            A = term if A is None else A + term
        return 0.5 * (A + A.T).tocsr()


def local_system(
    grid: QuadratureGrid, spec: EnergySpec, gtilde=None
) -> LocalSystem:
    """Weighted local tier on the grid: forward differences per axis,
    backward at the far face, weighted by the puncture-aware measures."""
    shape = grid.shape
    n = grid.n_nodes
    diffs = []
    for k in range(grid.d):
        h = grid.cell_sizes[k]
        idx = np.arange(n).reshape(shape)
        fwd_src = np.moveaxis(idx, k, 0)[:-1].ravel()
        fwd_dst = np.moveaxis(idx, k, 0)[1:].ravel()
        bwd_src = np.moveaxis(idx, k, 0)[-1].ravel()
        bwd_dst = np.moveaxis(idx, k, 0)[-2].ravel()
        rows = np.concatenate([fwd_src, bwd_src])
        cols_pos = np.concatenate([fwd_dst, bwd_src])
        cols_neg = np.concatenate([fwd_src, bwd_dst])
        D = sparse.coo_matrix(
            (
                np.concatenate([np.ones(len(rows)), -np.ones(len(rows))]) / h,
                (np.concatenate([rows, rows]), np.concatenate([cols_pos, cols_neg])),
            ),
            shape=(n, n),
        ).tocsr()
        diffs.append(D)
    w = gamma_measures(grid, spec.weight, spec.beta)
    w = np.where(np.isfinite(w), w, 0.0)
    pin_idx, pin_val = _grid_pins(grid, gtilde)
    return LocalSystem(
        n=n, diffs=diffs, weights=w, p=spec.p, pinned_idx=pin_idx, pinned_val=pin_val
    )


# ---------------------------------------------------------------------------
# Minimization
# ---------------------------------------------------------------------------


def _solve_p2(system, options: SolverOptions) -> SolveReport:
    Q = system.quadratic_matrix()
    free = system.free_idx
    pin = system.pinned_idx
    if pin.size == 0:
        u = np.zeros(system.n)
        return SolveReport(
            values=u, energy=0.0, grad_norm=0.0, iterations=0, converged=True,
            stats={"non_unique": True, "note": "no labels: constants are minimizers"},
        )
    A = Q[free][:, free]
    rhs = -Q[free][:, pin] @ system.pinned_val
    diag = A.diagonal()
    isolated = diag <= 0
    if np.any(isolated):
        # decoupled nodes: pin them to the pinned mean, flag in stats
        fill = float(np.mean(system.pinned_val))
        A = A.tolil()
        for i in np.flatnonzero(isolated):
            A.rows[i] = [i]
            A.data[i] = [1.0]
            rhs[i] = fill
        A = A.tocsr()
        diag = A.diagonal()
    M = sparse.diags(1.0 / diag)
    it = {"n": 0}

    def _cb(_):
        it["n"] += 1

    x0 = options.x0[free] if options.x0 is not None else None
    sol, info = cg(A, rhs, x0=x0, rtol=options.cg_rtol, atol=0.0,
                   maxiter=max(1000, 10 * len(free)), M=M, callback=_cb)
    converged = info == 0
    if not converged:
        sol = spsolve(A.tocsc(), rhs)
        converged = True
    u = system.full(sol)
    g = system.gradient(u)
    g_free = g[free]
    return SolveReport(
        values=u,
        energy=system.energy(u),
        grad_norm=float(np.linalg.norm(g_free)),
        iterations=it["n"],
        converged=bool(converged),
        stats={"isolated_nodes": int(np.sum(isolated))},
    )


def _solve_accelerated(system, options: SolverOptions) -> SolveReport:
    """Monotone accelerated descent with backtracking and adaptive restart.

    For p in (1,2) the line search uses function values only; ties between
    node values contribute zero gradient, the correct choice for the C^1
    objective.
    """
    free = system.free_idx
    if system.pinned_idx.size == 0:
        u = np.zeros(system.n)
        return SolveReport(
            values=u, energy=0.0, grad_norm=0.0, iterations=0, converged=True,
            stats={"non_unique": True},
        )
    if options.x0 is not None:
        x = options.x0[free].astype(float).copy()
    else:
        # warm start from the p = 2 solve of the same edge structure
        try:
            from dataclasses import replace

            warm = _solve_p2(replace(system, p=2.0), options)
            x = warm.values[free]
        except Exception:
            x = np.full(len(free), float(np.mean(system.pinned_val)))

    def f(xf):
        return system.energy(system.full(xf))

    def g(xf):
        return system.gradient(system.full(xf))[free]

    fx = f(x)
    gx = g(x)
    g0 = float(np.linalg.norm(gx))
    gtol = max(options.gtol_abs, options.gtol_rel * g0)
    L = 1.0 + g0
    y = x.copy()
    t = 1.0
    flat = 0
    it = 0
    converged = g0 <= gtol
    while not converged and it < options.max_iter:
        it += 1
        gy = g(y)
        fy = f(y)
        # backtracking on the descent step from y
        for _ in range(60):
            xn = y - gy / L
            fxn = f(xn)
            if fxn <= fy - 0.5 * float(gy @ gy) / L + 1e-15 * (1 + abs(fy)):
                break
            L *= 2.0
        if fxn > fx:  # restart: accelerated step overshot
            y = x.copy()
            t = 1.0
            L *= 2.0
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = xn + ((t - 1.0) / tn) * (xn - x)
        dropped = fx - fxn
        x, fx, t = xn, fxn, tn
        L = max(L * 0.7, 1e-12)
        gx = g(x)
        gn = float(np.linalg.norm(gx))
        if gn <= gtol:
            converged = True
            break
        if dropped <= options.ftol_rel * max(abs(fx), 1e-300):
            flat += 1
            if flat >= 5:
                converged = True
                break
        else:
            flat = 0
    u = system.full(x)
    return SolveReport(
        values=u,
        energy=f(x),
        grad_norm=float(np.linalg.norm(g(x))),
        iterations=it,
        converged=bool(converged),
        stats={"gtol": gtol},
    )


def solve_system(system, options: Optional[SolverOptions] = None) -> SolveReport:
    options = options or SolverOptions()
    if system.p == 2.0:
        return _solve_p2(system, options)
    return _solve_accelerated(system, options)


def solve_dirichlet(
    tier: str,
    spec: EnergySpec,
    *,
    grid: Optional[QuadratureGrid] = None,
    graph: Optional[Graph] = None,
    gtilde=None,
    options: Optional[SolverOptions] = None,
) -> SolveReport:
    """Minimize one energy tier subject to the labeled values.

    tier: "graph" (needs graph), "nonlocal"/"truncated" or "local" (need
    grid). Labeled node values are fixed; free values minimize the tier.
    """
    options = options or SolverOptions()
    if tier == "graph":
        if graph is None:
            raise ParameterError("graph tier requires a graph")
        rep = solve_system(system_from_graph(graph), options)
        return rep
    if grid is None:
        raise ParameterError(f"{tier} tier requires a grid")
    if tier in ("nonlocal", "truncated"):
        sysm = system_from_grid(grid, spec, gtilde, options)
    elif tier == "local":
        sysm = local_system(grid, spec, gtilde)
    else:
        raise ParameterError(f"unknown tier '{tier}'")
    rep = solve_system(sysm, options)
    rep.grid = grid
    return rep


# ---------------------------------------------------------------------------
# Euler-Lagrange residual and nonlocal boundary flux
# ---------------------------------------------------------------------------


def el_residual(field: Field, spec: EnergySpec) -> Field:
    """Nodewise quadrature of the two-sided nonlocal operator

    L u(x) = int ( rho(|x-y|/eta_delta(x)) / (eta(x)^{d+p} gamma(x)^beta)
               + rho(|x-y|/eta_delta(y)) / (eta(y)^{d+p} gamma(y)^beta) )
             |u(x)-u(y)|^{p-2} (u(x)-u(y)) dy.

    At a converged solve the values relate to the objective gradient by
    L(x_k) = delta^{d+p} grad_k / w_k on unflagged cells.
    """
    grid = field.grid
    eta = node_eta(grid)
    gam = np.asarray(gamma_weight(spec.weight, grid.nodes))
    kern = spec.kernel_fn
    u = field.values
    p, d = spec.p, grid.d
    out = np.zeros(grid.n_nodes)
    with np.errstate(divide="ignore"):
        row_fac = np.where(
            (eta > 0) & (gam > 0), 1.0 / (eta ** (d + p) * gam**spec.beta), 0.0
        )
    for i in range(grid.n_nodes):
        if eta[i] <= 0:
            continue
        reach = spec.delta * eta[i] / max(1.0 - spec.delta, 1e-9) + grid.half_diagonal
        idx = grid.window_indices(grid.nodes[i], reach)
        idx = idx[idx != i]
        if idx.size == 0:
            continue
        dist = np.linalg.norm(grid.nodes[idx] - grid.nodes[i], axis=1)
        kv1 = kern(dist / (spec.delta * eta[i]))
        rj = spec.delta * eta[idx]
        ratio = np.where(rj > 0, dist / np.where(rj > 0, rj, 1.0), np.inf)
        kv2 = np.where(np.isfinite(ratio), kern(np.minimum(ratio, 1e300)), 0.0)
        diff = u[i] - u[idx]
        mag = np.abs(diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            odd = np.where(mag > 0, mag ** (p - 2.0) * diff, 0.0)
        out[i] = float(
            np.sum(grid.measures[idx] * (kv1 * row_fac[i] + kv2 * row_fac[idx]) * odd)
        )
    return Field(grid=grid, values=out)


def nonlocal_flux(grad_vec, nu, delta: float, p: float, kernel) -> float:
    """Ball quadrature of the nonlocal boundary flux

    BF(grad u, nu) = int_{B(0,1)} ln((1 + delta nu.z)/(1 - delta nu.z))
        (rho(|z|) / (2 delta)) |grad u . z|^{p-2} (grad u . z) dz,

    which approaches the local weighted flux pairing as delta -> 0.
    """
    nu = np.asarray(nu, dtype=float)
    g = np.asarray(grad_vec, dtype=float)
    d = len(nu)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-9:
        raise ParameterError("nu must be a unit vector")
    if not (0.0 < delta < 1.0):
        raise ParameterError("delta must lie in (0, 1)")
    z, w = _ball_rule(d, n_r=24, n_ang=64 if d == 2 else 32)
    kv = kernel(np.linalg.norm(z, axis=1))
    t = z @ nu
    s = z @ g
    logw = np.log((1.0 + delta * t) / (1.0 - delta * t)) / (2.0 * delta)
    mag = np.abs(s)
    with np.errstate(divide="ignore", invalid="ignore"):
        odd = np.where(mag > 0, mag ** (p - 2.0) * s, 0.0)
    return float(np.sum(w * logw * kv * odd))
