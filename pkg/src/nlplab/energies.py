"""Energy tiers (discrete graph, nonlocal, truncated nonlocal, local),
the label-extension operator, and graph construction/serialization.

Tier conventions follow the defining displays: the nonlocal and local
energies carry a 1/p prefactor; the truncated nonlocal energy and the
graph energy do not (convergence statements relating them pick up an
explicit factor p, which callers of the comparison tests apply).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .coefficients import gamma_measures, gamma_weight, make_kernel
from .errors import ConfigurationError, ParameterError
from .funcspace import EnergySpec, Field, grad_seminorm_weighted, node_eta, pair_quadrature
from .geometry import Domain, LabeledSet, QuadratureGrid, effective_boundary_distance

__all__ = [
    "ExtensionField",
    "extend_labels",
    "local_energy",
    "nonlocal_energy",
    "truncated_nonlocal_energy",
    "Graph",
    "build_graph",
    "discrete_energy",
    "grid_edge_arrays",
    "truncated_node_weights",
    "write_graph",
    "read_graph",
]


# ---------------------------------------------------------------------------
# Label extension
# ---------------------------------------------------------------------------


def _smooth_cutoff(r):
    """C-infinity bridge: 1 on r <= 1, 0 on r >= 2."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    out[r <= 1.0] = 1.0
    mid = (r > 1.0) & (r < 2.0)
    if np.any(mid):
        s = r[mid] - 1.0
        qa = np.exp(-1.0 / (1.0 - s))
        qb = np.exp(-1.0 / s)
        out[mid] = qa / (qa + qb)
    return out


@dataclass(frozen=True)
class ExtensionField:
    """Smooth extension of label values: sum of per-component cutoffs.

    Value g(x0) on each component, supported in its 2R-neighborhood.
    """

    gamma_set: LabeledSet
    R: float

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        out = np.zeros(len(pts))
        for comp in self.gamma_set.components:
            out += comp.value * _smooth_cutoff(comp.distance(pts) / self.R)
        return float(out[0]) if single else out

    def sample(self, grid: QuadratureGrid) -> Field:
        return Field.from_function(grid, self)


def extend_labels(gamma_set: LabeledSet, R: float) -> ExtensionField:
    """Extension operator: matches each label on its component and vanishes
    at distance >= 2R. Raises when the 2R-neighborhoods would overlap."""
    if R <= 0:
        raise ParameterError("extension radius must be positive")
    comps = gamma_set.components
    for i, a in enumerate(comps):
        for b in comps[i + 1 :]:
            gap = np.maximum(a.lo - b.hi, 0.0) + np.maximum(b.lo - a.hi, 0.0)
            if float(np.linalg.norm(gap)) < 4.0 * R:
                raise ConfigurationError(
                    "extension supports overlap: components closer than 4R"
                )
    return ExtensionField(gamma_set=gamma_set, R=float(R))


# ---------------------------------------------------------------------------
# Continuum tiers
# ---------------------------------------------------------------------------


def local_energy(field: Field, spec: EnergySpec) -> float:
    """(1/p) * int |grad u|^p gamma^{-beta} dx."""
    return grad_seminorm_weighted(field, spec) ** spec.p / spec.p


def nonlocal_energy(field: Field, spec: EnergySpec, method: str = "auto") -> float:
    """(1/p) * int int gamma(x)^{-beta} rho(|y-x|/(delta eta(x)))
    |u(y)-u(x)|^p / (delta eta(x))^{d+p} dy dx."""
    grid = field.grid
    radii = spec.delta * node_eta(grid)
    w = gamma_measures(grid, spec.weight, spec.beta)
    val = pair_quadrature(field, radii, spec.kernel_fn, spec.p, w, method)
    return val / spec.p


def truncated_node_weights(grid: QuadratureGrid, spec: EnergySpec):
    """(x-weights, radii) of the truncated functional at grid nodes:
    weight = measure / ((gamma^tau)^{max(beta,0)} gamma^{min(beta,0)}),
    radius = delta * max(eta, tau). Truncation keeps everything finite."""
    if spec.tau <= 0:
        raise ParameterError("truncated tier requires tau > 0")
    eta = node_eta(grid)
    radii = spec.delta * np.maximum(eta, spec.tau)
    g = np.asarray(gamma_weight(spec.weight, grid.nodes))
    gtau = np.maximum(g, spec.tau)
    bpos = max(spec.beta, 0.0)
    bneg = min(spec.beta, 0.0)
    with np.errstate(divide="ignore"):
        wfac = gtau ** (-bpos) * np.where(g > 0, g, np.inf) ** (-bneg)
    wfac = np.where(np.isfinite(wfac), wfac, 0.0)  # gamma=0 with beta<0: weight 0
    return grid.measures * wfac, radii


def truncated_nonlocal_energy(
    field: Field, spec: EnergySpec, method: str = "auto", rim_correction: bool = True
) -> float:
    """int int rho(|x-y|/eta_delta^tau(x)) |u(x)-u(y)|^p /
    ((gamma^tau(x))^{max(beta,0)} gamma(x)^{min(beta,0)}
    (eta_delta^tau(x))^{d+p}) dy dx  -- no 1/p prefactor.

    rim_correction=False evaluates the kernel at plain node pairs with no
    partial-cell smoothing, which keeps pointwise comparison inequalities
    exact for the transport sandwich.
    """
    grid = field.grid
    w, radii = truncated_node_weights(grid, spec)
    if method == "auto" and field.fn is None:
        method = "nodes"
    if method == "auto":
        method = "polar"
    if method == "nodes" and not rim_correction:
        return _plain_node_pair_sum(field, radii, spec, w)
    return pair_quadrature(field, radii, spec.kernel_fn, spec.p, w, method)


def _plain_node_pair_sum(field: Field, radii, spec: EnergySpec, x_weights) -> float:
    grid = field.grid
    kern = spec.kernel_fn
    u = field.values
    total = 0.0
    for i in range(grid.n_nodes):
        r = radii[i]
        if r <= 0 or x_weights[i] == 0:
            continue
        idx = grid.window_indices(grid.nodes[i], r)
        idx = idx[idx != i]
        if idx.size == 0:
            continue
        dist = np.linalg.norm(grid.nodes[idx] - grid.nodes[i], axis=1)
        kv = kern(dist / r)
        live = kv > 0
        if not np.any(live):
            continue
        inner = float(
            np.sum(grid.measures[idx[live]] * kv[live] * np.abs(u[idx[live]] - u[i]) ** spec.p)
        )
        total += x_weights[i] * inner / r ** (grid.d + spec.p)
    return total


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------


@dataclass
class Graph:
    """Point-cloud graph under the heterogeneous truncated horizon.

    Adjacency is asymmetric: j in N(i) iff |x_i - x_j| < eta_delta^tau(x_i)
    (kernel support is [0,1)); no self edges. Stored in CSR form with the
    kernel value per directed edge.
    """

    positions: np.ndarray  # (N, d)
    indptr: np.ndarray
    indices: np.ndarray
    kernel_values: np.ndarray
    eta_tau: np.ndarray  # delta * max(eta, tau)
    gamma: np.ndarray
    gamma_tau: np.ndarray
    label_mask: np.ndarray
    label_values: np.ndarray
    d: int
    p: float
    beta: float
    delta: float
    tau: float
    include_labeled_sources: bool = True

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.indices)

    @property
    def mean_degree(self) -> float:
        return self.n_edges / self.n_nodes

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def source_weights(self) -> np.ndarray:
        """Per-source factor 1 / ((gamma^tau)^{max(b,0)} gamma^{min(b,0)}
        eta_tau^{d+p}); zero for labeled sources when they are excluded."""
        bpos = max(self.beta, 0.0)
        bneg = min(self.beta, 0.0)
        with np.errstate(divide="ignore"):
            w = (
                self.gamma_tau ** (-bpos)
                * np.where(self.gamma > 0, self.gamma, np.inf) ** (-bneg)
                / self.eta_tau ** (self.d + self.p)
            )
        w = np.where(np.isfinite(w), w, 0.0)
        if not self.include_labeled_sources:
            w = np.where(self.label_mask, 0.0, w)
        return w


def build_graph(
    samples: np.ndarray,
    gamma_set: LabeledSet,
    spec: EnergySpec,
    domain: Domain,
    include_labeled_sources: bool = True,
) -> Graph:
    """Assemble the truncated-horizon graph on samples plus labeled nodes.

    Labeled components contribute their anchor points as graph nodes with
    the component's value attached.
    """
    from scipy.spatial import cKDTree

    if spec.tau <= 0:
        raise ParameterError("graph construction requires tau > 0")
    samples = np.asarray(samples, dtype=float)
    anchors = np.stack([c.anchor for c in gamma_set.components])
    pos = np.vstack([samples, anchors])
    n = len(pos)
    label_mask = np.zeros(n, dtype=bool)
    label_mask[len(samples) :] = True
    label_values = np.zeros(n)
    label_values[len(samples) :] = gamma_set.values

    eta = effective_boundary_distance(domain, gamma_set, pos)
    eta_tau = spec.delta * np.maximum(eta, spec.tau)
    g = np.asarray(gamma_weight(spec.weight, pos))
    g_tau = np.maximum(g, spec.tau)

    tree = cKDTree(pos)
    neigh = tree.query_ball_point(pos, r=eta_tau, return_sorted=True)
    indptr = np.zeros(n + 1, dtype=np.int64)
    chunks = []
    kern = spec.kernel_fn
    for i, lst in enumerate(neigh):
        arr = np.asarray(lst, dtype=np.int64)
        arr = arr[arr != i]
        indptr[i + 1] = indptr[i] + len(arr)
        chunks.append(arr)
    indices = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
    src = np.repeat(np.arange(n), np.diff(indptr))
    dist = np.linalg.norm(pos[src] - pos[indices], axis=1)
    kvals = kern(dist / eta_tau[src])

    return Graph(
        positions=pos,
        indptr=indptr,
        indices=indices,
        kernel_values=kvals,
        eta_tau=eta_tau,
        gamma=g,
        gamma_tau=g_tau,
        label_mask=label_mask,
        label_values=label_values,
        d=spec.d,
        p=spec.p,
        beta=spec.beta,
        delta=spec.delta,
        tau=spec.tau,
        include_labeled_sources=include_labeled_sources,
    )


def discrete_energy(graph: Graph, values: np.ndarray, spec: Optional[EnergySpec] = None) -> float:
    """(1/N^2) sum_{i} sum_{j in N(i)} rho_ij |u_i - u_j|^p /
    ((gamma^tau_i)^{max(b,0)} gamma_i^{min(b,0)} (eta_tau_i)^{d+p})."""
    values = np.asarray(values, dtype=float)
    if values.shape != (graph.n_nodes,):
        raise ParameterError("values must cover every graph node")
    p = spec.p if spec is not None else graph.p
    w = graph.source_weights()
    src = np.repeat(np.arange(graph.n_nodes), np.diff(graph.indptr))
    diff = np.abs(values[src] - values[graph.indices])
    contrib = w[src] * graph.kernel_values * diff**p
    return float(np.sum(contrib)) / graph.n_nodes**2


def grid_edge_arrays(grid: QuadratureGrid, radii: np.ndarray, kernel, rim_correction=True):
    """Directed edge arrays (src, dst, kernel_value * measure_dst) for the
    quadrature coupling induced by per-source radii on a grid."""
    d = grid.d
    offs = np.stack(
        np.meshgrid(*([np.array([-0.25, 0.25])] * d), indexing="ij"), -1
    ).reshape(-1, d) * grid.cell_sizes[None, :]
    halfdiag = grid.half_diagonal
    srcs, dsts, vals = [], [], []
    for i in range(grid.n_nodes):
        r = radii[i]
        if r <= 0:
            continue
        idx = grid.window_indices(grid.nodes[i], r)
        idx = idx[idx != i]
        if idx.size == 0:
            continue
        dist = np.linalg.norm(grid.nodes[idx] - grid.nodes[i], axis=1)
        keep = dist < r + (halfdiag if rim_correction else 0.0)
        idx, dist = idx[keep], dist[keep]
        if idx.size == 0:
            continue
        kv = kernel(dist / r)
        if rim_correction:
            rim = np.abs(dist - r) < halfdiag
            if np.any(rim):
                sub = grid.nodes[idx[rim]][:, None, :] + offs[None, :, :]
                sd = np.linalg.norm(sub - grid.nodes[i][None, None, :], axis=2)
                kv[rim] = kernel(sd / r).mean(axis=1)
        live = kv > 0
        if not np.any(live):
            continue
        srcs.append(np.full(np.sum(live), i, dtype=np.int64))
        dsts.append(idx[live])
        vals.append(kv[live] * grid.measures[idx[live]])
    if not srcs:
        return (
            np.empty(0, np.int64),
            np.empty(0, np.int64),
            np.empty(0, float),
        )
    return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(vals)


# ---------------------------------------------------------------------------
# Graph serialization (columnar text, reproducibility interface)
# ---------------------------------------------------------------------------


def write_graph(graph: Graph, path) -> None:
    with open(path, "w") as f:
        f.write(
            "# nlplab-graph-v1"
            f" d={graph.d} p={graph.p!r} beta={graph.beta!r}"
            f" delta={graph.delta!r} tau={graph.tau!r}"
            f" n_nodes={graph.n_nodes} n_edges={graph.n_edges}"
            f" include_labeled_sources={int(graph.include_labeled_sources)}\n"
        )
        f.write("# nodes: id " + " ".join(f"x{k}" for k in range(graph.d)) +
                " eta_tau gamma gamma_tau label_flag label_value\n")
        for i in range(graph.n_nodes):
            coords = " ".join(repr(float(c)) for c in graph.positions[i])
            f.write(
                f"{i} {coords} {graph.eta_tau[i]!r} {graph.gamma[i]!r} "
                f"{graph.gamma_tau[i]!r} {int(graph.label_mask[i])} "
                f"{graph.label_values[i]!r}\n"
            )
        f.write("# edges: src dst kernel_value\n")
        src = np.repeat(np.arange(graph.n_nodes), np.diff(graph.indptr))
        for e in range(graph.n_edges):
            f.write(f"{src[e]} {graph.indices[e]} {graph.kernel_values[e]!r}\n")


def read_graph(path) -> Graph:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# nlplab-graph-v1"):
            raise ConfigurationError("not a graph file (bad header)")
        meta = dict(tok.split("=") for tok in header.split()[2:])
        d = int(meta["d"])
        n = int(meta["n_nodes"])
        ne = int(meta["n_edges"])
        f.readline()  # node column header
        pos = np.empty((n, d))
        eta_tau = np.empty(n)
        gam = np.empty(n)
        gam_tau = np.empty(n)
        mask = np.zeros(n, dtype=bool)
        lab = np.empty(n)
        for _ in range(n):
            parts = f.readline().split()
            i = int(parts[0])
            pos[i] = [float(v) for v in parts[1 : 1 + d]]
            eta_tau[i], gam[i], gam_tau[i] = (float(v) for v in parts[1 + d : 4 + d])
            mask[i] = bool(int(parts[4 + d]))
            lab[i] = float(parts[5 + d])
        f.readline()  # edge column header
        src = np.empty(ne, dtype=np.int64)
        dst = np.empty(ne, dtype=np.int64)
        kv = np.empty(ne)
        for e in range(ne):
            parts = f.readline().split()
            src[e], dst[e], kv[e] = int(parts[0]), int(parts[1]), float(parts[2])
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    order = np.argsort(src, kind="stable")
    return Graph(
        positions=pos,
        indptr=indptr,
        indices=dst[order],
        kernel_values=kv[order],
        eta_tau=eta_tau,
        gamma=gam,
        gamma_tau=gam_tau,
        label_mask=mask,
        label_values=lab,
        d=d,
        p=float(meta["p"]),
        beta=float(meta["beta"]),
        delta=float(meta["delta"]),
        tau=float(meta["tau"]),
        include_labeled_sources=bool(int(meta["include_labeled_sources"])),
    )
