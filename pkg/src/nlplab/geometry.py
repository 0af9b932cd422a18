"""Domains, labeled sets, distance functions, quadrature grids, sampling.

The domain is a box or a disc in R^d (d = 1, 2, 3; discs in d = 2 only).
A labeled set is a finite union of components carrying Dirichlet values:
points (intrinsic dimension 0) or axis-aligned boxes (dimension >= 1).
The effective boundary of the working domain is the union of the outer
boundary and the labeled set, so the heterogeneous horizon at x is
delta * min(dist(x, outer boundary), dist(x, labeled set)).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError, ParameterError

__all__ = [
    "Domain",
    "LabeledComponent",
    "LabeledSet",
    "QuadratureGrid",
    "dist_to_boundary",
    "dist_to_labeled",
    "horizon",
    "max_admissible_delta",
    "build_grid",
    "sample_uniform",
    "sphere_surface_measure",
    "angular_rule",
]

_EPS = 1e-12


def _as_points(x) -> np.ndarray:
    """Coerce to an (m, d) float array; a single point becomes (1, d)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return a


def sphere_surface_measure(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1}: 2 pi^{d/2} / Gamma(d/2)."""
    import math

    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def angular_rule(d: int, n_angular: int = 32):
    """Quadrature rule (directions, weights) for integration over S^{d-1}.

    d=1 uses the two directions with weight 1 each; d=2 uses midpoint angles
    (trigonometric exactness); d=3 uses a product of midpoint azimuth and
    Gauss-Legendre in the polar cosine.
    """
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
        w = np.array([1.0, 1.0])
    elif d == 2:
        theta = (np.arange(n_angular) + 0.5) * (2.0 * np.pi / n_angular)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        w = np.full(n_angular, 2.0 * np.pi / n_angular)
    elif d == 3:
        n_phi = n_angular
        n_t = max(4, n_angular // 2)
        phi = (np.arange(n_phi) + 0.5) * (2.0 * np.pi / n_phi)
        t, wt = np.polynomial.legendre.leggauss(n_t)
        s = np.sqrt(1.0 - t**2)
        dirs = np.stack(
            [
                (s[:, None] * np.cos(phi)[None, :]).ravel(),
                (s[:, None] * np.sin(phi)[None, :]).ravel(),
                np.broadcast_to(t[:, None], (n_t, n_phi)).ravel(),
            ],
            axis=1,
        )
        w = (wt[:, None] * np.full(n_phi, 2.0 * np.pi / n_phi)[None, :]).ravel()
    else:
        raise ParameterError(f"unsupported dimension d={d}")
    return dirs, w


@dataclass(frozen=True)
class Domain:
    """Bounded region of R^d: axis-aligned box or disc (d=2)."""

    kind: str  # "box" | "disc"
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    radius: float = 0.0

    @staticmethod
    def box(lo, hi) -> "Domain":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ParameterError("box bounds must be 1-d arrays of equal length")
        if not np.all(hi > lo):
            raise DomainError("box has empty interior")
        if lo.size not in (1, 2, 3):
            raise ParameterError("supported dimensions are 1, 2, 3")
        return Domain(kind="box", lo=lo, hi=hi)

    @staticmethod
    def unit_box(d: int) -> "Domain":
        return Domain.box(np.zeros(d), np.ones(d))

    @staticmethod
    def disc(center, radius: float) -> "Domain":
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise DomainError("disc has empty interior")
        if center.size == 1:
            # a 1-d "disc" is an interval
            return Domain.box(center - radius, center + radius)
        if center.size != 2:
            raise ParameterError("disc domains are supported in d=2 only")
        return Domain(kind="disc", center=center, radius=float(radius))

    @property
    def d(self) -> int:
        return int(self.lo.size if self.kind == "box" else self.center.size)

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return float(np.linalg.norm(self.hi - self.lo))
        return 2.0 * self.radius

    @property
    def volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(self.hi - self.lo))
        return float(np.pi * self.radius**2)

    def bounding_box(self):
        if self.kind == "box":
            return self.lo, self.hi
        r = self.radius
        return self.center - r, self.center + r

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        """True where x lies in the closure of the domain (within tol)."""
        pts = _as_points(x)
        if self.kind == "box":
            return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)
        return np.linalg.norm(pts - self.center, axis=1) <= self.radius + tol

    def boundary_distance(self, x) -> np.ndarray:
        """Distance to the outer boundary for points inside the closure."""
        pts = _as_points(x)
        if self.kind == "box":
            return np.minimum(
                np.min(pts - self.lo, axis=1), np.min(self.hi - pts, axis=1)
            )
        return self.radius - np.linalg.norm(pts - self.center, axis=1)

    def boundary_distance_gradient(self, x, tie_tol: float = 1e-9) -> np.ndarray:
        """Gradient of the outer-boundary distance.

        At ridge points of the distance function (ties between faces within
        tie_tol) the candidate gradients are averaged.
        """
        pts = _as_points(x)
        m, d = pts.shape
        grad = np.zeros((m, d))
        if self.kind == "disc":
            v = pts - self.center
            nrm = np.linalg.norm(v, axis=1, keepdims=True)
            nz = nrm[:, 0] > tie_tol
            grad[nz] = -v[nz] / nrm[nz]
            return grad
        lo_gap = pts - self.lo
        hi_gap = self.hi - pts
        gaps = np.concatenate([lo_gap, hi_gap], axis=1)  # (m, 2d)
        best = np.min(gaps, axis=1, keepdims=True)
        active = gaps <= best + tie_tol
        count = active.sum(axis=1, keepdims=True)
        for i in range(d):
            grad[:, i] += np.where(active[:, i], 1.0, 0.0)  # lo face: +e_i
            grad[:, i] -= np.where(active[:, d + i], 1.0, 0.0)  # hi face: -e_i
        return grad / count

    def ray_exit(self, x0: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Distance along each unit direction from x0 to the outer boundary."""
        if self.kind == "box":
            return _ray_box_exit(x0, dirs, self.lo, self.hi)
        # |x0 + t w - c| = R
        v = x0 - self.center
        b = dirs @ v
        c = v @ v - self.radius**2
        disc = np.maximum(b**2 - c, 0.0)
        return -b + np.sqrt(disc)


def _ray_box_exit(x0, dirs, lo, hi):
    """Exit parameters t > 0 of rays x0 + t*dirs from an axis-aligned box."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo[None, :] - x0[None, :]) / dirs
        t_hi = (hi[None, :] - x0[None, :]) / dirs
    t = np.where(dirs > 0, t_hi, np.where(dirs < 0, t_lo, np.inf))
    return np.min(t, axis=1)


@dataclass(frozen=True)
class LabeledComponent:
    """One labeled component: a point (ell=0) or an axis-aligned ell-box."""

    lo: np.ndarray
    hi: np.ndarray
    value: float

    @staticmethod
    def point(x, value: float) -> "LabeledComponent":
        x = np.asarray(x, dtype=float)
        return LabeledComponent(lo=x.copy(), hi=x.copy(), value=float(value))

    @staticmethod
    def box(lo, hi, value: float) -> "LabeledComponent":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi < lo):
            raise ConfigurationError("labeled box with hi < lo")
        return LabeledComponent(lo=lo, hi=hi, value=float(value))

    @property
    def ell(self) -> int:
        """Intrinsic dimension: number of axes with positive extent."""
        return int(np.sum(self.hi > self.lo + _EPS))

    @property
    def is_point(self) -> bool:
        return self.ell == 0

    @property
    def anchor(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Euclidean distance from points to the component."""
        gap = np.maximum(self.lo[None, :] - pts, 0.0) + np.maximum(
            pts - self.hi[None, :], 0.0
        )
        return np.linalg.norm(gap, axis=1)

    def nearest_direction(self, pts: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
        """Unit gradient of the distance to this component (0 on it)."""
        gap = np.maximum(self.lo[None, :] - pts, 0.0) * (-1.0) + np.maximum(
            pts - self.hi[None, :], 0.0
        )
        nrm = np.linalg.norm(gap, axis=1, keepdims=True)
        out = np.zeros_like(pts)
        nz = nrm[:, 0] > tie_tol
        out[nz] = gap[nz] / nrm[nz]
        return out


@dataclass(frozen=True)
class LabeledSet:
    """Finite union of labeled components with separation radius R.

    For point components the balls B(x0, 4R) must be pairwise disjoint and
    contain no other component.
    """

    components: tuple
    R: float

    @staticmethod
    def from_points(points, values, R: float) -> "LabeledSet":
        comps = tuple(
            LabeledComponent.point(x, g) for x, g in zip(points, values)
        )
        return LabeledSet(components=comps, R=float(R))

    def __post_init__(self):
        if len(self.components) == 0:
            raise ConfigurationError("labeled set must have at least one component")
        if self.R <= 0:
            raise ParameterError("separation radius R must be positive")
        self._check_separation()

    def _check_separation(self):
        comps = self.components
        for i, a in enumerate(comps):
            for b in comps[i + 1 :]:
                if a.is_point and b.is_point:
                    gap = float(np.linalg.norm(a.anchor - b.anchor))
                    needed = 8.0 * self.R  # disjoint B(.,4R)
                elif a.is_point or b.is_point:
                    p, box = (a, b) if a.is_point else (b, a)
                    gap = float(box.distance(p.anchor[None, :])[0])
                    needed = 4.0 * self.R
                else:
                    gap = float(_box_box_distance(a, b))
                    needed = 4.0 * self.R
                if gap < needed:
                    raise ConfigurationError(
                        f"labeled components too close: gap {gap:.4g} < {needed:.4g}"
                    )

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.components])

    @property
    def ell_max(self) -> int:
        return max(c.ell for c in self.components)

    def distance(self, x) -> np.ndarray:
        pts = _as_points(x)
        d = np.full(pts.shape[0], np.inf)
        for c in self.components:
            d = np.minimum(d, c.distance(pts))
        return d

    def nearest_component(self, x) -> np.ndarray:
        pts = _as_points(x)
        dists = np.stack([c.distance(pts) for c in self.components], axis=1)
        return np.argmin(dists, axis=1)

    def distance_gradient(self, x, tie_tol: float = 1e-9) -> np.ndarray:
        pts = _as_points(x)
        dists = np.stack([c.distance(pts) for c in self.components], axis=1)
        best = dists.min(axis=1, keepdims=True)
        grad = np.zeros_like(pts)
        count = np.zeros((pts.shape[0], 1))
        for j, c in enumerate(self.components):
            sel = dists[:, j] <= best[:, 0] + tie_tol
            if np.any(sel):
                grad[sel] += c.nearest_direction(pts[sel], tie_tol)
                count[sel, 0] += 1.0
        return grad / np.maximum(count, 1.0)


def _box_box_distance(a: LabeledComponent, b: LabeledComponent) -> float:
    gap = np.maximum(a.lo - b.hi, 0.0) + np.maximum(b.lo - a.hi, 0.0)
    return float(np.linalg.norm(gap))


# ---------------------------------------------------------------------------
# Distance operations
# ---------------------------------------------------------------------------


def dist_to_boundary(domain: Domain, x) -> np.ndarray:
    """Distance from x to the outer boundary of the domain.

    Raises DomainError when any point lies outside the closure.
    """
    pts = _as_points(x)
    if not np.all(domain.contains(pts)):
        raise DomainError("point outside the domain closure")
    out = np.maximum(domain.boundary_distance(pts), 0.0)
    return out if np.asarray(x).ndim > 1 else float(out[0])


def dist_to_labeled(gamma_set: LabeledSet, x) -> np.ndarray:
    """Exact Euclidean distance from x to the union of labeled components."""
    if gamma_set is None or len(gamma_set.components) == 0:
        raise ConfigurationError("empty labeled set")
    out = gamma_set.distance(x)
    return out if np.asarray(x).ndim > 1 else float(out[0])


def effective_boundary_distance(domain: Domain, gamma_set: Optional[LabeledSet], x):
    """min(dist to outer boundary, dist to labeled set): the eta function."""
    pts = _as_points(x)
    eta = np.maximum(domain.boundary_distance(pts), 0.0)
    if gamma_set is not None:
        eta = np.minimum(eta, gamma_set.distance(pts))
    return eta if np.asarray(x).ndim > 1 else float(eta[0])


def effective_boundary_gradient(
    domain: Domain, gamma_set: Optional[LabeledSet], x, tie_tol: float = 1e-9
):
    """Gradient of eta = min(outer distance, labeled distance).

    Candidate gradients are averaged at ridge points (ties within tie_tol);
    the distance function is not differentiable there.
    """
    pts = _as_points(x)
    d_out = domain.boundary_distance(pts)
    if gamma_set is None:
        return domain.boundary_distance_gradient(pts, tie_tol)
    d_gam = gamma_set.distance(pts)
    g_out = domain.boundary_distance_gradient(pts, tie_tol)
    g_gam = gamma_set.distance_gradient(pts, tie_tol)
    grad = np.zeros_like(pts)
    take_out = d_out <= d_gam + tie_tol
    take_gam = d_gam <= d_out + tie_tol
    both = take_out & take_gam
    grad[take_out] = g_out[take_out]
    grad[take_gam] = g_gam[take_gam]
    grad[both] = 0.5 * (g_out[both] + g_gam[both])
    return grad


def horizon(domain: Domain, gamma_set: Optional[LabeledSet], delta: float, x):
    """Heterogeneous horizon delta * eta(x); eta vanishes on the boundary."""
    if not (0.0 < delta < 1.0):
        raise ParameterError(f"delta={delta} outside (0, 1)")
    pts = _as_points(x)
    if not np.all(domain.contains(pts)):
        raise DomainError("point outside the domain closure")
    out = delta * effective_boundary_distance(domain, gamma_set, pts)
    return out if np.asarray(x).ndim > 1 else float(out[0])


def max_admissible_delta(kappa0: float, kappa1: float) -> float:
    """Upper bound 1 / (3 kappa0^2 kappa1) on the bulk horizon parameter."""
    if kappa0 < 1.0 or kappa1 <= 0.0:
        raise ParameterError("require kappa0 >= 1 and kappa1 > 0")
    return 1.0 / (3.0 * kappa0**2 * kappa1)


# ---------------------------------------------------------------------------
# Quadrature grids
# ---------------------------------------------------------------------------


@dataclass
class QuadratureGrid:
    """Uniform tensor grid of cell centers with per-cell measures.

    Flagged cells intersect the labeled set; their singular weighted
    measures are computed by the coefficients module on demand and cached
    in `weighted_measure_cache`. The grid is immutable after construction
    (the cache is the only mutable member and is keyed by value).
    """

    domain: Domain
    gamma_set: Optional[LabeledSet]
    axes: tuple  # per-axis arrays of cell-center coordinates
    cell_sizes: np.ndarray  # (d,) cell edge lengths
    nodes: np.ndarray  # (M, d)
    measures: np.ndarray  # (M,)
    flags: np.ndarray  # (M,) bool: cell closure intersects the labeled set
    flagged_components: np.ndarray  # (M,) int, -1 where unflagged
    shape: tuple
    weighted_measure_cache: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def h(self) -> float:
        return float(np.max(self.cell_sizes))

    @property
    def half_diagonal(self) -> float:
        return 0.5 * float(np.linalg.norm(self.cell_sizes))

    def cell_bounds(self, i: int):
        lo = self.nodes[i] - 0.5 * self.cell_sizes
        hi = self.nodes[i] + 0.5 * self.cell_sizes
        return lo, hi

    def window_indices(self, center: np.ndarray, radius: float) -> np.ndarray:
        """Flat indices of all cells within the axis-aligned window of the ball."""
        slices = []
        for k in range(self.d):
            ax = self.axes[k]
            i0 = int(np.searchsorted(ax, center[k] - radius - 0.5 * self.cell_sizes[k]))
            i1 = int(np.searchsorted(ax, center[k] + radius + 0.5 * self.cell_sizes[k]))
            slices.append(np.arange(max(i0, 0), min(i1, len(ax))))
        if self.d == 1:
            return slices[0]
        mesh = np.meshgrid(*slices, indexing="ij")
        return np.ravel_multi_index([m.ravel() for m in mesh], self.shape)

    def interpolate(self, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of node values at arbitrary points.

        Points are clamped to the node hull, so evaluation stays defined up
        to the domain boundary (constant extension over the half-cell rim).
        """
        from scipy.interpolate import RegularGridInterpolator

        rgi = RegularGridInterpolator(
            self.axes,
            values.reshape(self.shape),
            method="linear",
            bounds_error=False,
            fill_value=None,
        )
        clamped = np.empty_like(pts)
        for k in range(self.d):
            clamped[:, k] = np.clip(pts[:, k], self.axes[k][0], self.axes[k][-1])
        return rgi(clamped)


def build_grid(
    domain: Domain, gamma_set: Optional[LabeledSet], resolution
) -> QuadratureGrid:
    """Uniform tensor grid of cell centers covering the domain.

    `resolution` is the cell count along the longest axis (other axes are
    scaled to keep cells close to cubic), or a per-axis tuple. For disc
    domains, cells straddling the boundary keep their center node but carry
    the exact clipped area as measure.
    """
    lo, hi = domain.bounding_box()
    d = lo.size
    lengths = hi - lo
    if np.isscalar(resolution) or isinstance(resolution, (int, np.integer)):
        resolution = int(resolution)
        if resolution < 4:
            raise ParameterError("resolution must be at least 4")
        lmax = lengths.max()
        counts = np.maximum(1, np.round(resolution * lengths / lmax)).astype(int)
    else:
        counts = np.asarray(resolution, dtype=int)
        if counts.size != d or np.any(counts < 1):
            raise ParameterError("per-axis resolution must have d positive entries")
    cell = lengths / counts
    axes = tuple(lo[k] + (np.arange(counts[k]) + 0.5) * cell[k] for k in range(d))
    if d == 1:
        nodes = axes[0][:, None]
    else:
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
    M = nodes.shape[0]
    cellvol = float(np.prod(cell))
    if domain.kind == "box":
        measures = np.full(M, cellvol)
        keep = np.ones(M, dtype=bool)
    else:
        measures = np.array(
            [
                _disc_cell_area(
                    nodes[i] - 0.5 * cell, nodes[i] + 0.5 * cell, domain
                )
                for i in range(M)
            ]
        )
        keep = measures > 0
        # Off-domain window cells keep zero measure so tensor indexing stays
        # intact; evaluations weight them by zero.
        measures = np.where(keep, measures, 0.0)

    flags = np.zeros(M, dtype=bool)
    comp_of = np.full(M, -1, dtype=np.int64)
    if gamma_set is not None:
        cell_lo = nodes - 0.5 * cell
        cell_hi = nodes + 0.5 * cell
        for j, compo in enumerate(gamma_set.components):
            if compo.is_point:
                # half-open membership: exactly one owning cell
                idx = np.minimum(
                    np.floor((compo.anchor - lo) / cell).astype(int), counts - 1
                )
                flat = int(np.ravel_multi_index(tuple(idx), tuple(counts))) if d > 1 else int(idx[0])
                flags[flat] = True
                comp_of[flat] = j
            else:
                overlap = np.all(
                    (cell_hi >= compo.lo[None, :]) & (cell_lo <= compo.hi[None, :]),
                    axis=1,
                )
                flags |= overlap
                comp_of[overlap] = j

    return QuadratureGrid(
        domain=domain,
        gamma_set=gamma_set,
        axes=axes,
        cell_sizes=cell,
        nodes=nodes,
        measures=measures,
        flags=flags,
        flagged_components=comp_of,
        shape=tuple(counts),
    )


def _disc_cell_area(clo, chi, domain: Domain) -> float:
    """Exact area of a rectangle intersected with a disc (d=2)."""
    cx, cy = domain.center
    R = domain.radius
    x0, x1 = clo[0] - cx, chi[0] - cx
    y0, y1 = clo[1] - cy, chi[1] - cy
    x0 = max(x0, -R)
    x1 = min(x1, R)
    if x1 <= x0:
        return 0.0

    def F(x):
        # antiderivative of sqrt(R^2 - x^2)
        x = np.clip(x, -R, R)
        return 0.5 * (x * np.sqrt(max(R * R - x * x, 0.0)) + R * R * np.arcsin(x / R))

    # split where the chord height crosses y0, y1
    pts = {x0, x1}
    for y in (y0, y1):
        if abs(y) < R:
            r = np.sqrt(R * R - y * y)
            for s in (-r, r):
                if x0 < s < x1:
                    pts.add(float(s))
    xs = sorted(pts)
    area = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        xm = 0.5 * (a + b)
        g = np.sqrt(max(R * R - xm * xm, 0.0))
        top_is_g = g < y1
        bot_is_g = -g > y0
        # integrate (min(y1, g) - max(y0, -g))_+ in closed form on [a, b]
        top = F(b) - F(a) if top_is_g else y1 * (b - a)
        bot = -(F(b) - F(a)) if bot_is_g else y0 * (b - a)
        seg = top - bot
        if seg > 0:
            area += seg
    return float(area)


def sample_uniform(domain: Domain, n: int, seed: int) -> np.ndarray:
    """n i.i.d. uniform points in the domain; deterministic given seed."""
    if n < 1:
        raise ParameterError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    lo, hi = domain.bounding_box()
    if domain.kind == "box":
        return rng.uniform(lo, hi, size=(n, lo.size))
    out = np.empty((n, 2))
    have = 0
    while have < n:
        cand = rng.uniform(lo, hi, size=(2 * (n - have) + 16, 2))
        good = cand[np.linalg.norm(cand - domain.center, axis=1) < domain.radius]
        take = min(len(good), n - have)
        out[have : have + take] = good[:take]
        have += take
    return out
