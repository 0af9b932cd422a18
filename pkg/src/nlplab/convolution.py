"""Boundary-localized convolution and its companion operators.

The convolution radius shrinks like the distance to the effective
boundary, so smoothing never reaches across the boundary and point values
on the labeled set are preserved. Discrete evaluations normalize by the
quadrature mass of the mollifier so constants are reproduced exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import (
    Kernel,
    LambdaSpec,
    MollifierSpec,
    lambda_gradient,
    lambda_value,
    make_mollifier,
)
from .errors import ParameterError
from .funcspace import Field, _ball_rule
from .geometry import QuadratureGrid

__all__ = [
    "ConvolutionSpec",
    "boundary_convolution",
    "psi_mass_reversed",
    "aux_gradient_operator",
    "shrink_theta",
    "shrink_phi",
]


@dataclass(frozen=True)
class ConvolutionSpec:
    """Scale and shape of one boundary-localized convolution."""

    epsilon: float
    mollifier: MollifierSpec = None
    lam: LambdaSpec = None

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ParameterError("epsilon must lie in (0, 1)")
        if self.mollifier is None:
            object.__setattr__(self, "mollifier", MollifierSpec())
        if self.lam is None:
            object.__setattr__(self, "lam", LambdaSpec())


def _radii(cspec: ConvolutionSpec, grid: QuadratureGrid) -> np.ndarray:
    lam = lambda_value(cspec.lam, grid.domain, grid.gamma_set, grid.nodes)
    return cspec.epsilon * np.asarray(lam)


def boundary_convolution(field: Field, cspec: ConvolutionSpec, method: str = "auto") -> Field:
    """K_eps u at every node: mollification over B(x, eps * lambda(x)).

    The ball lies inside the domain since lambda <= eta, so the kernel mass
    is 1 in the continuum; discrete sums divide by the quadrature mass.
    Nodes whose ball resolves no other quadrature point reproduce u(x).
    """
    grid = field.grid
    psi = make_mollifier(MollifierSpec(shape=cspec.mollifier.shape, d=grid.d))
    r = _radii(cspec, grid)
    if method == "auto":
        method = "polar" if field.fn is not None else "nodes"
    if method == "polar":
        z, w = _ball_rule(grid.d, n_r=10, n_ang=24)
        pv = psi(np.linalg.norm(z, axis=1))
        live = pv > 0
        z, wpv = z[live], (w * pv)[live]
        mass = float(wpv.sum())
        out = field.values.copy()
        act = r > 0
        pts = grid.nodes[act][:, None, :] + r[act][:, None, None] * z[None, :, :]
        vals = field.eval(pts.reshape(-1, grid.d)).reshape(-1, len(z))
        out[act] = vals @ (wpv / mass)
        return Field(grid=grid, values=out)
    if method != "nodes":
        raise ParameterError(f"unknown convolution method '{method}'")
    out = field.values.copy()
    for i in range(grid.n_nodes):
        if r[i] <= 0:
            continue
        idx = grid.window_indices(grid.nodes[i], r[i])
        dist = np.linalg.norm(grid.nodes[idx] - grid.nodes[i], axis=1)
        pv = psi(dist / r[i]) * grid.measures[idx]
        mass = pv.sum()
        if mass > 0:
            out[i] = float(pv @ field.values[idx] / mass)
    return Field(grid=grid, values=out)


def psi_mass_reversed(cspec: ConvolutionSpec, grid: QuadratureGrid, x) -> float:
    """Reversed-argument mass Psi_eps(x) = int psi_eps(y, x) dy.

    Equals 1 near deep-interior points where lambda is locally constant and
    stays bounded by sup(psi) * kappa0^d elsewhere.
    """
    x = np.asarray(x, dtype=float)
    psi = make_mollifier(MollifierSpec(shape=cspec.mollifier.shape, d=grid.d))
    lam = cspec.epsilon * np.asarray(
        lambda_value(cspec.lam, grid.domain, grid.gamma_set, grid.nodes)
    )
    rmax = float(lam.max())
    idx = grid.window_indices(x, rmax)
    dist = np.linalg.norm(grid.nodes[idx] - x[None, :], axis=1)
    live = (lam[idx] > 0) & (dist < lam[idx])
    idx, dist = idx[live], dist[live]
    vals = psi(dist / lam[idx]) / lam[idx] ** grid.d
    return float(np.sum(vals * grid.measures[idx]))


def aux_gradient_operator(
    vfield, cspec: ConvolutionSpec, grid: QuadratureGrid, vfn=None
) -> np.ndarray:
    """Matrix-weighted convolution K~_eps applied to a vector field.

    K~_eps v(x) = int psi_eps(x,y) [v(y) - grad(lambda_eps)(x)
    ((x - y) . v(y)) / lambda_eps(x)] dy, the operator that carries the
    gradient through the convolution: grad(K_eps u) = K~_eps[grad u].
    vfield is an (M, d) array of node vectors; vfn an optional callback.
    """
    vfield = np.asarray(vfield, dtype=float)
    psi = make_mollifier(MollifierSpec(shape=cspec.mollifier.shape, d=grid.d))
    r = _radii(cspec, grid)
    gl = cspec.epsilon * lambda_gradient(cspec.lam, grid.domain, grid.gamma_set, grid.nodes)
    z, w = _ball_rule(grid.d, n_r=10, n_ang=24)
    pv = psi(np.linalg.norm(z, axis=1))
    live = pv > 0
    z, wpv = z[live], (w * pv)[live]
    mass = float(wpv.sum())
    out = vfield.copy()
    act = np.flatnonzero(r > 0)
    pts = grid.nodes[act][:, None, :] + r[act][:, None, None] * z[None, :, :]
    flat = pts.reshape(-1, grid.d)
    if vfn is not None:
        vv = np.asarray(vfn(flat), dtype=float)
    else:
        vv = np.stack(
            [grid.interpolate(vfield[:, k], flat) for k in range(grid.d)], axis=1
        )
    vv = vv.reshape(len(act), len(z), grid.d)
    # y - x = r z, so (x - y)/lambda_eps = -z and the correction is
    # + grad(lambda_eps)(x) (z . v(y))
    base = np.einsum("k,skd->sd", wpv, vv)
    zdotv = np.einsum("kd,skd->sk", z, vv)
    corr = np.einsum("sk,k,sd->sd", zdotv, wpv, gl[act])
    out[act] = (base + corr) / mass
    return out


def shrink_theta(eps: float, kappa: float) -> float:
    """Horizon contraction factor theta(eps) = (1 - kappa eps)/(1 + kappa eps)."""
    if eps * kappa >= 1.0:
        raise ParameterError("kappa * eps must stay below 1")
    return (1.0 - kappa * eps) / (1.0 + kappa * eps)


def shrink_phi(eps: float, kappa: float, kappa1: float, d: int, p: float, beta: float) -> float:
    """Energy inflation factor phi(eps) =
    (1 + kappa eps)^{d+p} / (theta(eps)^{d+p+|beta|} (1 - kappa1 eps)^2)."""
    th = shrink_theta(eps, kappa)
    if kappa1 * eps >= 1.0:
        raise ParameterError("kappa1 * eps must stay below 1")
    return (1.0 + kappa * eps) ** (d + p) / (
        th ** (d + p + abs(beta)) * (1.0 - kappa1 * eps) ** 2
    )
