"""Discrete operators on radial and planar grids.

Nodal integrals use either composite Simpson weights (``rule="simpson"``,
the reporting rule) or control-volume weights (``rule="lumped"``), which the
gradient flow uses as its mass matrix. Gradients live on edges (radial) or on
the four corners of each cell (planar); the discrete Dirichlet energy
``sum |grad u|^p`` is defined from those, and ``p_laplacian`` is minus its
variation divided by the lumped nodal weights, so the flow is an exact
descent for the discrete energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator, RegularGridInterpolator

from .exceptions import DegenerateInputError, DomainError
from .model import (
    CartesianGrid2D,
    Field,
    PotentialSpec,
    ProblemParams,
    RadialGrid,
    potential_on,
    sphere_area,
)

__all__ = [
    "RegularizationOpts",
    "simpson_weights",
    "nodal_weights",
    "lp_integral",
    "grad_magnitude",
    "grad_p_integral",
    "conductance",
    "stiffness_matrix",
    "hessian_matrix",
    "p_laplacian",
    "energy",
    "energy_terms",
    "project_unit_Lp",
    "resample_scaled",
    "sample_radial",
]


@dataclass(frozen=True)
class RegularizationOpts:
    eps_reg: float = 1e-8

    def __post_init__(self):
        if not self.eps_reg > 0:
            raise DomainError("eps_reg must be > 0")


def simpson_weights(N: int, h: float) -> np.ndarray:
    """Composite Simpson weights on N uniform nodes (3/8 rule closes an even count)."""
    if N < 3:
        raise DomainError("Simpson quadrature needs at least 3 nodes")
    w = np.zeros(N)
    k = N if N % 2 == 1 else N - 3
    if k >= 3:
        w[:k:2] += 2.0
        w[1:k:2] = 4.0
        w[0] = w[k - 1] = 1.0
        w[:k] *= h / 3.0
    if N % 2 == 0:
        w[N - 4 :] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * h / 8.0
    return w


@lru_cache(maxsize=32)
def _weights(grid, rule: str) -> np.ndarray:
    if isinstance(grid, RadialGrid):
        r, h, n = grid.nodes, grid.h, grid.dim
        om = sphere_area(n)
        if rule == "simpson":
            w = simpson_weights(grid.m, h) * om * r ** (n - 1)
        elif rule == "lumped":
            hi = np.minimum(r + h / 2, grid.r_max)
            lo = np.maximum(r - h / 2, 0.0)
            w = om * (hi**n - lo**n) / n
        else:
            raise DomainError(f"unknown quadrature rule {rule!r}")
    else:
        h, N = grid.h, grid.N
        if rule == "simpson":
            w1 = simpson_weights(N, h)
        elif rule == "lumped":
            w1 = np.full(N, h)
            w1[0] = w1[-1] = h / 2
        else:
            raise DomainError(f"unknown quadrature rule {rule!r}")
        w = np.outer(w1, w1)
    w.flags.writeable = False
    return w


def nodal_weights(grid, rule: str = "simpson") -> np.ndarray:
    return _weights(grid, rule)


def lp_integral(u: Field, p_exp: float, rule: str = "simpson") -> float:
    """Quadrature of |u|^p_exp over R^n."""
    if not p_exp > 0:
        raise DomainError("exponent must be > 0")
    return float(np.sum(nodal_weights(u.grid, rule) * np.abs(u.values) ** p_exp))


@lru_cache(maxsize=32)
def _cell_volumes(grid: RadialGrid) -> np.ndarray:
    # midpoint sphere area times h: keeps the flux form exact on quadratics at r = 0
    r_mid = (grid.nodes[1:] + grid.nodes[:-1]) / 2
    v = sphere_area(grid.dim) * r_mid ** (grid.dim - 1) * grid.h
    v.flags.writeable = False
    return v


def _corner_gradients(v: np.ndarray, h: float):
    """Differences on the four cell edges, each of shape (N-1, N-1)."""
    dxb = (v[1:, :-1] - v[:-1, :-1]) / h
    dxt = (v[1:, 1:] - v[:-1, 1:]) / h
    dyl = (v[:-1, 1:] - v[:-1, :-1]) / h
    dyr = (v[1:, 1:] - v[1:, :-1]) / h
    # corners (0,0), (1,0), (0,1), (1,1) of each cell
    return ((dxb, dyl), (dxb, dyr), (dxt, dyl), (dxt, dyr))


def grad_magnitude(u: Field) -> np.ndarray:
    """|grad u| on edges (radial, length m-1) or cell centres (planar, (N-1, N-1))."""
    v, h = u.values, u.grid.h
    if u.is_radial:
        return np.abs(np.diff(v)) / h
    gx = 0.5 * ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / h
    gy = 0.5 * ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / h
    return np.hypot(gx, gy)


def grad_p_integral(u: Field, p: float, eps_reg: float = 0.0) -> float:
    """Discrete int (|grad u|^2 + eps^2)^{p/2}."""
    v, h = u.values, u.grid.h
    if u.is_radial:
        g2 = (np.diff(v) / h) ** 2
        return float(np.sum(_cell_volumes(u.grid) * (g2 + eps_reg**2) ** (p / 2)))
    total = 0.0
    for gx, gy in _corner_gradients(v, h):
        total += np.sum((gx * gx + gy * gy + eps_reg**2) ** (p / 2))
    return float(total * h * h / 4.0)


def conductance(u: Field, p: float, eps_reg: float, newton: bool = False):
    """Edge conductances of the lagged p-Laplacian.

    Radial: array over the m-1 edges. Planar: tuple (Kx, Ky) with shapes
    (N-1, N) and (N, N-1). ``newton=True`` (radial only) returns the second
    derivative of the edge energy instead of its secant.
    """
    v, h = u.values, u.grid.h
    if u.is_radial:
        g2 = (np.diff(v) / h) ** 2
        k = (g2 + eps_reg**2) ** ((p - 2) / 2)
        if newton:
            k = k * (1.0 + (p - 2) * g2 / (g2 + eps_reg**2))
        return _cell_volumes(u.grid) * k / h**2
    if newton:
        raise DomainError("Newton conductances are only available on radial grids")
    N = u.grid.N
    kap = [(gx * gx + gy * gy + eps_reg**2) ** ((p - 2) / 2) for gx, gy in _corner_gradients(v, h)]
    k00, k10, k01, k11 = kap
    Kx = np.zeros((N - 1, N))
    Ky = np.zeros((N, N - 1))
    Kx[:, :-1] += k00 + k10
    Kx[:, 1:] += k01 + k11
    Ky[:-1, :] += k00 + k01
    Ky[1:, :] += k10 + k11
    return Kx / 4.0, Ky / 4.0


@lru_cache(maxsize=32)
def _edge_index(grid):
    if isinstance(grid, RadialGrid):
        i = np.arange(grid.m - 1)
        return i, i + 1
    N = grid.N
    idx = np.arange(N * N).reshape(N, N)
    a = np.concatenate([idx[:-1, :].ravel(), idx[:, :-1].ravel()])
    b = np.concatenate([idx[1:, :].ravel(), idx[:, 1:].ravel()])
    return a, b


def _flat_conductance(K) -> np.ndarray:
    if isinstance(K, tuple):
        return np.concatenate([K[0].ravel(), K[1].ravel()])
    return K


def stiffness_matrix(grid, K) -> sp.csr_matrix:
    """Weighted graph Laplacian sum_e K_e (d_a - d_b)(d_a - d_b)^T on all nodes."""
    a, b = _edge_index(grid)
    k = _flat_conductance(K)
    size = int(np.prod(grid.shape))
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([k, k, -k, -k])
    return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))


def apply_stiffness(grid, K, v: np.ndarray) -> np.ndarray:
    """Matrix-free product of ``stiffness_matrix(grid, K)`` with nodal values v."""
    a, b = _edge_index(grid)
    k = _flat_conductance(K)
    flat = v.ravel()
    flux = k * (flat[a] - flat[b])
    out = np.bincount(a, weights=flux, minlength=flat.size)
    out -= np.bincount(b, weights=flux, minlength=flat.size)
    return out.reshape(v.shape)


@lru_cache(maxsize=8)
def _corner_operators(grid: CartesianGrid2D):
    """Sparse maps from nodal values to (gx, gy) at each of the four cell corners."""
    N, h = grid.N, grid.h
    idx = np.arange(N * N).reshape(N, N)
    ll, lr = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    ul, ur = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
    rows = np.arange(ll.size)

    def diff(lo, hi):
        data = np.concatenate([-np.ones(lo.size), np.ones(hi.size)]) / h
        return sp.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([lo, hi]))),
                             shape=(ll.size, N * N))

    xb, xt, yl, yr = diff(ll, lr), diff(ul, ur), diff(ll, ul), diff(lr, ur)
    # same corner order as _corner_gradients
    return ((xb, yl), (xb, yr), (xt, yl), (xt, yr))


def hessian_matrix(u: Field, p: float, eps_reg: float) -> sp.csr_matrix:
    """Second variation of the discrete gradient energy, divided by p."""
    if u.is_radial:
        return stiffness_matrix(u.grid, conductance(u, p, eps_reg, newton=True))
    h = u.grid.h
    H = None
    for (gx, gy), (Bx, By) in zip(_corner_gradients(u.values, h), _corner_operators(u.grid)):
        gx, gy = gx.ravel(), gy.ravel()
        r2 = gx * gx + gy * gy + eps_reg**2
        k = r2 ** ((p - 2) / 2) * h * h / 4.0
        c = (p - 2) / r2
        a11 = sp.diags(k * (1 + c * gx * gx))
        a22 = sp.diags(k * (1 + c * gy * gy))
        a12 = sp.diags(k * c * gx * gy)
        part = Bx.T @ (a11 @ Bx + a12 @ By) + By.T @ (a12 @ Bx + a22 @ By)
        H = part if H is None else H + part
    return H.tocsr()


def p_laplacian(u: Field, params: ProblemParams, reg: RegularizationOpts | None = None) -> Field:
    """div(|grad u|^{p-2} grad u) in conservative flux form."""
    reg = reg or RegularizationOpts()
    K = conductance(u, params.p, reg.eps_reg)
    w = nodal_weights(u.grid, "lumped")
    out = -apply_stiffness(u.grid, K, u.values) / w
    return Field(out, u.grid)


def energy_terms(u: Field, params: ProblemParams, V: PotentialSpec, rule: str = "simpson",
                 eps_reg: float = 0.0, v_nodes: np.ndarray | None = None) -> dict:
    """The three integrals entering the energy: gradient, potential and focusing term."""
    w = nodal_weights(u.grid, rule)
    if v_nodes is None:
        v_nodes = potential_on(V, u.grid)
    absu = np.abs(u.values)
    return {
        "grad": grad_p_integral(u, params.p, eps_reg),
        "pot": float(np.sum(w * v_nodes * absu**params.p)),
        "s": float(np.sum(w * absu**params.s)),
    }


def energy(u: Field, params: ProblemParams, V: PotentialSpec, rule: str = "simpson",
           eps_reg: float = 0.0) -> float:
    """E_a(u) = int |grad u|^p + int V|u|^p - (n a/(n+p)) int |u|^s."""
    t = energy_terms(u, params, V, rule, eps_reg)
    c = params.n * params.a / (params.n + params.p)
    return t["grad"] + t["pot"] - c * t["s"]


def project_unit_Lp(u: Field, p: float, rule: str = "simpson") -> Field:
    mass = lp_integral(u, p, rule)
    if not mass > 0:
        raise DegenerateInputError("cannot normalise a field with zero L^p norm")
    return Field(u.values * mass ** (-1.0 / p), u.grid)


def sample_radial(u: Field, radii: np.ndarray) -> np.ndarray:
    """Evaluate a radial field at arbitrary radii (monotone cubic, zero outside)."""
    r = u.grid.nodes
    f = PchipInterpolator(r, u.values, extrapolate=False)
    radii = np.asarray(radii, dtype=float)
    out = f(np.abs(radii))
    return np.nan_to_num(out, nan=0.0)


def resample_scaled(u: Field, c1: float, c2: float, shift=None) -> Field:
    """The field x -> c1 * u(c2 * x + shift) on u's own grid."""
    if not c2 > 0:
        raise DomainError("c2 must be > 0")
    if u.is_radial:
        if shift is not None and np.any(shift):
            raise DomainError("radial fields cannot be shifted")
        vals = c1 * sample_radial(u, c2 * u.grid.nodes)
        return Field(vals, u.grid)
    x, y = u.grid.axes()
    f = RegularGridInterpolator((x, y), u.values, method="pchip", bounds_error=False, fill_value=0.0)
    pts = c2 * u.grid.mesh()
    if shift is not None:
        pts = pts + np.asarray(shift, dtype=float)
    return Field(c1 * f(pts), u.grid)
