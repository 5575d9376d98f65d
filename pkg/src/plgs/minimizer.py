"""Constrained minimisation of E_a on the unit L^p sphere.

The flow works on the discrete energy built from lumped nodal weights w and
the edge/corner gradient energy of :mod:`plgs.calculus`:

    E_h(u) = G(u) + sum w V |u|^p - (n a/(n+p)) sum w |u|^s,   sum w |u|^p = 1.

One step takes the tangential gradient r = grad E_h/p - mu w |u|^{p-2} u,
preconditions it with the lagged operator

    P = L_kappa(u) + diag(w max(V - mu, 0) |u|^{p-2}) + diag(w)/dt,

and moves to |u - P^{-1} r| renormalised.  dt doubles after an accepted step
and halves until the energy does not increase.  Small dt is plain gradient
descent; large dt approaches a Kacanov (lagged-diffusivity) iteration.

Once the flow is close, Newton's method on the Euler-Lagrange system (with
the multiplier as extra unknown) finishes the job.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calculus import (
    apply_stiffness,
    conductance,
    grad_p_integral,
    hessian_matrix,
    nodal_weights,
    sample_radial,
    stiffness_matrix,
)
from .exceptions import DomainError, NonConvergenceError
from .model import (
    CartesianGrid2D,
    Field,
    PotentialSpec,
    ProblemParams,
    RadialGrid,
    make_params,
    potential_on,
)

logger = logging.getLogger(__name__)

__all__ = [
    "FlowOpts",
    "MinimizerResult",
    "minimize",
    "lagrange_multiplier",
    "rayleigh_multiplier",
    "el_residual",
    "rescaled_profile",
    "peak_of",
    "cold_start",
    "GroundStateMinimizer",
]

_RULE = "lumped"
SUPPORT_CUT = 1e-10


@dataclass(frozen=True)
class FlowOpts:
    dt0: float = 1.0
    dt_min: float = 1e-14
    dt_max: float = 1e12
    max_iters: int = 200_000
    tol_energy: float = 1e-15
    tol_residual: float = 1e-9
    divergence_floor: float = -1e3
    eps_reg: float = 1e-8
    newton: bool = True
    newton_start: float = 1e-3
    warm_start: Field | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.dt_min <= self.dt0:
            raise DomainError("dt_min must not exceed dt0")
        if not (self.tol_energy > 0 and self.tol_residual > 0):
            raise DomainError("tolerances must be > 0")


@dataclass(frozen=True)
class MinimizerResult:
    params: ProblemParams
    potential: PotentialSpec
    u_a: Field = field(repr=False)
    e_a: float
    mu_a: float
    eps_a: float
    z_bar: np.ndarray
    residual: float
    iters: int
    diverged: bool
    grad_integral: float
    pot_integral: float
    s_integral: float
    energy_log: np.ndarray = field(repr=False, default=None)
    newton_iters: int = 0
    peak_tie: bool = False
    converged: bool = True

    @property
    def grid(self):
        return self.u_a.grid

    @property
    def resolved(self) -> bool:
        return (not self.diverged) and self.eps_a >= 10.0 * self.grid.h


class _Problem:
    """Discrete energy, gradient and preconditioner on the interior nodes."""

    def __init__(self, params: ProblemParams, V: PotentialSpec, grid, eps_reg: float):
        self.params = params
        self.grid = grid
        self.eps = eps_reg
        self.w = nodal_weights(grid, _RULE)
        self.V = potential_on(V, grid)
        self.inner = ~grid.boundary_mask()
        self.c_s = params.n * params.a / (params.n + params.p)

    def field(self, v) -> Field:
        return Field.dirichlet(v, self.grid)

    def normalize(self, v: np.ndarray) -> np.ndarray:
        v = np.abs(v)
        v[~self.inner] = 0.0
        mass = np.sum(self.w * v**self.params.p)
        if not mass > 0:
            raise DomainError("flow produced a zero field")
        return v * mass ** (-1.0 / self.params.p)

    def terms(self, v: np.ndarray):
        p, s = self.params.p, self.params.s
        f = Field(v, self.grid)
        G = grad_p_integral(f, p, self.eps)
        P = float(np.sum(self.w * self.V * v**p))
        S = float(np.sum(self.w * v**s))
        return G, P, S

    def energy(self, v: np.ndarray) -> float:
        G, P, S = self.terms(v)
        return G + P - self.c_s * S

    def gradient(self, v: np.ndarray):
        """grad E_h / p (covector), conductances, multiplier and tangential residual."""
        p, s, a = self.params.p, self.params.s, self.params.a
        f = Field(v, self.grid)
        K = conductance(f, p, self.eps)
        Lu = apply_stiffness(self.grid, K, v)
        up = v ** (p - 1)
        g = Lu + self.w * (self.V * up - a * v ** (s - 1))
        g[~self.inner] = 0.0
        mu = float(np.sum(v * g) / np.sum(self.w * v**p))
        res = g - mu * self.w * up
        res[~self.inner] = 0.0
        return g, K, mu, res

    def support(self, v: np.ndarray) -> np.ndarray:
        """Interior nodes above the support cut.

        Below it |grad u| is under the gradient regularisation and the
        discrete equation describes the regularisation, not the problem.
        """
        return self.inner & (v > SUPPORT_CUT * float(v.max()))

    def residual_norm(self, v: np.ndarray, mu: float, res: np.ndarray) -> float:
        p, s, a = self.params.p, self.params.s, self.params.a
        m = self.support(v)
        rhs = mu * v ** (p - 1) + a * v ** (s - 1)
        num = np.sum(self.w[m] * (res[m] / self.w[m]) ** 2)
        den = np.sum(self.w[m] * rhs[m] ** 2)
        return float(np.sqrt(num / den)) if den > 0 else float("inf")

    def preconditioner(self, v: np.ndarray, K, mu: float, dt: float):
        p = self.params.p
        floor = 1e-12 * float(v.max())
        up2 = np.maximum(v, floor) ** (p - 2)
        diag = self.w * (np.maximum(self.V - mu, 0.0) * up2 + 1.0 / dt)
        A = stiffness_matrix(self.grid, K) + sp.diags(diag.ravel())
        m = self.inner.ravel()
        return A[m][:, m].tocsc()

    def eps_of(self, v: np.ndarray) -> float:
        G = grad_p_integral(Field(v, self.grid), self.params.p)
        return G ** (-1.0 / self.params.p) if G > 0 else float("inf")


def cold_start(V: PotentialSpec, grid) -> Field:
    """Unit-width Gaussian at the origin or at the well with the lowest Gaussian-averaged V."""
    if isinstance(grid, RadialGrid):
        return Field.dirichlet(np.exp(-grid.nodes**2 / 2), grid)
    X = grid.mesh()
    centre = np.zeros(2)
    if V.kind == "multi_well":
        w = nodal_weights(grid)
        Vn = potential_on(V, grid)
        best = None
        for c in V.centers:
            g = np.exp(-np.sum((X - c) ** 2, axis=-1))
            score = float(np.sum(w * Vn * g) / np.sum(w * g))
            if best is None or score < best[0]:
                best = (score, c)
        centre = best[1]
    return Field.dirichlet(np.exp(-np.sum((X - centre) ** 2, axis=-1) / 2), grid)


def _newton_polish(prob: _Problem, v: np.ndarray, mu: float, tol: float, max_iter: int = 30):
    """Newton on [grad E_h/p - mu w u^{p-1} = 0, sum w u^p = 1] over the support.

    Nodes below the support cut are held fixed, like Dirichlet data.
    """
    p, s, a = prob.params.p, prob.params.s, prob.params.a
    w, V = prob.w, prob.V
    it = 0
    for it in range(1, max_iter + 1):
        g, K, _, _ = prob.gradient(v)
        F = g - mu * w * v ** (p - 1)
        C = np.sum(w * v**p) - 1.0
        res = prob.residual_norm(v, mu, F)
        if res <= tol and abs(C) < 1e-13:
            return v, mu, res, it - 1
        m = prob.support(v).ravel()
        idx = np.nonzero(m)[0]
        vf, wf, Vf = v.ravel(), w.ravel(), V.ravel()
        H = hessian_matrix(Field(v, prob.grid), p, prob.eps)
        vm = vf[m]
        d = wf[m] * ((Vf[m] - mu) * (p - 1) * vm ** (p - 2) - a * (s - 1) * vm ** (s - 2))
        J = H[m][:, m] + sp.diags(d)
        col = -(wf * vf ** (p - 1))[m]
        row = (p * wf * vf ** (p - 1))[m]
        Jb = sp.bmat([[J, sp.csc_matrix(col[:, None])], [sp.csr_matrix(row[None, :]), None]]).tocsc()
        rhs = -np.concatenate([F.ravel()[m], [C]])
        try:
            step = spla.spsolve(Jb, rhs, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError:
            break
        if not np.all(np.isfinite(step)):
            break
        dv = np.zeros(vf.size)
        dv[idx] = step[:-1]
        dv = dv.reshape(v.shape)
        # full step; nodes that would cross zero shrink by 100 instead
        v = np.maximum(v + dv, 0.01 * v)
        v = v * np.sum(w * v**p) ** (-1.0 / p)
        mu = mu + step[-1]
    g, K, _, _ = prob.gradient(v)
    F = g - mu * w * v ** (p - 1)
    return v, mu, prob.residual_norm(v, mu, F), it


def minimize(params: ProblemParams, V: PotentialSpec, grid, opts: FlowOpts | None = None,
             raise_on_failure: bool = True) -> MinimizerResult:
    """Projected, preconditioned gradient flow for e(a) = inf {E_a(u): int |u|^p = 1}."""
    opts = opts or FlowOpts()
    if params.relaxed or params.p >= params.n:
        raise DomainError("constrained minimisation needs 1 < p < n")
    if grid.dim != params.n:
        raise DomainError(f"grid dimension {grid.dim} does not match n={params.n}")
    prob = _Problem(params, V, grid, opts.eps_reg)
    init = opts.warm_start if opts.warm_start is not None else cold_start(V, grid)
    if init.grid != grid:
        init = _regrid(init, grid)
    v = prob.normalize(np.array(init.values, dtype=float))
    E = prob.energy(v)
    log = [E]
    dt = opts.dt0
    diverged = converged = False
    res = float("inf")
    mu = float("nan")
    it = stall = newton_iters = 0
    polish = opts.newton
    threshold = opts.newton_start
    while it < opts.max_iters:
        it += 1
        g, K, mu, r = prob.gradient(v)
        res = prob.residual_norm(v, mu, r)
        if res <= opts.tol_residual:
            converged = True
            break
        if polish and res <= threshold:
            v_n, mu_n, res_n, k = _newton_polish(prob, v, mu, opts.tol_residual)
            newton_iters += k
            E_n = prob.energy(v_n)
            if res_n <= opts.tol_residual and E_n <= E + 1e-9 * max(1.0, abs(E)):
                v, mu, res, E = v_n, mu_n, res_n, E_n
                converged = True
                break
            # outside the Newton basin: flow further before the next attempt
            threshold = min(threshold, res) * 1e-2
            polish = threshold >= opts.tol_residual
        accepted = False
        while dt >= opts.dt_min:
            P = prob.preconditioner(v, K, mu, dt)
            d = np.zeros_like(v)
            d[prob.inner] = spla.spsolve(P, r[prob.inner])
            trial = prob.normalize(v - d)
            E_new = prob.energy(trial)
            if np.isfinite(E_new) and E_new <= E + 1e-14 * max(1.0, abs(E)):
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            logger.info("step size underflow at iteration %d (residual %.2e)", it, res)
            break
        change = abs(E - E_new) / max(abs(E), 1e-300)
        v, E = trial, E_new
        log.append(E)
        dt = min(2.0 * dt, opts.dt_max)
        if E < opts.divergence_floor or (E < 0 and prob.eps_of(v) < 2 * grid.h):
            diverged = True
            break
        stall = stall + 1 if change < opts.tol_energy else 0
        if stall >= 20:
            break
    if not diverged and not converged:
        msg = f"flow stopped after {it} iterations with residual {res:.3e} > {opts.tol_residual:.1e}"
        if raise_on_failure and it >= opts.max_iters:
            raise NonConvergenceError(msg)
        logger.warning(msg)
    return _result(prob, V, v, E, mu, res, it, diverged, np.array(log), newton_iters, converged)


def _result(prob, V, v, E, mu, res, it, diverged, log, newton_iters, converged) -> MinimizerResult:
    params = prob.params
    G, P, S = prob.terms(v)
    G0 = grad_p_integral(Field(v, prob.grid), params.p)
    u = prob.field(v)
    z, tie = peak_of(u, return_tie=True)
    e_a = G0 + P - prob.c_s * S
    if not diverged:
        mu = e_a - params.p * params.a / (params.n + params.p) * S
    return MinimizerResult(
        params=params,
        potential=V,
        u_a=u,
        e_a=e_a,
        mu_a=mu,
        eps_a=G0 ** (-1.0 / params.p) if G0 > 0 else float("inf"),
        z_bar=z,
        residual=res,
        iters=it,
        diverged=diverged,
        grad_integral=G0,
        pot_integral=P,
        s_integral=S,
        energy_log=log,
        newton_iters=newton_iters,
        peak_tie=tie,
        converged=converged and not diverged,
    )


def _regrid(f: Field, grid) -> Field:
    if isinstance(grid, RadialGrid) and f.is_radial:
        return Field.dirichlet(sample_radial(f, grid.nodes), grid)
    if isinstance(grid, CartesianGrid2D) and not f.is_radial:
        x, y = f.grid.axes()
        it = RegularGridInterpolator((x, y), f.values, bounds_error=False, fill_value=0.0)
        return Field.dirichlet(it(grid.mesh()), grid)
    raise DomainError("warm start lives on an incompatible grid")


def lagrange_multiplier(result: MinimizerResult, params: ProblemParams | None = None) -> float:
    """mu_a = e(a) - (p a/(n+p)) int u_a^s."""
    params = params or result.params
    return result.e_a - params.p * params.a / (params.n + params.p) * result.s_integral


def rayleigh_multiplier(result: MinimizerResult, params: ProblemParams | None = None) -> float:
    """The multiplier from pairing the Euler-Lagrange equation with u_a."""
    params = params or result.params
    mass = float(np.sum(nodal_weights(result.grid, _RULE) * result.u_a.values**params.p))
    return (result.grad_integral + result.pot_integral - params.a * result.s_integral) / mass


def el_residual(result: MinimizerResult, params: ProblemParams | None = None,
                V: PotentialSpec | None = None, eps_reg: float = 1e-8) -> float:
    """Relative weighted L2 norm of -Δ_p u + V u^{p-1} - mu u^{p-1} - a u^{s-1}."""
    params = params or result.params
    V = V or result.potential
    prob = _Problem(params, V, result.grid, eps_reg)
    v = np.abs(np.asarray(result.u_a.values, dtype=float))
    g, _, _, _ = prob.gradient(v)
    mu = lagrange_multiplier(result, params)
    r = np.where(prob.inner, g - mu * prob.w * v ** (params.p - 1), 0.0)
    return prob.residual_norm(v, mu, r)


def rescaled_profile(result: MinimizerResult, params: ProblemParams | None = None,
                     ref_grid=None) -> Field:
    """x -> eps_a^{n/p} u_a(eps_a x + z_bar) sampled on a reference grid."""
    params = params or result.params
    eps = result.eps_a
    if not eps > 0 or not np.isfinite(eps):
        raise DomainError("rescaling needs a finite positive eps_a")
    u = result.u_a
    c1 = eps ** (params.n / params.p)
    if u.is_radial:
        if ref_grid is None:
            ref_grid = RadialGrid.with_spacing(u.grid.r_max / eps, u.grid.h / eps, params.n)
        return Field.dirichlet(c1 * sample_radial(u, eps * ref_grid.nodes), ref_grid)
    if ref_grid is None:
        L = min(u.grid.half_width / eps, 12.0)
        ref_grid = CartesianGrid2D(L, u.grid.N)
    x, y = u.grid.axes()
    it = RegularGridInterpolator((x, y), u.values, method="pchip", bounds_error=False, fill_value=0.0)
    pts = eps * ref_grid.mesh() + np.asarray(result.z_bar, dtype=float)
    return Field.dirichlet(c1 * it(pts), ref_grid)


def peak_of(u: Field, return_tie: bool = False):
    """Grid node of the global maximum; ties go to the lexicographically first index."""
    vals = u.values
    top = float(vals.max())
    if not top > 0 and float(vals.min()) == 0.0:
        raise DomainError("field is identically zero")
    flat = int(np.argmax(vals))
    tie = int(np.count_nonzero(vals >= top - 1e-12 * abs(top))) > 1
    if u.is_radial:
        point = np.zeros(u.grid.dim)
        point[0] = u.grid.nodes[flat]
    else:
        ix, iy = np.unravel_index(flat, vals.shape)
        x, y = u.grid.axes()
        point = np.array([x[ix], y[iy]])
    return (point, tie) if return_tie else point


class GroundStateMinimizer(BaseEstimator):
    """Estimator wrapper around :func:`minimize` for one coupling ``a``.

    ``fit()`` runs the flow; ``transform(X)`` evaluates the minimiser at radii
    (radial grid) or at planar points.
    """

    def __init__(self, p=1.5, n=2, a=0.0, potential=None, r_max=8.0, h=0.01,
                 half_width=None, resolution=None, tol_residual=1e-9, max_iters=200_000):
        self.p = p
        self.n = n
        self.a = a
        self.potential = potential
        self.r_max = r_max
        self.h = h
        self.half_width = half_width
        self.resolution = resolution
        self.tol_residual = tol_residual
        self.max_iters = max_iters

    def _grid(self):
        if self.half_width is not None:
            return CartesianGrid2D(self.half_width, self.resolution)
        return RadialGrid.with_spacing(self.r_max, self.h, self.n)

    def fit(self, X=None, y=None, warm_start: Field | None = None):
        params = make_params(self.p, self.n, self.a)
        V = self.potential if self.potential is not None else PotentialSpec.radial_power(2.0)
        if isinstance(V, dict):
            V = PotentialSpec.from_dict(V)
        opts = FlowOpts(tol_residual=self.tol_residual, max_iters=self.max_iters, warm_start=warm_start)
        res = minimize(params, V, self._grid(), opts)
        self.result_ = res
        self.energy_ = res.e_a
        self.mu_ = res.mu_a
        self.eps_ = res.eps_a
        self.z_bar_ = res.z_bar
        self.diverged_ = res.diverged
        return self

    def transform(self, X):
        check_is_fitted(self, "result_")
        u = self.result_.u_a
        X = np.asarray(X, dtype=float)
        if u.is_radial:
            r = np.linalg.norm(X, axis=1) if X.ndim == 2 else np.abs(X)
            return sample_radial(u, r)
        x, y = u.grid.axes()
        it = RegularGridInterpolator((x, y), u.values, bounds_error=False, fill_value=0.0)
        return it(X)
