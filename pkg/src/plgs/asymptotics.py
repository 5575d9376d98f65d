"""Blow-up asymptotics as a approaches the critical coupling.

``lambda_of`` and the two closed-form laws need only the ground state Q.
``sweep`` runs the minimiser with continuation and records, per coupling,
the energy, length scale, multiplier, peak and distance of the rescaled
minimiser to the limit profile.  ``fit_power_law`` turns records into
log-log fits; ``asymptotic_checks`` bundles the comparisons against the
closed forms with their (engineering) tolerances.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .calculus import grad_p_integral, nodal_weights, sample_radial
from .exceptions import (
    DomainError,
    InconclusiveError,
    InsufficientDataError,
    PlgsError,
    ResolutionError,
)
from .limit_solver import GroundStateProfile, y_zero
from .minimizer import FlowOpts, MinimizerResult, minimize, rescaled_profile
from .model import (
    CartesianGrid2D,
    Field,
    PotentialSpec,
    ProblemParams,
    RadialGrid,
    potential_on,
    well_coefficient,
)

logger = logging.getLogger(__name__)

__all__ = [
    "INF",
    "LambdaReport",
    "SweepRecord",
    "PowerLawFit",
    "SiteSelection",
    "lambda_of",
    "predicted_energy",
    "predicted_sigma",
    "energy_prefactor",
    "sigma_prefactor",
    "optimal_tau",
    "trial_upper_bound",
    "gap_schedule",
    "sweep",
    "fit_power_law",
    "PowerLawRegressor",
    "site_selection",
    "asymptotic_checks",
    "TOLERANCES",
]

INF = math.inf

TOLERANCES = {
    "exponent_rel": 0.10,
    "prefactor_rel": 0.15,
    "sigma_ratio": (0.85, 1.15),
    "multiplier_rel": 0.05,
    "profile_distance": 0.05,
    "s_integral_rel": 0.05,
    "upper_slack": 0.02,
    "lower_tol_rel": 1e-3,
    "resolution_factor": 10.0,
}


@dataclass(frozen=True)
class LambdaReport:
    q: float
    lambda_list: tuple
    lam: float
    Z: tuple
    moment: float
    y0: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError("lambda must be positive and finite")
        if not self.Z:
            raise DomainError("the concentration set is empty")


@dataclass(frozen=True)
class SweepRecord:
    a: float
    gap: float
    e_a: float
    eps_a: float
    mu_a: float
    z_bar: np.ndarray
    profile_distance: float
    s_rescaled: float = float("nan")
    resolved: bool = True
    converged: bool = True
    diverged: bool = False
    residual: float = float("nan")
    error: str | None = None
    result: MinimizerResult | None = field(default=None, repr=False, compare=False)

    @property
    def usable(self) -> bool:
        return self.error is None and self.resolved and self.converged and not self.diverged and self.gap > 0


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float
    window: tuple
    count: int = 0


@dataclass(frozen=True)
class SiteSelection:
    point: np.ndarray
    well: int
    distance: float
    within: bool
    tie: bool


def lambda_of(Q: GroundStateProfile, V: PotentialSpec) -> LambdaReport:
    """lambda_i = (min_y int |x+y|^q Q^p) * lim V/|x-x_i|^q for the steepest wells."""
    if V.kind == "zero":
        raise DomainError("lambda is undefined for the zero potential")
    q = V.max_exponent
    y0, moment = y_zero(Q, q)
    if V.kind == "radial_power":
        lams = (moment,)
    else:
        lams = tuple(moment * well_coefficient(V, i) if qi == q else INF
                     for i, (_, qi) in enumerate(V.wells))
    lam = min(lams)
    Z = tuple(i for i, l in enumerate(lams) if l == lam)
    return LambdaReport(q=q, lambda_list=lams, lam=lam, Z=Z, moment=moment, y0=y0)


def _gap(a: float, a_star: float) -> float:
    if not 0 < a < a_star:
        raise DomainError(f"need 0 < a < a* (a={a}, a*={a_star})")
    return a_star - a


def energy_prefactor(a_star: float, params: ProblemParams, lam: float, q: float) -> float:
    p, n = params.p, params.n
    bracket = (q / p) ** (p / (p + q)) + (p / q) ** (q / (p + q))
    return a_star ** (-(n + q) / (p + q)) * lam ** (p / (p + q)) * bracket


def sigma_prefactor(a_star: float, params: ProblemParams, lam: float, q: float) -> float:
    p, n = params.p, params.n
    return a_star ** ((n - p) / (p * (p + q))) * lam ** (-1 / (p + q)) * (p / q) ** (1 / (p + q))


def predicted_energy(a: float, params: ProblemParams, lam: float, q: float, a_star: float) -> float:
    """Leading-order e(a) as a -> a*."""
    gap = _gap(a, a_star)
    p = params.p
    return gap ** (q / (p + q)) * energy_prefactor(a_star, params, lam, q)


def predicted_sigma(a: float, params: ProblemParams, lam: float, q: float, a_star: float) -> float:
    """Leading-order blow-up length scale as a -> a*."""
    gap = _gap(a, a_star)
    p = params.p
    return gap ** (1 / (p + q)) * sigma_prefactor(a_star, params, lam, q)


def optimal_tau(a: float, params: ProblemParams, lam: float, q: float, a_star: float) -> float:
    p, n = params.p, params.n
    gap = _gap(a, a_star)
    return (a_star ** (1 - n / p) * lam * q / (gap * p)) ** (1 / (p + q))


def _cutoff(t: np.ndarray) -> np.ndarray:
    """Smooth, 1 on t <= 1 and 0 on t >= 2."""
    t = np.asarray(t, dtype=float)
    x = np.clip(t - 1.0, 0.0, 1.0)

    def f(z):
        out = np.zeros_like(z)
        pos = z > 0
        out[pos] = np.exp(-1.0 / z[pos])
        return out

    return f(1.0 - x) / (f(1.0 - x) + f(x))


def trial_upper_bound(tau: float, x0, Q: GroundStateProfile, params: ProblemParams,
                      V: PotentialSpec, grid) -> float:
    """Discrete E_a of the normalised cut-off trial state centred at x0 with R = tau^{-1/2}."""
    if not tau > 0:
        raise DomainError("tau must be > 0")
    if tau * grid.h > 0.5:
        raise ResolutionError(f"trial spike unresolved: tau*h = {tau * grid.h:.3g} > 0.5")
    R = tau ** -0.5
    x0 = np.asarray(x0, dtype=float)
    if isinstance(grid, RadialGrid):
        if np.any(x0):
            raise DomainError("radial grids only admit a trial state centred at the origin")
        d = grid.nodes
    else:
        d = np.linalg.norm(grid.mesh() - x0, axis=-1)
    vals = _cutoff(d / R) * Q(tau * d)
    u = Field.dirichlet(vals, grid)
    w = nodal_weights(grid, "lumped")
    p, s = params.p, params.s
    mass = float(np.sum(w * u.values**p))
    if not mass > 0:
        raise ResolutionError("trial state vanishes on the grid")
    v = u.values * mass ** (-1.0 / p)
    G = grad_p_integral(Field(v, grid), p)
    P = float(np.sum(w * potential_on(V, grid) * v**p))
    S = float(np.sum(w * v**s))
    return G + P - params.n * params.a / (params.n + p) * S


def gap_schedule(a_star: float, lo: float = 1e-3, hi: float = 1e-1, per_decade: int = 10) -> list:
    """Couplings with gaps geometric in [lo, hi]*a*, ascending in a."""
    k = int(round(math.log10(hi / lo) * per_decade))
    gaps = np.geomspace(hi, lo, k + 1) * a_star
    return [float(a_star - g) for g in gaps]


def _profile_metrics(res: MinimizerResult, Q: GroundStateProfile, a_star: float):
    """L^p distance of the rescaled minimiser to a*^{-n/p^2} Q, and int |w|^s."""
    p, n, s = Q.params.p, Q.params.n, Q.params.s
    c = a_star ** (-n / p**2)
    if res.u_a.is_radial:
        ref = Q.profile.grid
        if ref.dim != n:
            ref = RadialGrid(ref.r_max, ref.m, n)
        wbar = rescaled_profile(res, ref_grid=ref)
        target = c * Q.profile.values
    else:
        ref = CartesianGrid2D(12.0, 241)
        wbar = rescaled_profile(res, ref_grid=ref)
        target = c * Q(np.linalg.norm(ref.mesh(), axis=-1))
    w = nodal_weights(ref)
    dist = float(np.sum(w * np.abs(wbar.values - target) ** p)) ** (1 / p)
    s_int = float(np.sum(w * wbar.values**s))
    return dist, s_int


def _record(a, a_star, res: MinimizerResult | None, Q, err: str | None, factor: float) -> SweepRecord:
    gap = a_star - a
    if res is None:
        nan = float("nan")
        return SweepRecord(a=a, gap=gap, e_a=nan, eps_a=nan, mu_a=nan, z_bar=np.full(Q.params.n, nan),
                           profile_distance=nan, resolved=False, converged=False, error=err)
    resolved = (not res.diverged) and res.eps_a >= factor * res.grid.h
    if not resolved and not res.diverged:
        logger.warning("a=%.10g under-resolved: eps_a=%.3g < %g h", a, res.eps_a, factor)
    dist, s_int = (float("nan"), float("nan"))
    if not res.diverged:
        dist, s_int = _profile_metrics(res, Q, a_star)
    return SweepRecord(a=a, gap=gap, e_a=res.e_a, eps_a=res.eps_a, mu_a=res.mu_a, z_bar=res.z_bar,
                       profile_distance=dist, s_rescaled=s_int, resolved=resolved,
                       converged=res.converged, diverged=res.diverged, residual=res.residual,
                       error=err, result=res)


def sweep(params: ProblemParams, V: PotentialSpec, a_values, grid, opts: FlowOpts | None = None,
          Q: GroundStateProfile | None = None, continuation: bool = True, threads: int = 1,
          resolution_factor: float = TOLERANCES["resolution_factor"]) -> list:
    """One record per coupling; failures are recorded and the sweep carries on."""
    if Q is None:
        from .limit_solver import find_Q
        Q = find_Q(params.with_a(0.0))
    a_star = Q.a_star
    a_values = [float(a) for a in a_values]
    if any(b <= a for a, b in zip(a_values, a_values[1:])):
        raise DomainError("a_values must be strictly increasing")
    if a_values and not (a_values[0] > 0 and a_values[-1] < a_star):
        raise DomainError("a_values must lie in (0, a*)")
    opts = opts or FlowOpts()

    def run(a, warm):
        try:
            res = minimize(params.with_a(a), V, grid, replace(opts, warm_start=warm))
            return res, None
        except PlgsError as exc:
            logger.warning("sweep point a=%.10g failed: %s", a, exc)
            return None, f"{type(exc).__name__}: {exc}"

    records = []
    if continuation:
        warm = opts.warm_start
        for a in a_values:
            res, err = run(a, warm)
            if res is not None and res.converged:
                warm = res.u_a
            records.append(_record(a, a_star, res, Q, err, resolution_factor))
    else:
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            outs = list(pool.map(lambda a: run(a, opts.warm_start), a_values))
        records = [_record(a, a_star, r, Q, e, resolution_factor) for a, (r, e) in zip(a_values, outs)]
    return sorted(records, key=lambda r: r.a)


def _observable(rec: SweepRecord, observable: str) -> float:
    if observable == "energy":
        return rec.e_a
    if observable == "epsilon":
        return rec.eps_a
    raise DomainError(f"unknown observable {observable!r}")


def fit_power_law(records, observable: str, window: tuple | None = None, a_star: float | None = None) -> PowerLawFit:
    """Least-squares line through (log gap, log observable) over usable records in the window."""
    recs = list(records)
    if window is None:
        if a_star is None:
            a_star = next((r.a + r.gap for r in recs), None)
        if a_star is None:
            raise InsufficientDataError("no records")
        window = (1e-3 * a_star, 1e-1 * a_star)
    lo, hi = window
    pts = [(r.gap, _observable(r, observable)) for r in recs
           if r.usable and lo * (1 - 1e-9) <= r.gap <= hi * (1 + 1e-9)]
    pts = [(g, y) for g, y in pts if y > 0 and math.isfinite(y)]
    if len(pts) < 4:
        raise InsufficientDataError(f"power-law fit needs >= 4 usable points, got {len(pts)}")
    reg = PowerLawRegressor().fit(np.array([g for g, _ in pts]), np.array([y for _, y in pts]))
    return PowerLawFit(exponent=reg.exponent_, prefactor=reg.prefactor_, r_squared=reg.r_squared_,
                       window=(float(lo), float(hi)), count=len(pts))


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """y = prefactor * x^exponent, fitted by least squares in log-log space."""

    def fit(self, X, y):
        x = np.asarray(X, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.size != y.size:
            raise DomainError("X and y differ in length")
        if x.size < 2:
            raise InsufficientDataError("need at least two points")
        if np.any(x <= 0) or np.any(y <= 0):
            raise DomainError("power-law fits need positive data")
        lx, ly = np.log(x), np.log(y)
        slope, intercept = np.polyfit(lx, ly, 1)
        resid = ly - (slope * lx + intercept)
        ss_tot = float(np.sum((ly - ly.mean()) ** 2))
        self.exponent_ = float(slope)
        self.prefactor_ = float(np.exp(intercept))
        self.r_squared_ = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        return self

    def predict(self, X):
        check_is_fitted(self, "exponent_")
        return self.prefactor_ * np.asarray(X, dtype=float) ** self.exponent_


def site_selection(records, lam: LambdaReport, V: PotentialSpec, h: float | None = None) -> SiteSelection:
    """Where the peak ends up: nearest well to the last usable z_bar and its distance."""
    if V.kind != "multi_well":
        raise DomainError("site selection needs a multi_well potential")
    usable = [r for r in records if r.usable]
    if not usable:
        raise InsufficientDataError("no usable sweep records")
    centers = V.centers

    def nearest(z):
        d = np.linalg.norm(centers - np.asarray(z)[: centers.shape[1]], axis=1)
        return int(np.argmin(d)), float(d.min())

    last = usable[-1]
    if len(usable) >= 2 and nearest(usable[-2].z_bar)[0] != nearest(last.z_bar)[0]:
        raise InconclusiveError("peak alternates between wells at the two finest couplings")
    if h is None:
        h = last.result.grid.h if last.result is not None else 0.0
    i, d = nearest(last.z_bar)
    in_Z = i in lam.Z
    tie = bool(last.result.peak_tie) if last.result is not None else False
    return SiteSelection(point=np.asarray(last.z_bar, dtype=float), well=i, distance=d,
                         within=in_Z and d <= 2 * h, tie=tie or len(lam.Z) > 1)


def asymptotic_checks(records, Q: GroundStateProfile, lam: LambdaReport, params: ProblemParams,
                      V: PotentialSpec, grid, tol: dict | None = None) -> dict:
    """Compare a sweep with the closed-form limits; every entry carries value, target and verdict."""
    tol = {**TOLERANCES, **(tol or {})}
    a_star, p, n, q = Q.a_star, params.p, params.n, lam.q
    out = {}
    usable = [r for r in records if r.usable]
    if not usable:
        raise InsufficientDataError("no usable sweep records")
    fits = {}
    for obs, expo, pref in (
        ("energy", q / (p + q), energy_prefactor(a_star, params, lam.lam, q)),
        ("epsilon", 1 / (p + q), sigma_prefactor(a_star, params, lam.lam, q)),
    ):
        f = fit_power_law(records, obs, a_star=a_star)
        fits[obs] = (f, expo, pref)
        out[f"{obs}_exponent"] = _check(f.exponent, expo, abs(f.exponent / expo - 1) <= tol["exponent_rel"])
        out[f"{obs}_prefactor"] = _check(f.prefactor, pref, abs(f.prefactor / pref - 1) <= tol["prefactor_rel"])
    fin = usable[-1]
    sig = predicted_sigma(fin.a, params, lam.lam, q, a_star)
    lo, hi = tol["sigma_ratio"]
    out["sigma_ratio"] = _check(fin.eps_a / sig, 1.0, lo <= fin.eps_a / sig <= hi)
    m = fin.eps_a**p * fin.mu_a
    out["multiplier_limit"] = _check(m, -p / n, abs(m / (-p / n) - 1) <= tol["multiplier_rel"])
    out["profile_distance"] = _check(fin.profile_distance, 0.0, fin.profile_distance <= tol["profile_distance"])
    target_s = (n + p) / (n * a_star)
    out["rescaled_s_integral"] = _check(fin.s_rescaled, target_s,
                                        abs(fin.s_rescaled / target_s - 1) <= tol["s_integral_rel"])
    lower_ok, upper_ok = True, True
    worst_lower, worst_upper = -INF, -INF
    for r in usable:
        lb = r.gap / a_star * r.eps_a ** (-p)
        worst_lower = max(worst_lower, lb - r.e_a)
        lower_ok &= lb <= r.e_a + tol["lower_tol_rel"] * abs(r.e_a)
        x0 = np.zeros(grid.dim) if isinstance(grid, RadialGrid) else V.centers[lam.Z[0]]
        tau = optimal_tau(r.a, params, lam.lam, q, a_star)
        ub = trial_upper_bound(tau, x0, Q, params.with_a(r.a), V, grid)
        worst_upper = max(worst_upper, r.e_a / ub - 1)
        upper_ok &= r.e_a <= ub * (1 + tol["upper_slack"])
    out["lower_bound_chain"] = _check(worst_lower, 0.0, lower_ok)
    out["upper_bound_chain"] = _check(worst_upper, 0.0, upper_ok)
    out["_fits"] = fits
    return out


def _check(value, target, passed) -> dict:
    return {"value": float(value), "target": float(target), "passed": bool(passed)}
