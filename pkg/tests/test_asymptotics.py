import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from plgs.asymptotics import (
    INF,
    PowerLawRegressor,
    SweepRecord,
    energy_prefactor,
    fit_power_law,
    gap_schedule,
    lambda_of,
    optimal_tau,
    predicted_energy,
    predicted_sigma,
    site_selection,
    sweep,
    trial_upper_bound,
)
from plgs.exceptions import DomainError, InconclusiveError, InsufficientDataError, ResolutionError
from plgs.model import CartesianGrid2D, PotentialSpec, RadialGrid, make_params

HARMONIC = PotentialSpec.radial_power(2.0)
# min over tau of gap tau^p / a* + m tau^{-q} / a*^{n/p}, m = int |x|^2 Q^p by quad, a = 0.99 a*
GOLDEN_PREDICTED_ENERGY = 0.1759342711996381


def second_moment(Q):
    return 2 * math.pi * quad(lambda r: r**3 * Q(np.array([r]))[0] ** 1.5, 0, 30, limit=400)[0]


def record(gap, e=1.0, eps=1.0, z=(0.0, 0.0), a_star=10.0, **kw):
    return SweepRecord(a=a_star - gap, gap=gap, e_a=e, eps_a=eps, mu_a=-1.0, z_bar=np.array(z),
                       profile_distance=0.0, **kw)


class TestLambda:
    def test_radial_power(self, Q15):
        lam = lambda_of(Q15, HARMONIC)
        assert lam.lam == pytest.approx(second_moment(Q15), rel=1e-6)
        assert lam.Z == (0,)
        assert lam.q == 2.0

    def test_shallow_well_is_excluded(self, Q15):
        V = PotentialSpec.multi_well([((-1, 0), 2), ((1, 0), 4)])
        lam = lambda_of(Q15, V)
        assert lam.q == 4
        assert lam.lambda_list[0] == INF
        # coefficient at (1,0) is |2|^2 = 4
        assert lam.lambda_list[1] == pytest.approx(4 * lam.moment)
        assert lam.Z == (1,)

    def test_equal_wells_tie(self, Q15):
        lam = lambda_of(Q15, PotentialSpec.multi_well([((-1, 0), 4), ((1, 0), 4)]))
        assert lam.Z == (0, 1)
        assert lam.lambda_list[0] == lam.lambda_list[1]

    def test_zero_potential(self, Q15):
        with pytest.raises(DomainError):
            lambda_of(Q15, PotentialSpec.zero())


class TestClosedForms:
    def test_energy_is_the_minimum_of_the_scaling_bound(self, Q15, params15):
        A = Q15.a_star
        lam = lambda_of(Q15, HARMONIC).lam
        a = 0.99 * A
        m = second_moment(Q15)
        f = lambda t: (A - a) * t**1.5 / A + m * t**-2 / A ** (2 / 1.5)
        ref = minimize_scalar(f, bounds=(0.1, 100), method="bounded", options={"xatol": 1e-12})
        assert ref.fun == pytest.approx(GOLDEN_PREDICTED_ENERGY, rel=1e-12)
        assert predicted_energy(a, params15, lam, 2.0, A) == pytest.approx(GOLDEN_PREDICTED_ENERGY, rel=1e-7)
        assert optimal_tau(a, params15, lam, 2.0, A) == pytest.approx(ref.x, rel=1e-6)

    @pytest.mark.parametrize("c", [0.5, 0.9, 0.999])
    def test_sigma_is_the_inverse_optimal_tau(self, params15, c):
        a_star, lam = 10.0, 3.0
        s = predicted_sigma(c * a_star, params15, lam, 2.0, a_star)
        assert s * optimal_tau(c * a_star, params15, lam, 2.0, a_star) == pytest.approx(1.0, rel=1e-12)

    def test_bracket_at_p_equal_q(self):
        prm = make_params(1.5, 2)
        assert energy_prefactor(1.0, prm, 1.0, 1.5) == pytest.approx(2.0, rel=1e-14)

    def test_exponents(self, params15):
        a_star, lam = 10.0, 3.0
        g1, g2 = 1e-3, 1e-1
        e = [predicted_energy(a_star - g, params15, lam, 2.0, a_star) for g in (g1, g2)]
        s = [predicted_sigma(a_star - g, params15, lam, 2.0, a_star) for g in (g1, g2)]
        assert math.log(e[1] / e[0]) / math.log(g2 / g1) == pytest.approx(4 / 7, rel=1e-12)
        assert math.log(s[1] / s[0]) / math.log(g2 / g1) == pytest.approx(2 / 7, rel=1e-12)

    @pytest.mark.parametrize("a", [0.0, 10.0, 11.0])
    def test_outside_the_gap(self, params15, a):
        with pytest.raises(DomainError):
            predicted_energy(a, params15, 1.0, 2.0, 10.0)


class TestTrialBound:
    @pytest.mark.parametrize("tau", [36, 64])
    def test_normalisation(self, Q15, params15, tau):
        # with a = 0 and V = 0 only the gradient term survives: tau^p int|grad Q|^p / int Q^p = tau^p
        g = RadialGrid.with_spacing(0.3, 0.001, 2)
        ub = trial_upper_bound(tau, [0, 0], Q15, params15, PotentialSpec.zero(), g)
        assert ub / tau**1.5 == pytest.approx(1.0, abs=1e-3)

    def test_planar_matches_radial(self, Q15, params15):
        g = CartesianGrid2D(0.6, 241)
        ub = trial_upper_bound(36, [0.1, 0], Q15, params15, PotentialSpec.zero(), g)
        assert ub / 36**1.5 == pytest.approx(1.0, abs=5e-3)

    def test_dominates_the_predicted_energy(self, Q15, params15):
        lam = lambda_of(Q15, HARMONIC).lam
        a = 0.99 * Q15.a_star
        tau = optimal_tau(a, params15, lam, 2.0, Q15.a_star)
        ub = trial_upper_bound(tau, [0, 0], Q15, params15.with_a(a), HARMONIC, RadialGrid.with_spacing(6.0, 0.01, 2))
        assert ub > predicted_energy(a, params15, lam, 2.0, Q15.a_star)

    def test_unresolved_spike(self, Q15, params15):
        with pytest.raises(ResolutionError):
            trial_upper_bound(100, [0, 0], Q15, params15, HARMONIC, RadialGrid.with_spacing(6.0, 0.01, 2))

    def test_radial_centre_only(self, Q15, params15):
        with pytest.raises(DomainError):
            trial_upper_bound(2, [1, 0], Q15, params15, HARMONIC, RadialGrid.with_spacing(6.0, 0.01, 2))


class TestSchedule:
    def test_geometric_gaps(self):
        a = gap_schedule(10.0)
        gaps = 10.0 - np.array(a)
        assert len(a) == 21
        assert np.all(np.diff(a) > 0)
        assert gaps[0] == pytest.approx(1.0)
        assert gaps[-1] == pytest.approx(1e-2)
        np.testing.assert_allclose(gaps[1:] / gaps[:-1], 10 ** -0.1, rtol=1e-12)

    def test_sweep_rejects_unordered_couplings(self, Q15, params15):
        with pytest.raises(DomainError):
            sweep(params15, HARMONIC, [5.0, 4.0], RadialGrid(5.0, 51, 2), Q=Q15)
        with pytest.raises(DomainError):
            sweep(params15, HARMONIC, [5.0, Q15.a_star], RadialGrid(5.0, 51, 2), Q=Q15)

    def test_small_sweep(self, Q15, params15):
        g = RadialGrid.with_spacing(6.0, 0.02, 2)
        a = [0.5 * Q15.a_star, 0.7 * Q15.a_star]
        recs = sweep(params15, HARMONIC, a, g, Q=Q15)
        cold = sweep(params15, HARMONIC, a, g, Q=Q15, continuation=False, threads=2)
        assert [r.a for r in recs] == a
        assert all(r.usable for r in recs)
        assert recs[1].e_a < recs[0].e_a
        for r, c in zip(recs, cold):
            assert r.e_a == pytest.approx(c.e_a, rel=1e-8)


class TestFits:
    def test_exact_power_law(self):
        recs = [record(g, e=3 * g**0.6) for g in np.geomspace(0.01, 1.0, 9)]
        f = fit_power_law(recs, "energy", a_star=10.0)
        assert f.exponent == pytest.approx(0.6, abs=1e-12)
        assert f.prefactor == pytest.approx(3.0, rel=1e-12)
        assert f.count == 9 and f.r_squared == pytest.approx(1.0)

    def test_noisy_power_law(self):
        rng = np.random.default_rng(3)
        gaps = np.geomspace(0.01, 1.0, 21)
        recs = [record(g, eps=2 * g ** (2 / 7) * (1 + 0.01 * rng.standard_normal())) for g in gaps]
        f = fit_power_law(recs, "epsilon", a_star=10.0)
        assert f.exponent == pytest.approx(2 / 7, abs=0.02)

    def test_unusable_points_are_skipped(self):
        gaps = np.geomspace(0.01, 1.0, 5)
        recs = [record(g, e=g) for g in gaps] + [record(0.05, e=99.0, resolved=False)]
        assert fit_power_law(recs, "energy", a_star=10.0).exponent == pytest.approx(1.0)

    def test_too_few_points(self):
        with pytest.raises(InsufficientDataError):
            fit_power_law([record(g) for g in (0.1, 0.5, 1.0)], "energy", a_star=10.0)

    def test_unknown_observable(self):
        with pytest.raises(DomainError):
            fit_power_law([record(g) for g in (0.1, 0.2, 0.5, 1.0)], "mass", a_star=10.0)

    def test_regressor(self):
        x = np.array([1.0, 2.0, 4.0])
        reg = PowerLawRegressor().fit(x, 5 * x**-1.5)
        np.testing.assert_allclose(reg.predict([8.0]), [5 * 8.0**-1.5])
        with pytest.raises(DomainError):
            PowerLawRegressor().fit([1.0, -1.0], [1.0, 1.0])


class TestSiteSelection:
    V = PotentialSpec.multi_well([((-1, 0), 2), ((1, 0), 4)])

    def test_converges_to_the_steep_well(self, Q15):
        lam = lambda_of(Q15, self.V)
        recs = [record(0.1, z=(0.9, 0)), record(0.01, z=(0.99, 0))]
        sel = site_selection(recs, lam, self.V, h=0.01)
        assert sel.well == 1 and sel.within and not sel.tie
        assert sel.distance == pytest.approx(0.01)

    def test_too_far(self, Q15):
        lam = lambda_of(Q15, self.V)
        sel = site_selection([record(0.01, z=(0.9, 0))], lam, self.V, h=0.01)
        assert sel.well == 1 and not sel.within

    def test_alternating_peak_is_inconclusive(self, Q15):
        lam = lambda_of(Q15, self.V)
        with pytest.raises(InconclusiveError):
            site_selection([record(0.1, z=(-1, 0)), record(0.01, z=(1, 0))], lam, self.V, h=0.01)

    def test_equal_wells_record_a_tie(self, Q15):
        V = PotentialSpec.multi_well([((-1, 0), 4), ((1, 0), 4)])
        sel = site_selection([record(0.01, z=(-1, 0))], lambda_of(Q15, V), V, h=0.01)
        assert sel.within and sel.tie and sel.well == 0

    def test_needs_usable_records(self, Q15):
        with pytest.raises(InsufficientDataError):
            site_selection([record(0.01, converged=False)], lambda_of(Q15, self.V), self.V, h=0.01)
