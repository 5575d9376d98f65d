import math
from dataclasses import replace

import numpy as np
import pytest

from plgs.calculus import grad_p_integral, lp_integral, nodal_weights
from plgs.exceptions import DomainError, NonConvergenceError
from plgs.minimizer import (
    FlowOpts,
    SUPPORT_CUT,
    GroundStateMinimizer,
    _regrid,
    cold_start,
    el_residual,
    lagrange_multiplier,
    minimize,
    peak_of,
    rayleigh_multiplier,
    rescaled_profile,
)
from plgs.model import CartesianGrid2D, Field, PotentialSpec, RadialGrid, make_params

HARMONIC = PotentialSpec.radial_power(2.0)


@pytest.fixture(scope="module")
def results(Q15, params15, coarse_radial):
    """Cold-start minimisers for a = c a*, V = |x|^2, p = 1.5, n = 2."""
    out = {}
    for c in (0.0, 0.5, 0.9):
        out[c] = minimize(params15.with_a(c * Q15.a_star), HARMONIC, coarse_radial)
    return out


class TestHarmonicOracle:
    # p = 2, a = 0 is the quantum harmonic oscillator: e(0) = n, u = pi^{-n/4} exp(-|x|^2/2)
    def test_energy_and_state(self):
        res = minimize(make_params(2.0, 3), HARMONIC, RadialGrid.with_spacing(8.0, 0.01, 3))
        assert res.e_a == pytest.approx(3.0, abs=1e-4)
        assert res.mu_a == pytest.approx(3.0, abs=1e-4)
        exact = math.pi ** -0.75 * np.exp(-res.grid.nodes**2 / 2)
        assert np.max(np.abs(res.u_a.values - exact)) < 1e-4

    def test_second_order_convergence(self):
        errs = [abs(minimize(make_params(2.0, 3), HARMONIC, RadialGrid.with_spacing(8.0, h, 3)).e_a - 3)
                for h in (0.02, 0.01)]
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


class TestMinimize:
    def test_bell_shape_at_zero_coupling(self, results):
        res = results[0.0]
        assert res.e_a > 0
        assert res.converged and not res.diverged
        v = res.u_a.values
        # monotone on the numerical support; the frozen tail below it sits at ~1e-13 max
        support = v > SUPPORT_CUT * v.max()
        assert np.all(np.diff(v[support]) <= 0)
        assert np.all(v[~support] <= SUPPORT_CUT * v.max())

    def test_threshold_behaviour_below_a_star(self, results):
        assert 0 < results[0.5].e_a < results[0.0].e_a
        assert 0 < results[0.9].e_a < results[0.5].e_a

    def test_divergence_above_a_star(self, Q15, params15, coarse_radial):
        res = minimize(params15.with_a(1.05 * Q15.a_star), HARMONIC, coarse_radial)
        assert res.diverged
        assert not res.converged

    @pytest.mark.parametrize("c", [0.0, 0.5, 0.9])
    def test_invariants(self, results, c):
        res = results[c]
        assert np.all(np.diff(res.energy_log) <= 1e-14 * np.abs(res.energy_log[:-1]))
        assert np.sum(nodal_weights(res.grid, "lumped") * res.u_a.values ** 1.5) == pytest.approx(1, abs=1e-10)
        assert np.all(res.u_a.values >= 0)
        assert res.residual <= 1e-9
        assert res.eps_a == pytest.approx(grad_p_integral(res.u_a, 1.5) ** (-1 / 1.5))

    @pytest.mark.parametrize("c", [0.5, 0.9])
    def test_lower_bound(self, results, Q15, c):
        res = results[c]
        assert res.e_a >= (1 - c) * res.grad_integral - 1e-12

    def test_warm_and_cold_start_agree(self, results, Q15, params15, coarse_radial):
        warm = minimize(params15.with_a(0.8 * Q15.a_star), HARMONIC, coarse_radial)
        res = minimize(params15.with_a(0.9 * Q15.a_star), HARMONIC, coarse_radial,
                       FlowOpts(warm_start=warm.u_a))
        assert res.e_a == pytest.approx(results[0.9].e_a, rel=10 * FlowOpts().tol_energy)

    def test_warm_start_from_another_grid(self, results, Q15, params15):
        g = RadialGrid.with_spacing(6.0, 0.02, 2)
        res = minimize(params15.with_a(0.5 * Q15.a_star), HARMONIC, g,
                       FlowOpts(warm_start=results[0.5].u_a))
        assert res.e_a == pytest.approx(results[0.5].e_a, rel=1e-3)

    def test_non_convergence_is_an_error(self, params15, coarse_radial):
        opts = FlowOpts(max_iters=2, newton=False)
        with pytest.raises(NonConvergenceError):
            minimize(params15, HARMONIC, coarse_radial, opts)
        res = minimize(params15, HARMONIC, coarse_radial, opts, raise_on_failure=False)
        assert not res.converged and not res.diverged

    def test_refuses_relaxed_and_mismatched_grids(self, params15):
        with pytest.raises(DomainError):
            minimize(make_params(2, 2, relaxed=True), HARMONIC, RadialGrid(5.0, 101, 2))
        with pytest.raises(DomainError):
            minimize(params15, HARMONIC, RadialGrid(5.0, 101, 3))

    def test_flow_options_validated(self):
        with pytest.raises(DomainError):
            FlowOpts(dt0=1e-20)
        with pytest.raises(DomainError):
            FlowOpts(tol_residual=0)

    def test_planar_two_wells(self, Q15, params15):
        V = PotentialSpec.multi_well([((-1, 0), 2), ((1, 0), 4)])
        res = minimize(params15.with_a(0.5 * Q15.a_star), V, CartesianGrid2D(3.0, 61))
        assert res.converged
        assert np.sum(nodal_weights(res.grid, "lumped") * res.u_a.values ** 1.5) == pytest.approx(1, abs=1e-10)
        assert np.all(res.u_a.values[res.grid.boundary_mask()] == 0)
        assert 0 < res.e_a

    def test_planar_agrees_with_radial(self, results, Q15, params15):
        res = minimize(params15.with_a(0.5 * Q15.a_star), HARMONIC, CartesianGrid2D(5.0, 201))
        assert res.e_a == pytest.approx(results[0.5].e_a, rel=5e-3)
        np.testing.assert_allclose(res.z_bar, [0, 0], atol=1e-12)


class TestMultiplier:
    def test_zero_coupling(self, results):
        res = results[0.0]
        assert lagrange_multiplier(res) == res.e_a

    @pytest.mark.parametrize("c", [0.0, 0.5, 0.9])
    def test_two_routes_agree(self, results, c):
        res = results[c]
        assert rayleigh_multiplier(res) == pytest.approx(lagrange_multiplier(res),
                                                         rel=10 * 1e-9, abs=10 * 1e-9)


class TestResidual:
    def test_converged(self, results):
        assert el_residual(results[0.5]) <= 1e-9

    def test_random_field(self, results):
        rng = np.random.default_rng(0)
        res = results[0.5]
        noisy = res.u_a.with_values(np.abs(res.u_a.values * (1 + 0.3 * rng.standard_normal(res.grid.m))))
        assert el_residual(replace(res, u_a=noisy)) > 0.1

    def test_refinement_on_a_common_grid(self):
        prm = make_params(2.0, 3, 5.0)
        ref = RadialGrid.with_spacing(8.0, 0.0025, 3)
        vals = []
        for h in (0.04, 0.02, 0.01):
            res = minimize(prm, HARMONIC, RadialGrid.with_spacing(8.0, h, 3))
            vals.append(el_residual(replace(res, u_a=_regrid(res.u_a, ref))))
        assert vals[0] > vals[1] > vals[2]


class TestRescaledProfile:
    def test_normalisations(self, results):
        w = rescaled_profile(results[0.9])
        assert lp_integral(w, 1.5) == pytest.approx(1.0, abs=1e-3)
        assert grad_p_integral(w, 1.5) == pytest.approx(1.0, abs=1e-3)

    def test_needs_finite_length_scale(self, results):
        with pytest.raises(DomainError):
            rescaled_profile(replace(results[0.5], eps_a=math.inf))


class TestPeak:
    def test_gaussian_at_a_point(self):
        g = CartesianGrid2D(3.0, 41)
        u = Field(np.exp(-np.sum((g.mesh() - [1.03, 0.02]) ** 2, axis=-1)), g)
        pt, tie = peak_of(u, return_tie=True)
        x, y = g.axes()
        np.testing.assert_allclose(pt, [x[np.argmin(abs(x - 1.03))], y[np.argmin(abs(y - 0.02))]])
        assert not tie

    def test_equal_peaks_take_the_first_index(self):
        g = CartesianGrid2D(2.0, 41)
        X = g.mesh()
        u = Field(np.exp(-np.sum((X - [1, 0]) ** 2, -1) * 4) + np.exp(-np.sum((X + [1, 0]) ** 2, -1) * 4), g)
        pt, tie = peak_of(u, return_tie=True)
        np.testing.assert_allclose(pt, [-1, 0], atol=1e-12)
        assert tie

    def test_radial_minimiser_peaks_at_origin(self, results):
        assert np.all(results[0.9].z_bar == 0)

    def test_zero_field(self):
        g = CartesianGrid2D(1.0, 5)
        with pytest.raises(DomainError):
            peak_of(Field(np.zeros(g.shape), g))


class TestColdStart:
    def test_deepest_well(self):
        V = PotentialSpec.multi_well([((-1, 0), 2), ((1, 0), 4)])
        g = CartesianGrid2D(3.0, 61)
        assert np.allclose(peak_of(cold_start(V, g)), [1, 0])

    def test_radial(self, coarse_radial):
        assert cold_start(HARMONIC, coarse_radial).values[0] == 1.0


class TestEstimator:
    def test_fit_transform(self, results, Q15):
        est = GroundStateMinimizer(p=1.5, n=2, a=0.5 * Q15.a_star, r_max=6.0, h=0.01).fit()
        assert est.energy_ == pytest.approx(results[0.5].e_a, rel=1e-12)
        out = est.transform(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert out[0] == pytest.approx(results[0.5].u_a.values[0])
        assert out[0] > out[1] > 0
