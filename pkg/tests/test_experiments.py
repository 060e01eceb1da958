import math

import numpy as np
import pytest

from kslab.errors import ConfigError, DegenerateFitError
from kslab.experiments import (
    pair_independence,
    plan_parameters,
    rate_fit,
    resampling_baseline,
    sample_field,
    slice_directions,
    sliced_w1,
    marginal_metrics,
)
from kslab.pde import GridField, InitialDatum
from oracles import weighted_w1_1d


class TestPlan:
    def test_formula_d2(self):
        plan = plan_parameters(10**4, alpha_k=0.05, alpha_p=0.05, d=2, m=2.0)
        assert plan.eps_p == pytest.approx((0.05 * math.log(1e4)) ** (-0.25), rel=1e-14)
        assert plan.eps_p == pytest.approx(1.2140, abs=2e-4)
        assert plan.lam == pytest.approx(plan.eps_p**2 / 2, rel=1e-14)
        assert plan.lam == pytest.approx(0.7369, abs=2e-4)
        assert plan.band_overlap_warning

    def test_formula_d3(self):
        plan = plan_parameters(10**6, alpha_k=0.01, alpha_p=0.05, d=3, m=3.0)
        assert plan.eps_k == pytest.approx((0.01 * math.log(1e6)) ** (-1 / 3), rel=1e-14)
        assert plan.eps_k == pytest.approx(1.934, abs=1e-3)

    def test_monotone_in_n(self):
        a = plan_parameters(1000, 0.05, 0.05, 2, 2.0)
        b = plan_parameters(int(1000 * math.e), 0.05, 0.05, 2, 2.0)
        assert b.eps_k < a.eps_k
        assert b.eps_p < a.eps_p

    def test_scale_exact_reproduction(self):
        plan = plan_parameters(5000, 0.03, 0.07, 2, 2.0)
        log_n = math.log(plan.n)
        assert plan.eps_k == (plan.alpha_k * log_n) ** (-1.0 / plan.d)
        assert plan.eps_p == (plan.alpha_p * log_n) ** (-1.0 / (plan.d * plan.m - plan.d + 2))
        assert plan.lam == 0.5 * plan.eps_p**plan.d

    def test_validation(self):
        with pytest.raises(ConfigError):
            plan_parameters(2, 0.05, 0.05, 2, 2.0)
        with pytest.raises(ConfigError):
            plan_parameters(100, -0.1, 0.05, 2, 2.0)
        with pytest.raises(ConfigError):
            plan_parameters(100, 0.05, 0.05, 2, 2.5)

    def test_admissibility_margin(self):
        plan = plan_parameters(10**4, 0.05, 0.05, 2, 2.0, beta=0.5, delta=0.01)
        expected = 1.0 - 0.01 * (2 * 2 * 2 - 2 * 2 + 2) / (2 * 2 - 2 + 2) - 0.5
        assert plan.admissibility_margin == pytest.approx(expected, rel=1e-14)


class TestRateFit:
    def test_exact_square_law(self):
        xs = [0.1, 0.2, 0.4, 0.8]
        fit = rate_fit([(x, x**2) for x in xs])
        assert fit.slope == pytest.approx(2.0, abs=1e-12)

    def test_constant(self):
        fit = rate_fit([(x, 5.0) for x in (1.0, 2.0, 4.0)])
        assert fit.slope == pytest.approx(0.0, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(5.0), rel=1e-12)

    def test_exact_inverse_law_through_fitter(self):
        xs = [64.0, 256.0, 1024.0]
        fit = rate_fit([(x, 3.0 / x) for x in xs])
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)

    def test_noisy_inverse_law(self):
        rng = np.random.default_rng(0)
        xs = np.geomspace(0.1, 10, 12)
        ys = xs**-1 * (1 + 0.01 * rng.standard_normal(12))
        fit = rate_fit(list(zip(xs, ys)))
        assert fit.slope == pytest.approx(-1.0, abs=0.05)

    def test_weighted_fit_uses_stderr(self):
        pts = [(1.0, 1.0, 1e-6), (2.0, 2.0, 1e-6), (4.0, 100.0, 1e6)]
        fit = rate_fit(pts)
        # the wild third point carries almost no weight
        assert fit.slope == pytest.approx(1.0, abs=1e-3)

    def test_errors(self):
        with pytest.raises(DegenerateFitError):
            rate_fit([(1.0, 1.0), (2.0, 2.0)])
        with pytest.raises(DegenerateFitError):
            rate_fit([(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)])
        with pytest.raises(DegenerateFitError):
            rate_fit([(1.0, 1.0), (2.0, -2.0), (3.0, 3.0)])


def small_field(n=48, L=2.0, var=0.16):
    axis = -L + (np.arange(n) + 0.5) * (2 * L / n)
    mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1)
    vals = np.exp(-np.sum(mesh**2, axis=-1) / (2 * var))
    f = GridField(L, vals)
    f.values /= f.mass()
    return f


class TestSlicedW1:
    def test_matches_independent_w1_oracle(self):
        field = small_field()
        rng = np.random.default_rng(2)
        samples = rng.normal(0.0, 0.4, size=(300, 2))
        dirs = slice_directions(2, 16, seed=9)
        axis = field.axis_coords()
        mesh = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
        w = (field.values * field.h**2).reshape(-1)
        w = w / w.sum()
        expected = np.mean(
            [weighted_w1_1d(samples @ u, None, mesh @ u, w) for u in dirs]
        )
        got = sliced_w1(samples, field, n_directions=16, seed=9)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_point_mass_vs_two_atom_reference(self):
        # all samples at one point against two atoms: W1 is the mean distance
        n, L = 4, 2.0
        vals = np.zeros((n, n))
        vals[1, 1] = 0.5
        vals[2, 2] = 0.5
        f = GridField(L, vals)
        f.values /= f.mass()
        axis = f.axis_coords()
        a, b = np.array([axis[1], axis[1]]), np.array([axis[2], axis[2]])
        x0 = a.copy()
        samples = np.tile(x0, (50, 1))
        dirs = slice_directions(2, 32, seed=1)
        expected = np.mean([0.5 * abs((a - x0) @ u) + 0.5 * abs((b - x0) @ u) for u in dirs])
        got = sliced_w1(samples, f, n_directions=32, seed=1)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_permutation_invariance(self):
        field = small_field()
        rng = np.random.default_rng(3)
        samples = rng.normal(0.0, 0.4, size=(200, 2))
        a = sliced_w1(samples, field, 16, seed=4)
        b = sliced_w1(samples[rng.permutation(200)], field, 16, seed=4)
        assert a == b

    def test_unnormalized_reference_rejected(self):
        field = small_field()
        field.values *= 2.0
        with pytest.raises(ConfigError):
            sliced_w1(np.zeros((10, 2)), field)

    def test_iid_samples_concentrate_at_baseline(self):
        field = small_field()
        samples = sample_field(field, 400, seed=6)
        metric = sliced_w1(samples, field, 32, seed=6)
        baseline = resampling_baseline(field, 400, 32, seed=6, draws=6)
        assert metric <= 2.5 * baseline

    def test_sample_field_properties(self):
        field = small_field()
        pts = sample_field(field, 5000, seed=8)
        assert pts.shape == (5000, 2)
        assert np.all(np.abs(pts) <= field.L)
        assert np.array_equal(pts, sample_field(field, 5000, seed=8))
        # matches the field mean within a CLT window
        mean = pts.mean(axis=0)
        assert np.linalg.norm(mean) <= 4 * 0.45 / np.sqrt(5000)


class TestIndependence:
    def test_independent_streams_below_threshold(self):
        rng = np.random.default_rng(10)
        r = 400
        ens = rng.standard_normal((r, 2, 2))
        assert pair_independence(ens) <= 4 / np.sqrt(r)

    def test_correlated_pair_detected(self):
        rng = np.random.default_rng(11)
        r = 400
        x = rng.standard_normal((r, 1))
        ens = np.concatenate([np.tile(x, (1, 2))[:, :, None]] * 2, axis=2)
        assert pair_independence(ens) >= 0.99

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            pair_independence(np.zeros((5, 1, 2)))


class TestStudies:
    def test_fluctuation_all_drifts_off_is_pure_coupling(self):
        from kslab.experiments import fluctuation_study
        from kslab.particles import KernelParams

        params = KernelParams(d=2, m=2.0, eps_k=0.5, eps_p=0.5, lam=0.125, sigma=0.4)
        study = fluctuation_study(
            params, [4, 8, 16], t_end=0.01, grid_L=3.0, grid_n=32,
            store_every=0.005, replications=2, seed=1,
            include_aggregation=False, include_repulsion=False,
        )
        assert np.all(study.estimates == 0.0)

    def test_identical_fields_give_zero_error(self):
        from kslab.coupling import simulate_field_driven, trajectory_error
        from kslab.noise import NoiseStream
        from kslab.particles import KernelParams, ParticleEnsemble
        from kslab.pde import InitialDatum, MeanFieldPDE

        params = KernelParams(d=2, m=2.0, eps_k=0.5, eps_p=0.5, lam=0.125, sigma=0.4)
        u0 = InitialDatum.gaussian([0.0, 0.0], 0.5).grid_field(3.0, 32)
        hist = MeanFieldPDE(params, 3.0, 32, mode="mollified").solve(
            u0, 0.01, store_every=0.005
        )
        init = ParticleEnsemble(np.random.default_rng(0).normal(0, 0.3, (5, 2)))
        paths = []
        for _ in range(2):
            snaps = simulate_field_driven(
                hist, init, params.sigma, 1e-3, 10, NoiseStream(3), 0, out_steps={0, 5, 10}
            )
            paths.append(np.stack([s.positions for s in snaps])[None])
        rep = trajectory_error(paths[0], paths[1], [0.0, 0.005, 0.01])
        assert np.all(rep.estimates == 0.0)


class TestMarginalReport:
    def test_structure_k2(self):
        field = small_field()
        ens = np.stack([sample_field(field, 8, seed=k, stream=k) for k in range(30)])
        rep = marginal_metrics(ens, field, k=2, n_directions=8, seed=1, baseline_draws=2)
        assert set(rep.sliced) == {"pooled", "particle_1", "particle_2"}
        assert rep.independence is not None
        assert rep.baseline > 0

    def test_k_validation(self):
        field = small_field()
        with pytest.raises(ConfigError):
            marginal_metrics(np.zeros((3, 4, 2)), field, k=3)
