import math

import numpy as np
import pytest

from trunc_estimate import (
    Ball,
    DomainError,
    ProductDistribution,
    RejectionBudgetError,
    TruncatedDistribution,
    amplified_estimate,
    empirical_init,
    exact_gradient_hessian,
    exact_population_nll,
    explicit_set,
    full_cube,
    l1_leq,
    project_to_ball,
    random_density,
    run_sgd,
    stochastic_gradient,
    variance_bound_check,
)
from trunc_estimate.sgd import SgdConfig, select_consistent


def fixture_td(rng, d=6, k=4):
    dist = ProductDistribution(rng.uniform(0.3, 0.7, d))
    return TruncatedDistribution(dist, l1_leq(d, k))


class TestProjection:
    def test_center_fixed(self):
        ball = Ball(center=np.zeros(3), radius=2.0)
        assert np.array_equal(project_to_ball(np.zeros(3), ball), np.zeros(3))

    def test_interior_unchanged(self):
        ball = Ball(center=np.ones(2), radius=1.0)
        z = np.array([1.2, 0.9])
        assert np.array_equal(project_to_ball(z, ball), z)

    def test_radial_scaling(self):
        ball = Ball(center=np.zeros(2), radius=1.0)
        out = project_to_ball(np.array([3.0, 4.0]), ball)
        assert np.allclose(out, [0.6, 0.8], atol=1e-15)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


class TestEmpiricalInit:
    def test_no_truncation_recovers_truth(self, rng):
        dist = ProductDistribution(np.array([0.3, 0.6, 0.8]))
        td = TruncatedDistribution(dist, full_cube(3))
        p_hat, z_hat = empirical_init(td, 100_000, rng)
        assert np.abs(p_hat - dist.p).max() < 0.01
        assert np.allclose(z_hat, ProductDistribution(p_hat).z)

    def test_truncated_mean_band(self, rng):
        dist = ProductDistribution(np.full(8, 0.5))
        td = TruncatedDistribution(dist, l1_leq(8, 4))
        exact = td.exact_mean()
        n = 50_000
        p_hat, _ = empirical_init(td, n, rng)
        assert np.all(np.abs(p_hat - exact) < 3.0 * math.sqrt(0.25 / n))

    def test_clamping_keeps_interior(self, rng):
        # all samples identical: raw means hit {0, 1}, clamping saves logits
        td = TruncatedDistribution(
            ProductDistribution(np.full(3, 0.5)),
            explicit_set(np.array([[1, 0, 1]])))
        p_hat, z_hat = empirical_init(td, 4, rng)
        assert np.all((p_hat > 0) & (p_hat < 1))
        assert np.all(np.isfinite(z_hat))
        assert np.allclose(p_hat, [1 - 1 / 8, 1 / 8, 1 - 1 / 8])


class TestStochasticGradient:
    def test_structure_and_bound(self, rng):
        td = fixture_td(rng)
        x = td.sample_batch(1, rng)[0]
        for _ in range(200):
            v, attempts = stochastic_gradient(x, td.base.z, td.set, rng, 10_000)
            assert attempts >= 1
            assert set(np.unique(v)).issubset({-1, 0, 1})
            assert v @ v <= td.d

    def test_zero_when_draws_coincide(self, rng):
        # point-mass set: x and y are always the same point
        td = TruncatedDistribution(
            ProductDistribution(np.full(4, 0.5)),
            explicit_set(np.array([[0, 1, 0, 1]])))
        x = td.sample_batch(1, rng)[0]
        v, _ = stochastic_gradient(x, td.base.z, td.set, rng, 10_000)
        assert np.array_equal(v, np.zeros(4))

    def test_mean_vanishes_at_truth_full_cube(self, rng):
        # E[v] = 0 at z = z* with no truncation
        dist = ProductDistribution(np.array([0.35, 0.5, 0.7]))
        td = TruncatedDistribution(dist, full_cube(3))
        n = 20_000
        xs = td.sample_batch(n, rng).astype(np.int64)
        total = np.zeros(3)
        for i in range(n):
            v, _ = stochastic_gradient(xs[i], dist.z, td.set, rng, 100)
            total += v
        mean = total / n
        se = np.sqrt(2.0 * dist.p * (1 - dist.p) / n)
        assert np.all(np.abs(mean) < 3.0 * se + 1e-9)

    def test_matches_exact_gradient_off_truth(self, rng):
        # empirical mean of v against the enumeration gradient, 3 sigma
        td = TruncatedDistribution(ProductDistribution(np.full(6, 0.5)),
                                   l1_leq(6, 3))
        z = td.base.z + rng.uniform(-0.5, 0.5, 6)
        n = 200_000
        xs = td.sample_batch(n, rng).astype(np.int64)
        td_z = TruncatedDistribution(ProductDistribution.from_natural(z), td.set)
        ys = td_z.sample_batch(n, rng).astype(np.int64)
        vs = ys - xs
        grad, _ = exact_gradient_hessian(z, td)
        se = vs.std(axis=0) / math.sqrt(n)
        assert np.all(np.abs(vs.mean(axis=0) - grad) < 3.0 * se)

    def test_budget_error_on_mass_collapse(self, rng):
        td = TruncatedDistribution(
            ProductDistribution(np.full(8, 0.5)),
            explicit_set(np.ones((1, 8))))
        x = np.ones(8, dtype=np.uint8)
        z_far = np.full(8, -6.0)  # current guess puts ~no mass on {1}^8
        with pytest.raises(RejectionBudgetError):
            stochastic_gradient(x, z_far, td.set, rng, 200)


class TestRunSgd:
    def test_single_step_boundary(self, rng):
        td = fixture_td(rng)
        cfg = SgdConfig(steps=1, seed=0, init_samples=500)
        z_bar, trace = run_sgd(td, cfg)
        assert trace.grad_sq.shape == (1,)
        assert trace.ball.contains(z_bar)

    def test_zero_steps_rejected(self):
        with pytest.raises(DomainError):
            SgdConfig(steps=0)

    def test_deterministic_given_seed(self, rng):
        td1 = fixture_td(np.random.default_rng(5))
        td2 = fixture_td(np.random.default_rng(5))
        cfg = SgdConfig(steps=500, seed=11, init_samples=500)
        z1, _ = run_sgd(td1, cfg)
        z2, _ = run_sgd(td2, cfg)
        assert np.array_equal(z1, z2)

    def test_iterates_stay_inside_ball(self, rng):
        td = fixture_td(rng)
        cfg = SgdConfig(steps=2000, seed=1, init_samples=1000)
        z_bar, trace = run_sgd(td, cfg)
        assert trace.all_inside_ball()
        assert trace.ball.contains(z_bar)

    def test_ball_contains_truth_on_fixtures(self):
        for seed, d, k in [(2, 6, 4), (3, 8, 5)]:
            rng = np.random.default_rng(seed)
            td = fixture_td(rng, d, k)
            cfg = SgdConfig(steps=10, seed=seed, init_samples=20_000)
            _, trace = run_sgd(td, cfg)
            assert np.linalg.norm(td.base.z - trace.z_init) <= trace.ball.radius

    def test_mass_preserved_inside_ball(self, rng):
        # Lemma-style runtime check: 50 random z in the ball keep mass >= 1e-3
        td = fixture_td(rng)
        cfg = SgdConfig(steps=10, seed=4, init_samples=5000)
        _, trace = run_sgd(td, cfg)
        for _ in range(50):
            delta = rng.standard_normal(td.d)
            delta *= rng.random() * trace.ball.radius / np.linalg.norm(delta)
            z = trace.ball.center + delta
            dist_z = ProductDistribution.from_natural(z)
            mass = TruncatedDistribution(dist_z, td.set).exact_mass()
            assert mass >= 1e-3

    def test_descent_of_averaged_iterates(self, rng):
        # windowed non-increase of the exact population objective
        td = fixture_td(rng)
        cfg = SgdConfig(steps=4000, seed=9, init_samples=2000)
        _, trace = run_sgd(td, cfg)
        nll = np.array([exact_population_nll(z, td)
                        for z in trace.checkpoint_averages])
        burn = len(nll) // 5
        windows = np.array_split(nll[burn:], 4)
        means = [w.mean() for w in windows]
        assert all(means[i + 1] <= means[i] + 1e-3 for i in range(3))

    def test_full_cube_matches_moment_matching(self):
        # no truncation: the estimator agrees with logistic moment matching
        rng = np.random.default_rng(31)
        dist = ProductDistribution(rng.uniform(0.3, 0.7, 6))
        td = TruncatedDistribution(dist, full_cube(6))
        cfg = SgdConfig(steps=100_000, seed=13, init_samples=50_000)
        z_bar, _ = run_sgd(td, cfg)
        p_bar = ProductDistribution.from_natural(z_bar).p
        assert np.abs(p_bar - dist.p).max() <= 0.02


class TestAmplification:
    def test_single_repetition_equals_run_sgd(self, rng):
        td = fixture_td(rng)
        cfg = SgdConfig(steps=300, seed=21, init_samples=500, repetitions=1)
        direct, _ = run_sgd(td, cfg)
        result = amplified_estimate(td, cfg, delta=0.6)  # ceil(log2) = 1
        assert np.array_equal(result.z, direct)

    def test_corrupted_run_never_selected(self):
        good = np.zeros((4, 5))
        good += 0.01 * np.arange(4)[:, None]
        corrupted = np.full((1, 5), 50.0)
        estimates = np.vstack([good, corrupted])
        idx, medians = select_consistent(estimates)
        assert idx != 4
        assert medians[4] > medians[idx]

    def test_repetition_count_from_delta(self, rng):
        td = fixture_td(rng)
        cfg = SgdConfig(steps=200, seed=2, init_samples=300, repetitions=1)
        result = amplified_estimate(td, cfg, delta=0.01)  # ceil(log2(100)) = 7
        assert result.estimates.shape[0] == 7

    def test_close_to_truth_with_amplification(self):
        rng = np.random.default_rng(6)
        dist = ProductDistribution(rng.uniform(0.35, 0.65, 6))
        td = TruncatedDistribution(dist, l1_leq(6, 4))
        cfg = SgdConfig(steps=10_000, seed=8, repetitions=3, init_samples=10_000)
        result = amplified_estimate(td, cfg, delta=0.2)
        assert np.linalg.norm(result.z - dist.z) < 0.3

    def test_failure_rate_at_small_delta(self):
        # delta = 0.01 drives N = 7 repetitions; the selected estimate
        # misses the 0.35 ball in at most 1 of 20 seeded meta-repetitions
        rng = np.random.default_rng(14)
        dist = ProductDistribution(rng.uniform(0.35, 0.65, 6))
        failures = 0
        for child in np.random.SeedSequence(88).spawn(20):
            td = TruncatedDistribution(dist, l1_leq(6, 4))
            cfg = SgdConfig(steps=5000, seed=int(child.generate_state(1)[0]),
                            init_samples=5000)
            result = amplified_estimate(td, cfg, delta=0.01)
            assert result.estimates.shape[0] == 7
            failures += np.linalg.norm(result.z - dist.z) > 0.35
        assert failures <= 1


class TestExactOracles:
    def test_nll_equals_entropy_without_truncation(self, rng):
        p = rng.uniform(0.2, 0.8, 5)
        dist = ProductDistribution(p)
        td = TruncatedDistribution(dist, full_cube(5))
        entropy = -np.sum(p * np.log(p) + (1 - p) * np.log1p(-p))
        assert exact_population_nll(dist.z, td) == pytest.approx(entropy, rel=1e-12)

    def test_truth_minimizes_population_nll(self, rng):
        dist = ProductDistribution(rng.uniform(0.3, 0.7, 6))
        td = TruncatedDistribution(dist, l1_leq(6, 4))
        base = exact_population_nll(dist.z, td)
        for _ in range(100):
            delta = rng.standard_normal(6)
            delta *= 0.5 / np.linalg.norm(delta)
            assert exact_population_nll(dist.z + delta, td) >= base - 1e-12

    def test_convexity_along_segments(self, rng):
        td = fixture_td(rng)
        for _ in range(20):
            a = td.base.z + rng.uniform(-1, 1, td.d)
            b = td.base.z + rng.uniform(-1, 1, td.d)
            mid = exact_population_nll((a + b) / 2, td)
            avg = 0.5 * (exact_population_nll(a, td)
                         + exact_population_nll(b, td))
            assert mid <= avg + 1e-12

    def test_gradient_vanishes_at_truth(self, rng):
        td = fixture_td(rng)
        grad, _ = exact_gradient_hessian(td.base.z, td)
        assert np.abs(grad).max() < 1e-12

    def test_untruncated_hessian_is_bernoulli_variance(self, rng):
        p = rng.uniform(0.2, 0.8, 4)
        dist = ProductDistribution(p)
        td = TruncatedDistribution(dist, full_cube(4))
        _, hessian = exact_gradient_hessian(dist.z, td)
        assert np.allclose(hessian, np.diag(p * (1 - p)), atol=1e-12)

    def test_finite_difference_agreement(self, rng):
        td = fixture_td(rng, d=5, k=3)
        z = td.base.z + rng.uniform(-0.3, 0.3, 5)
        grad, hessian = exact_gradient_hessian(z, td)
        h = 1e-4
        for i in range(5):
            e = np.zeros(5)
            e[i] = h
            fd = (exact_population_nll(z + e, td)
                  - exact_population_nll(z - e, td)) / (2 * h)
            assert abs(fd - grad[i]) < 1e-6
        for i in range(5):
            for j in range(5):
                ei, ej = np.zeros(5), np.zeros(5)
                ei[i], ej[j] = h, h
                fd = (exact_population_nll(z + ei + ej, td)
                      - exact_population_nll(z + ei - ej, td)
                      - exact_population_nll(z - ei + ej, td)
                      + exact_population_nll(z - ei - ej, td)) / (4 * h * h)
                assert abs(fd - hessian[i, j]) < 1e-5

    def test_hessian_positive_definite_with_anticoncentration(self, rng):
        dist = ProductDistribution(rng.uniform(0.3, 0.7, 5))
        td = TruncatedDistribution(dist, random_density(5, 0.6, seed=12))
        _, hessian = exact_gradient_hessian(dist.z, td)
        eigs = np.linalg.eigvalsh(hessian)
        assert np.allclose(hessian, hessian.T)
        assert eigs[0] > 0.0


class TestVarianceBound:
    def test_full_cube_half_d(self, rng):
        dist = ProductDistribution(np.full(6, 0.5))
        td = TruncatedDistribution(dist, full_cube(6))
        check = variance_bound_check(dist.z, dist.z, td, 50_000, rng)
        assert check.beta == pytest.approx(1.0, abs=1e-12)
        assert check.empirical == pytest.approx(6 / 2, abs=0.1)
        assert check.passed

    def test_point_mass_zero(self, rng):
        td = TruncatedDistribution(
            ProductDistribution(np.full(4, 0.5)),
            explicit_set(np.array([[0, 0, 1, 1]])))
        check = variance_bound_check(td.base.z, td.base.z, td, 500, rng)
        assert check.empirical == 0.0

    def test_truncated_instance_within_bounds(self, rng):
        td = fixture_td(rng, d=8, k=5)
        z = td.base.z + rng.uniform(-0.3, 0.3, 8)
        check = variance_bound_check(z, td.base.z, td, 20_000, rng)
        assert check.empirical <= min(check.structural_bound, check.bound)
        assert check.passed
