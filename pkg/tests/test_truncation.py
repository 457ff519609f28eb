import math

import numpy as np
import pytest

from trunc_estimate import (
    CapabilityError,
    ConfigError,
    DomainError,
    ProductDistribution,
    RejectionBudgetError,
    TruncatedDistribution,
    estimate_anticoncentration,
    estimate_fatness,
    estimate_mass,
    exact_fatness,
    explicit_set,
    full_cube,
    l1_leq,
    normalize,
    parse_descriptor,
    product_set,
    random_density,
    slab_complement,
)
from trunc_estimate.hypercube import enumerate_cube, pack_bits
from trunc_estimate.product import empirical_tv

from conftest import brute_pmf, brute_truncated_pmf

FOOTNOTE_POINTS = np.array([[0, 0, 0], [1, 1, 0], [0, 1, 1], [1, 0, 1]])


def footnote_td(p=(0.7, 0.6, 0.5)):
    return TruncatedDistribution(ProductDistribution(np.array(p)),
                                 explicit_set(FOOTNOTE_POINTS))


class TestBuiltinSets:
    def test_l1_full_cube(self):
        ts = l1_leq(4, 4)
        cube = enumerate_cube(4)
        assert ts.contains(cube).all()

    def test_explicit_membership(self):
        ts = explicit_set(FOOTNOTE_POINTS)
        assert ts.contains(np.array([1, 1, 0]))
        assert not ts.contains(np.array([1, 0, 0]))

    def test_product_all_zero(self):
        ts = product_set([(0,), (0,), (0,)])
        elems = ts.elements()
        assert elems.shape == (1, 3)
        assert not elems.any()

    def test_empty_sets_rejected(self):
        with pytest.raises(DomainError):
            l1_leq(4, -1)
        with pytest.raises(DomainError):
            explicit_set(np.empty((0, 3)))
        with pytest.raises(DomainError):
            product_set([(0,), ()])

    def test_slab_rescaling_preserves_set(self):
        w = np.array([1.0, -2.0, 0.5, 1.5])
        a = slab_complement(w, 0.4, 0.3)
        b = slab_complement(3.0 * w, 1.2, 0.9)
        cube = enumerate_cube(4)
        assert np.array_equal(a.contains(cube), b.contains(cube))

    def test_slab_boundary_counts_as_outside(self):
        # one-coordinate slab (0.5 - 0.5, 0.5 + 0.5) = (0, 1): both cube
        # points sit on the boundary, hence outside the open interval.
        ts = slab_complement(np.array([1.0]), 0.5, 0.5)
        assert ts.contains(np.array([0]))
        assert ts.contains(np.array([1]))

    def test_random_density_deterministic_and_calibrated(self):
        a = random_density(10, 0.5, seed=41)
        b = random_density(10, 0.5, seed=41)
        cube = enumerate_cube(10)
        mask_a, mask_b = a.contains(cube), b.contains(cube)
        assert np.array_equal(mask_a, mask_b)
        assert abs(mask_a.mean() - 0.5) < 3.0 * math.sqrt(0.25 / 1024)

    def test_query_counter_monotone(self):
        ts = l1_leq(3, 2)
        assert ts.query_counter == 0
        ts.contains(np.zeros(3, dtype=np.uint8))
        ts.contains(enumerate_cube(3))
        assert ts.query_counter == 1 + 8


class TestDescriptorLanguage:
    def test_l1(self):
        ts = parse_descriptor("l1_leq:2", 5)
        assert ts.contains(np.array([1, 1, 0, 0, 0]))
        assert not ts.contains(np.array([1, 1, 1, 0, 0]))

    def test_explicit_file(self, tmp_path):
        path = tmp_path / "set.txt"
        path.write_text("# footnote set\n000\n110\n011\n101\n")
        ts = parse_descriptor(f"explicit:@{path}", 3)
        assert ts.contains(np.array([0, 1, 1]))
        assert not ts.contains(np.array([1, 1, 1]))

    def test_product_file(self, tmp_path):
        path = tmp_path / "factors.txt"
        path.write_text("01\n0\n01\n")
        ts = parse_descriptor(f"product:@{path}", 3)
        assert ts.contains(np.array([1, 0, 1]))
        assert not ts.contains(np.array([0, 1, 0]))

    def test_slab(self):
        ts = parse_descriptor("slab_complement:w=1,1,1,c=1.5,lambda=0.6", 3)
        assert ts.contains(np.zeros(3, dtype=np.uint8))       # proj 0
        assert not ts.contains(np.array([0, 1, 1]))           # proj 2 inside

    def test_random_density(self):
        ts = parse_descriptor("random_density:rho=0.7,seed=3", 8)
        assert ts.elements().shape[0] > 0

    @pytest.mark.parametrize("bad", [
        "nonsense", "l1_leq", "l1_leq:x", "explicit:nofile",
        "slab_complement:w=1,1", "random_density:rho=0.5,seed=1,extra=2",
    ])
    def test_malformed_descriptors(self, bad):
        with pytest.raises(ConfigError):
            parse_descriptor(bad, 2)


class TestNormalize:
    def test_zero_anchor_is_identity(self):
        ts = l1_leq(3, 2)
        dist = ProductDistribution(np.array([0.2, 0.5, 0.7]))
        ts2, dist2 = normalize(ts, dist, np.zeros(3, dtype=np.uint8))
        cube = enumerate_cube(3)
        assert np.array_equal(ts.contains(cube), ts2.contains(cube))
        assert np.allclose(dist2.p, dist.p)

    def test_flip_example(self):
        ts = explicit_set(np.array([[1, 0], [0, 0], [1, 1]]))
        dist = ProductDistribution(np.array([0.7, 0.4]))
        ts2, dist2 = normalize(ts, dist, np.array([1, 0]))
        assert np.allclose(dist2.p, [0.3, 0.4])
        # membership of the flipped set: m'(x) = m(x xor (1,0))
        cube = enumerate_cube(2)
        assert np.array_equal(ts2.contains(cube), ts.contains(cube ^ [1, 0]))
        assert ts2.contains(np.array([0, 0]))  # anchor now at the origin

    def test_pmf_preserved_under_bijection(self, rng):
        dist = ProductDistribution(rng.uniform(0.2, 0.8, 4))
        ts = random_density(4, 0.6, seed=7)
        anchor = ts.elements()[2]
        td = TruncatedDistribution(dist, ts)
        ts2, dist2 = normalize(ts, dist, anchor)
        td2 = TruncatedDistribution(dist2, ts2)
        pmf, pmf2 = td.exact_pmf(), td2.exact_pmf()
        for pt, pr in zip(pmf.points, pmf.probs):
            assert td2.exact_pmf().prob_of(pt ^ anchor) == pytest.approx(pr, abs=1e-12)
        assert pmf2.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_anchor_outside_rejected(self):
        ts = explicit_set(np.array([[0, 0]]))
        dist = ProductDistribution(np.array([0.5, 0.5]))
        with pytest.raises(DomainError):
            normalize(ts, dist, np.array([1, 1]))


class TestRejectionSampling:
    def test_full_cube_first_draw(self, rng):
        td = TruncatedDistribution(ProductDistribution(np.full(4, 0.5)),
                                   full_cube(4))
        _, attempts = td.sample(rng)
        assert attempts == 1

    def test_attempt_count_equals_queries(self, rng):
        td = footnote_td()
        before = td.set.query_counter
        _, attempts = td.sample(rng)
        assert td.set.query_counter - before == attempts

    def test_singleton_geometric_attempts(self):
        # S = {0000} under p = 0.5^4: acceptance probability 1/16, so the
        # mean attempt count over many trials concentrates near 16
        # (sd of the mean = sqrt(240/n)).
        td = TruncatedDistribution(ProductDistribution(np.full(4, 0.5)),
                                   explicit_set(np.zeros((1, 4))))
        rng = np.random.default_rng(11)
        attempts = [td.sample(rng)[1] for _ in range(10_000)]
        assert abs(np.mean(attempts) - 16.0) < 0.7

    def test_budget_error_carries_attempts(self):
        td = TruncatedDistribution(ProductDistribution(np.full(6, 0.5)),
                                   explicit_set(np.zeros((1, 6))))
        with pytest.raises(RejectionBudgetError) as err:
            td.sample(np.random.default_rng(0), max_attempts=3)
        assert err.value.attempts == 3

    def test_batch_matches_exact_law(self, rng):
        # exactness of rejection sampling: empirical TV to D_S within the
        # multinomial noise floor (~0.006 for this 42-cell support)
        td = TruncatedDistribution(ProductDistribution(np.full(6, 0.5)),
                                   l1_leq(6, 3))
        samples = td.sample_batch(200_000, rng)
        assert td.set.contains(samples).all()
        pmf = td.exact_pmf()
        counts = np.bincount(pack_bits(samples).astype(np.int64), minlength=64)
        freq = counts / samples.shape[0]
        exact = np.zeros(64)
        exact[pmf.codes.astype(np.int64)] = pmf.probs
        assert 0.5 * np.abs(freq - exact).sum() < 0.01

    def test_draw_counter(self, rng):
        td = footnote_td()
        td.sample_batch(50, rng)
        td.sample(rng)
        assert td.draw_counter == 51


class TestExactTruncatedPmf:
    def test_full_cube_equals_base(self, rng):
        dist = ProductDistribution(rng.uniform(0.2, 0.8, 5))
        td = TruncatedDistribution(dist, full_cube(5))
        pmf = td.exact_pmf()
        assert np.allclose(pmf.probs, dist.enumerate_pmf(), atol=1e-14)

    def test_footnote_masses(self):
        # unnormalized masses 0.06, 0.21, 0.09, 0.14 sum to 0.50
        td = footnote_td()
        assert td.exact_mass() == pytest.approx(0.50, abs=1e-12)
        pmf = td.exact_pmf()
        expected = {
            (0, 0, 0): 0.06 / 0.50, (1, 1, 0): 0.21 / 0.50,
            (0, 1, 1): 0.09 / 0.50, (1, 0, 1): 0.14 / 0.50,
        }
        for pt, pr in expected.items():
            assert pmf.prob_of(np.array(pt)) == pytest.approx(pr, abs=1e-12)
        oracle = brute_truncated_pmf(td.base.p, FOOTNOTE_POINTS.tolist())
        assert np.allclose(
            [pmf.prob_of(x) for x in FOOTNOTE_POINTS], oracle, atol=1e-12)

    def test_uniform_base_gives_uniform_truncation(self):
        td = TruncatedDistribution(ProductDistribution(np.full(4, 0.5)),
                                   l1_leq(4, 1))
        pmf = td.exact_pmf()
        assert pmf.points.shape[0] == 5
        assert np.allclose(pmf.probs, 0.2, atol=1e-12)

    def test_sums_to_one_and_zero_off_support(self, rng):
        td = TruncatedDistribution(ProductDistribution(rng.uniform(0.1, 0.9, 6)),
                                   random_density(6, 0.4, seed=5))
        pmf = td.exact_pmf()
        assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-10)
        outside = ~td.set.contains(enumerate_cube(6))
        for pt in enumerate_cube(6)[outside][:5]:
            assert pmf.prob_of(pt) == 0.0

    def test_extreme_logits_stable(self):
        # log-sum-exp keeps the normalization finite for extreme parameters
        td = TruncatedDistribution(
            ProductDistribution(np.array([1e-12, 1 - 1e-12, 0.5] * 4)),
            l1_leq(12, 9))
        pmf = td.exact_pmf()
        assert np.isfinite(pmf.probs).all()
        assert pmf.probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_capability_ceiling(self):
        td = TruncatedDistribution(ProductDistribution(np.full(25, 0.5)),
                                   l1_leq(25, 10))
        with pytest.raises(CapabilityError):
            td.exact_pmf()


class TestEstimateMass:
    def test_full_cube_exactly_one(self, rng):
        est = estimate_mass(ProductDistribution(np.full(3, 0.5)), full_cube(3),
                            1000, rng)
        assert est.value == 1.0 and est.stderr == 0.0

    def test_binomial_tail_value(self, rng):
        # sum_{j<=4} C(8,j)/256 = 163/256
        dist = ProductDistribution(np.full(8, 0.5))
        truth = sum(math.comb(8, j) for j in range(5)) / 256
        assert truth == 163 / 256
        est = estimate_mass(dist, l1_leq(8, 4), 100_000, rng)
        assert abs(est.value - truth) < 3.0 * math.sqrt(truth * (1 - truth) / 100_000)
        td = TruncatedDistribution(dist, l1_leq(8, 4))
        assert td.exact_mass() == pytest.approx(truth, abs=1e-12)

    def test_never_hit_set(self, rng):
        dist = ProductDistribution(np.full(8, 0.1))
        est = estimate_mass(dist, product_set([(1,)] * 8), 1000, rng)
        assert est.value == 0.0


class TestEstimateFatness:
    def test_full_cube_all_ones(self, rng):
        td = TruncatedDistribution(ProductDistribution(np.full(4, 0.3)),
                                   full_cube(4))
        report = estimate_fatness(td, 500, rng)
        assert np.all(report.per_coordinate == 1.0)
        assert report.min_alpha == 1.0

    def test_two_thirds_example(self, rng):
        # S = {00, 01, 10} at p = (1/2, 1/2): flips of 00 and 10 stay in S,
        # the flip of 01 leaves, so exact fatness in coordinate 1 is 2/3.
        td = TruncatedDistribution(
            ProductDistribution(np.array([0.5, 0.5])),
            explicit_set(np.array([[0, 0], [0, 1], [1, 0]])))
        exact = exact_fatness(td)
        assert np.allclose(exact, 2.0 / 3.0, atol=1e-12)
        n = 20_000
        report = estimate_fatness(td, n, rng)
        band = 3.0 * math.sqrt((2 / 3) * (1 / 3) / n)
        assert np.all(np.abs(report.per_coordinate - exact) < band)
        assert report.samples_used == n

    def test_singleton_all_zero(self, rng):
        td = TruncatedDistribution(ProductDistribution(np.full(3, 0.5)),
                                   explicit_set(np.zeros((1, 3))))
        report = estimate_fatness(td, 200, rng)
        assert np.all(report.per_coordinate == 0.0)

    def test_flip_query_accounting(self):
        # same seed twice: the fatness pass issues exactly n*d extra queries
        # on top of the sampling queries.
        n, d = 400, 5
        base = ProductDistribution(np.full(d, 0.4))

        td1 = TruncatedDistribution(base, l1_leq(d, 3))
        td1.sample_batch(n, np.random.default_rng(9))
        sampling_queries = td1.set.query_counter

        td2 = TruncatedDistribution(base, l1_leq(d, 3))
        estimate_fatness(td2, n, np.random.default_rng(9))
        assert td2.set.query_counter == sampling_queries + n * d


class TestAnticoncentration:
    def test_point_mass_is_zero(self, rng):
        td = TruncatedDistribution(ProductDistribution(np.full(4, 0.5)),
                                   explicit_set(np.ones((1, 4))))
        assert estimate_anticoncentration(td, 16, 500, rng) == 0.0

    def test_full_cube_bounded_away_from_zero(self):
        # seed-pinned regression value: measured 0.379 at first run
        td = TruncatedDistribution(ProductDistribution(np.full(8, 0.5)),
                                   full_cube(8))
        lam = estimate_anticoncentration(td, 64, 10_000,
                                         np.random.default_rng(3))
        assert lam >= 0.1

    def test_slab_direction_upper_bound(self, rng):
        # Querying the slab's own direction: for every lam > 0 some interval
        # captures at least the heaviest projected atom, so the reported
        # value cannot exceed 1 minus that atom's truncated mass.
        w = np.ones(6) / math.sqrt(6)
        ts = slab_complement(w, 2.5 / math.sqrt(6), 1.0 / math.sqrt(6))
        dist = ProductDistribution(np.full(6, 0.5))
        td = TruncatedDistribution(dist, ts)
        pmf = td.exact_pmf()
        proj = pmf.points @ w
        heaviest = max(pmf.probs[np.isclose(proj, v)].sum()
                       for v in np.unique(proj.round(12)))
        lam = estimate_anticoncentration(td, w, 20_000, rng)
        assert lam <= 1.0 - heaviest + 0.01
