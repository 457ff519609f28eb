"""Reconstruction of untruncated samples from fat truncations.

The per-coordinate reduction is exact: conditioned on a truncated sample x
whose i-flip also lies in S, the bit x_i is distributed as Be(p_i) whatever
the set looks like.  Each reconstructed coordinate therefore takes the first
qualifying sample of its own, disjoint, stream of truncated draws; samples
are never shared between coordinates, which keeps the output coordinates
independent and the output law exactly the untruncated product distribution.
The price is an expected sum of geometric waits (about sum_i 1/alpha_i
truncated samples per output) instead of the log(d)/alpha of a shared
stream, which trades a logarithmic factor for exactness.

Built on top of the reconstructor: single-coordinate estimation with explicit
Hoeffding constants, learning in total variation distance, and sparse
learning by screen-then-refine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import hypercube
from .errors import DomainError, FatnessDeficitError
from .product import ProductDistribution
from .truncation import DEFAULT_MAX_ATTEMPTS, TruncatedDistribution

UNSET = -1

DEFAULT_BUDGET = 10**6


def default_budget(d, alpha_hat=None):
    """Truncated-sample budget per reconstructed output."""
    if alpha_hat is None or alpha_hat <= 0.0:
        return DEFAULT_BUDGET
    return 50 * math.ceil(math.log(max(d, 2)) / alpha_hat)


def hoeffding_samples(eps, delta):
    """Two-sided Hoeffding count: |mean - p| <= eps w.p. >= 1 - delta."""
    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise DomainError("eps and delta must lie in (0, 1)")
    return math.ceil(math.log(2.0 / delta) / (2.0 * eps**2))


@dataclass
class ReconstructionState:
    """Trace of one reconstruction.

    ``y`` holds the output with -1 for still-unset coordinates; a coordinate
    is written exactly once (``write_order`` records by which consumed sample)
    and never changes afterwards.  ``oracle_queries`` counts flip-membership
    queries made by the reconstruction itself; rejection queries show up on
    the set's query counter.
    """

    y: np.ndarray
    samples_consumed: int
    oracle_queries: int
    write_order: np.ndarray

    @property
    def complete(self):
        return bool((self.y != UNSET).all())


@dataclass(frozen=True)
class BatchStats:
    per_output_consumed: np.ndarray
    flip_queries: int

    @property
    def mean_consumed(self):
        return float(self.per_output_consumed.mean())


def fat_sample(td: TruncatedDistribution, rng, budget=None,
               max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Reconstruct one untruncated sample; returns (point, state).

    Raises FatnessDeficitError naming the stuck coordinates when the budget
    of truncated samples is exhausted before every coordinate is written
    (the signature of a zero-fatness coordinate).
    """
    if budget is None:
        budget = DEFAULT_BUDGET
    if budget < 1:
        raise DomainError("budget must be at least 1")
    d = td.d
    y = np.full(d, UNSET, dtype=np.int8)
    write_order = np.full(d, UNSET, dtype=np.int64)
    consumed = 0
    queries = 0
    for i in range(d):
        while True:
            if consumed >= budget:
                stuck = np.flatnonzero(y == UNSET)
                raise FatnessDeficitError(
                    f"coordinates {stuck.tolist()} still unset after "
                    f"{consumed} truncated samples",
                    coordinates=stuck.tolist(),
                )
            x, _ = td.sample(rng, max_attempts)
            consumed += 1
            queries += 1
            if td.set.contains(hypercube.flip(x, i)):
                y[i] = x[i]
                write_order[i] = consumed
                break
    state = ReconstructionState(y=y, samples_consumed=consumed,
                                oracle_queries=queries, write_order=write_order)
    return y.astype(np.uint8), state


def _coordinate_bits(td, i, n, rng, budget_total, max_attempts):
    """n qualifying bits for coordinate i plus the per-hit consumption gaps.

    Chunk sizes track the measured qualification rate so the stream is not
    overdrawn much beyond the n-th hit.
    """
    bits = []
    gaps = []
    consumed = 0
    last_hit = 0
    take = max(64, min(n, 4096))
    while len(bits) < n:
        take = min(take, budget_total - consumed, 1 << 17)
        if take <= 0:
            raise FatnessDeficitError(
                f"coordinate {i} produced {len(bits)}/{n} qualifying samples "
                f"within a budget of {budget_total} truncated samples",
                coordinates=(i,),
            )
        batch = td.sample_batch(take, rng, max_attempts)
        qualifies = td.set.contains(hypercube.flip(batch, i))
        hit_pos = np.flatnonzero(qualifies) + consumed + 1
        consumed += take
        for pos in hit_pos.tolist():
            gaps.append(pos - last_hit)
            last_hit = pos
            if len(gaps) == n:
                break
        bits.extend(batch[qualifies, i].tolist()[: n - len(bits)])
        remaining = n - len(bits)
        if remaining:
            if bits:
                rate = len(bits) / consumed
                take = int(1.25 * remaining / rate) + 32
            else:
                take = take * 2
    return np.array(bits[:n], dtype=np.uint8), np.array(gaps[:n], dtype=np.int64), consumed


def fat_sample_batch(td: TruncatedDistribution, n, rng, budget=None,
                     max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Reconstruct n untruncated samples as an (n, d) matrix.

    Column i is filled from coordinate i's own stream of truncated samples,
    so the batch law matches n independent runs of :func:`fat_sample`.  The
    budget bounds the mean consumption: coordinate i may use at most
    budget * n truncated samples in total.
    """
    if budget is None:
        budget = DEFAULT_BUDGET
    if n < 0:
        raise DomainError("sample count must be non-negative")
    if n == 0:
        return (np.empty((0, td.d), dtype=np.uint8),
                BatchStats(np.empty(0, dtype=np.int64), 0))
    out = np.empty((n, td.d), dtype=np.uint8)
    per_output = np.zeros(n, dtype=np.int64)
    flip_queries = 0
    for i in range(td.d):
        bits, gaps, consumed = _coordinate_bits(
            td, i, n, rng, budget * n, max_attempts)
        out[:, i] = bits
        per_output += gaps
        flip_queries += consumed
    return out, BatchStats(per_output_consumed=per_output,
                           flip_queries=flip_queries)


def fat_sample_coordinate(td: TruncatedDistribution, i, rng, budget=None,
                          max_attempts=DEFAULT_MAX_ATTEMPTS):
    """One Be(p_i) draw for coordinate i from truncated samples."""
    if not 0 <= i < td.d:
        raise DomainError(f"coordinate {i} outside [0, {td.d})")
    if budget is None:
        budget = DEFAULT_BUDGET
    consumed = 0
    while consumed < budget:
        x, _ = td.sample(rng, max_attempts)
        consumed += 1
        if td.set.contains(hypercube.flip(x, i)):
            return int(x[i])
    raise FatnessDeficitError(
        f"coordinate {i} saw no qualifying sample in {consumed} draws",
        coordinates=(i,),
    )


def coordinate_samples(td: TruncatedDistribution, i, n, rng, budget=None,
                       max_attempts=DEFAULT_MAX_ATTEMPTS):
    """n independent Be(p_i) draws for coordinate i (bulk form)."""
    if not 0 <= i < td.d:
        raise DomainError(f"coordinate {i} outside [0, {td.d})")
    if budget is None:
        budget = DEFAULT_BUDGET
    bits, _, _ = _coordinate_bits(td, i, n, rng, budget * n, max_attempts)
    return bits


def estimate_parameter(td: TruncatedDistribution, i, eps, delta, rng,
                       budget=None, max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Estimate p_i to within eps with probability >= 1 - delta.

    Uses n = ceil(ln(2/delta) / (2 eps^2)) coordinate samples, the two-sided
    Hoeffding count.
    """
    n = hoeffding_samples(eps, delta)
    bits = coordinate_samples(td, i, n, rng, budget, max_attempts)
    return float(bits.mean())


def clamp_means(means, n):
    """Clamp empirical means into [1/(2n), 1 - 1/(2n)] ahead of any logit use."""
    lo = 1.0 / (2.0 * n)
    return np.clip(means, lo, 1.0 - lo)


def tv_sample_count(d, eps, delta, constant=4.0):
    return math.ceil(constant * d * math.log(max(d, 2) / delta) / eps**2)


def learn_tv(td: TruncatedDistribution, eps, delta, rng, constant=4.0,
             budget=None, max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Learn the untruncated law within eps in total variation.

    Reconstructs n = ceil(constant * d * ln(d/delta) / eps^2) samples and
    returns the coordinate-wise empirical means, clamped into (0, 1).
    """
    if not 0.0 < eps or not 0.0 < delta < 1.0:
        raise DomainError("eps must be positive and delta in (0, 1)")
    n = tv_sample_count(td.d, min(eps, 1.0), delta, constant)
    samples, _ = fat_sample_batch(td, n, rng, budget, max_attempts)
    return ProductDistribution(clamp_means(samples.mean(axis=0), n))


def learn_sparse(td: TruncatedDistribution, k, c, eps, delta, rng,
                 constant=4.0, budget=None, max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Learn a (k, c)-sparse product law: screen at eps/sqrt(k), then refine.

    All parameters are first estimated to within eps/sqrt(k); coordinates
    within that tolerance of c are snapped to c, and the survivors are
    re-estimated at full TV accuracy.  With k = d the screening is vacuous
    and the procedure reduces to plain TV learning.
    """
    if not 0 <= k <= td.d:
        raise DomainError(f"sparsity k={k} outside [0, {td.d}]")
    if not 0.0 < c < 1.0:
        raise DomainError("the common value c must lie in (0, 1)")
    if k == 0:
        return ProductDistribution(np.full(td.d, c))
    if k == td.d:
        return learn_tv(td, eps, delta, rng, constant, budget, max_attempts)

    tol = eps / math.sqrt(k)
    n_screen = math.ceil(math.log(4 * td.d / delta) / (2 * tol**2))
    screen, _ = fat_sample_batch(td, n_screen, rng, budget, max_attempts)
    coarse = screen.mean(axis=0)
    survivors = np.flatnonzero(np.abs(coarse - c) > tol)

    p_hat = np.full(td.d, c)
    if survivors.size:
        n_refine = math.ceil(
            constant * k * math.log(2 * max(survivors.size, 2) / delta) / eps**2)
        refine, _ = fat_sample_batch(td, n_refine, rng, budget, max_attempts)
        p_hat[survivors] = clamp_means(refine[:, survivors].mean(axis=0), n_refine)
    return ProductDistribution(p_hat)
