"""Identity and closeness testing of product laws from truncated samples.

The contribution here is the composition: the fat-set reconstructor turns a
truncated source into an exact untruncated one, after which any tester for
product distributions applies with its sample complexity multiplied by the
reconstruction overhead.  The optimal square-root-of-d testers are kept
behind the Tester interface; the shipped baseline is correct but suboptimal:
it estimates the marginals by plug-in and compares either exact total
variation of the plug-in laws (small d) or Bonferroni-corrected coordinate
bands (large d).
"""

from __future__ import annotations

import enum
import math
from typing import Protocol

import numpy as np

from . import hypercube
from .errors import DomainError
from .fat_sampler import clamp_means, fat_sample_batch
from .product import ProductDistribution, exact_tv
from .truncation import TruncatedDistribution


class Verdict(enum.Enum):
    SAME = "same"
    FAR = "far"


class Tester(Protocol):
    """Two-hypothesis tester consuming untruncated-law sample draws."""

    def sample_complexity(self, d, eps) -> int: ...

    def identity(self, known: ProductDistribution, draw, eps, rng) -> Verdict: ...

    def closeness(self, d, draw1, draw2, eps, rng) -> Verdict: ...


class BaselineTester:
    """Plug-in marginal tester with a documented, suboptimal complexity.

    On d <= exact_limit the verdict compares the exact TV between plug-in
    product laws against eps/2; on larger d a coordinate is flagged when the
    empirical means differ by more than a Bonferroni-corrected Hoeffding
    band plus eps / (2 sqrt(d)).  Validated regime: product-law sources and
    a TV gap of either 0 or at least eps.
    """

    def __init__(self, constant=4.0, exact_limit=12, band_delta=1.0 / 6.0):
        self.constant = constant
        self.exact_limit = exact_limit
        self.band_delta = band_delta

    def sample_complexity(self, d, eps):
        if not 0.0 < eps:
            raise DomainError("eps must be positive")
        eps = min(eps, 1.0)
        return math.ceil(self.constant * d * math.log(4.0 * d) / eps**2)

    def _plugin(self, samples):
        n = samples.shape[0]
        return ProductDistribution(clamp_means(samples.mean(axis=0), n))

    def identity(self, known: ProductDistribution, draw, eps, rng) -> Verdict:
        n = self.sample_complexity(known.d, eps)
        hat = self._plugin(draw(n))
        if known.d <= self.exact_limit:
            return Verdict.SAME if exact_tv(known, hat) < eps / 2 else Verdict.FAR
        band = self._band(known.d, n) + eps / (2.0 * math.sqrt(known.d))
        gap = np.abs(hat.p - known.p).max()
        return Verdict.SAME if gap <= band else Verdict.FAR

    def closeness(self, d, draw1, draw2, eps, rng) -> Verdict:
        n = self.sample_complexity(d, eps)
        hat1 = self._plugin(draw1(n))
        hat2 = self._plugin(draw2(n))
        if d <= self.exact_limit:
            return Verdict.SAME if exact_tv(hat1, hat2) < eps / 2 else Verdict.FAR
        band = 2.0 * self._band(d, n) + eps / (2.0 * math.sqrt(d))
        gap = np.abs(hat1.p - hat2.p).max()
        return Verdict.SAME if gap <= band else Verdict.FAR

    def _band(self, d, n):
        return math.sqrt(math.log(2.0 * d / self.band_delta) / (2.0 * n))


def baseline_tester(constant=4.0, exact_limit=12) -> BaselineTester:
    return BaselineTester(constant=constant, exact_limit=exact_limit)


def _reconstructed_source(td: TruncatedDistribution, rng, budget, max_attempts):
    def draw(n):
        samples, _ = fat_sample_batch(td, n, rng, budget, max_attempts)
        return samples
    return draw


def identity_test(known: ProductDistribution, td: TruncatedDistribution,
                  eps, tester: Tester, rng, budget=None,
                  max_attempts=10**6) -> Verdict:
    """Distinguish TV(known, D) = 0 from TV(known, D) > eps via truncated samples.

    D is only reachable through its fat truncation; the tester consumes
    reconstructed samples whose law is exactly D.
    """
    if known.d != td.d:
        raise DomainError("tested distributions have different dimensions")
    if not 0.0 < eps:
        raise DomainError("eps must be positive")
    draw = _reconstructed_source(td, rng, budget, max_attempts)
    return tester.identity(known, draw, eps, rng)


def closeness_test(td1: TruncatedDistribution, td2: TruncatedDistribution,
                   eps, tester: Tester, rng, budget=None,
                   max_attempts=10**6) -> Verdict:
    """Two-sample version: both sources are truncated, possibly by different sets."""
    if td1.d != td2.d:
        raise DomainError("tested distributions have different dimensions")
    if not 0.0 < eps:
        raise DomainError("eps must be positive")
    draw1 = _reconstructed_source(td1, rng, budget, max_attempts)
    draw2 = _reconstructed_source(td2, rng, budget, max_attempts)
    return tester.closeness(td1.d, draw1, draw2, eps, rng)
