"""Shared fixtures and independent brute-force oracles.

The oracles here deliberately avoid the library's vectorized code paths:
probabilities are accumulated with plain Python loops over itertools
enumerations, so library results are checked against an independent route.
"""

import itertools
import math

import numpy as np
import pytest


def brute_pmf(p, x):
    """Product-form probability of one point, plain Python."""
    out = 1.0
    for pi, xi in zip(p, x):
        out *= pi if xi else (1.0 - pi)
    return out


def brute_all_points(d):
    return list(itertools.product((0, 1), repeat=d))


def brute_tv(p, q):
    """Total variation between two product laws by full enumeration."""
    total = 0.0
    for x in brute_all_points(len(p)):
        total += abs(brute_pmf(p, x) - brute_pmf(q, x))
    return 0.5 * total


def brute_kl(p, q):
    total = 0.0
    for x in brute_all_points(len(p)):
        px, qx = brute_pmf(p, x), brute_pmf(q, x)
        total += px * math.log(px / qx)
    return total


def brute_truncated_pmf(p, points):
    """Normalized masses of an explicit support under a product law."""
    masses = [brute_pmf(p, x) for x in points]
    z = sum(masses)
    return [m / z for m in masses]


def brute_kendall(a, b):
    """Discordant pair count, plain double loop over item pairs."""
    d = len(a)
    count = 0
    for i in range(d):
        for j in range(i + 1, d):
            if (a[i] - a[j]) * (b[i] - b[j]) < 0:
                count += 1
    return count


def brute_mallows_pmf(center, phi, rankings):
    weights = [phi ** brute_kendall(center, r) for r in rankings]
    z = sum(weights)
    return [w / z for w in weights]


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
