"""Identifiability of a product law from its truncated pmf.

A truncated product distribution determines the parameters if and only if
its support contains, after anchoring some positive-mass element at the
origin, d linearly independent points with positive mass.  Recovery then
solves the linear system  z . x(j) = log q_j  with q_j the mass ratio of
basis point j to the anchor.

The module also realizes the oracle-less construction: a random product set
whose truncated samples are, before the first duplicate, exactly uniform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hypercube
from .errors import DomainError, IdentifiabilityError, IllConditionedError
from .product import ProductDistribution
from .truncation import TruncatedDistribution, TruncationSet, product_set

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class IdentifiabilitySystem:
    """Anchored linear system recovering the natural parameters.

    ``basis`` holds d anchor-flipped support points (rows, full rank),
    ``rhs`` the log mass ratios relative to the anchor, and ``anchor`` the
    support point mapped to the origin by the coordinate flips.
    """

    basis: np.ndarray
    anchor: np.ndarray
    rhs: np.ndarray
    condition_number: float


def _support_arrays(probs, d):
    if isinstance(probs, dict):
        codes = np.fromiter(probs.keys(), dtype=np.uint64)
        pts = hypercube.unpack_bits(codes, d)
        pr = np.fromiter(probs.values(), dtype=float)
    elif hasattr(probs, "points"):
        pts, pr = probs.points, probs.probs
    else:
        pts, pr = probs
        pts = hypercube.as_batch(pts, d)
        pr = np.asarray(pr, dtype=float)
    if pts.shape[0] != pr.shape[0]:
        raise DomainError("support points and probabilities differ in length")
    if np.any(pr < 0):
        raise DomainError("probabilities must be non-negative")
    keep = pr > 0
    return pts[keep], pr[keep]


def _greedy_independent(points, order, d):
    """Select d rows of full rank, scanned in the given order.

    Rank is tracked by Gaussian elimination with partial pivoting on a
    working copy; a candidate row is kept when its residual after
    elimination against the kept rows is non-negligible.
    """
    basis_rows = []
    reduced = np.zeros((0, d))
    for idx in order:
        v = points[idx].astype(float)
        r = v.copy()
        for row in reduced:
            pivot = np.argmax(np.abs(row))
            r = r - row * (r[pivot] / row[pivot])
        if np.max(np.abs(r)) > 1e-9:
            basis_rows.append(idx)
            reduced = np.vstack([reduced, r])
            if len(basis_rows) == d:
                return basis_rows
    return None


def build_system(td, probs) -> IdentifiabilitySystem:
    """Build the anchored recovery system from a truncated pmf.

    ``td`` supplies the set (a TruncatedDistribution or a TruncationSet);
    ``probs`` is the truncated pmf as a TruncatedPmf, a {packed code: prob}
    dict, or a (points, probs) pair.  The anchor is the zero vector when it
    carries positive mass, otherwise the heaviest support point; basis points
    are chosen greedily in order of decreasing truncated mass.
    """
    ts = td.set if isinstance(td, TruncatedDistribution) else td
    if not isinstance(ts, TruncationSet):
        raise DomainError("expected a TruncatedDistribution or TruncationSet")
    d = ts.d
    points, pr = _support_arrays(probs, d)
    if points.shape[0] == 0:
        raise IdentifiabilityError("the truncated pmf has empty support")
    if not np.all(ts._oracle(points)):
        raise DomainError("the pmf support is not contained in the set")

    codes = hypercube.pack_bits(points)
    zero_idx = np.flatnonzero(codes == 0)
    anchor_idx = int(zero_idx[0]) if zero_idx.size else int(np.argmax(pr))
    anchor = points[anchor_idx]
    anchor_mass = pr[anchor_idx]
    if anchor_mass <= 0.0:
        raise IdentifiabilityError("no support point with positive mass to anchor")

    flipped = points ^ anchor[None, :]
    candidates = np.flatnonzero(np.arange(points.shape[0]) != anchor_idx)
    order = candidates[np.argsort(-pr[candidates], kind="stable")]
    chosen = _greedy_independent(flipped, order, d)
    if chosen is None:
        raise IdentifiabilityError(
            "fewer than d linearly independent support points: "
            "the truncation is not identifiable"
        )
    basis = flipped[chosen].astype(float)
    rhs = np.log(pr[chosen] / anchor_mass)
    return IdentifiabilitySystem(
        basis=basis,
        anchor=anchor,
        rhs=rhs,
        condition_number=float(np.linalg.cond(basis)),
    )


def solve_system(sys: IdentifiabilitySystem):
    """Solve for the natural parameters in the original coordinates.

    The system is solved in the anchor-flipped coordinates; flipping
    coordinate i negates z_i, which is undone before returning.  Raises
    IllConditionedError above the double-precision condition ceiling, the
    regime where a thin-slab support makes the recovery numerically
    meaningless.
    """
    if not np.isfinite(sys.condition_number) or sys.condition_number > CONDITION_LIMIT:
        raise IllConditionedError(
            f"condition number {sys.condition_number:.3e} exceeds "
            f"{CONDITION_LIMIT:.0e}; the support is concentrated near a slab",
            condition_number=sys.condition_number,
        )
    z_flipped = np.linalg.solve(sys.basis, sys.rhs)
    residual = np.linalg.norm(sys.basis @ z_flipped - sys.rhs)
    if residual > 1e-9 * max(np.linalg.norm(sys.rhs), 1.0):
        raise IllConditionedError(
            f"back-substituted residual {residual:.3e} too large",
            condition_number=sys.condition_number,
        )
    sign = np.where(sys.anchor.astype(bool), -1.0, 1.0)
    return sign * z_flipped


def recover_from_pmf(td, probs):
    """Convenience composition: build and solve, returning ProductDistribution."""
    z = solve_system(build_system(td, probs))
    return ProductDistribution.from_natural(z)


# ---------------------------------------------------------------------------
# Oracle-less uniform mimic construction
# ---------------------------------------------------------------------------

def uniform_mimic_set(dist: ProductDistribution, rng) -> TruncationSet:
    """Sample the random product set whose truncation mimics the uniform law.

    Coordinate i keeps both values with probability min(p_i, 1-p_i) /
    max(p_i, 1-p_i) and otherwise keeps only the less likely value.  The
    realized factors are stored on the returned set (membership is O(d)).
    """
    factors = []
    u = rng.random(dist.d)
    for i, p in enumerate(dist.p):
        ratio = min(p, 1.0 - p) / max(p, 1.0 - p)
        if u[i] < ratio:
            factors.append((0, 1))
        elif p >= 0.5:
            factors.append((0,))
        else:
            factors.append((1,))
    ts = product_set(factors)
    ts.name = "uniform_mimic"
    return ts


def mimic_stream(dist: ProductDistribution, n, rng, max_attempts=10**8):
    """n samples of the deferred-decision stream, which is exactly uniform.

    Draws x from the product law and lets each coordinate survive with
    probability min(Be(p_i; 1-x_i)/Be(p_i; x_i), 1); a sample is emitted when
    every coordinate survives.  Per coordinate, P[x_i = b and survive] =
    min(p_i, 1-p_i) regardless of b, so accepted samples are uniform on the
    cube.  This is the pre-duplicate regime of the construction; duplicate
    consistency (the actual random set) is handled by uniform_mimic_set.
    """
    if n < 1:
        raise DomainError("need at least one sample")
    p = dist.p
    survive_1 = np.minimum((1.0 - p) / p, 1.0)   # survival prob when x_i = 1
    survive_0 = np.minimum(p / (1.0 - p), 1.0)   # survival prob when x_i = 0
    out = []
    have = 0
    attempts = 0
    chunk = max(1024, min(4 * n, 1 << 17))
    while have < n:
        if attempts >= max_attempts:
            raise DomainError("mimic stream acceptance rate too low")
        batch = dist.sample(chunk, rng)
        attempts += chunk
        s_prob = np.where(batch == 1, survive_1[None, :], survive_0[None, :])
        accept = (rng.random(batch.shape) < s_prob).all(axis=1)
        kept = batch[accept]
        if kept.shape[0]:
            out.append(kept)
            have += kept.shape[0]
    return np.concatenate(out, axis=0)[:n]


def expected_log2_set_size(dist: ProductDistribution) -> float:
    """E[log2 |S|] of the mimic set: sum_i min(p,1-p)/max(p,1-p)."""
    p = dist.p
    return float(np.sum(np.minimum(p, 1 - p) / np.maximum(p, 1 - p)))
