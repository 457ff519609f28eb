"""Mallows ranking distributions and their estimation from truncated samples.

Rankings over d items are stored as position vectors: pi[i] is the
(0-based) position of item i, and item i precedes item j when
pi[i] < pi[j].  The Mallows law assigns mass phi^D / Z(phi) where D is the
Kendall tau distance to the central ranking and Z(phi) is the product
(1-phi^i)/(1-phi) over i = 1..d.

Estimation from a truncated Mallows source rests on pair flips: swapping two
items that are neighbors in the central ranking changes the Kendall distance
by exactly one, so conditioned on the flipped ranking also lying inside the
truncation set, the precedence of such a pair follows the untruncated law
with P[i before j] = 1/(1+phi).  Tallying qualifying pairs drives central-
ranking recovery (a tournament that restarts on cycles) and spread
estimation through the margin m = (1-phi)/(1+phi).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    DomainError,
    RejectionBudgetError,
    TruncEstimateError,
)

ENUM_RANKING_LIMIT = 8

DEFAULT_RANKING_BUDGET = 10**6


# ---------------------------------------------------------------------------
# Rankings as position vectors
# ---------------------------------------------------------------------------

def as_ranking(pi, d=None):
    """Validate a permutation given as a position vector."""
    arr = np.asarray(pi, dtype=np.int64)
    if arr.ndim != 1:
        raise DomainError("a ranking must be a 1-D position vector")
    if d is not None and arr.shape[0] != d:
        raise DimensionMismatchError(
            f"ranking has {arr.shape[0]} items, expected {d}")
    n = arr.shape[0]
    if not np.array_equal(np.sort(arr), np.arange(n)):
        raise DomainError(f"not a permutation of 0..{n - 1}: {arr.tolist()}")
    return arr


def identity_ranking(d):
    return np.arange(d, dtype=np.int64)


def ranking_from_order(order):
    """Positions from an item order (first listed item sits at position 0)."""
    order = np.asarray(order, dtype=np.int64)
    pos = np.empty_like(order)
    pos[order] = np.arange(order.shape[0])
    return as_ranking(pos)


def order_from_ranking(pi):
    """Item order (inverse permutation) of a position vector."""
    pi = as_ranking(pi)
    return np.argsort(pi, kind="stable")


def flip_items(pi, i, j):
    """The ranking with items i and j swapped (their positions exchanged)."""
    pi = as_ranking(pi)
    out = pi.copy()
    out[i], out[j] = pi[j], pi[i]
    return out


def kendall_tau(a, b):
    """Number of discordant item pairs between two rankings."""
    a = as_ranking(a)
    b = as_ranking(b, a.shape[0])
    iu, ju = np.triu_indices(a.shape[0], 1)
    return int((((a[iu] - a[ju]) * (b[iu] - b[ju])) < 0).sum())


def _batch_distances(P, center):
    """Kendall distances of an (n, d) position batch to one ranking."""
    d = center.shape[0]
    iu, ju = np.triu_indices(d, 1)
    signs = np.sign(center[iu] - center[ju])
    return ((np.sign(P[:, iu] - P[:, ju]) * signs[None, :]) < 0).sum(axis=1)


def enumerate_rankings(d):
    """All d! rankings as an (d!, d) position matrix (d <= 8)."""
    if d > ENUM_RANKING_LIMIT:
        raise DomainError(f"ranking enumeration capped at d <= {ENUM_RANKING_LIMIT}")
    return np.array(list(itertools.permutations(range(d))), dtype=np.int64)


# ---------------------------------------------------------------------------
# Mallows model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MallowsModel:
    """Mallows law with central ranking (position vector) and spread phi."""

    central: np.ndarray
    phi: float

    def __post_init__(self):
        central = as_ranking(self.central)
        central.setflags(write=False)
        object.__setattr__(self, "central", central)
        if not 0.0 <= self.phi < 1.0:
            raise DomainError("spread phi must lie in [0, 1)")

    @property
    def d(self):
        return self.central.shape[0]

    def log_partition(self):
        i = np.arange(1, self.d + 1)
        if self.phi == 0.0:
            return 0.0
        return float(np.sum(np.log1p(-self.phi**i) - math.log1p(-self.phi)))

    def partition(self):
        return math.exp(self.log_partition())

    def pmf(self, pi):
        pi = as_ranking(pi, self.d)
        dist = kendall_tau(self.central, pi)
        if self.phi == 0.0:
            return 1.0 if dist == 0 else 0.0
        return math.exp(dist * math.log(self.phi) - self.log_partition())

    def pmf_batch(self, P):
        dists = _batch_distances(np.asarray(P, dtype=np.int64), self.central)
        if self.phi == 0.0:
            return (dists == 0).astype(float)
        return np.exp(dists * math.log(self.phi) - self.log_partition())

    def sample(self, rng):
        return self.sample_batch(1, rng)[0]

    def sample_batch(self, n, rng):
        """n draws by repeated insertion, validated against the pmf by tests.

        The item of central rank j is inserted at position t of the partial
        order with probability proportional to phi^(j-t), adding j-t
        discordant pairs; the insertion weights reproduce phi^D / Z exactly.
        """
        if n < 0:
            raise DomainError("sample count must be non-negative")
        d = self.d
        central_order = order_from_ranking(self.central)
        order = np.empty((n, d), dtype=np.int64)
        order[:, 0] = central_order[0]
        for j in range(1, d):
            w = self.phi ** (j - np.arange(j + 1, dtype=float))
            cdf = np.cumsum(w)
            cdf /= cdf[-1]
            t = np.searchsorted(cdf, rng.random(n), side="right")
            cols = np.arange(j + 1)
            src = np.where(cols[None, :] < t[:, None], cols[None, :],
                           cols[None, :] - 1)
            gathered = np.take_along_axis(order[:, :j],
                                          np.clip(src, 0, j - 1), axis=1)
            gathered[np.arange(n), t] = central_order[j]
            order[:, :j + 1] = gathered
        positions = np.empty((n, d), dtype=np.int64)
        np.put_along_axis(positions, order,
                          np.broadcast_to(np.arange(d), (n, d)), axis=1)
        return positions


def exact_mallows_tv(m1: MallowsModel, m2: MallowsModel) -> float:
    if m1.d != m2.d:
        raise DimensionMismatchError("models rank different item counts")
    P = enumerate_rankings(m1.d)
    return float(0.5 * np.abs(m1.pmf_batch(P) - m2.pmf_batch(P)).sum())


# ---------------------------------------------------------------------------
# Truncation sets over rankings
# ---------------------------------------------------------------------------

class RankingSet:
    """Membership oracle over rankings with query accounting."""

    def __init__(self, d, oracle, name="custom"):
        if d < 1:
            raise DomainError("item count must be positive")
        self.d = int(d)
        self._oracle = oracle
        self.name = name
        self.query_counter = 0

    def contains(self, pi):
        arr = np.asarray(pi, dtype=np.int64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.shape[1] != self.d:
            raise DimensionMismatchError(
                f"rankings have {arr.shape[1]} items, expected {self.d}")
        self.query_counter += arr.shape[0]
        mask = np.asarray(self._oracle(arr), dtype=bool)
        return bool(mask[0]) if single else mask

    def elements(self):
        P = enumerate_rankings(self.d)
        mask = np.asarray(self._oracle(P), dtype=bool)
        elems = P[mask]
        if elems.shape[0] == 0:
            raise DomainError(f"ranking set {self.name!r} is empty")
        return elems

    def __repr__(self):
        return f"RankingSet(d={self.d}, name={self.name!r})"


def all_rankings(d):
    return RankingSet(d, lambda P: np.ones(P.shape[0], dtype=bool), name="all")


def kendall_ball(center, radius):
    """{pi : D_tau(pi, center) <= radius}."""
    center = as_ranking(center)
    if radius < 0:
        raise DomainError("Kendall-ball radius must be non-negative")
    return RankingSet(
        center.shape[0],
        lambda P: _batch_distances(P, center) <= radius,
        name=f"kendall_ball:{radius}",
    )


def explicit_rankings(rankings):
    mats = np.asarray([as_ranking(r) for r in rankings], dtype=np.int64)
    if mats.shape[0] == 0:
        raise DomainError("explicit ranking set is empty")
    keys = {tuple(row) for row in mats.tolist()}

    def oracle(P):
        return np.fromiter((tuple(row) in keys for row in P.tolist()),
                           dtype=bool, count=P.shape[0])

    return RankingSet(mats.shape[1], oracle, name="explicit")


def fixed_position(d, item, position):
    """{pi : pi(item) = position}."""
    if not 0 <= item < d or not 0 <= position < d:
        raise DomainError("item and position must lie in [0, d)")
    return RankingSet(d, lambda P: P[:, item] == position,
                      name=f"fixed_position:{item}@{position}")


class TruncatedMallows:
    """Mallows law conditioned on a ranking set; exact rejection sampling."""

    def __init__(self, model: MallowsModel, rset: RankingSet):
        if model.d != rset.d:
            raise DomainError("model and set rank different item counts")
        self.model = model
        self.set = rset
        self.draw_counter = 0

    @property
    def d(self):
        return self.model.d

    def sample_batch(self, n, rng, max_attempts=DEFAULT_RANKING_BUDGET):
        if n == 0:
            return np.empty((0, self.d), dtype=np.int64)
        budget = n * max_attempts
        out = []
        have = 0
        attempts = 0
        chunk = max(128, min(4 * n, 1 << 14))
        while have < n:
            take = min(chunk, budget - attempts)
            if take <= 0:
                raise RejectionBudgetError(
                    f"collected {have}/{n} truncated rankings after "
                    f"{attempts} proposals",
                    attempts=attempts,
                )
            batch = self.model.sample_batch(take, rng)
            attempts += take
            kept = batch[self.set.contains(batch)]
            if kept.shape[0]:
                out.append(kept)
                have += kept.shape[0]
        self.draw_counter += n
        return np.concatenate(out, axis=0)[:n]

    def exact_pmf(self):
        """Support rankings of M_S and their probabilities (enumeration)."""
        elems = self.set.elements()
        weights = self.model.pmf_batch(elems)
        total = weights.sum()
        if total <= 0.0:
            raise DomainError("the truncated Mallows law has zero mass")
        return elems, weights / total


# ---------------------------------------------------------------------------
# Pair tallies (Algorithm: one truncated sample updates all flippable pairs)
# ---------------------------------------------------------------------------

@dataclass
class PairTally:
    """Directed precedence counts q[i, j] = #(i seen before j, qualifying)."""

    d: int
    q: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.q is None:
            self.q = np.zeros((self.d, self.d), dtype=np.int64)

    def total(self, i, j):
        return int(self.q[i, j] + self.q[j, i])

    def p_hat(self, i, j):
        tot = self.total(i, j)
        if tot == 0:
            raise DomainError(f"pair ({i}, {j}) has no qualifying tallies yet")
        return float(self.q[i, j] / tot)

    def reset(self):
        self.q[:] = 0


def _update_tally_batch(tm: TruncatedMallows, tally: PairTally, P):
    """Tally all qualifying pairs of a batch of truncated samples."""
    d = tm.d
    for i in range(d):
        for j in range(i + 1, d):
            flipped = P.copy()
            flipped[:, i] = P[:, j]
            flipped[:, j] = P[:, i]
            qualifies = tm.set.contains(flipped)
            i_first = P[:, i] < P[:, j]
            tally.q[i, j] += int((qualifies & i_first).sum())
            tally.q[j, i] += int((qualifies & ~i_first).sum())
    return tally


def pair_update(tm: TruncatedMallows, tally: PairTally, rng,
                max_attempts=DEFAULT_RANKING_BUDGET) -> PairTally:
    """Consume one truncated sample and update every flippable pair."""
    if tally.d != tm.d:
        raise DimensionMismatchError("tally and model sizes differ")
    P = tm.sample_batch(1, rng, max_attempts)
    return _update_tally_batch(tm, tally, P)


def pair_update_batch(tm: TruncatedMallows, tally: PairTally, n, rng,
                      max_attempts=DEFAULT_RANKING_BUDGET) -> PairTally:
    if tally.d != tm.d:
        raise DimensionMismatchError("tally and model sizes differ")
    P = tm.sample_batch(n, rng, max_attempts)
    return _update_tally_batch(tm, tally, P)


def exact_pair_conditional(tm: TruncatedMallows, i, j) -> float:
    """Enumeration-exact P[i before j | flip(pi, i, j) in S] under M_S.

    This is the limit of the tally ratio; for pairs neighboring in the
    central ranking it equals 1/(1+phi) for every truncation set.
    """
    elems, probs = tm.exact_pmf()
    flipped = elems.copy()
    flipped[:, i] = elems[:, j]
    flipped[:, j] = elems[:, i]
    qualifies = np.asarray(tm.set._oracle(flipped), dtype=bool)
    mass_q = probs[qualifies].sum()
    if mass_q <= 0.0:
        raise DomainError(f"pair ({i}, {j}) is never flippable inside the set")
    i_first = elems[:, i] < elems[:, j]
    return float(probs[qualifies & i_first].sum() / mass_q)


# ---------------------------------------------------------------------------
# Central ranking tournament
# ---------------------------------------------------------------------------

def _hamiltonian_path(adj):
    """Longest-first search for a directed Hamiltonian path (bitmask DP).

    Returns the node order when a path covering all nodes exists, else None.
    """
    d = adj.shape[0]
    full = (1 << d) - 1
    reach = {}
    for v in range(d):
        reach[(1 << v, v)] = -1
    frontier = list(reach.keys())
    while frontier:
        nxt = []
        for mask, last in frontier:
            if mask == full:
                order = [last]
                key = (mask, last)
                while reach[key] != -1:
                    prev = reach[key]
                    order.append(prev)
                    key = (key[0] ^ (1 << key[1]), prev)
                return order[::-1]
            for v in range(d):
                if not (mask >> v) & 1 and adj[last, v]:
                    key = (mask | (1 << v), v)
                    if key not in reach:
                        reach[key] = last
                        nxt.append(key)
        frontier = nxt
    return None


def _has_cycle(adj):
    d = adj.shape[0]
    indeg = adj.sum(axis=0)
    active = np.ones(d, dtype=bool)
    queue = [v for v in range(d) if indeg[v] == 0]
    seen = 0
    while queue:
        v = queue.pop()
        active[v] = False
        seen += 1
        for u in np.flatnonzero(adj[v]):
            indeg[u] -= 1
            if indeg[u] == 0 and active[u]:
                queue.append(u)
    return seen < int(active.shape[0])


@dataclass(frozen=True)
class CentralRecovery:
    ranking: np.ndarray
    restarts: int
    samples_used: int
    edge_threshold: int


def recover_central(tm: TruncatedMallows, gamma, delta, rng,
                    constant=8.0, restart_cap=20,
                    max_samples=DEFAULT_RANKING_BUDGET,
                    chunk=256) -> CentralRecovery:
    """Recover the central ranking by a majority tournament.

    Pairs accumulate tallies from truncated samples; an edge between i and j
    is decided once its tally reaches n = ceil(constant * ln(d/delta) /
    gamma^2) and is directed by majority.  Sampling continues until the
    decided edges contain a directed Hamiltonian path, whose order is the
    estimate.  A directed cycle among decided edges triggers a restart from
    scratch (at most restart_cap times); exceeding max_samples raises a
    budget error, the degenerate regime where margins vanish.
    """
    if not 0.0 < gamma <= 1.0 or not 0.0 < delta < 1.0:
        raise DomainError("gamma must lie in (0, 1] and delta in (0, 1)")
    d = tm.d
    n_edge = math.ceil(constant * math.log(max(d, 2) / delta) / gamma**2)
    tally = PairTally(d)
    restarts = 0
    samples = 0
    while True:
        if samples >= max_samples:
            raise RejectionBudgetError(
                f"tournament unresolved after {samples} truncated samples "
                f"(restarts: {restarts})",
                attempts=samples,
            )
        take = min(chunk, max_samples - samples)
        pair_update_batch(tm, tally, take, rng)
        samples += take
        totals = tally.q + tally.q.T
        decided = totals >= n_edge
        adj = decided & (tally.q > tally.q.T)
        adj |= decided & (tally.q == tally.q.T) & ~np.tri(d, dtype=bool)
        np.fill_diagonal(adj, False)
        if _has_cycle(adj):
            restarts += 1
            if restarts > restart_cap:
                raise TruncEstimateError(
                    f"tournament restarted more than {restart_cap} times")
            tally.reset()
            continue
        if decided.sum() >= 2 * (d - 1):
            order = _hamiltonian_path(adj)
            if order is not None:
                return CentralRecovery(
                    ranking=ranking_from_order(np.array(order)),
                    restarts=restarts,
                    samples_used=samples,
                    edge_threshold=n_edge,
                )


def estimate_spread(tm: TruncatedMallows, center, eps, delta, rng,
                    max_samples=DEFAULT_RANKING_BUDGET, chunk=512) -> float:
    """Estimate phi from the top neighboring pair of the central ranking.

    Tallies the pair occupying positions 0 and 1 of the center until
    n = ceil(ln(2/delta) / (2 eps^2)) qualifying events, then inverts the
    neighbor margin: m = 2 p_hat - 1 and phi_hat = (1 - m)/(1 + m), clamped
    into [0, 1).
    """
    if not 0.0 < eps < 1.0 or not 0.0 < delta < 1.0:
        raise DomainError("eps and delta must lie in (0, 1)")
    center = as_ranking(center, tm.d)
    order = order_from_ranking(center)
    a, b = int(order[0]), int(order[1])
    n_needed = math.ceil(math.log(2.0 / delta) / (2.0 * eps**2))
    count_ab = 0
    count_ba = 0
    samples = 0
    while count_ab + count_ba < n_needed:
        if samples >= max_samples:
            raise RejectionBudgetError(
                f"pair ({a}, {b}) collected {count_ab + count_ba}/{n_needed} "
                f"qualifying tallies in {samples} samples",
                attempts=samples,
            )
        take = min(chunk, max_samples - samples)
        P = tm.sample_batch(take, rng)
        samples += take
        flipped = P.copy()
        flipped[:, a] = P[:, b]
        flipped[:, b] = P[:, a]
        qualifies = tm.set.contains(flipped)
        a_first = P[:, a] < P[:, b]
        count_ab += int((qualifies & a_first).sum())
        count_ba += int((qualifies & ~a_first).sum())
    p_hat = count_ab / (count_ab + count_ba)
    m_hat = 2.0 * p_hat - 1.0
    if m_hat <= 0.0:
        return float(np.nextafter(1.0, 0.0))
    return float(np.clip((1.0 - m_hat) / (1.0 + m_hat),
                         0.0, np.nextafter(1.0, 0.0)))


def learn_mallows_tv(tm: TruncatedMallows, eps, delta, rng, gamma=0.25,
                     max_samples=DEFAULT_RANKING_BUDGET) -> MallowsModel:
    """Learn a Mallows model within O(eps) total variation.

    Composes central-ranking recovery with spread estimation at tolerance
    eps/sqrt(d).  gamma is the assumed class bound on 1 - phi passed to the
    tournament (the source law must satisfy phi <= 1 - gamma).
    """
    if not 0.0 < eps or not 0.0 < delta < 1.0:
        raise DomainError("eps must be positive and delta in (0, 1)")
    recovery = recover_central(tm, gamma, delta / 2.0, rng,
                               max_samples=max_samples)
    tol = min(eps / math.sqrt(tm.d), 0.999)
    phi_hat = estimate_spread(tm, recovery.ranking, tol, delta / 2.0, rng,
                              max_samples=max_samples)
    return MallowsModel(central=recovery.ranking, phi=phi_hat)
