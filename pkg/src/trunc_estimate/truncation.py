"""Truncation sets over the hypercube and truncated product distributions.

A truncation set is a deterministic membership oracle plus bookkeeping: a
monotone counter of oracle queries and, when the set is enumerable, its
explicit element list.  Truncated distributions support exact rejection
sampling and exact (enumeration-based) pmf, plus Monte-Carlo estimates of
mass, per-coordinate fatness and directional anti-concentration.

Set-descriptor mini-language (also accepted by the CLI):

    l1_leq:k
    explicit:@file                one bit string per line, '#' comments
    slab_complement:w=<csv>,c=<real>,lambda=<real>
    product:@file                 line i lists the allowed values of coord i
    random_density:rho=<real>,seed=<u64>
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import hypercube
from .errors import (
    ConfigError,
    DomainError,
    RejectionBudgetError,
)
from .product import ProductDistribution

DEFAULT_MAX_ATTEMPTS = 10**6


class TruncationSet:
    """Membership oracle over the hypercube with query accounting.

    ``oracle`` must be a pure vectorized predicate mapping an (n, d) uint8
    matrix to an (n,) boolean mask; the same input must always give the same
    answer.  ``query_counter`` counts every point tested through
    :meth:`contains`; offline enumeration via :meth:`elements` does not
    count (it is an oracle facility for tests, not an algorithmic query).
    """

    def __init__(self, d, oracle, name="custom", elements=None):
        self.d = hypercube.check_dim(d)
        self._oracle = oracle
        self.name = name
        self.query_counter = 0
        self._elements = None
        if elements is not None:
            elements = hypercube.as_batch(elements, self.d)
            if elements.shape[0] == 0:
                raise DomainError(f"truncation set {name!r} is empty")
            self._elements = elements

    def contains(self, x):
        """Membership of a single point (bool) or a batch ((n,) bool mask)."""
        single = np.asarray(x).ndim == 1
        pts = hypercube.as_batch(x, self.d)
        self.query_counter += pts.shape[0]
        mask = np.asarray(self._oracle(pts), dtype=bool)
        return bool(mask[0]) if single else mask

    def elements(self, limit=hypercube.ENUM_LIMIT):
        """Explicit element list, enumerating the cube when necessary."""
        if self._elements is None:
            cube = hypercube.enumerate_cube(self.d, limit)
            mask = np.asarray(self._oracle(cube), dtype=bool)
            elems = cube[mask]
            if elems.shape[0] == 0:
                raise DomainError(f"truncation set {self.name!r} is empty")
            self._elements = elems
        return self._elements

    def __repr__(self):
        return f"TruncationSet(d={self.d}, name={self.name!r})"


# ---------------------------------------------------------------------------
# Built-in set families
# ---------------------------------------------------------------------------

def full_cube(d):
    return TruncationSet(d, lambda pts: np.ones(pts.shape[0], dtype=bool),
                         name="l1_leq:%d" % d)


def l1_leq(d, k):
    """Downward-closed halfspace {x : x_1 + ... + x_d <= k}."""
    d = hypercube.check_dim(d)
    if k < 0:
        raise DomainError("l1_leq with k < 0 is empty")
    return TruncationSet(d, lambda pts: pts.sum(axis=1) <= k, name=f"l1_leq:{k}")


def explicit_set(points, d=None):
    pts = hypercube.as_batch(points, d)
    if pts.shape[0] == 0:
        raise DomainError("explicit truncation set is empty")
    codes = set(hypercube.pack_bits(pts).tolist())

    def oracle(batch):
        batch_codes = hypercube.pack_bits(batch)
        return np.fromiter((c in codes for c in batch_codes.tolist()),
                           dtype=bool, count=batch.shape[0])

    return TruncationSet(pts.shape[1], oracle, name="explicit", elements=pts)


def product_set(factors):
    """Per-coordinate product S = S_1 x ... x S_d; factor i is a subset of {0,1}."""
    allowed = []
    for i, fac in enumerate(factors):
        vals = frozenset(int(v) for v in fac)
        if not vals or vals - {0, 1}:
            raise DomainError(f"product factor {i} must be a non-empty subset of {{0,1}}")
        allowed.append(vals)
    d = len(allowed)
    zero_ok = np.array([0 in fac for fac in allowed])
    one_ok = np.array([1 in fac for fac in allowed])

    def oracle(pts):
        ok = np.where(pts == 1, one_ok[None, :], zero_ok[None, :])
        return ok.all(axis=1)

    ts = TruncationSet(d, oracle, name="product")
    ts.factors = tuple(tuple(sorted(fac)) for fac in allowed)
    return ts


def slab_complement(w, c, lam, d=None):
    """{x : w.x outside the open interval (c - lam, c + lam)}.

    The direction is normalized to unit length and (c, lam) rescaled by the
    same factor, which leaves the set unchanged while matching the unit-vector
    convention of the anti-concentration diagnostic.  Boundary points count
    as outside (the interval is open).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or not np.all(np.isfinite(w)):
        raise DomainError("slab direction must be a finite 1-D vector")
    if d is not None and w.shape[0] != d:
        raise DomainError(f"slab direction has length {w.shape[0]}, expected {d}")
    norm = np.linalg.norm(w)
    if norm == 0.0:
        raise DomainError("slab direction must be nonzero")
    if lam <= 0.0:
        raise DomainError("slab half-width must be positive")
    w, c, lam = w / norm, c / norm, lam / norm

    def oracle(pts):
        proj = pts @ w
        return ~((proj > c - lam) & (proj < c + lam))

    ts = TruncationSet(w.shape[0], oracle, name="slab_complement")
    ts.direction, ts.center, ts.half_width = w, float(c), float(lam)
    return ts


def _splitmix64(x):
    # Deterministic 64-bit mix; the standard splitmix64 finalizer.
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = x
    z ^= z >> np.uint64(30)
    z = (z * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z ^= z >> np.uint64(27)
    z = (z * np.uint64(0x94D049BB133111EB)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z ^= z >> np.uint64(31)
    return z


def random_density(d, rho, seed):
    """Each point belongs independently with probability rho, keyed by seed.

    Membership is a pure hash of (seed, packed point), so the oracle is
    deterministic and needs no stored table.  The empty set is rejected when
    d is small enough to check by enumeration.
    """
    d = hypercube.check_dim(d)
    if not 0.0 < rho <= 1.0:
        raise DomainError("density rho must lie in (0, 1]")
    key = np.uint64(seed)
    threshold = np.uint64(int(rho * 2.0**64)) if rho < 1.0 else np.uint64(2**64 - 1)

    def oracle(pts):
        codes = hypercube.pack_bits(pts)
        with np.errstate(over="ignore"):
            h = _splitmix64(codes ^ (key * np.uint64(0x9E3779B97F4A7C15)))
        if rho >= 1.0:
            return np.ones(pts.shape[0], dtype=bool)
        return h < threshold

    ts = TruncationSet(d, oracle, name=f"random_density:rho={rho},seed={seed}")
    if d <= hypercube.ENUM_LIMIT:
        ts.elements()  # raises DomainError when the realized set is empty
    return ts


def _load_lines(path):
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(line)
    return out


def parse_descriptor(text, d):
    """Build a TruncationSet from the descriptor mini-language."""
    d = hypercube.check_dim(d)
    if ":" not in text:
        raise ConfigError(f"malformed set descriptor {text!r}")
    family, _, rest = text.partition(":")
    try:
        if family == "l1_leq":
            return l1_leq(d, int(rest))
        if family == "explicit":
            if not rest.startswith("@"):
                raise ConfigError("explicit descriptor expects @file")
            pts = [hypercube.parse_bitstring(s, d) for s in _load_lines(rest[1:])]
            if not pts:
                raise DomainError("explicit truncation set is empty")
            return explicit_set(np.array(pts), d)
        if family == "product":
            if not rest.startswith("@"):
                raise ConfigError("product descriptor expects @file")
            lines = _load_lines(rest[1:])
            if len(lines) != d:
                raise ConfigError(
                    f"product file lists {len(lines)} factors, expected {d}")
            return product_set([[int(ch) for ch in line] for line in lines])
        if family == "slab_complement":
            if not rest.startswith("w="):
                raise ConfigError("slab_complement descriptor expects w=...")
            body, _, lam_txt = rest.rpartition(",lambda=")
            w_txt, _, c_txt = body.rpartition(",c=")
            if not lam_txt or not c_txt:
                raise ConfigError("slab_complement needs w=, c= and lambda= fields")
            w = np.array([float(v) for v in w_txt[2:].split(",")])
            return slab_complement(w, float(c_txt), float(lam_txt), d)
        if family == "random_density":
            fields = dict(kv.split("=", 1) for kv in rest.split(","))
            extra = set(fields) - {"rho", "seed"}
            if extra:
                raise ConfigError(f"unknown random_density fields {sorted(extra)}")
            return random_density(d, float(fields["rho"]), int(fields["seed"]))
    except (ValueError, OSError) as exc:
        raise ConfigError(f"malformed set descriptor {text!r}: {exc}") from exc
    raise ConfigError(f"unknown set family {family!r}")


# ---------------------------------------------------------------------------
# Normalization (anchor -> zero vector)
# ---------------------------------------------------------------------------

def normalize(ts: TruncationSet, dist: ProductDistribution, anchor):
    """Flip coordinates so the anchor maps to the zero vector.

    Returns the flipped set and distribution.  Probability masses are
    preserved under the bijection x -> x XOR anchor.
    """
    anchor = hypercube.as_point(anchor, ts.d)
    if not ts.contains(anchor):
        raise DomainError("normalization anchor does not belong to the set")
    mask = anchor.astype(bool)
    flipped_p = np.where(mask, 1.0 - dist.p, dist.p)

    def oracle(pts):
        return ts._oracle(pts ^ anchor[None, :])

    flipped = TruncationSet(ts.d, oracle, name=f"{ts.name}|normalized")
    if ts._elements is not None:
        flipped._elements = ts._elements ^ anchor[None, :]
    return flipped, ProductDistribution(flipped_p)


# ---------------------------------------------------------------------------
# Truncated distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TruncatedPmf:
    """Exact truncated pmf: support points, probabilities, packed codes."""

    points: np.ndarray
    probs: np.ndarray
    codes: np.ndarray

    def as_dict(self):
        return {int(c): float(p) for c, p in zip(self.codes, self.probs)}

    def prob_of(self, x):
        code = hypercube.pack_bits(hypercube.as_point(x, self.points.shape[1]))
        idx = np.searchsorted(self.codes, code)
        if idx < len(self.codes) and self.codes[idx] == code:
            return float(self.probs[idx])
        return 0.0


class TruncatedDistribution:
    """Conditioning of a product distribution on membership in a set.

    ``draw_counter`` counts accepted truncated samples handed to callers,
    mirroring the oracle's query counter for sample accounting.
    """

    def __init__(self, base: ProductDistribution, ts: TruncationSet):
        if base.d != ts.d:
            raise DomainError(
                f"distribution (d={base.d}) and set (d={ts.d}) dimensions differ")
        self.base = base
        self.set = ts
        self.draw_counter = 0

    @property
    def d(self):
        return self.base.d

    def sample(self, rng, max_attempts=DEFAULT_MAX_ATTEMPTS):
        """One exact draw from D_S by rejection; returns (point, attempts).

        Issues exactly ``attempts`` membership queries.  Raises
        RejectionBudgetError carrying the attempt count when the budget is
        exhausted, signalling that D(S) is too small.
        """
        if max_attempts < 1:
            raise DomainError("max_attempts must be at least 1")
        attempts = 0
        chunk = 128
        while attempts < max_attempts:
            take = min(chunk, max_attempts - attempts)
            batch = self.base.sample(take, rng)
            for row in batch:
                attempts += 1
                if self.set.contains(row):
                    self.draw_counter += 1
                    return row, attempts
        raise RejectionBudgetError(
            f"no sample landed in {self.set.name!r} after {attempts} attempts",
            attempts=attempts,
        )

    def sample_batch(self, n, rng, max_attempts=DEFAULT_MAX_ATTEMPTS):
        """n exact draws as an (n, d) matrix; batched rejection.

        The attempt budget is n * max_attempts proposals in total; membership
        is queried per proposal batch, so the query counter advances by the
        number of proposals.
        """
        if n == 0:
            return np.empty((0, self.d), dtype=np.uint8)
        budget = n * max_attempts
        collected = []
        have = 0
        attempts = 0
        chunk = max(256, min(n * 2, 1 << 16))
        while have < n:
            take = min(chunk, budget - attempts)
            if take <= 0:
                raise RejectionBudgetError(
                    f"collected {have}/{n} samples from {self.set.name!r} "
                    f"after {attempts} attempts",
                    attempts=attempts,
                )
            batch = self.base.sample(take, rng)
            attempts += take
            accepted = batch[self.set.contains(batch)]
            if accepted.shape[0]:
                collected.append(accepted)
                have += accepted.shape[0]
        out = np.concatenate(collected, axis=0)[:n]
        self.draw_counter += n
        return out

    def exact_pmf(self, limit=hypercube.ENUM_LIMIT) -> TruncatedPmf:
        """Exact D_S by enumeration; the mass is normalized with log-sum-exp."""
        elems = self.set.elements(limit)
        log_w = elems @ np.log(self.base.p) + (1 - elems) @ np.log1p(-self.base.p)
        log_mass = logsumexp(log_w)
        probs = np.exp(log_w - log_mass)
        codes = hypercube.pack_bits(elems)
        order = np.argsort(codes)
        return TruncatedPmf(points=elems[order], probs=probs[order],
                            codes=codes[order])

    def exact_mass(self, limit=hypercube.ENUM_LIMIT) -> float:
        elems = self.set.elements(limit)
        log_w = elems @ np.log(self.base.p) + (1 - elems) @ np.log1p(-self.base.p)
        return float(np.exp(logsumexp(log_w)))

    def exact_mean(self, limit=hypercube.ENUM_LIMIT):
        pmf = self.exact_pmf(limit)
        return pmf.probs @ pmf.points


# ---------------------------------------------------------------------------
# Monte-Carlo estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MassEstimate:
    value: float
    stderr: float
    n_samples: int

    def __float__(self):
        return self.value


def estimate_mass(dist: ProductDistribution, ts: TruncationSet, n, rng) -> MassEstimate:
    """Fraction of n i.i.d. draws from dist landing in the set."""
    if n < 1:
        raise DomainError("mass estimation needs at least one sample")
    hits = int(ts.contains(dist.sample(n, rng)).sum())
    value = hits / n
    return MassEstimate(value=value,
                        stderr=float(np.sqrt(value * (1 - value) / n)),
                        n_samples=n)


@dataclass(frozen=True)
class FatnessReport:
    """Per-coordinate flip-stays-inside estimates for a truncated law."""

    per_coordinate: np.ndarray
    min_alpha: float
    samples_used: int
    confidence: tuple

    def __post_init__(self):
        object.__setattr__(self, "per_coordinate",
                           np.asarray(self.per_coordinate, dtype=float))


def estimate_fatness(td: TruncatedDistribution, n, rng,
                     max_attempts=DEFAULT_MAX_ATTEMPTS,
                     delta=0.05) -> FatnessReport:
    """Estimate the coordinate fatness vector from n truncated samples.

    Issues exactly n*d flip queries on top of the sampling queries.  The
    reported confidence pair is a two-sided Hoeffding band holding uniformly
    over all coordinates with probability 1 - delta.
    """
    if n < 1:
        raise DomainError("fatness estimation needs at least one sample")
    samples = td.sample_batch(n, rng, max_attempts)
    alphas = np.empty(td.d)
    for i in range(td.d):
        alphas[i] = td.set.contains(hypercube.flip(samples, i)).mean()
    eps = float(np.sqrt(np.log(2 * td.d / delta) / (2 * n)))
    return FatnessReport(per_coordinate=alphas,
                         min_alpha=float(alphas.min()),
                         samples_used=n,
                         confidence=(eps, delta))


def exact_fatness(td: TruncatedDistribution, limit=hypercube.ENUM_LIMIT):
    """Enumeration-exact fatness vector; the oracle behind estimate_fatness."""
    pmf = td.exact_pmf(limit)
    alphas = np.empty(td.d)
    for i in range(td.d):
        stays = td.set._oracle(hypercube.flip(pmf.points, i))
        alphas[i] = pmf.probs[np.asarray(stays, dtype=bool)].sum()
    return alphas


def _direction_alpha(sorted_proj, hi):
    """Largest lam with: every open interval of radius lam misses mass >= lam."""
    t = sorted_proj
    n = t.shape[0]

    def outside(lam):
        # Max count inside an open interval of length 2*lam: a window whose
        # span is strictly below 2*lam fits; half-open sliding window attains it.
        right = np.searchsorted(t, t + 2 * lam, side="left")
        inside = (right - np.arange(n)).max()
        return 1.0 - inside / n

    lo, up = 0.0, hi
    if outside(up) >= up:
        return up
    for _ in range(50):
        mid = 0.5 * (lo + up)
        if outside(mid) >= mid:
            lo = mid
        else:
            up = mid
    return lo


def estimate_anticoncentration(td: TruncatedDistribution, directions, n, rng,
                               max_attempts=DEFAULT_MAX_ATTEMPTS) -> float:
    """Monte-Carlo anti-concentration diagnostic.

    For each unit direction w, computes the largest lam such that on the
    empirical sample every open interval (c - lam, c + lam) leaves at least
    lam of the projected mass outside, and returns the minimum over the
    sampled directions.  Random directions cannot certify the infimum over
    all of R^d, so the returned value is an upper bound on the true constant:
    a diagnostic, not a verifier.

    ``directions`` is either a count of random unit directions (uniform on
    the sphere via normalized Gaussians) or an explicit (k, d) matrix.
    """
    if np.ndim(directions) == 0:
        if directions < 1:
            raise DomainError("need at least one direction")
        W = rng.standard_normal((int(directions), td.d))
    else:
        W = np.asarray(directions, dtype=float)
        if W.ndim == 1:
            W = W[None, :]
    W = W / np.linalg.norm(W, axis=1, keepdims=True)

    samples = td.sample_batch(n, rng, max_attempts).astype(float)
    best = np.inf
    for w in W:
        proj = np.sort(samples @ w)
        spread = proj[-1] - proj[0]
        if spread == 0.0:
            return 0.0
        best = min(best, _direction_alpha(proj, min(1.0, spread / 2)))
    return float(best)
