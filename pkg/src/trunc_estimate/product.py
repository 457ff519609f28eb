"""Boolean product distributions on the hypercube.

A product distribution is parameterized either by its mean vector
p in (0,1)^d or by the natural (logit) parameters z_i = log(p_i/(1-p_i)),
under which it is an exponential family

    D(z; x) = exp(x.z) / prod_i (1 + exp(z_i)).

All distances use the natural logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.special import logit as _logit

from . import hypercube
from .errors import DimensionMismatchError, DomainError


def logit(p):
    """Natural parameter of Be(p): log(p/(1-p)).  Requires p strictly in (0,1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("logit requires probabilities strictly inside (0, 1)")
    out = _logit(arr)
    return float(out) if np.isscalar(p) or arr.ndim == 0 else out


def inverse_logit(z):
    """Mean parameter of the logit z; maps all reals into (0, 1)."""
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("inverse_logit requires finite inputs")
    out = expit(arr)
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def validate_mean_params(p):
    """Validate a mean-parameter vector: finite, strictly inside (0,1)^d."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("mean parameters must form a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("mean parameters must lie strictly inside (0, 1)")
    return arr


def validate_natural_params(z):
    arr = np.asarray(z, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("natural parameters must form a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise DomainError("natural parameters must be finite")
    return arr


@dataclass(frozen=True)
class ProductDistribution:
    """Product of d independent Bernoulli laws, immutable after construction.

    The natural parameters are derived and cached at construction, so the two
    parameterizations are consistent by construction.
    """

    p: np.ndarray
    z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = validate_mean_params(self.p)
        p.setflags(write=False)
        z = _logit(p)
        z.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_natural(cls, z):
        return cls(expit(validate_natural_params(z)))

    @property
    def d(self):
        return self.p.shape[0]

    def _check_points(self, x):
        return hypercube.as_batch(x, self.d)

    def log_pmf(self, x):
        """Log-probability via the mean-parameter product form (log-space)."""
        pts = self._check_points(x)
        out = pts @ np.log(self.p) + (1 - pts) @ np.log1p(-self.p)
        return out if np.asarray(x).ndim == 2 else float(out[0])

    def pmf(self, x):
        """Point probability; computed in log space to avoid underflow."""
        out = np.exp(self.log_pmf(self._check_points(x)))
        return out if np.asarray(x).ndim == 2 else float(out[0])

    def pmf_natural(self, x):
        """Exponential-family form exp(x.z)/prod(1+e^{z_i}); agrees with pmf."""
        pts = self._check_points(x)
        log_partition = np.logaddexp(0.0, self.z).sum()
        out = np.exp(pts @ self.z - log_partition)
        return out if np.asarray(x).ndim == 2 else float(out[0])

    def mean(self):
        return self.p.copy()

    def sample(self, n, rng):
        """n independent draws as an (n, d) uint8 matrix."""
        if n < 0:
            raise DomainError("sample count must be non-negative")
        return (rng.random((n, self.d)) < self.p).astype(np.uint8)

    def enumerate_pmf(self, limit=hypercube.ENUM_LIMIT):
        """Probabilities of every point, indexed by packed code (d <= limit)."""
        cube = hypercube.enumerate_cube(self.d, limit)
        return np.exp(cube @ np.log(self.p) + (1 - cube) @ np.log1p(-self.p))


def _check_pair(P, Q):
    if P.d != Q.d:
        raise DimensionMismatchError(
            f"distributions have dimensions {P.d} and {Q.d}"
        )


def kl_product(P: ProductDistribution, Q: ProductDistribution) -> float:
    """KL(P || Q); additive over coordinates for product distributions."""
    _check_pair(P, Q)
    p, q = P.p, Q.p
    terms = p * (np.log(p) - np.log(q)) + (1 - p) * (np.log1p(-p) - np.log1p(-q))
    return float(max(terms.sum(), 0.0))


@dataclass(frozen=True)
class DistanceBounds:
    """Right-hand sides of the KL/TV norm bounds between two product laws.

    kl_bound      >= KL(P || Q)            (squared z-distance)
    tv_bound_z    >= TV(P, Q)              (sqrt(2)/2 times z-distance)
    tv_bound_chi  >= TV(P, Q)              (chi-square-style mean bound)
    """

    kl_bound: float
    tv_bound_z: float
    tv_bound_chi: float


def distance_bounds(P: ProductDistribution, Q: ProductDistribution) -> DistanceBounds:
    _check_pair(P, Q)
    dz = np.linalg.norm(P.z - Q.z)
    # The chi-style bound sqrt(sum (p-q)^2 / (p+q)) is only valid under the
    # convention p_i + q_i <= 1, enforceable by flipping 0 and 1 in a
    # coordinate (which leaves TV and (p-q)^2 unchanged and replaces the
    # denominator by 2 - p - q).  Flipping each violating coordinate yields
    # the denominator min(p+q, 2-p-q).
    pq = P.p + Q.p
    chi = np.sqrt(np.sum((P.p - Q.p) ** 2 / np.minimum(pq, 2.0 - pq)))
    return DistanceBounds(
        kl_bound=float(dz**2),
        tv_bound_z=float(np.sqrt(2.0) / 2.0 * dz),
        tv_bound_chi=float(chi),
    )


def exact_tv(P: ProductDistribution, Q: ProductDistribution,
             limit=hypercube.ENUM_LIMIT) -> float:
    """Total variation distance by full enumeration (d <= limit)."""
    _check_pair(P, Q)
    hypercube.ensure_enumerable(P.d, limit)
    return float(0.5 * np.abs(P.enumerate_pmf(limit) - Q.enumerate_pmf(limit)).sum())


def empirical_tv(P: ProductDistribution, samples, limit=hypercube.ENUM_LIMIT) -> float:
    """TV between P and the empirical histogram of samples (d <= limit)."""
    pts = hypercube.as_batch(samples, P.d)
    hypercube.ensure_enumerable(P.d, limit)
    codes = hypercube.pack_bits(pts)
    counts = np.bincount(codes.astype(np.int64), minlength=1 << P.d)
    freq = counts / pts.shape[0]
    return float(0.5 * np.abs(P.enumerate_pmf(limit) - freq).sum())
