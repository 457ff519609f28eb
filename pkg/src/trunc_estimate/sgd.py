"""Projected stochastic gradient descent on the truncated log-likelihood.

The estimator minimizes the population negative log-likelihood

    nll(z) = -E_{x ~ D_S(z*)}[x . z] + log sum_{y in S} exp(y . z)

over the natural parameters, whose gradient is the mean gap
-E_{D_S(z*)}[x] + E_{D_S(z)}[y] and whose Hessian is the covariance of
D_S(z).  Each step pairs one truncated sample x with one rejection-sampled
y from the current guess restricted to S, giving the unbiased direction
v = y - x with coordinates in {-1, 0, 1}.  Iterates are projected onto a
ball around the empirical initializer, inside which the truncation keeps
non-trivial mass and the likelihood stays strongly convex; the returned
estimate is the iterate average.

Exact enumeration oracles for the likelihood, gradient and Hessian (small d)
live here as well; they are the reference implementations the stochastic
path is tested against.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp

from . import hypercube
from .errors import DomainError, RejectionBudgetError
from .fat_sampler import clamp_means
from .product import ProductDistribution
from .truncation import (
    DEFAULT_MAX_ATTEMPTS,
    TruncatedDistribution,
    TruncationSet,
    estimate_mass,
)

ETA_FLOOR = 1e-3


@dataclass(frozen=True)
class SgdConfig:
    """Knobs of one projected-SGD run.

    steps            number of stochastic steps M (step size 1/(i * eta)).
    eta              step-size scale; None derives the strong-convexity
                     estimate (smallest exact-Hessian eigenvalue at the
                     initializer) when d allows enumeration, else 0.1.
    ball_scale       c in the radius B = c * sqrt(ln(1/alpha_hat)).
    ball_min_radius  radius floor; keeps the ball non-degenerate when the
                     set mass estimate approaches 1 (no-truncation limit),
                     where the formula would collapse the ball onto the
                     finite-sample initializer.
    init_samples     truncated samples for the empirical initializer.
    alpha_hat        set-mass lower bound; None estimates it at the
                     initializer with mass_probe_samples draws.
    rejection_budget proposal budget per stochastic step; None uses
                     100 * ceil(1/alpha_hat).
    repetitions      independent runs used by amplified_estimate.
    seed             master seed; repetition streams are spawned from it.
    """

    steps: int
    eta: float | None = None
    ball_scale: float = 3.0
    ball_min_radius: float = 0.5
    init_samples: int = 10_000
    alpha_hat: float | None = None
    mass_probe_samples: int = 10_000
    rejection_budget: int | None = None
    repetitions: int = 1
    seed: int = 0
    checkpoints: int = 100

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError("steps must be at least 1")
        if self.eta is not None and self.eta <= 0:
            raise DomainError("eta must be positive")
        if self.repetitions < 1:
            raise DomainError("repetitions must be at least 1")
        if self.init_samples < 1:
            raise DomainError("init_samples must be at least 1")


@dataclass(frozen=True)
class Ball:
    """Euclidean ball in z-space; the SGD feasible region."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError("ball radius must be positive")
        center = np.asarray(self.center, dtype=float)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)

    def contains(self, z, slack=1e-9):
        return bool(np.linalg.norm(np.asarray(z) - self.center)
                    <= self.radius + slack)


def project_to_ball(z, ball: Ball):
    """Euclidean projection: identity inside, radial scaling outside."""
    z = np.asarray(z, dtype=float)
    delta = z - ball.center
    norm = float(np.linalg.norm(delta))
    if norm <= ball.radius:
        return z.copy()
    return ball.center + delta * (ball.radius / norm)


def empirical_init(td: TruncatedDistribution, n, rng,
                   max_attempts=DEFAULT_MAX_ATTEMPTS):
    """Coordinate-wise truncated mean, clamped into (0,1), and its logits."""
    if n < 1:
        raise DomainError("empirical initialization needs at least one sample")
    samples = td.sample_batch(n, rng, max_attempts)
    p_hat = clamp_means(samples.mean(axis=0), n)
    dist = ProductDistribution(p_hat)
    return dist.p, dist.z


def _rejection_inside(p_cur, ts: TruncationSet, rng, budget):
    """One draw from D(p_cur) conditioned on the set; returns (y, attempts)."""
    attempts = 0
    batch = 8
    while attempts < budget:
        take = min(batch, budget - attempts)
        proposals = (rng.random((take, ts.d)) < p_cur).astype(np.uint8)
        mask = ts.contains(proposals)
        hit = np.flatnonzero(mask)
        if hit.size:
            return proposals[hit[0]], attempts + int(hit[0]) + 1
        attempts += take
        batch = min(batch * 2, 1 << 13)
    raise RejectionBudgetError(
        f"no proposal from the current iterate landed in {ts.name!r} "
        f"within {budget} attempts (mass collapse inside the ball)",
        attempts=attempts,
    )


def stochastic_gradient(x, z_current, ts: TruncationSet, rng, budget):
    """Unbiased gradient direction v = -x + y, with y ~ D(z_current) in S.

    Returns (v, attempts).  Every coordinate of v lies in {-1, 0, 1}, so
    ||v||^2 <= d always.  A budget exhaustion signals that the current
    iterate assigns the set too little mass.
    """
    if budget < 1:
        raise DomainError("budget must be at least 1")
    x = hypercube.as_point(x, ts.d)
    p_cur = expit(np.asarray(z_current, dtype=float))
    y, attempts = _rejection_inside(p_cur, ts, rng, budget)
    return y.astype(np.int64) - x.astype(np.int64), attempts


@dataclass
class SgdTrace:
    """Per-step diagnostics plus running-average checkpoints of one run."""

    grad_sq: np.ndarray
    projected: np.ndarray
    rejections: np.ndarray
    checkpoint_steps: np.ndarray
    checkpoint_averages: np.ndarray
    z_init: np.ndarray
    z_bar: np.ndarray
    ball: Ball
    alpha_hat: float
    eta: float
    truncated_samples: int

    def all_inside_ball(self):
        return all(self.ball.contains(z) for z in self.checkpoint_averages)


def _resolve_alpha(td, cfg, p_hat, rng):
    if cfg.alpha_hat is not None:
        if not 0.0 < cfg.alpha_hat <= 1.0:
            raise DomainError("alpha_hat must lie in (0, 1]")
        return float(cfg.alpha_hat)
    est = estimate_mass(ProductDistribution(p_hat), td.set,
                        cfg.mass_probe_samples, rng)
    lo = 1.0 / (2.0 * cfg.mass_probe_samples)
    return float(np.clip(est.value, lo, 1.0))


def _resolve_eta(td, cfg, z_init):
    if cfg.eta is not None:
        return float(cfg.eta)
    if td.d <= hypercube.ENUM_LIMIT:
        _, hessian = exact_gradient_hessian(z_init, td)
        mu = float(np.linalg.eigvalsh(hessian)[0])
        return max(mu, ETA_FLOOR)
    return 0.1


def run_sgd(td: TruncatedDistribution, cfg: SgdConfig, seed_seq=None,
            max_attempts=DEFAULT_MAX_ATTEMPTS):
    """One projected-SGD run; returns (z_bar, trace), deterministic per seed."""
    rng = np.random.default_rng(cfg.seed if seed_seq is None else seed_seq)
    d = td.d

    p_hat, z_hat = empirical_init(td, cfg.init_samples, rng, max_attempts)
    alpha_hat = _resolve_alpha(td, cfg, p_hat, rng)
    radius = max(cfg.ball_scale * math.sqrt(math.log(1.0 / alpha_hat)),
                 cfg.ball_min_radius)
    ball = Ball(center=z_hat, radius=radius)
    eta = _resolve_eta(td, cfg, z_hat)
    budget = (cfg.rejection_budget if cfg.rejection_budget is not None
              else 100 * math.ceil(1.0 / alpha_hat))

    M = cfg.steps
    truth_samples = td.sample_batch(M, rng, max_attempts)

    grad_sq = np.empty(M, dtype=np.int64)
    projected = np.zeros(M, dtype=bool)
    rejections = np.empty(M, dtype=np.int64)
    every = max(1, M // max(cfg.checkpoints, 1))
    ckpt_steps, ckpt_avgs = [], []

    z = z_hat.astype(float).copy()
    z_sum = np.zeros(d)
    x_int = truth_samples.astype(np.int64)
    for i in range(1, M + 1):
        p_cur = expit(z)
        y, attempts = _rejection_inside(p_cur, td.set, rng, budget)
        v = y.astype(np.int64) - x_int[i - 1]
        z_next = z - v / (i * eta)
        delta = z_next - ball.center
        norm = float(np.linalg.norm(delta))
        if norm > ball.radius:
            z_next = ball.center + delta * (ball.radius / norm)
            projected[i - 1] = True
        if not np.all(np.isfinite(z_next)):
            raise FloatingPointError("non-finite SGD iterate")
        z = z_next
        z_sum += z
        grad_sq[i - 1] = int(v @ v)
        rejections[i - 1] = attempts
        if i % every == 0 or i == M:
            ckpt_steps.append(i)
            ckpt_avgs.append(z_sum / i)

    z_bar = z_sum / M
    trace = SgdTrace(
        grad_sq=grad_sq,
        projected=projected,
        rejections=rejections,
        checkpoint_steps=np.array(ckpt_steps, dtype=np.int64),
        checkpoint_averages=np.array(ckpt_avgs),
        z_init=z_hat,
        z_bar=z_bar,
        ball=ball,
        alpha_hat=alpha_hat,
        eta=eta,
        truncated_samples=M + cfg.init_samples,
    )
    return z_bar, trace


def select_consistent(estimates):
    """Index of the estimate with the smallest median distance to the rest.

    This realizes the amplification selection rule: a point close to more
    than half of the repetitions has a small median pairwise distance, and
    minimizing it is deterministic.
    """
    est = np.asarray(estimates, dtype=float)
    n = est.shape[0]
    if n == 1:
        return 0, np.zeros(1)
    diff = est[:, None, :] - est[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    medians = np.array([np.median(np.delete(dist[k], k)) for k in range(n)])
    return int(np.argmin(medians)), medians


@dataclass(frozen=True)
class AmplifiedEstimate:
    z: np.ndarray
    estimates: np.ndarray
    selected_index: int
    median_distances: np.ndarray
    traces: tuple = field(repr=False, default=())


def amplified_estimate(td: TruncatedDistribution, cfg: SgdConfig, delta,
                       max_attempts=DEFAULT_MAX_ATTEMPTS) -> AmplifiedEstimate:
    """Run N independent SGD repetitions and keep a mutually consistent one.

    N is cfg.repetitions or, when that is left at 1 and delta demands more,
    ceil(log2(1/delta)).  Repetition streams are spawned from the master
    seed, so runs are independent and the composition is reproducible; the
    worker pool is bounded by the TRUNC_ESTIMATE_THREADS environment
    variable (default serial).
    """
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)")
    n_reps = max(cfg.repetitions, math.ceil(math.log2(1.0 / delta)))
    if n_reps == 1:
        z, trace = run_sgd(td, cfg, max_attempts=max_attempts)
        return AmplifiedEstimate(z=z, estimates=z[None, :], selected_index=0,
                                 median_distances=np.zeros(1), traces=(trace,))
    children = np.random.SeedSequence(cfg.seed).spawn(n_reps)

    def one(idx):
        return run_sgd(td, replace(cfg, repetitions=1), seed_seq=children[idx],
                       max_attempts=max_attempts)

    threads = int(os.environ.get("TRUNC_ESTIMATE_THREADS", "1"))
    if threads > 1 and n_reps > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n_reps)))
    else:
        results = [one(idx) for idx in range(n_reps)]

    estimates = np.array([z for z, _ in results])
    idx, medians = select_consistent(estimates)
    return AmplifiedEstimate(
        z=estimates[idx],
        estimates=estimates,
        selected_index=idx,
        median_distances=medians,
        traces=tuple(tr for _, tr in results),
    )


# ---------------------------------------------------------------------------
# Exact enumeration oracles (small d)
# ---------------------------------------------------------------------------

def _set_elements(td, limit):
    elems = td.set.elements(limit).astype(float)
    return elems


def exact_population_nll(z, td_truth: TruncatedDistribution,
                         limit=hypercube.ENUM_LIMIT) -> float:
    """Population negative log-likelihood at z, by enumeration of the set."""
    z = np.asarray(z, dtype=float)
    elems = _set_elements(td_truth, limit)
    mean_star = td_truth.exact_mean(limit)
    return float(-mean_star @ z + logsumexp(elems @ z))


def exact_gradient_hessian(z, td_truth: TruncatedDistribution,
                           limit=hypercube.ENUM_LIMIT):
    """Exact gradient and Hessian of the population likelihood at z.

    The gradient is the mean gap between D_S(z) and the truth D_S(z*); the
    Hessian is the covariance matrix of D_S(z), symmetric PSD.
    """
    z = np.asarray(z, dtype=float)
    elems = _set_elements(td_truth, limit)
    log_w = elems @ z
    w = np.exp(log_w - logsumexp(log_w))
    mean_z = w @ elems
    grad = mean_z - td_truth.exact_mean(limit)
    second = (elems * w[:, None]).T @ elems
    hessian = second - np.outer(mean_z, mean_z)
    hessian = 0.5 * (hessian + hessian.T)
    return grad, hessian


@dataclass(frozen=True)
class VarianceCheck:
    empirical: float
    bound: float
    structural_bound: float
    beta: float

    @property
    def passed(self):
        return self.empirical <= min(self.bound, self.structural_bound) + 1e-9


def variance_bound_check(z, z_star, td: TruncatedDistribution, n, rng,
                         max_attempts=DEFAULT_MAX_ATTEMPTS) -> VarianceCheck:
    """Empirical E||v||^2 against the 4d/beta bound and the structural d.

    beta is the smaller set mass under the two parameter vectors, computed
    exactly when enumeration allows and by Monte Carlo otherwise.
    """
    if n < 1:
        raise DomainError("need at least one draw")
    dist_z = ProductDistribution.from_natural(z)
    dist_star = ProductDistribution.from_natural(z_star)
    td_z = TruncatedDistribution(dist_z, td.set)
    td_star = TruncatedDistribution(dist_star, td.set)
    if td.d <= hypercube.ENUM_LIMIT:
        beta = min(td_z.exact_mass(), td_star.exact_mass())
    else:
        beta = min(estimate_mass(dist_z, td.set, n, rng).value,
                   estimate_mass(dist_star, td.set, n, rng).value)
    xs = td_star.sample_batch(n, rng, max_attempts).astype(np.int64)
    ys = td_z.sample_batch(n, rng, max_attempts).astype(np.int64)
    v = ys - xs
    empirical = float((v * v).sum(axis=1).mean())
    return VarianceCheck(empirical=empirical,
                         bound=4.0 * td.d / beta,
                         structural_bound=float(td.d),
                         beta=float(beta))
