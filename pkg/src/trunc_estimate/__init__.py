"""Estimation of Boolean product and Mallows distributions from truncated samples."""

from .errors import (
    CapabilityError,
    ConfigError,
    DimensionMismatchError,
    DomainError,
    FatnessDeficitError,
    IdentifiabilityError,
    IllConditionedError,
    RejectionBudgetError,
    TruncEstimateError,
)
from .product import (
    DistanceBounds,
    ProductDistribution,
    distance_bounds,
    exact_tv,
    inverse_logit,
    kl_product,
    logit,
)
from .truncation import (
    TruncatedDistribution,
    TruncationSet,
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
from .fat_sampler import (
    estimate_parameter,
    fat_sample,
    fat_sample_batch,
    fat_sample_coordinate,
    learn_sparse,
    learn_tv,
)
from .identify import (
    IdentifiabilitySystem,
    build_system,
    mimic_stream,
    recover_from_pmf,
    solve_system,
    uniform_mimic_set,
)
from .sgd import (
    Ball,
    SgdConfig,
    amplified_estimate,
    empirical_init,
    exact_gradient_hessian,
    exact_population_nll,
    project_to_ball,
    run_sgd,
    stochastic_gradient,
    variance_bound_check,
)
from .mallows import (
    MallowsModel,
    TruncatedMallows,
    estimate_spread,
    kendall_ball,
    kendall_tau,
    learn_mallows_tv,
    recover_central,
)
from .testers import Verdict, baseline_tester, closeness_test, identity_test

__version__ = "0.1.0"
