"""Coded caching for asynchronous video demands with audience retention."""
from .allocation import AllocationResult, optimize_oca, optimize_pca, pca_distribution
from .bound import BoundGrid, LowerBound, lower_bound
from .cache import CacheDistribution, equal_q_groups, exclusive_fraction, validate
from .catalog import (
    ChunkStats,
    LibraryConfig,
    PopularityModel,
    build_model,
    chunk_stats,
    rank_power_popularity,
    standard_zipf,
    zipf_retention,
)
from .rates import (
    CompositionIndex,
    RateBreakdown,
    RateEvaluator,
    SlotDemand,
    delta_phi1,
    delta_phi2,
    rate_man,
    rate_pcc,
    rate_ran,
    rate_uncoded,
    rho,
    rho_prime,
    slot_rate,
)

__version__ = "0.1.0"
