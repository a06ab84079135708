"""Hyper-parameter search driven by low-rank statistics of convolutional weights.

The engine trains (or ingests) per-epoch convolutional weight snapshots,
factorizes each layer's unfolded weight matrices with analytic empirical
variational Bayesian matrix factorization, summarizes them into a scalar
rank-deficiency response value per hyper-parameter configuration, and walks
a multiplicative trust-region lattice to the inception of that response's
plateau.
"""

from ranktune.tensors import WeightTensor4D, UnfoldedMatrix, unfold, refold
from ranktune.evbmf import FactorizationResult, evbmf, estimate_noise_variance
from ranktune.metrics import (
    RankProbe,
    RankHistory,
    stable_rank,
    zero_rank_fraction,
    global_stable_rank,
    stabilize,
)
from ranktune.search import HpSpace, HpConfig, TrustRegion, SearchRun, trust_region, autohyper

__all__ = [
    "WeightTensor4D",
    "UnfoldedMatrix",
    "unfold",
    "refold",
    "FactorizationResult",
    "evbmf",
    "estimate_noise_variance",
    "RankProbe",
    "RankHistory",
    "stable_rank",
    "zero_rank_fraction",
    "global_stable_rank",
    "stabilize",
    "HpSpace",
    "HpConfig",
    "TrustRegion",
    "SearchRun",
    "trust_region",
    "autohyper",
]

__version__ = "0.1.0"
