"""Broadcast processes on trees and the reconstruction threshold.

Submodules:

channel     binary asymmetric channels and their stationary law
tree        finite rooted trees, cutsets, eta and branching-number estimates
exact       exact law of the root magnetization (add-edge / merge / evolve)
montecarlo  sampled estimates of the same quantities at larger depth
analysis    moments, threshold classification, inequality and identity checks
cli         the ``treerecon`` command
"""
from .channel import (
    Channel,
    ChannelError,
    DerivedParams,
    canonicalize,
    channel_from_flip_probs,
    channel_from_theta_delta,
    derived_params,
)
from .tree import (
    CutSet,
    TreeError,
    TreeSpec,
    branching_number_estimate,
    branching_number_estimate_tree,
    build_regular_tree,
    eta,
    min_cutset_weight,
    random_tree,
    read_tree,
    write_tree,
)
from .exact import (
    BinningPolicy,
    MagnetizationDistribution,
    add_edge,
    brute_force_distribution,
    evolve,
    leaf_base_distribution,
    merge,
    root_posterior,
    tilt,
    tv_distance,
)
from .montecarlo import McEstimate, estimate_moments, estimate_tv, sample_leaves
from .analysis import (
    BoundReport,
    MomentTriple,
    basic_inequality_terms,
    delta0_bound,
    ks_condition,
    moments,
    symmetric_recursion_bound,
    verify_identities,
)
from .kernels import BACKEND

__version__ = "0.1.0"
