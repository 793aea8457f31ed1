"""Asymptotic expansions for tails of weighted sums of heavy-tailed laws.

The package exposes four layers: exact operator-ring arithmetic
(:mod:`tailcalc.laplace`), scale matrices (:mod:`tailcalc.scale`),
distribution families (:mod:`tailcalc.tails`), the expansion engine
(:mod:`tailcalc.engine`) with application solvers (:mod:`tailcalc.apps`),
and independent validation oracles (:mod:`tailcalc.oracle`).
"""

__version__ = "0.1.0"

from .laplace import (
    LaplaceCharacter,
    MomentVector,
    SeriesPoly,
    character_from_moments,
    compose,
    convolve_moments,
    equilibrium_character,
    invert_nilpotent,
    invert_partitions,
    mellin_character,
    scale_moments,
)
from .scale import (
    ScaleBasis,
    ScaleItem,
    character_matrix,
    close_under_derivative,
    derivative_matrix,
    scaling_matrix,
)
from .tails import DistributionSpec, TailVector, expand_tail, moments
from .engine import (
    ExpansionRequest,
    WeightSequence,
    cross_sum,
    degenerate_tail,
    expand_convolution,
    expand_direct,
    g_moments,
    norm_N,
    power_sum,
    residual_moments,
)

__all__ = [
    "LaplaceCharacter",
    "MomentVector",
    "SeriesPoly",
    "ScaleBasis",
    "ScaleItem",
    "DistributionSpec",
    "TailVector",
    "ExpansionRequest",
    "WeightSequence",
    "character_from_moments",
    "compose",
    "convolve_moments",
    "equilibrium_character",
    "invert_nilpotent",
    "invert_partitions",
    "mellin_character",
    "scale_moments",
    "character_matrix",
    "close_under_derivative",
    "derivative_matrix",
    "scaling_matrix",
    "expand_tail",
    "moments",
    "cross_sum",
    "degenerate_tail",
    "expand_convolution",
    "expand_direct",
    "g_moments",
    "norm_N",
    "power_sum",
    "residual_moments",
    "__version__",
]
