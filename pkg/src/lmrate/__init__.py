"""Mismatched-decoding achievable rates on discrete memoryless channels.

Computes the fixed-input LM rate and its input-optimized counterpart by
alternating closed-form dual ascent, with channel-construction helpers for
AWGN channels under IQ imbalance and square-QAM constellations.
"""

from .channel import (
    ChannelMatrixH,
    Constellation,
    DiscretizationError,
    MetricMatrix,
    OutputGrid,
    build_constellation,
    discretize_awgn,
    iq_channel,
    metric_matrix,
    output_grid,
    sigma2_from_snr_db,
)
from .core import (
    JointDistribution,
    ProbabilityVector,
    TransitionMatrix,
    entropy,
    joint_from_input,
    mutual_information,
)
from .dual import DualState, NumericalFailure
from .oracle import OracleConfig, blahut_arimoto, brute_force_lm, scarlett_dual_objective
from .solver import (
    SolveReport,
    SolverConfig,
    reconstruct_primal,
    residuals,
    solve_clm,
    solve_lm_fixed_input,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelMatrixH",
    "Constellation",
    "DiscretizationError",
    "DualState",
    "JointDistribution",
    "MetricMatrix",
    "NumericalFailure",
    "OracleConfig",
    "OutputGrid",
    "ProbabilityVector",
    "SolveReport",
    "SolverConfig",
    "TransitionMatrix",
    "blahut_arimoto",
    "brute_force_lm",
    "build_constellation",
    "discretize_awgn",
    "entropy",
    "iq_channel",
    "joint_from_input",
    "metric_matrix",
    "mutual_information",
    "output_grid",
    "reconstruct_primal",
    "residuals",
    "scarlett_dual_objective",
    "sigma2_from_snr_db",
    "solve_clm",
    "solve_lm_fixed_input",
    "__version__",
]
