"""Semi-confirmatory factor analysis for covariance matrices with an
interconnected-community (uniform-block) structure.

The public surface: uniform-block matrix algebra (`UniformBlockMatrix`,
`PartitionVector`), closed-form model estimation (`estimate`), factor
scoring (`score_ols` and friends), exact-variance Wald inference
(`wald_report`), and a seeded Monte-Carlo study runner (`run_study`).
"""

from . import errors
from .errors import ScfaError
from .ubmatrix import (
    BlockSummaries,
    PartitionVector,
    SignedLogDet,
    UniformBlockMatrix,
    block_summaries,
    from_dense,
)
from .estimation import (
    DataMatrix,
    FitDiagnostics,
    Membership,
    ScfaFit,
    estimate,
    estimate_from_covariance,
    implied_covariance,
    log_likelihood,
    sample_covariance,
)
from .scores import (
    FactorScoreMatrix,
    score_covariance,
    score_fgls,
    score_gls,
    score_ols,
)
from .inference import (
    EdgeLabel,
    InferenceReport,
    ParameterInference,
    edge_labels,
    var_a,
    var_b,
    wald_report,
)
from .simulation import (
    GeneratorSpec,
    NoiseSpec,
    ParameterMetrics,
    SimulationReport,
    euclidean_loss,
    generate,
    relative_loss,
    replicate_rng,
    run_study,
    sample_wishart,
)
from .fileio import (
    FitDocument,
    align_membership,
    export_dot,
    load_data,
    load_membership,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "ScfaError",
    "BlockSummaries",
    "PartitionVector",
    "SignedLogDet",
    "UniformBlockMatrix",
    "block_summaries",
    "from_dense",
    "DataMatrix",
    "FitDiagnostics",
    "Membership",
    "ScfaFit",
    "estimate",
    "estimate_from_covariance",
    "implied_covariance",
    "log_likelihood",
    "sample_covariance",
    "FactorScoreMatrix",
    "score_covariance",
    "score_fgls",
    "score_gls",
    "score_ols",
    "EdgeLabel",
    "InferenceReport",
    "ParameterInference",
    "edge_labels",
    "var_a",
    "var_b",
    "wald_report",
    "GeneratorSpec",
    "NoiseSpec",
    "ParameterMetrics",
    "SimulationReport",
    "euclidean_loss",
    "generate",
    "relative_loss",
    "replicate_rng",
    "run_study",
    "sample_wishart",
    "FitDocument",
    "align_membership",
    "export_dot",
    "load_data",
    "load_membership",
]
