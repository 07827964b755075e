"""Single-pass sample covariance estimation from sparse random projections.

Pipeline: generate reproducible sparse sign (or Gaussian) projection matrices,
compress each sample to y = R^T x, back-project to z = R y, accumulate the
outer products of z in one pass, and apply a closed-form correction that makes
the resulting covariance estimate exactly unbiased. A Monte Carlo oracle suite
verifies the expectation identities the correction relies on.
"""

from .estimator import (
    KIND_BIASED,
    KIND_UNBIASED,
    CovAccumulator,
    CovEstimate,
    SingularCorrectionError,
    bias_coefficients,
    debias,
    estimate,
    finalize_biased,
)
from .ingest import (
    Dataset,
    SynthSpec,
    generate_spiked,
    generate_stable_rank,
    load_csv,
    load_matrix_market,
    save_matrix_market,
    stable_rank_spectrum,
)
from .metrics import (
    ErrorReport,
    SpectrumSummary,
    normalized_error,
    spectral_norm,
    stable_rank,
    top_eigenvectors,
)
from .oracle import (
    MomentCheckReport,
    closed_form_Ekk,
    closed_form_Ekl,
    default_verification_grid,
    monte_carlo_Ekl,
    single_sample_expectation_check,
    full_estimator_expectation_check,
)
from .projection import (
    DistributionSpec,
    ProjectionSpec,
    SparseProjection,
    empirical_kurtosis,
    generate,
    moments,
)
from .sketch import (
    CorruptSketchError,
    ProjectedSample,
    SketchSet,
    backproject,
    measure,
    read_sketch_file,
    sketch_dataset,
    write_sketch_file,
)

__version__ = "0.1.0"

__all__ = [
    "KIND_BIASED",
    "KIND_UNBIASED",
    "CovAccumulator",
    "CovEstimate",
    "CorruptSketchError",
    "Dataset",
    "DistributionSpec",
    "ErrorReport",
    "MomentCheckReport",
    "ProjectedSample",
    "ProjectionSpec",
    "SingularCorrectionError",
    "SketchSet",
    "SparseProjection",
    "SpectrumSummary",
    "SynthSpec",
    "backproject",
    "bias_coefficients",
    "closed_form_Ekk",
    "closed_form_Ekl",
    "debias",
    "default_verification_grid",
    "empirical_kurtosis",
    "estimate",
    "finalize_biased",
    "generate",
    "generate_spiked",
    "generate_stable_rank",
    "load_csv",
    "load_matrix_market",
    "measure",
    "moments",
    "monte_carlo_Ekl",
    "normalized_error",
    "read_sketch_file",
    "save_matrix_market",
    "single_sample_expectation_check",
    "sketch_dataset",
    "spectral_norm",
    "stable_rank",
    "stable_rank_spectrum",
    "full_estimator_expectation_check",
    "top_eigenvectors",
    "write_sketch_file",
]
