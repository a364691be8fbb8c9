"""Synthetic single-particle diffraction and fast template classification.

Library layout:

- ``geometry`` / ``pattern`` / ``npd``: detector description, frames,
  masking, crop/bin operations, and the on-disk dataset container.
- ``simulate``: the forward diffraction model and the dataset recipes.
- ``eigenimage`` / ``loglikelihood``: the two supervised matchers.
- ``metrics``: residual scoring, scale search, thresholds, summaries.
- ``pipeline`` / ``cli``: batch engine, benchmarks, ``fxi-sort`` commands.

Hot kernels run through a compiled extension when available; set
``FXI_SORT_BACKEND=numpy`` to force the pure-NumPy fallback.
"""

from .backend import available_backends, backend_name, set_backend
from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateTemplateError,
    DegenerateTrainingError,
    DimensionError,
    DomainError,
    FxiSortError,
    ResolutionError,
)
from .geometry import DetectorGeometry
from .pattern import Dataset, Pattern, PatternMeta, bin_frame, crop_center, masked_sum
from .npd import load_dataset, save_dataset
from .simulate import (
    BeamSpec,
    FluenceDistribution,
    ParticleSpec,
    apply_poisson,
    build_dataset,
    build_homogeneous_family,
    build_size_family,
    diffract,
    extend_dataset,
    spheroid_reference_template,
)
from .eigenimage import EiModel, ei_classify, ei_train, load_ei_model, save_ei_model
from .loglikelihood import LlModel, estimate_fluence, ll_classify, log_likelihood
from .metrics import (
    EvalSummary,
    MatchReport,
    TemplateMatch,
    apply_threshold,
    c_error,
    fluence_error,
    resize_template,
    summarize,
)
from .pipeline import JobConfig, ThroughputReport, bench, run_batch

__version__ = "0.1.0"

__all__ = [
    "BeamSpec",
    "ConfigurationError",
    "ContractError",
    "Dataset",
    "DegenerateTemplateError",
    "DegenerateTrainingError",
    "DetectorGeometry",
    "DimensionError",
    "DomainError",
    "EiModel",
    "EvalSummary",
    "FluenceDistribution",
    "FxiSortError",
    "JobConfig",
    "LlModel",
    "MatchReport",
    "ParticleSpec",
    "Pattern",
    "PatternMeta",
    "ResolutionError",
    "TemplateMatch",
    "ThroughputReport",
    "apply_poisson",
    "apply_threshold",
    "available_backends",
    "backend_name",
    "bench",
    "bin_frame",
    "build_dataset",
    "build_homogeneous_family",
    "build_size_family",
    "c_error",
    "crop_center",
    "diffract",
    "ei_classify",
    "ei_train",
    "estimate_fluence",
    "extend_dataset",
    "fluence_error",
    "ll_classify",
    "load_dataset",
    "load_ei_model",
    "log_likelihood",
    "masked_sum",
    "resize_template",
    "run_batch",
    "save_dataset",
    "save_ei_model",
    "set_backend",
    "spheroid_reference_template",
    "summarize",
]
