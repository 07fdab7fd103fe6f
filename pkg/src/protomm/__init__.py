"""Training-free streaming test-time adaptation: multimodal prototypes,
entropic optimal transport, and an online visual-particle cache."""

__version__ = "0.1.0"

from .core import (
    Matrix,
    ProbVector,
    UnitVector,
    cosine_similarity,
    neg_entropy_score,
    softmax,
)
from .engine import (
    EngineConfig,
    PredictionRecord,
    RunSummary,
    StreamRecord,
    process_sample,
    run_stream,
    zero_shot_predict,
    zero_shot_stream,
)
from .errors import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    FormatError,
    IoError,
    NumericError,
    ProtommError,
    SizeError,
    VersionError,
)
from .prototypes import (
    MultimodalPrototype,
    PrototypeStore,
    init_visual_particles,
    new_prototype,
    score_augmentations,
    select_top_s,
    update_visual_particles,
)
from .sinkhorn import (
    OtSolution,
    SinkhornConfig,
    solve_exact_ot,
    solve_sinkhorn,
    solve_sinkhorn_batch,
)
from .weighting import ImageDistribution, compute_image_weights, compute_prototype_weights

__all__ = [
    "__version__",
    "ConfigError",
    "DimensionError",
    "EmptyInputError",
    "EngineConfig",
    "FormatError",
    "ImageDistribution",
    "IoError",
    "Matrix",
    "MultimodalPrototype",
    "NumericError",
    "OtSolution",
    "PredictionRecord",
    "ProbVector",
    "ProtommError",
    "PrototypeStore",
    "RunSummary",
    "SinkhornConfig",
    "SizeError",
    "StreamRecord",
    "UnitVector",
    "VersionError",
    "compute_image_weights",
    "compute_prototype_weights",
    "cosine_similarity",
    "init_visual_particles",
    "neg_entropy_score",
    "new_prototype",
    "process_sample",
    "run_stream",
    "score_augmentations",
    "select_top_s",
    "softmax",
    "solve_exact_ot",
    "solve_sinkhorn",
    "solve_sinkhorn_batch",
    "update_visual_particles",
    "zero_shot_predict",
    "zero_shot_stream",
]
