"""Missing-view multi-view classification over pre-extracted features.

Pipeline: learn per-view linear projection heads with a weighted
soft-margin triplet loss so corresponding views land close on a shared
unit sphere; at test time, a query whose second view is missing retrieves
its top-k cross-view neighbors from the training gallery, mean-fuses the
neighbors' classifier scores into a stand-in for the missing view, and
product-fuses the stand-in with the query's own scores.
"""

from .core import (
    AllZeroProduct,
    CacheMismatch,
    ClassTooSmall,
    ConfigError,
    DegenerateBatch,
    DimensionMismatch,
    EmbeddingRecord,
    EmbeddingSet,
    EmptyIndexError,
    EmptyQuerySet,
    FormatError,
    LengthMismatch,
    MissingClassView,
    MissingScore,
    ScoreSet,
    ScoreVector,
    UNKNOWN_LABEL,
    ViewfillError,
    ZeroVectorError,
    l2_normalize,
)
from .fileio import (
    fnv1a64,
    read_embedding_file,
    read_score_file,
    validate_file,
    write_embedding_file,
    write_score_file,
)
from .stats import TTestResult, paired_t_test, regularized_incomplete_beta, student_t_two_sided_p
from .metric import (
    GradientResult,
    ProjectionHead,
    TrainConfig,
    TrainResult,
    TripletBatch,
    apply_head,
    distance_matrix,
    fuse_available_views,
    load_head,
    loss_gradient,
    sample_batch,
    save_head,
    serialize_head,
    train,
    triplet_loss,
    write_loss_trace,
)
from .retrieval import (
    Ranking,
    RetrievalIndex,
    build_index,
    head_checksum,
    load_index,
    rank,
    save_index,
    top_k,
)
from .fusion import (
    FusionResult,
    classify_missing,
    classify_record,
    classify_set,
    mean_fuse,
    product_fuse,
    write_fusion_results,
)
from .evaluation import (
    EvalReport,
    ExperimentConfig,
    FoldResult,
    FoldSplit,
    average_precision_at_k,
    macro_f1,
    make_folds,
    map_at_k,
    micro_f1,
    run_experiment,
    run_fold,
    write_map_curve_csv,
    write_report_csv,
    write_report_text,
)
from .synthetic import SyntheticConfig, SyntheticData, generate_synthetic

__version__ = "0.1.0"
