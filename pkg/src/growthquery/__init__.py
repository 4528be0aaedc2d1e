"""Tumor growth simulation and query-by-segmentation over model databases.

The pipeline: grow synthetic tumors on a tissue atlas (``simulate``),
threshold them into imaging masks (``segment``), store thousands of them
with precomputed downsample caches and shape features (``build_database``),
then answer "which stored tumor looks like this segmentation?" with one of
four retrieval strategies (``direct_query`` down to ``feature_query``),
trading exactness for speed.  ``run_evaluation`` and ``bench`` quantify
that trade.
"""

from .errors import (
    DatabaseBuildError,
    DimensionMismatchError,
    EmptyMaskError,
    FormatError,
    NumericalInstabilityError,
)
from .evalbench import (
    EVAL_METHODS,
    BenchResult,
    EvalReport,
    EvalRow,
    QuerySample,
    QuerySet,
    bench,
    dice_distribution,
    make_query_set,
    run_evaluation,
    top_n_accuracy,
)
from .features import (
    FEATURE_NAMES,
    ChannelFeatures,
    FeatureStats,
    FeatureVector,
    center_of_mass,
    feature_distance,
    pair_features,
    shape_features,
)
from .forward import (
    FLAIR_THRESHOLD,
    T1GD_THRESHOLD,
    GrowthParams,
    SolverConfig,
    diffusion_field,
    segment,
    simulate,
    stable_dt,
    threshold,
)
from .query import (
    Ranking,
    answer,
    combined_dice,
    dice,
    direct_query,
    downsampled_query,
    embedding_query,
    feature_query,
    squared_distances,
)
from .tumordb import (
    ParamRanges,
    SizeFilter,
    TumorDatabase,
    TumorRecord,
    build_database,
    candidate_rng,
    downsample,
    load_db,
    make_record,
    sample_params,
    save_db,
)
from .voxel import (
    BinaryMask,
    GridDims,
    ScalarField,
    SegmentationPair,
    TissueAtlas,
    load_atlas,
    load_field,
    load_mask,
    make_phantom_atlas,
    mask_volume_mm3,
    save_atlas,
    save_field,
    save_mask,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "BenchResult",
    "ChannelFeatures",
    "DatabaseBuildError",
    "DimensionMismatchError",
    "EVAL_METHODS",
    "EmptyMaskError",
    "EvalReport",
    "EvalRow",
    "FEATURE_NAMES",
    "FLAIR_THRESHOLD",
    "FeatureStats",
    "FeatureVector",
    "FormatError",
    "GridDims",
    "GrowthParams",
    "NumericalInstabilityError",
    "ParamRanges",
    "QuerySample",
    "QuerySet",
    "Ranking",
    "ScalarField",
    "SegmentationPair",
    "SizeFilter",
    "SolverConfig",
    "T1GD_THRESHOLD",
    "TissueAtlas",
    "TumorDatabase",
    "TumorRecord",
    "answer",
    "bench",
    "build_database",
    "candidate_rng",
    "center_of_mass",
    "combined_dice",
    "dice",
    "dice_distribution",
    "diffusion_field",
    "direct_query",
    "downsample",
    "downsampled_query",
    "embedding_query",
    "feature_distance",
    "feature_query",
    "load_atlas",
    "load_db",
    "load_field",
    "load_mask",
    "make_phantom_atlas",
    "make_query_set",
    "make_record",
    "mask_volume_mm3",
    "pair_features",
    "run_evaluation",
    "sample_params",
    "save_atlas",
    "save_db",
    "save_field",
    "save_mask",
    "segment",
    "shape_features",
    "simulate",
    "squared_distances",
    "stable_dt",
    "threshold",
    "top_n_accuracy",
]
