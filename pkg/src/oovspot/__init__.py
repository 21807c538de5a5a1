"""Ensemble fusion and IV/OOV evaluation for scene-text spotting output."""

from .errors import (
    BadPolygon,
    ConfigError,
    EmptyWord,
    FrameMismatch,
    InvalidPolygon,
    InvalidScale,
    MissingTranscription,
    NonConvexInput,
    OOVSpotError,
    ParseError,
    ScoreRange,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    MatchResult,
    SplitMetrics,
    aggregate_all,
    detection_metrics,
    e2e_metrics,
    evaluate,
    hmean,
    match,
)
from .fusion import FusionConfig, ignore_filter, merge_to_original_frame, run_ensemble, soft_nms, threshold_filter
from .geometry import Polygon, axis_aligned_iou, intersection_area, iou, polygon_area, rescale_polygon
from .ingest import (
    Detection,
    GroundTruthWord,
    Vocabulary,
    WordClass,
    build_vocabulary,
    classify_word,
    parse_detections,
    parse_ground_truth,
)

__version__ = "0.1.0"
