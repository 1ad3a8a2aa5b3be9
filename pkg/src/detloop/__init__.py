"""detloop: temporal-coherence recovery and self-training loop tooling for
video object-detection streams."""

__version__ = "0.1.0"

from .camera import CameraModel, max_displacement, motion_radius_from_speed, project
from .coherence import CoherenceParams, RecoveryRecord, RecoveryResult, recover, recovered_indicator
from .metrics import MaskMode, MatchPolicy, MetricsReport, box_iou, evaluate, harmonic_f1, mask_iou
from .sampling import SkipSampler, SplitSpec, alpha_split, select_frames, skip_indicator, support
from .streams import (
    BBox,
    DataError,
    Detection,
    DetectionStream,
    FrameRecord,
    GroundTruth,
    GroundTruthObject,
    ParseError,
    Provenance,
    ValidationError,
    load_ground_truth,
    load_stream,
    save_ground_truth,
    save_stream,
)

__all__ = [
    "__version__",
    "BBox",
    "CameraModel",
    "CoherenceParams",
    "DataError",
    "Detection",
    "DetectionStream",
    "FrameRecord",
    "GroundTruth",
    "GroundTruthObject",
    "MaskMode",
    "MatchPolicy",
    "MetricsReport",
    "ParseError",
    "Provenance",
    "RecoveryRecord",
    "RecoveryResult",
    "SkipSampler",
    "SplitSpec",
    "ValidationError",
    "alpha_split",
    "box_iou",
    "evaluate",
    "harmonic_f1",
    "load_ground_truth",
    "load_stream",
    "mask_iou",
    "max_displacement",
    "motion_radius_from_speed",
    "project",
    "recover",
    "recovered_indicator",
    "save_ground_truth",
    "save_stream",
    "select_frames",
    "skip_indicator",
    "support",
]
