"""Average Delay (AD) and companion metrics for video object detection."""

from .accuracy import average_precision, mean_average_precision, per_class_ap, precision_recall_curve
from .baselines import NabConfig, catdet_delay, nab_score
from .datamodel import (
    BoundingBox,
    DataError,
    Dataset,
    Detection,
    GroundTruthObject,
    Instance,
    MalformedRowError,
    parse_detections,
    parse_ground_truth,
    select_vidt,
    split_tracklets,
)
from .delay import (
    DelayConfig,
    DelayProfile,
    average_delay,
    clipped_mean_delay,
    instance_delays,
    probability_from_delay,
    threshold_for_fp_ratio,
)
from .experiments import PerturbationSpec, SyntheticSpec, expected_off_window, perturb, synthesize
from .matching import MatchTable, build_match_table, fp_count_at, iou

__version__ = "0.1.0"
