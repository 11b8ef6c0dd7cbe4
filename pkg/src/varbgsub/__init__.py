"""Streaming background subtraction with value-at-risk thresholding.

An incrementally trained convolutional autoencoder (or a temporal-median
baseline) reconstructs the background of a video stream; foreground is
whatever exceeds an automatically chosen residual threshold built on
isolation voting and value at risk.
"""

from .bgmodels import AutoencoderModel, FrameHistory, MedianModel, make_model
from .evaluation import ConfusionCounts, MetricsRecord, aggregate, confusion, gt_threshold, metrics
from .flow import BlockMatchingFlow, FlowConfig, FlowField, estimate_flow, weights_from_flow
from .imgio import denormalize, load_frame, normalize, resize, to_grayscale, write_pgm
from .network import (
    NetworkParams,
    adam_step,
    backward,
    build_network,
    forward,
    load_checkpoint,
    save_checkpoint,
    weighted_l1_loss,
    xavier_init,
)
from .pipeline import ExitReport, PipelineConfig, StreamState, process_frame, run
from .residual import residual_map
from .thresholding import (
    ThresholdConfig,
    alpha_of_threshold,
    apply_threshold,
    conditional_value_at_risk,
    histogram_of_thresholds,
    smallest_half_interval,
    value_at_risk,
    var_threshold,
    vote_range,
)

__version__ = "0.1.0"
