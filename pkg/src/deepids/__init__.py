"""deepids: a deep-transfer-learning intrusion-detection toolkit.

Telemetry preparation, single-channel pre-training, weight transfer into a
multi-channel residual network, fine-tuning on small target data, and the
metric/timing evaluation harness, all on a self-contained float64 numpy core.
"""

__version__ = "0.1.0"

from .domain import Domain, stratified_split_indices
from .errors import DeepIDSError
from .estimators import FeatureScaler, NetworkClassifier, WindowSegmenter
from .network import (build_baseline, build_multi_channel_dnn, build_presnet,
                      build_single_channel_dnn, count_params)
from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainConfig, evaluate, train
from .transfer import (SegmentationConfig, TransferPlan, fine_tune, mmd, segment,
                       transfer_weights)

__all__ = [
    "__version__", "Domain", "DeepIDSError", "FeatureScaler", "NetworkClassifier",
    "WindowSegmenter", "SegmentationConfig", "TrainConfig", "TransferPlan",
    "build_baseline", "build_multi_channel_dnn", "build_presnet",
    "build_single_channel_dnn", "count_params", "evaluate", "fine_tune",
    "load_checkpoint", "mmd", "save_checkpoint", "segment", "stratified_split_indices",
    "train", "transfer_weights",
]
