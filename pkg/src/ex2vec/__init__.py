"""Ex2Vec: user/item embeddings learned from repeated-exposure dynamics."""
from .data import Dataset, holdout_split, kcore_filter, label_listens, parse_events, window_trim
from .kernels import base_level, exposure_kernel
from .model import ModelParams, batch_loss, forward, gradients
from .trainer import TrainConfig, calibrate_threshold, train

__version__ = "0.1.0"
