from .checkpoint import Checkpoint, IncompatibleCheckpoint, latest_checkpoint
from .config import TrainConfig, apply_overrides, load_config, write_config_file
from .train import (
    METRIC_COLUMNS,
    RUNS_ENV,
    TrainingDiverged,
    Trainer,
    TrainResult,
    poly_lr,
    segmentation_loss,
    train,
)
