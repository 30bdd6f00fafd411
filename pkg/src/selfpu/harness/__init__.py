"""Training harness: configuration, phase-scheduled trainer, checkpoints and CLI."""
from .checkpoint import TrainState, load_checkpoint, save_checkpoint
from .config import TrainerConfig
from .trainer import METRICS_COLUMNS, Trainer, evaluate, prepare_data, run_training
