"""Face swapping with an identity-purged facial code and a face-masked non-facial branch."""
from .errors import CheckpointError, ConfigError, ShapeError, TrainingAborted, WSCError
from .losses import LossReport, LossWeights
from .metrics import MetricReport, SwapGrid, evaluate
from .networks import ModelConfig, SwapGenerator
from .synthdata import DatasetConfig, FactorVector, ImageBatch, SwapPair
from .trainer import TrainConfig, TrainState, train, train_step

__version__ = "0.1.0"
