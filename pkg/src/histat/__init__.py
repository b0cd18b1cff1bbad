"""Two-level vector-quantized tokenizer for continuous robot actions, with Lipschitz-bounded latents."""
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DegenerateRowError, FormatError, HistatError, NumericError, ShapeError
from .harness import TrainConfig, ablation_grid, evaluate, gradcheck, train
from .kernels import BACKEND
from .model import HiSTAT, ModelConfig, Tokens
from .synthdata import TrajectoryBatch, generate_dataset, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "DegenerateRowError", "FormatError", "HiSTAT", "HistatError",
    "ModelConfig", "NumericError", "ShapeError", "Tokens", "TrainConfig", "TrajectoryBatch",
    "ablation_grid", "evaluate", "generate_dataset", "gradcheck", "load_checkpoint",
    "read_dataset", "save_checkpoint", "train", "write_dataset",
]
