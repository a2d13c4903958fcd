"""Multi-task deep neural network for text understanding, in numpy.

A shared transformer encoder feeds four kinds of task head (single-sentence
classification, pairwise similarity, multi-step pairwise classification and
relevance ranking), trained jointly with mini-batches drawn across tasks.
"""
from ._kernels import BACKEND
from .config import RunConfig, load_config, parse_config
from .data import DatasetSplit, Vocabulary, load_tsv, make_synthetic, subsample, tokenize
from .encoder import EncoderConfig, PackedInput, encode, pack
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    GraphError,
    InputError,
    MTDNNError,
    NumericError,
    ParseError,
)
from .gradcheck import GradCheckReport, grad_check
from .metrics import EvalReport, evaluate
from .model import MTDNN, ModelConfig
from .tasks import TaskRegistry, TaskSpec, featurize
from .trainer import TrainConfig, fine_tune, run_training

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "RunConfig", "load_config", "parse_config",
    "DatasetSplit", "Vocabulary", "load_tsv", "make_synthetic", "subsample", "tokenize",
    "EncoderConfig", "PackedInput", "encode", "pack",
    "CheckpointError", "ConfigError", "ContractError", "DimensionError", "GraphError",
    "InputError", "MTDNNError", "NumericError", "ParseError",
    "GradCheckReport", "grad_check", "EvalReport", "evaluate", "MTDNN", "ModelConfig",
    "TaskRegistry", "TaskSpec", "featurize", "TrainConfig", "fine_tune", "run_training",
]
