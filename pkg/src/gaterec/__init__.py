"""Content-aware top-N recommender.

An item autoencoder over binary ratings is fused with a word-attention
content encoder through a learned gate; neighbor attention pools related
items' representations into the decoder. Includes the data pipeline,
trainer, ranking evaluation, and a CLI.
"""

__version__ = "0.1.0"

from .data import (
    DataSplit,
    NeighborGraph,
    SparseBinaryRatings,
    binarize_ratings,
    build_neighbors_from_adjacency,
    build_neighbors_from_similarity,
    filter_sparse,
    make_folds,
    split_per_user,
)
from .errors import ConfigError, DataError, NumericError
from .gradcheck import finite_diff_check
from .model import GateModel, ItemBatch, ModelHyper, build_item_batch, init_parameters
from .params import AdamConfig, ParameterSet, adam_step, load_checkpoint, save_checkpoint
from .text import ItemCorpus, build_vocab, tokenize
from .trainer import TrainConfig, TrainLog, train, validate_config

__all__ = [
    "AdamConfig",
    "ConfigError",
    "DataError",
    "DataSplit",
    "GateModel",
    "ItemBatch",
    "ItemCorpus",
    "ModelHyper",
    "NeighborGraph",
    "NumericError",
    "ParameterSet",
    "SparseBinaryRatings",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "binarize_ratings",
    "build_item_batch",
    "build_neighbors_from_adjacency",
    "build_neighbors_from_similarity",
    "build_vocab",
    "filter_sparse",
    "finite_diff_check",
    "init_parameters",
    "load_checkpoint",
    "make_folds",
    "save_checkpoint",
    "split_per_user",
    "tokenize",
    "train",
    "validate_config",
]
