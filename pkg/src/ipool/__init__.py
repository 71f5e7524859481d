"""Parameter-free graph pooling by neighborhood information gain."""
from .config import Depth, ReadoutMode, TrainConfig
from .datasets import Dataset, DatasetFormatError, load_tu_dataset
from .graph import (Graph, degree_vector, matrix_power, off_diagonal_transition,
                    transition_matrix)
from .pooling import (IPool, PoolingConfig, PoolingMode, PoolingResult, coarsen,
                      expand_adjacency, information_gain, normalized_gain, predict,
                      select_nodes)
from .training import IPoolClassifier, cross_validate, emit_metrics

__all__ = [
    "Dataset", "DatasetFormatError", "Depth", "Graph", "IPool", "IPoolClassifier",
    "PoolingConfig", "PoolingMode", "PoolingResult", "ReadoutMode", "TrainConfig",
    "coarsen", "cross_validate", "degree_vector", "emit_metrics", "expand_adjacency",
    "information_gain", "load_tu_dataset", "matrix_power", "normalized_gain",
    "off_diagonal_transition", "predict", "select_nodes", "transition_matrix",
]
__version__ = "0.1.0"
