"""Graph classification with attention-based top-k graph pooling on sparse graphs."""
from ._kernels import BACKEND, available_backends, set_backend
from .graph import CSR, GraphBatch, SparseGraph, make_batch, normalize_adjacency
from .layers import GPoolLayer, SagPoolLayer
from .models import GlobalModel, HierarchicalModel, load_checkpoint, save_checkpoint
from .training import TrialConfig, cross_validate, grid_search, train_one

__all__ = [
    "BACKEND",
    "available_backends",
    "set_backend",
    "CSR",
    "GraphBatch",
    "SparseGraph",
    "make_batch",
    "normalize_adjacency",
    "GPoolLayer",
    "SagPoolLayer",
    "GlobalModel",
    "HierarchicalModel",
    "load_checkpoint",
    "save_checkpoint",
    "TrialConfig",
    "cross_validate",
    "grid_search",
    "train_one",
]
