"""Minimal numpy neural-network engine: layers, Adam, early stopping, k-fold, gradient checks."""

from .checkpoint import read_checkpoint, write_checkpoint
from .gradcheck import gradient_check, numeric_gradient
from .layers import (GRU, LSTM, Conv1D, Dense, Flatten, GlobalMaxPool, Param, ReLU, ShapeError, Softmax,
                     Whiten)
from .network import Network, build_network, cross_entropy, one_hot
from .optim import Adam, AdamState, adam_step
from .training import TrainConfig, TrainingError, TrainResult, kfold_split, predict_proba, train

__all__ = [
    "Adam", "AdamState", "Conv1D", "Dense", "Flatten", "GRU", "GlobalMaxPool", "LSTM", "Network",
    "Param", "ReLU", "ShapeError", "Softmax", "TrainConfig", "TrainResult", "TrainingError",
    "Whiten", "adam_step", "build_network", "cross_entropy", "gradient_check", "kfold_split",
    "numeric_gradient", "one_hot", "predict_proba", "read_checkpoint", "train", "write_checkpoint",
]
