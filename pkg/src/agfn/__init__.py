"""Adaptive graph-based feature normalisation (AGFN) in NumPy.

Mini-batch samples are linked by a stochastic graph whose edge
probabilities grow with feature similarity; a normalised graph
convolution mixes each sample's features with its neighbours' before
classification. Training alternates Monte-Carlo weight updates with
straight-through updates of the graph's scale parameters.
"""
from .gcn import degree_matrix, gcn_backward, gcn_forward, normalized_adjacency
from .graph import (
    PoissonScale,
    connection_probabilities,
    cosine_similarity_matrix,
    edge_intensity,
    graph_probability,
    sample_adjacency,
    threshold_adjacency,
)
from .model import ModelParams, backward, forward, init_params, load_checkpoint, save_checkpoint
from .optim import TrainConfig, evaluate, train, train_epoch

__version__ = "0.1.0"
