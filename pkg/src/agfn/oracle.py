"""Ground truth for the stochastic estimators.

Exact expectations over the graph distribution by brute-force
enumeration of every undirected graph on ``n <= 5`` nodes, and central
finite differences for checking analytic gradients.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import (
    connection_probabilities,
    cosine_similarity_matrix,
    edge_intensity,
    graph_probability,
)
from .model import ModelParams, backward, extract_features, forward

__all__ = [
    "MAX_ENUMERATION_NODES",
    "EnumerationReport",
    "enumerate_adjacencies",
    "exact_expectation",
    "finite_difference",
]

MAX_ENUMERATION_NODES = 5


@dataclass
class EnumerationReport:
    expected_loss: float
    expected_grads: dict
    expected_grad_a: np.ndarray
    graph_count: int
    total_probability: float


def enumerate_adjacencies(n: int):
    """All symmetric zero-diagonal binary ``n x n`` matrices.

    Ordered lexicographically over the upper-triangle pairs
    ``(0,1), (0,2), ..., (n-2,n-1)``, first pair most significant.
    """
    if n > MAX_ENUMERATION_NODES:
        raise ValueError(
            f"enumeration over {n} nodes needs 2^{n * (n - 1) // 2} graphs; capped at n={MAX_ENUMERATION_NODES}"
        )
    if n < 1:
        raise ValueError("n must be positive")
    iu, ju = np.triu_indices(n, k=1)
    out = []
    for bits in itertools.product((0.0, 1.0), repeat=iu.size):
        a = np.zeros((n, n))
        a[iu, ju] = bits
        a[ju, iu] = bits
        out.append(a)
    return out


def exact_expectation(inputs, targets, params: ModelParams, p=None) -> EnumerationReport:
    """P(A)-weighted loss, weight gradients and adjacency gradient.

    ``p`` defaults to the connection probabilities implied by the batch's
    current features and ``params.scale``.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    n = inputs.shape[0]
    if n > MAX_ENUMERATION_NODES:
        raise ValueError(f"batch of {n} exceeds the enumeration cap of {MAX_ENUMERATION_NODES}")
    if p is None:
        sim = cosine_similarity_matrix(extract_features(inputs, params))
        p = connection_probabilities(edge_intensity(sim, params.scale))

    e_loss = 0.0
    e_grads = {k: np.zeros_like(v) for k, v in params.named_arrays().items()}
    e_ga = np.zeros((n, n))
    total = 0.0
    graphs = enumerate_adjacencies(n)
    for a in graphs:
        pa = graph_probability(a, p)
        total += pa
        if pa == 0.0:
            continue
        value, cache = forward(inputs, targets, params, a)
        grads, ga = backward(cache)
        e_loss += pa * value
        for k in e_grads:
            e_grads[k] += pa * grads[k]
        e_ga += pa * ga
    return EnumerationReport(e_loss, e_grads, e_ga, len(graphs), total)


def finite_difference(probe, point, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = probe(x)
        flat[i] = orig - eps
        fm = probe(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"probe returned a non-finite value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
