"""Poisson graph generator for mini-batches.

Pairwise cosine similarity is mapped to a Poisson rate
``lam = max(0, alpha * sim + beta)``; an edge is present when the Poisson
count is nonzero, i.e. with probability ``1 - exp(-lam)``. One Bernoulli
draw is made per unordered pair and mirrored, and the diagonal is always
empty (self loops are added by the normalisation step).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateFeatureError",
    "PoissonScale",
    "poisson_pmf",
    "cosine_similarity_matrix",
    "edge_intensity",
    "active_mask",
    "connection_probabilities",
    "sample_adjacency",
    "threshold_adjacency",
    "graph_probability",
    "edge_density",
]

# Initial scale: p ~= 0.39 at similarity 0, p ~= 0.78 at similarity 1.
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.5


class DegenerateFeatureError(ValueError):
    """A feature row has zero norm, so its cosine similarity is undefined."""

    def __init__(self, row: int):
        super().__init__(f"feature row {row} has zero norm; cosine similarity undefined")
        self.row = row


@dataclass
class PoissonScale:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        self.alpha = float(self.alpha)
        self.beta = float(self.beta)
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise ValueError(f"non-finite Poisson scale ({self.alpha}, {self.beta})")


def poisson_pmf(k: int, lam: float) -> float:
    """Po(X=k; lam). Only k=0 is used by the generator."""
    if k < 0:
        return 0.0
    if lam == 0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))


def cosine_similarity_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateFeatureError(int(zero[0]))
    u = x / norms[:, None]
    s = u @ u.T
    s = 0.5 * (s + s.T)
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return s


def raw_intensity(sim, scale: PoissonScale) -> np.ndarray:
    return scale.alpha * np.asarray(sim, dtype=np.float64) + scale.beta


def edge_intensity(sim, scale: PoissonScale) -> np.ndarray:
    return np.maximum(0.0, raw_intensity(sim, scale))


def active_mask(sim, scale: PoissonScale) -> np.ndarray:
    """1 where the clamp is inactive (raw rate > 0) off the diagonal, else 0."""
    m = (raw_intensity(sim, scale) > 0).astype(np.float64)
    np.fill_diagonal(m, 0.0)
    return m


def connection_probabilities(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ValueError("connection_probabilities: negative intensity; clamp upstream")
    p = -np.expm1(-lam)
    np.fill_diagonal(p, 0.0)
    return p


def sample_adjacency(p, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    draws = rng.random(iu.size) < p[iu, ju]
    a = np.zeros((n, n))
    a[iu, ju] = draws
    a[ju, iu] = draws
    return a


def threshold_adjacency(sim, tau: float) -> np.ndarray:
    """Staircase graph: connect pairs whose similarity exceeds ``tau``."""
    a = (np.asarray(sim) > tau).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def graph_probability(a, p) -> float:
    a = np.asarray(a)
    p = np.asarray(p, dtype=np.float64)
    if a.shape != p.shape:
        raise ValueError(f"graph_probability: shape mismatch {a.shape} vs {p.shape}")
    iu, ju = np.triu_indices(p.shape[0], k=1)
    pe = p[iu, ju]
    ae = a[iu, ju]
    return float(np.prod(np.where(ae > 0.5, pe, 1.0 - pe)))


def edge_density(a) -> float:
    """Fraction of unordered pairs that carry an edge."""
    a = np.asarray(a)
    n = a.shape[0]
    if n < 2:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    return float(a[iu, ju].mean())
