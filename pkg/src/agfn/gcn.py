"""Single symmetric-normalised graph convolution with analytic backward.

Forward: ``Xhat = D^-1/2 (A + I) D^-1/2 X W`` with ``D_ii = 1 + sum_j A_ij``.

The adjacency may be binary (sampled graphs) or real-valued (expected
graph at evaluation). The adjacency gradient treats each unordered pair as
one parameter shared by ``(i, j)`` and ``(j, i)`` and includes the
dependence of the degree matrix on ``A``.
"""
from __future__ import annotations

import numpy as np

from .numerics import ShapeError

__all__ = ["degree_matrix", "normalized_adjacency", "gcn_forward", "gcn_backward"]


def _square(a, name="adjacency") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name}: expected a square matrix, got shape {a.shape}")
    return a


def degree_matrix(a) -> np.ndarray:
    """Diagonal of the self-loop degree matrix, as a length-N vector."""
    a = _square(a)
    if np.any(a < 0):
        raise ValueError("degree_matrix: adjacency entries must be nonnegative")
    return 1.0 + a.sum(axis=1)


def normalized_adjacency(a) -> np.ndarray:
    a = _square(a)
    s = 1.0 / np.sqrt(degree_matrix(a))
    b = a + np.eye(a.shape[0])
    return s[:, None] * b * s[None, :]


def _check(x, w, a):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    a = _square(a)
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"gcn: features {x.shape} and weight {w.shape} must be 2-d")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"gcn: feature width {x.shape[1]} != weight rows {w.shape[0]}")
    if a.shape[0] != x.shape[0]:
        raise ShapeError(f"gcn: adjacency {a.shape} does not match {x.shape[0]} samples")
    return x, w, a


def gcn_forward(x, w, a) -> np.ndarray:
    x, w, a = _check(x, w, a)
    return normalized_adjacency(a) @ x @ w


def gcn_backward(x, w, a, upstream):
    """Return ``(grad_w, grad_x, grad_a)`` for upstream cotangent ``dL/dXhat``."""
    x, w, a = _check(x, w, a)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (x.shape[0], w.shape[1]):
        raise ShapeError(f"gcn_backward: upstream {g.shape} != output {(x.shape[0], w.shape[1])}")

    deg = degree_matrix(a)
    s = 1.0 / np.sqrt(deg)
    ahat = s[:, None] * (a + np.eye(a.shape[0])) * s[None, :]
    ax = ahat @ x
    grad_w = ax.T @ g
    grad_x = ahat.T @ (g @ w.T)

    # dL/dAhat, then through Ahat_ij = s_i (A_ij + d_ij) s_j with s = deg^-1/2.
    m = g @ (x @ w).T
    ma = m * ahat
    d_deg = -0.5 * (ma.sum(axis=1) + ma.sum(axis=0)) / deg
    raw = m * s[:, None] * s[None, :] + d_deg[:, None]
    grad_a = raw + raw.T
    np.fill_diagonal(grad_a, 0.0)
    return grad_w, grad_x, grad_a
