"""Coordinate-descent training of the network weights and the Poisson scale.

Each step alternates two blocks on the same mini-batch:

1. network weights: average the backward gradients over ``S`` graphs
   sampled from the current connection probabilities, then take a plain
   descent step of size ``gamma1``;
2. Poisson scale: average the adjacency gradients over ``S`` fresh graphs
   (straight-through: d A / d lambda taken as identity, masked where the
   rate was clamped), chain through ``d lambda / d alpha = sim`` and
   ``d lambda / d beta = 1``, and step with ``gamma2``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import (
    PoissonScale,
    active_mask,
    connection_probabilities,
    cosine_similarity_matrix,
    edge_density,
    edge_intensity,
    sample_adjacency,
    threshold_adjacency,
)
from .model import (
    ModelParams,
    backward,
    extract_activations,
    extract_features,
    extractor_backward,
    forward,
    head_backward,
    head_forward,
    one_hot,
    predict,
)
from .numerics import rng_stream

log = logging.getLogger(__name__)

__all__ = [
    "POLICIES",
    "EVAL_MODES",
    "NumericalError",
    "TrainConfig",
    "StepReport",
    "EpochMetrics",
    "graph_probabilities",
    "estimate_grad_weights",
    "estimate_grad_lambda",
    "update_scale",
    "update_weights",
    "train_step",
    "train_epoch",
    "train",
    "accuracy",
    "evaluate",
]

POLICIES = ("poisson", "threshold", "none")
EVAL_MODES = ("expected", "sampled")

# stream tags
_SHUFFLE, _WEIGHTS, _SCALE, _EVAL = 1, 2, 3, 4


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    samples: int = 5
    gamma1: float = 0.01
    gamma2: float = 0.001
    batch_size: int = 256
    epochs: int = 20
    pretrain_epochs: int = 10
    seed: int = 0
    eval_mode: str = "expected"
    eval_seed: int = 0
    graph_policy: str = "poisson"
    tau: float = 0.5

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples (S) must be >= 1")
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.graph_policy not in POLICIES:
            raise ValueError(f"graph_policy must be one of {POLICIES}, got {self.graph_policy!r}")
        if self.eval_mode not in EVAL_MODES:
            raise ValueError(f"eval_mode must be one of {EVAL_MODES}, got {self.eval_mode!r}")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")


@dataclass
class StepReport:
    loss: float
    grad_norm: float
    grad_lambda_norm: float
    density: float
    alpha: float
    beta: float


@dataclass
class EpochMetrics:
    epoch: int
    policy: str
    train_loss: float
    density: float
    alpha: float
    beta: float
    steps: list = field(default_factory=list)

    def record(self) -> dict:
        d = asdict(self)
        d.pop("steps")
        return d


def graph_probabilities(features, scale: PoissonScale):
    """Return ``(similarity, probabilities)`` for a batch of features."""
    sim = cosine_similarity_matrix(features)
    return sim, connection_probabilities(edge_intensity(sim, scale))


def _global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def estimate_grad_weights(inputs, targets, params: ModelParams, samples: int, rng, p=None):
    """Monte-Carlo weight gradient over ``samples`` sampled graphs.

    Returns ``(grads, mean_loss, mean_density)``. The extractor forward
    pass is shared by all samples, and since its backward pass is linear in
    the feature gradient it runs once on the averaged feature gradient.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    y = np.asarray(targets, dtype=np.float64)
    hs = extract_activations(inputs, params)
    if p is None:
        _, p = graph_probabilities(hs[-1], params.scale)
    acc = None
    acc_gx = np.zeros_like(hs[-1])
    total_loss = 0.0
    total_density = 0.0
    for _ in range(samples):
        a = sample_adjacency(p, rng)
        value, cache = head_forward(hs, y, params, a)
        head, gx, _ = head_backward(cache)
        if acc is None:
            acc = {k: np.zeros_like(v) for k, v in head.items()}
        for k in acc:
            acc[k] += head[k]
        acc_gx += gx
        total_loss += value
        total_density += edge_density(a)
    grads = extractor_backward(hs, params.extractor, acc_gx / samples)
    grads.update({k: v / samples for k, v in acc.items()})
    grads = {k: grads[k] for k in params.named_arrays()}
    return grads, total_loss / samples, total_density / samples


def estimate_grad_lambda(inputs, targets, params: ModelParams, samples: int, rng, sim=None):
    """Straight-through estimate of d E[loss] / d lambda (N x N, symmetric).

    Returns ``(grad_lambda, similarity)``. Entries where the rate is
    clamped at zero, and the diagonal, are zero.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    y = np.asarray(targets, dtype=np.float64)
    hs = extract_activations(inputs, params)
    if sim is None:
        sim = cosine_similarity_matrix(hs[-1])
    p = connection_probabilities(edge_intensity(sim, params.scale))
    n = p.shape[0]
    acc = np.zeros((n, n))
    for _ in range(samples):
        a = sample_adjacency(p, rng)
        _, cache = head_forward(hs, y, params, a)
        _, _, ga = head_backward(cache)
        acc += ga
    return acc / samples * active_mask(sim, params.scale), sim


def update_scale(scale: PoissonScale, sim, grad_lambda, gamma2: float) -> PoissonScale:
    sim = np.asarray(sim, dtype=np.float64)
    g = np.asarray(grad_lambda, dtype=np.float64)
    if sim.shape != g.shape:
        raise ValueError(f"update_scale: similarity {sim.shape} vs gradient {g.shape}")
    n2 = g.size
    d_alpha = float(np.sum(sim * g)) / n2
    d_beta = float(np.sum(g)) / n2
    return PoissonScale(scale.alpha - gamma2 * d_alpha, scale.beta - gamma2 * d_beta)


def update_weights(params: ModelParams, grads: dict, gamma1: float) -> ModelParams:
    """Plain descent step on every network weight; the scale is carried over."""
    arrays = params.named_arrays()
    missing = set(arrays) - set(grads)
    if missing:
        raise KeyError(f"update_weights: no gradient for {sorted(missing)}")
    new = {}
    for k, w in arrays.items():
        if grads[k].shape != w.shape:
            raise ValueError(f"update_weights: gradient {k} has shape {grads[k].shape}, weight {w.shape}")
        new[k] = w - gamma1 * grads[k]
    return params.with_arrays(new)


def _fixed_graph(features, policy: str, tau: float):
    n = features.shape[0]
    if policy == "none":
        return np.zeros((n, n))
    return threshold_adjacency(cosine_similarity_matrix(features), tau)


def train_step(inputs, targets, params: ModelParams, config: TrainConfig, policy: str, key=(0, 0)):
    """One coordinate-descent step on a batch. Returns ``(params, StepReport)``."""
    try:
        return _train_step(inputs, targets, params, config, policy, key)
    except NumericalError:
        raise
    except FloatingPointError as exc:
        norms = {k: float(np.linalg.norm(v)) for k, v in params.named_arrays().items()}
        raise NumericalError(
            f"{exc}; alpha={params.scale.alpha}, beta={params.scale.beta}; parameter norms={norms}"
        ) from exc


def _train_step(inputs, targets, params, config, policy, key):
    seed = config.seed
    if policy == "poisson":
        w_rng = rng_stream(seed, _WEIGHTS, *key)
        grads, value, density = estimate_grad_weights(inputs, targets, params, config.samples, w_rng)
        _check_finite(value, grads, params)
        params = update_weights(params, grads, config.gamma1)

        s_rng = rng_stream(seed, _SCALE, *key)
        g_lam, sim = estimate_grad_lambda(inputs, targets, params, config.samples, s_rng)
        if not np.all(np.isfinite(g_lam)):
            raise NumericalError(f"non-finite adjacency gradient at alpha={params.scale.alpha}, beta={params.scale.beta}")
        params.scale = update_scale(params.scale, sim, g_lam, config.gamma2)
        g_lam_norm = float(np.linalg.norm(g_lam))
    else:
        graph = _fixed_graph(extract_features(inputs, params), policy, config.tau)
        value, cache = forward(inputs, targets, params, graph)
        grads, _ = backward(cache)
        _check_finite(value, grads, params)
        params = update_weights(params, grads, config.gamma1)
        density = edge_density(graph)
        g_lam_norm = 0.0
    report = StepReport(value, _global_norm(grads), g_lam_norm, density,
                        params.scale.alpha, params.scale.beta)
    return params, report


def _check_finite(value, grads, params):
    if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        norms = {k: float(np.linalg.norm(g)) for k, g in grads.items()}
        raise NumericalError(
            f"non-finite loss/gradient (loss={value}); alpha={params.scale.alpha}, "
            f"beta={params.scale.beta}; gradient norms={norms}"
        )


def _batches(n: int, batch_size: int, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(dataset, params: ModelParams, config: TrainConfig, epoch: int):
    """Run one shuffled pass. Returns ``(params, EpochMetrics)``.

    Epochs with index below ``config.pretrain_epochs`` train the plain
    baseline (no graph) regardless of ``config.graph_policy``.
    """
    policy = "none" if epoch < config.pretrain_epochs else config.graph_policy
    x = dataset.inputs
    y = one_hot(dataset.observed_labels, dataset.n_classes)
    metrics = EpochMetrics(epoch, policy, 0.0, 0.0, params.scale.alpha, params.scale.beta)
    seen = 0
    for b, idx in enumerate(_batches(len(x), config.batch_size, rng_stream(config.seed, _SHUFFLE, epoch))):
        if idx.size < 2 and policy != "none":
            log.warning("epoch %d batch %d: skipping batch of size %d (no graph definable)", epoch, b, idx.size)
            continue
        params, rep = train_step(x[idx], y[idx], params, config, policy, key=(epoch, b))
        metrics.steps.append(rep)
        metrics.train_loss += rep.loss * idx.size
        metrics.density += rep.density * idx.size
        seen += idx.size
    if seen:
        metrics.train_loss /= seen
        metrics.density /= seen
    metrics.alpha, metrics.beta = params.scale.alpha, params.scale.beta
    return params, metrics


def train(dataset, params: ModelParams, config: TrainConfig, callback=None):
    """Run ``config.epochs`` epochs; returns ``(params, [EpochMetrics])``."""
    history = []
    for epoch in range(config.epochs):
        params, m = train_epoch(dataset, params, config, epoch)
        history.append(m)
        if callback is not None:
            callback(params, m)
    return params, history


def eval_graph(features, params: ModelParams, config: TrainConfig, rng=None):
    """Graph used at inference for one evaluation batch."""
    policy = config.graph_policy
    if policy != "poisson":
        return _fixed_graph(features, policy, config.tau)
    _, p = graph_probabilities(features, params.scale)
    if config.eval_mode == "expected":
        return p
    return sample_adjacency(p, rng)


def accuracy(pred, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    return float(np.mean(np.argmax(pred, axis=1) == np.asarray(labels)))


def evaluate(dataset, params: ModelParams, config: TrainConfig, labels=None):
    """Return ``(accuracy, mean_loss)`` against ``labels`` (true labels by default).

    Evaluation batches are consecutive blocks of ``config.batch_size``.
    Ties in the argmax resolve to the lowest class index.
    """
    x = dataset.inputs
    if len(x) == 0:
        raise ValueError("evaluate: empty dataset")
    labels = dataset.true_labels if labels is None else np.asarray(labels)
    y = one_hot(labels, dataset.n_classes)
    correct = 0
    total_loss = 0.0
    for b, start in enumerate(range(0, len(x), config.batch_size)):
        sl = slice(start, start + config.batch_size)
        feats = extract_features(x[sl], params)
        rng = rng_stream(config.eval_seed, _EVAL, b) if config.eval_mode == "sampled" else None
        graph = eval_graph(feats, params, config, rng)
        pred = predict(x[sl], params, graph)
        correct += int(np.sum(np.argmax(pred, axis=1) == labels[sl]))
        total_loss += float(np.sum((pred - y[sl]) ** 2))
    return correct / len(x), total_loss / len(x)
