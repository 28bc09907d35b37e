"""Feature extractor -> graph normalisation -> softmax classifier.

The extractor is a small perceptron standing in for a convolutional
backbone. Switching the graph off (all-zero adjacency) turns the pipeline
into the plain baseline, since the normalised adjacency is then the
identity.
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gcn import gcn_backward, normalized_adjacency
from .graph import PoissonScale
from .numerics import ShapeError, rng_stream, row_softmax

__all__ = [
    "ModelParams",
    "Cache",
    "StaleCacheError",
    "CheckpointError",
    "init_params",
    "one_hot",
    "extract_features",
    "classify",
    "loss",
    "forward",
    "backward",
    "extract_activations",
    "head_forward",
    "head_backward",
    "extractor_backward",
    "predict",
    "save_checkpoint",
    "load_checkpoint",
]


class StaleCacheError(RuntimeError):
    """Backward was called with a cache from different parameters."""


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    """All trainable state.

    ``extractor`` is a list of ``(weight, bias)`` pairs; every layer but the
    last is followed by tanh. ``scale`` is updated separately from the
    network weights.
    """

    extractor: list
    gcn_w: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray
    scale: PoissonScale = field(default_factory=PoissonScale)
    version: int = 0

    def named_arrays(self):
        """Network weights in a fixed order (excludes the Poisson scale)."""
        out = {}
        for i, (w, b) in enumerate(self.extractor):
            out[f"extractor.{i}.w"] = w
            out[f"extractor.{i}.b"] = b
        out["gcn.w"] = self.gcn_w
        out["classifier.w"] = self.cls_w
        out["classifier.b"] = self.cls_b
        return out

    def with_arrays(self, arrays: dict, scale: PoissonScale | None = None) -> "ModelParams":
        n = len(self.extractor)
        return ModelParams(
            extractor=[(arrays[f"extractor.{i}.w"], arrays[f"extractor.{i}.b"]) for i in range(n)],
            gcn_w=arrays["gcn.w"],
            cls_w=arrays["classifier.w"],
            cls_b=arrays["classifier.b"],
            scale=PoissonScale(self.scale.alpha, self.scale.beta) if scale is None else scale,
            version=self.version + 1,
        )

    def copy(self) -> "ModelParams":
        p = self.with_arrays({k: v.copy() for k, v in self.named_arrays().items()})
        p.version = self.version
        return p

    @property
    def feature_dim(self) -> int:
        return self.gcn_w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.extractor[0][0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.cls_w.shape[1]


def init_params(d_in: int, n_classes: int, hidden=(128, 128), feature_dim: int = 64,
                out_dim: int | None = None, seed: int = 0,
                scale: PoissonScale | None = None) -> ModelParams:
    """Fan-in scaled normal initialisation, zero biases."""
    rng = rng_stream(seed, 0x1417)
    out_dim = feature_dim if out_dim is None else out_dim
    widths = [d_in, *hidden, feature_dim]
    extractor = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        extractor.append((rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), np.zeros(fan_out)))
    gcn_w = rng.standard_normal((feature_dim, out_dim)) / np.sqrt(feature_dim)
    cls_w = rng.standard_normal((out_dim, n_classes)) / np.sqrt(out_dim)
    return ModelParams(extractor, gcn_w, cls_w, np.zeros(n_classes),
                       scale=scale if scale is not None else PoissonScale())


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    y = np.zeros((labels.size, n_classes))
    y[np.arange(labels.size), labels] = 1.0
    return y


def _extract(inputs, layers):
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != layers[0][0].shape[0]:
        raise ShapeError(f"extractor: input shape {h.shape} does not match first layer {layers[0][0].shape}")
    hs = [h]
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            h = np.tanh(h)
        hs.append(h)
    return hs


def extract_activations(inputs, params: ModelParams) -> list:
    """Inputs followed by every layer's output; the last entry is the features."""
    return _extract(inputs, params.extractor)


def extract_features(inputs, params) -> np.ndarray:
    """Map raw inputs to feature vectors. Accepts ``ModelParams`` or a layer list."""
    layers = params.extractor if isinstance(params, ModelParams) else params
    return _extract(inputs, layers)[-1]


def classify(xhat, cls_w, cls_b) -> np.ndarray:
    xhat = np.asarray(xhat, dtype=np.float64)
    if xhat.shape[1] != cls_w.shape[0]:
        raise ShapeError(f"classifier: input width {xhat.shape[1]} != weight rows {cls_w.shape[0]}")
    return row_softmax(xhat @ cls_w + cls_b)


def _check_targets(y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < 2:
        raise ValueError(f"targets must be N x C one-hot with C >= 2, got {y.shape}")
    ok = np.all((y == 0) | (y == 1), axis=1) & (y.sum(axis=1) == 1)
    if not np.all(ok):
        raise ValueError(f"target row {int(np.flatnonzero(~ok)[0])} is not one-hot")
    return y


def loss(pred, y) -> float:
    """Batch mean of the squared Euclidean distance between rows."""
    pred = np.asarray(pred, dtype=np.float64)
    y = _check_targets(y)
    if pred.shape != y.shape:
        raise ShapeError(f"loss: predictions {pred.shape} vs targets {y.shape}")
    return float(np.sum((pred - y) ** 2) / pred.shape[0])


@dataclass
class Cache:
    params: ModelParams
    version: int
    hs: list
    graph: np.ndarray
    ahat: np.ndarray
    xhat: np.ndarray
    pred: np.ndarray
    y: np.ndarray


def head_forward(hs, y, params: ModelParams, graph=None):
    """Graph convolution, classifier and loss on precomputed extractor activations."""
    x = hs[-1]
    n = x.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"forward: {n} inputs but {y.shape[0]} targets")
    a = np.zeros((n, n)) if graph is None else np.asarray(graph, dtype=np.float64)
    if a.shape != (n, n):
        raise ShapeError(f"forward: graph {a.shape} does not match batch of {n}")
    ahat = normalized_adjacency(a)
    xhat = ahat @ x @ params.gcn_w
    pred = classify(xhat, params.cls_w, params.cls_b)
    value = float(np.sum((pred - y) ** 2) / n)
    return value, Cache(params, params.version, hs, a, ahat, xhat, pred, y)


def forward(inputs, targets, params: ModelParams, graph=None):
    """Return ``(loss, cache)``. ``graph=None`` means the empty graph."""
    y = _check_targets(targets)
    return head_forward(_extract(inputs, params.extractor), y, params, graph)


def head_backward(cache: Cache):
    """Gradients of the graph convolution and classifier.

    Returns ``(grads, grad_features, grad_a)``; ``grads`` holds the
    ``gcn.w`` and ``classifier.*`` entries only.
    """
    p = cache.params
    n = cache.pred.shape[0]
    pred, y = cache.pred, cache.y
    dp = 2.0 * (pred - y) / n
    dz = pred * (dp - np.sum(dp * pred, axis=1, keepdims=True))
    grads = {
        "classifier.w": cache.xhat.T @ dz,
        "classifier.b": dz.sum(axis=0),
    }
    gw, gx, ga = gcn_backward(cache.hs[-1], p.gcn_w, cache.graph, dz @ p.cls_w.T)
    grads["gcn.w"] = gw
    return grads, gx, ga


def extractor_backward(hs, layers, grad_features) -> dict:
    """Backpropagate a feature gradient through the perceptron layers."""
    grads = {}
    dh = grad_features
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        if i < len(layers) - 1:
            dh = dh * (1.0 - hs[i + 1] ** 2)
        grads[f"extractor.{i}.w"] = hs[i].T @ dh
        grads[f"extractor.{i}.b"] = dh.sum(axis=0)
        dh = dh @ w.T
    return grads


def backward(cache: Cache, params: ModelParams | None = None):
    """Analytic gradients ``(grads, grad_a)``.

    ``grads`` maps the names from ``ModelParams.named_arrays`` to arrays;
    ``grad_a`` is the symmetric N x N adjacency gradient.
    """
    p = cache.params
    if params is not None and (params is not p or params.version != cache.version):
        raise StaleCacheError("cache was produced by different parameters")
    if p.version != cache.version:
        raise StaleCacheError("parameters changed since forward")
    head, gx, ga = head_backward(cache)
    grads = extractor_backward(cache.hs, p.extractor, gx)
    grads.update(head)
    return {k: grads[k] for k in p.named_arrays()}, ga


def predict(inputs, params: ModelParams, graph=None) -> np.ndarray:
    x = extract_features(inputs, params)
    n = x.shape[0]
    a = np.zeros((n, n)) if graph is None else graph
    return classify(normalized_adjacency(a) @ x @ params.gcn_w, params.cls_w, params.cls_b)


def save_checkpoint(path, params: ModelParams, config_hash: str = "") -> None:
    arrays = params.named_arrays()
    meta = {
        "format": "agfn-checkpoint",
        "version": 1,
        "n_extractor_layers": len(params.extractor),
        "alpha": params.scale.alpha.hex(),
        "beta": params.scale.beta.hex(),
        "config_hash": config_hash,
        "digest": _digest(arrays),
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(params, config_hash)``. Raises ``CheckpointError`` on any defect."""
    try:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            if meta.get("format") != "agfn-checkpoint":
                raise CheckpointError(f"{path}: not an agfn checkpoint")
            arrays = {k: z[k].astype(np.float64) for k in z.files if k != "__meta__"}
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    n = meta["n_extractor_layers"]
    try:
        params = ModelParams(
            extractor=[(arrays[f"extractor.{i}.w"], arrays[f"extractor.{i}.b"]) for i in range(n)],
            gcn_w=arrays["gcn.w"],
            cls_w=arrays["classifier.w"],
            cls_b=arrays["classifier.b"],
            scale=PoissonScale(float.fromhex(meta["alpha"]), float.fromhex(meta["beta"])),
        )
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing array {exc}") from exc
    if _digest(params.named_arrays()) != meta["digest"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    return params, meta.get("config_hash", "")


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k, v in arrays.items():
        h.update(k.encode())
        h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
    return h.hexdigest()
