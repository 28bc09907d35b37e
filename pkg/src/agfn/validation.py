"""Finite-difference and enumeration cross-checks used by the CLI and tests."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gcn import gcn_backward, gcn_forward
from .graph import active_mask, cosine_similarity_matrix
from .model import backward, extract_features, forward, init_params, one_hot
from .numerics import rng_stream
from .optim import estimate_grad_lambda, estimate_grad_weights
from .oracle import exact_expectation, finite_difference

__all__ = [
    "GRADCHECK_TOL",
    "relative_error",
    "random_instance",
    "gradcheck_instance",
    "GradcheckReport",
    "run_gradcheck_suite",
    "OracleComparison",
    "compare_to_oracle",
]

GRADCHECK_TOL = 1e-5
FD_EPS = 1e-5


def relative_error(numeric, analytic, floor: float = 1e-8) -> float:
    """``max|numeric - analytic| / max(max|numeric|, max|analytic|, floor)``."""
    numeric = np.asarray(numeric, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), floor)
    return float(np.abs(numeric - analytic).max(initial=0.0) / scale)


def random_instance(seed: int, max_n: int = 5, max_d: int = 8):
    """Seeded small problem: inputs, one-hot targets, params, real-valued symmetric graph."""
    rng = rng_stream(seed, 0xC0DE)
    n = int(rng.integers(2, max_n + 1))
    d_in = int(rng.integers(2, max_d + 1))
    d = int(rng.integers(2, max_d + 1))
    d_out = int(rng.integers(2, max_d + 1))
    c = int(rng.integers(2, 5))
    hidden = (int(rng.integers(2, max_d + 1)),)
    params = init_params(d_in, c, hidden=hidden, feature_dim=d, out_dim=d_out, seed=seed)
    # nonzero biases so every term of the backward pass is exercised
    arrays = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in params.named_arrays().items()}
    params = params.with_arrays(arrays)
    x = rng.standard_normal((n, d_in))
    y = one_hot(rng.integers(0, c, n), c)
    a = np.triu(rng.uniform(0.05, 0.95, (n, n)), 1)
    a = a + a.T
    return x, y, params, a


def _pair_fd(probe_a, a, eps):
    """Finite-difference gradient over tied (i, j)/(j, i) adjacency entries."""
    n = a.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            def f(t, i=i, j=j):
                b = a.copy()
                b[i, j] += t[0]
                b[j, i] += t[0]
                return probe_a(b)
            out[i, j] = out[j, i] = finite_difference(f, [0.0], eps)[0]
    return out


def gradcheck_instance(seed: int, perturb=None, eps: float = FD_EPS) -> dict:
    """Relative error per gradient block for one random instance.

    ``perturb`` is an optional ``(block_name, delta)`` added to the analytic
    gradient before comparison (negative-control hook).
    """
    x, y, params, a = random_instance(seed)
    errors = {}

    def bump(name, g):
        if perturb is not None and perturb[0] == name:
            return g + perturb[1]
        return g

    # standalone graph convolution under a quadratic probe
    feats = extract_features(x, params)
    w = params.gcn_w
    target = rng_stream(seed, 0xFEED).standard_normal((x.shape[0], w.shape[1]))

    def probe(xx, ww, aa):
        return 0.5 * float(np.sum((gcn_forward(xx, ww, aa) - target) ** 2))

    up = gcn_forward(feats, w, a) - target
    gw, gx, ga = gcn_backward(feats, w, a, up)
    errors["gcn.grad_w"] = relative_error(finite_difference(lambda v: probe(feats, v, a), w, eps), bump("gcn.grad_w", gw))
    errors["gcn.grad_x"] = relative_error(finite_difference(lambda v: probe(v, w, a), feats, eps), bump("gcn.grad_x", gx))
    errors["gcn.grad_a"] = relative_error(_pair_fd(lambda b: probe(feats, w, b), a, eps), bump("gcn.grad_a", ga))

    # full model
    _, cache = forward(x, y, params, a)
    grads, grad_a = backward(cache)
    arrays = params.named_arrays()
    for name, value in arrays.items():
        def f(v, name=name):
            new = dict(arrays)
            new[name] = v
            return forward(x, y, params.with_arrays(new), a)[0]
        errors[f"model.{name}"] = relative_error(finite_difference(f, value, eps), bump(f"model.{name}", grads[name]))
    errors["model.adjacency"] = relative_error(
        _pair_fd(lambda b: forward(x, y, params, b)[0], a, eps), bump("model.adjacency", grad_a))
    return errors


@dataclass
class GradcheckReport:
    seeds: list
    shapes: list
    max_error: dict
    tol: float = GRADCHECK_TOL

    @property
    def failures(self) -> list:
        return [k for k, v in self.max_error.items() if not v <= self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures


def run_gradcheck_suite(instances: int = 100, seed: int = 0, perturb=None) -> GradcheckReport:
    worst: dict = {}
    seeds, shapes = [], []
    for k in range(instances):
        s = seed * 100_003 + k
        x, y, params, _ = random_instance(s)
        seeds.append(s)
        shapes.append({"N": x.shape[0], "d_in": x.shape[1], "d": params.feature_dim,
                       "d_out": params.gcn_w.shape[1], "C": y.shape[1]})
        for name, err in gradcheck_instance(s, perturb=perturb).items():
            worst[name] = max(worst.get(name, 0.0), err)
    return GradcheckReport(seeds, shapes, worst)


@dataclass
class OracleComparison:
    sample_sizes: list
    weight_errors: list          # per S: {block: relative error}, first repeat
    lambda_errors: list          # per S: relative error of the adjacency-gradient estimate
    global_errors: list          # per S: RMS over repeats of the all-weights relative error
    slope: float
    lambda_slope: float
    graph_count: int
    total_probability: float
    extra: dict = field(default_factory=dict)


def _rel(est, exact) -> float:
    den = np.linalg.norm(exact)
    diff = np.linalg.norm(np.asarray(est) - np.asarray(exact))
    return float(diff / den) if den > 0 else float(diff)


def compare_to_oracle(x, y, params, sample_sizes=(100, 1000, 10000), seed: int = 0, repeats: int = 3,
                      budget: int = 10000):
    """Monte-Carlo vs exact-enumeration gradients on a batch of at most 5 samples.

    At each sample size ``S`` the estimate is repeated
    ``max(repeats, budget // S)`` times on independent streams; the
    convergence slope is fitted to the root-mean-square relative error.
    """
    report = exact_expectation(x, y, params)
    sim = cosine_similarity_matrix(extract_features(x, params))
    exact_lam = report.expected_grad_a * active_mask(sim, params.scale)
    names = list(report.expected_grads)
    exact_flat = np.concatenate([report.expected_grads[k].ravel() for k in names])

    w_err, l_err, g_err, gl_err = [], [], [], []
    for s_count in sample_sizes:
        glob, glob_l = [], []
        for r in range(max(repeats, budget // s_count)):
            grads, _, _ = estimate_grad_weights(x, y, params, s_count, rng_stream(seed, 21, s_count, r))
            g_lam, _ = estimate_grad_lambda(x, y, params, s_count, rng_stream(seed, 22, s_count, r))
            flat = np.concatenate([grads[k].ravel() for k in names])
            glob.append(_rel(flat, exact_flat))
            glob_l.append(_rel(g_lam, exact_lam))
            if r == 0:
                w_err.append({k: _rel(grads[k], report.expected_grads[k]) for k in names})
                l_err.append(_rel(g_lam, exact_lam))
        g_err.append(float(np.sqrt(np.mean(np.square(glob)))))
        gl_err.append(float(np.sqrt(np.mean(np.square(glob_l)))))

    def slope(errs):
        errs = np.asarray(errs)
        if np.any(errs <= 0):
            return 0.0
        return float(np.polyfit(np.log(sample_sizes), np.log(errs), 1)[0])

    return OracleComparison(list(sample_sizes), w_err, l_err, g_err, slope(g_err), slope(gl_err),
                            report.graph_count, report.total_probability,
                            {"lambda_global_errors": gl_err})
